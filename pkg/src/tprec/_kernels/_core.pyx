# cython: language_level=3
"""Compiled kernels: Cython twins of the pure-numpy reference in ``_pure``.

Signatures, return tuples, and floating-point semantics match the reference
function-for-function; the test suite cross-checks the two backends at near
machine precision.  To keep rounding behaviour aligned, every reduction here
accumulates sequentially in C index order and every compound expression uses
the same multiply/add grouping as the numpy expression it mirrors.  Input
views are const so read-only arrays (frozen tensors, dataset values) bind
without copies.
"""

import numpy as np

from libc.math cimport exp, fabs, log, pow, tanh

cdef double PHI_GRAD_EPS = 1e-6


cdef inline double _phi(double u, double p) noexcept nogil:
    if u > 0.0:
        return pow(u, p)
    if u < 0.0:
        return -pow(-u, p)
    return 0.0


cdef inline double _dsign(double u) noexcept nogil:
    if u > 0.0:
        return 1.0
    if u < 0.0:
        return -1.0
    return 0.0


cdef inline double _sigmoid(double v) noexcept nogil:
    return 1.0 / (1.0 + exp(-v))


cdef inline void _fill_hist(const double[:, ::1] H, const double[:, ::1] hist0,
                            double[::1] hist, int t, int D, int m) noexcept nogil:
    """History (h_{t-1}, ..., h_{t-D}) flattened, from hist0 where t-1-d < 0."""
    cdef int d, k, j
    for d in range(D):
        j = t - 1 - d
        if j >= 0:
            for k in range(m):
                hist[d * m + k] = H[j, k]
        else:
            for k in range(m):
                hist[d * m + k] = hist0[-1 - j, k]


cdef inline void _final_hist(const double[:, ::1] H, const double[:, ::1] hist0,
                             double[:, ::1] hist_final, int T, int D,
                             int m) noexcept nogil:
    cdef int d, k, j
    for d in range(D):
        j = T - 1 - d
        if j >= 0:
            for k in range(m):
                hist_final[d, k] = H[j, k]
        else:
            for k in range(m):
                hist_final[d, k] = hist0[-1 - j, k]


cdef inline void _branch_preact(const double[:, :, ::1] whh,
                                const double[:, :, ::1] whx,
                                const double[::1] hist,
                                const double[:, ::1] xs, int t,
                                double[:, :, ::1] U) noexcept nogil:
    """U[t] = whh @ hist + whx @ xs[t], accumulated per matvec like numpy."""
    cdef int R = whh.shape[0], w = whh.shape[1], Dm = whh.shape[2]
    cdef int l = whx.shape[2]
    cdef int r, i, k
    cdef double acc_h, acc_x
    for r in range(R):
        for i in range(w):
            acc_h = 0.0
            for k in range(Dm):
                acc_h += whh[r, i, k] * hist[k]
            acc_x = 0.0
            for k in range(l):
                acc_x += whx[r, i, k] * xs[t, k]
            U[t, r, i] = acc_h + acc_x


cdef inline double _subnet_fwd(const double[:, ::1] w1, const double[::1] b1,
                               const double[::1] w2, double b2,
                               double p_prev, const double[:, ::1] H,
                               const double[:, ::1] hist0,
                               const double[:, ::1] xs,
                               int t, int m, int l,
                               double p_lo, double p_hi,
                               double[::1] u_in, double[:, ::1] A1,
                               double[::1] PRAW) noexcept nogil:
    """Controller MLP step; fills the caches and returns the clamped degree."""
    cdef int hid = w1.shape[0]
    cdef int j, k
    cdef double acc, raw, p_t
    u_in[0] = p_prev
    if t > 0:
        for k in range(m):
            u_in[1 + k] = H[t - 1, k]
    else:
        for k in range(m):
            u_in[1 + k] = hist0[0, k]
    for k in range(l):
        u_in[1 + m + k] = xs[t, k]
    for j in range(hid):
        acc = 0.0
        for k in range(1 + m + l):
            acc += w1[j, k] * u_in[k]
        A1[t, j] = tanh(acc + b1[j])
    acc = 0.0
    for j in range(hid):
        acc += w2[j] * A1[t, j]
    raw = acc + b2
    PRAW[t] = raw
    p_t = raw
    if p_t < p_lo:
        p_t = p_lo
    if p_t > p_hi:
        p_t = p_hi
    return p_t


cdef inline double _subnet_bwd(const double[:, ::1] w1, const double[::1] w2,
                               const double[:, ::1] A1, const double[::1] u_in,
                               double raw, double g_p,
                               double p_lo, double p_hi, int t, int m, int l,
                               double[:, ::1] dw1, double[::1] db1,
                               double[::1] dw2, double* db2,
                               double[::1] din_h, double[::1] din_x,
                               double[::1] dz1) noexcept nogil:
    """Accumulate controller gradients; returns din_p (dL/d previous degree).

    The clamp gate zeroes everything when the raw output left (p_lo, p_hi).
    """
    cdef int hid = w1.shape[0]
    cdef int j, k
    cdef double acc
    for k in range(m):
        din_h[k] = 0.0
    for k in range(l):
        din_x[k] = 0.0
    if not (p_lo < raw < p_hi):
        return 0.0
    for j in range(hid):
        dz1[j] = (w2[j] * g_p) * (1.0 - A1[t, j] * A1[t, j])
        for k in range(1 + m + l):
            dw1[j, k] += dz1[j] * u_in[k]
        db1[j] += dz1[j]
        dw2[j] += g_p * A1[t, j]
    db2[0] += g_p
    # din = w1.T @ dz1, split into the (degree, hidden, input) slots
    acc = 0.0
    for j in range(hid):
        acc += w1[j, 0] * dz1[j]
    for k in range(m):
        for j in range(hid):
            din_h[k] += w1[j, 1 + k] * dz1[j]
    for k in range(l):
        for j in range(hid):
            din_x[k] += w1[j, 1 + m + k] * dz1[j]
    return acc


cdef inline void _bwd_fill_u_in(const double[:, ::1] H,
                                const double[:, ::1] hist0,
                                const double[::1] P, double p_carry,
                                const double[:, ::1] xs, int t, int m, int l,
                                double[::1] u_in) noexcept nogil:
    cdef int k
    u_in[0] = P[t - 1] if t > 0 else p_carry
    if t > 0:
        for k in range(m):
            u_in[1 + k] = H[t - 1, k]
    else:
        for k in range(m):
            u_in[1 + k] = hist0[0, k]
    for k in range(l):
        u_in[1 + m + k] = xs[t, k]


cdef inline void _route_history(const double[:, :, ::1] whh,
                                const double[:, ::1] delta_u,
                                double[:, ::1] GH, double[:, ::1] dhist0,
                                double[::1] back, int t, int D,
                                int m) noexcept nogil:
    """back = sum_{r,w} whh[r,w,:] * delta_u[r,w], routed to earlier steps."""
    cdef int R = whh.shape[0], w = whh.shape[1], Dm = whh.shape[2]
    cdef int r, i, k, d, j
    cdef double dv
    for k in range(Dm):
        back[k] = 0.0
    for r in range(R):
        for i in range(w):
            dv = delta_u[r, i]
            for k in range(Dm):
                back[k] += whh[r, i, k] * dv
    for d in range(D):
        j = t - 1 - d
        if j >= 0:
            for k in range(m):
                GH[j, k] += back[d * m + k]
        else:
            for k in range(m):
                dhist0[-1 - j, k] += back[d * m + k]


cdef inline void _accumulate_weight_grads(const double[:, ::1] delta_u,
                                          const double[::1] hist,
                                          const double[:, ::1] xs,
                                          int t, double[:, :, ::1] dwhh,
                                          double[:, :, ::1] dwhx) noexcept nogil:
    cdef int R = dwhh.shape[0], w = dwhh.shape[1], Dm = dwhh.shape[2]
    cdef int l = dwhx.shape[2]
    cdef int r, i, k
    cdef double dv
    for r in range(R):
        for i in range(w):
            dv = delta_u[r, i]
            for k in range(Dm):
                dwhh[r, i, k] += dv * hist[k]
            for k in range(l):
                dwhx[r, i, k] += dv * xs[t, k]


cdef inline double _phi_backward_step(const double[:, :, ::1] U,
                                      const double[::1] P,
                                      const double[::1] g, int t,
                                      double[:, ::1] delta_u) noexcept nogil:
    """delta_u = g * dphi/du and the summed degree gradient at step t."""
    cdef int R = U.shape[1], w = U.shape[2]
    cdef int r, i
    cdef double a, d_s, d_p, u, p, pm1, g_p
    p = P[t]
    pm1 = p - 1.0
    g_p = 0.0
    for r in range(R):
        for i in range(w):
            u = U[t, r, i]
            a = fabs(u)
            if a < PHI_GRAD_EPS:
                a = PHI_GRAD_EPS
            d_s = p * pow(a, pm1)
            d_p = _dsign(u) * pow(a, p) * log(a)
            delta_u[r, i] = g[i] * d_s
            g_p += g[i] * d_p
    return g_p


def rnn_window_forward(whh, whx, b, xs, hist0,
                       p_mode, p_value, w1, b1, w2, b2, p_carry, p_lo, p_hi):
    """Compiled twin of ``_pure.rnn_window_forward``."""
    cdef const double[:, :, ::1] whh_v = np.ascontiguousarray(whh, dtype=np.float64)
    cdef const double[:, :, ::1] whx_v = np.ascontiguousarray(whx, dtype=np.float64)
    cdef const double[::1] b_v = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[:, ::1] xs_v = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const double[:, ::1] hist0_v = np.ascontiguousarray(hist0, dtype=np.float64)
    cdef const double[:, ::1] w1_v = np.ascontiguousarray(w1, dtype=np.float64)
    cdef const double[::1] b1_v = np.ascontiguousarray(b1, dtype=np.float64)
    cdef const double[::1] w2_v = np.ascontiguousarray(w2, dtype=np.float64)

    cdef int pmode = p_mode
    cdef double pv = float(p_value), b2c = float(b2)
    cdef double pcarry = float(p_carry), plo = float(p_lo), phi_ = float(p_hi)

    cdef int R = whh_v.shape[0], m = whh_v.shape[1], Dm = whh_v.shape[2]
    cdef int D = Dm // m
    cdef int T = xs_v.shape[0], l = xs_v.shape[1]
    cdef int hid = w1_v.shape[0]

    H_arr = np.empty((T, m))
    U_arr = np.empty((T, R, m))
    P_arr = np.empty(T)
    PRAW_arr = np.zeros(T)
    A1_arr = np.zeros((T, hid))
    hist_final_arr = np.empty((D, m))
    cdef double[:, ::1] H = H_arr
    cdef double[:, :, ::1] U = U_arr
    cdef double[::1] P = P_arr
    cdef double[::1] PRAW = PRAW_arr
    cdef double[:, ::1] A1 = A1_arr
    cdef double[:, ::1] hist_final = hist_final_arr

    cdef double[::1] hist = np.empty(Dm)
    cdef double[::1] u_in = np.empty(1 + m + l)

    cdef int t, r, i
    cdef double p_prev = pcarry, p_t, s
    for t in range(T):
        _fill_hist(H, hist0_v, hist, t, D, m)
        if pmode == 2:
            p_t = _subnet_fwd(w1_v, b1_v, w2_v, b2c, p_prev, H, hist0_v,
                              xs_v, t, m, l, plo, phi_, u_in, A1, PRAW)
        else:
            p_t = pv
        P[t] = p_t
        _branch_preact(whh_v, whx_v, hist, xs_v, t, U)
        for i in range(m):
            s = 0.0
            for r in range(R):
                s += _phi(U[t, r, i], p_t)
            H[t, i] = s + b_v[i]
        p_prev = p_t

    _final_hist(H, hist0_v, hist_final, T, D, m)
    p_final = float(P[T - 1]) if T > 0 else pcarry
    return H_arr, U_arr, P_arr, PRAW_arr, A1_arr, hist_final_arr, p_final


def rnn_window_backward(whh, whx, xs, hist0, H, U, P, PRAW, A1, dH_ext,
                        p_mode, w1, b1, w2, b2, p_carry, p_lo, p_hi):
    """Compiled twin of ``_pure.rnn_window_backward``."""
    cdef const double[:, :, ::1] whh_v = np.ascontiguousarray(whh, dtype=np.float64)
    cdef const double[:, :, ::1] whx_v = np.ascontiguousarray(whx, dtype=np.float64)
    cdef const double[:, ::1] xs_v = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const double[:, ::1] hist0_v = np.ascontiguousarray(hist0, dtype=np.float64)
    cdef const double[:, ::1] H_v = np.ascontiguousarray(H, dtype=np.float64)
    cdef const double[:, :, ::1] U_v = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[::1] P_v = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[::1] PRAW_v = np.ascontiguousarray(PRAW, dtype=np.float64)
    cdef const double[:, ::1] A1_v = np.ascontiguousarray(A1, dtype=np.float64)
    cdef const double[:, ::1] w1_v = np.ascontiguousarray(w1, dtype=np.float64)
    cdef const double[::1] b1_v = np.ascontiguousarray(b1, dtype=np.float64)
    cdef const double[::1] w2_v = np.ascontiguousarray(w2, dtype=np.float64)

    cdef int pmode = p_mode
    cdef double pcarry = float(p_carry), plo = float(p_lo), phi_ = float(p_hi)

    cdef int R = whh_v.shape[0], m = whh_v.shape[1], Dm = whh_v.shape[2]
    cdef int D = Dm // m
    cdef int T = xs_v.shape[0], l = xs_v.shape[1]
    cdef int hid = w1_v.shape[0]

    dwhh_arr = np.zeros((R, m, Dm))
    dwhx_arr = np.zeros((R, m, l))
    db_arr = np.zeros(m)
    dw1_arr = np.zeros((hid, 1 + m + l))
    db1_arr = np.zeros(hid)
    dw2_arr = np.zeros(hid)
    dhist0_arr = np.zeros((D, m))
    GH_arr = np.array(dH_ext, dtype=np.float64, copy=True)
    cdef double[:, :, ::1] dwhh = dwhh_arr
    cdef double[:, :, ::1] dwhx = dwhx_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] dw1 = dw1_arr
    cdef double[::1] db1 = db1_arr
    cdef double[::1] dw2 = dw2_arr
    cdef double[:, ::1] dhist0 = dhist0_arr
    cdef double[:, ::1] GH = GH_arr

    cdef double db2c = 0.0, dp_scalar = 0.0, din_p_next = 0.0, g_p
    cdef double[::1] hist = np.empty(Dm)
    cdef double[::1] back = np.empty(Dm)
    cdef double[:, ::1] delta_u = np.empty((R, m))
    cdef double[::1] u_in = np.empty(1 + m + l)
    cdef double[::1] din_h = np.empty(m)
    cdef double[::1] din_x = np.empty(l)
    cdef double[::1] dz1 = np.empty(hid)

    cdef int t, k
    for t in range(T - 1, -1, -1):
        _fill_hist(H_v, hist0_v, hist, t, D, m)
        g_p = _phi_backward_step(U_v, P_v, GH[t], t, delta_u) + din_p_next
        for k in range(m):
            db[k] += GH[t, k]
        _accumulate_weight_grads(delta_u, hist, xs_v, t, dwhh, dwhx)
        _route_history(whh_v, delta_u, GH, dhist0, back, t, D, m)
        if pmode == 2:
            _bwd_fill_u_in(H_v, hist0_v, P_v, pcarry, xs_v, t, m, l, u_in)
            din_p_next = _subnet_bwd(w1_v, w2_v, A1_v, u_in, PRAW_v[t], g_p,
                                     plo, phi_, t, m, l, dw1, db1, dw2, &db2c,
                                     din_h, din_x, dz1)
            if t > 0:
                for k in range(m):
                    GH[t - 1, k] += din_h[k]
            else:
                for k in range(m):
                    dhist0[0, k] += din_h[k]
        else:
            dp_scalar += g_p
            din_p_next = 0.0

    return (dwhh_arr, dwhx_arr, db_arr, dp_scalar, dw1_arr, db1_arr, dw2_arr,
            db2c, dhist0_arr, din_p_next)


cdef inline void _gate_fwd(const double[:, ::1] A, const double[::1] c_prev,
                           double[:, ::1] C, double[:, ::1] H, int t, int m,
                           int gating) noexcept nogil:
    """C[t], H[t] from the stacked pre-activations A[t]; order (i, g, f, o)."""
    cdef int k
    cdef double si, tg, sf, so, c
    if gating == 0:
        for k in range(m):
            c = c_prev[k] * A[t, 2 * m + k]
            C[t, k] = c
            H[t, k] = c * A[t, 3 * m + k]
        return
    for k in range(m):
        si = _sigmoid(A[t, k])
        tg = tanh(A[t, m + k])
        sf = _sigmoid(A[t, 2 * m + k])
        so = _sigmoid(A[t, 3 * m + k])
        c = c_prev[k] * sf + si * tg
        C[t, k] = c
        H[t, k] = tanh(c) * so


cdef inline void _gate_bwd(const double[:, ::1] A, const double[::1] c_prev,
                           const double[:, ::1] C, const double[::1] gh,
                           double[::1] gc, int t, int m, int gating,
                           double[::1] dA) noexcept nogil:
    """dA and the in-place update gc <- dL/dc_{t-1} for one gate step."""
    cdef int k
    cdef double si, tg, sf, so, tc, g, f, o
    if gating == 0:
        for k in range(m):
            f = A[t, 2 * m + k]
            o = A[t, 3 * m + k]
            g = gh[k] * o + gc[k]
            dA[k] = 0.0
            dA[m + k] = 0.0
            dA[2 * m + k] = g * c_prev[k]
            dA[3 * m + k] = gh[k] * C[t, k]
            gc[k] = g * f
        return
    for k in range(m):
        si = _sigmoid(A[t, k])
        tg = tanh(A[t, m + k])
        sf = _sigmoid(A[t, 2 * m + k])
        so = _sigmoid(A[t, 3 * m + k])
        tc = tanh(C[t, k])
        g = (gh[k] * so) * (1.0 - tc * tc) + gc[k]
        dA[k] = ((g * tg) * si) * (1.0 - si)
        dA[m + k] = (g * si) * (1.0 - tg * tg)
        dA[2 * m + k] = ((g * c_prev[k]) * sf) * (1.0 - sf)
        dA[3 * m + k] = ((gh[k] * tc) * so) * (1.0 - so)
        gc[k] = g * sf


def lstm_window_forward(whh, whx, b, xs, hist0, c0, gating,
                        p_mode, p_value, w1, b1, w2, b2, p_carry, p_lo, p_hi):
    """Compiled twin of ``_pure.lstm_window_forward``."""
    cdef const double[:, :, ::1] whh_v = np.ascontiguousarray(whh, dtype=np.float64)
    cdef const double[:, :, ::1] whx_v = np.ascontiguousarray(whx, dtype=np.float64)
    cdef const double[::1] b_v = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[:, ::1] xs_v = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const double[:, ::1] hist0_v = np.ascontiguousarray(hist0, dtype=np.float64)
    cdef const double[:, ::1] w1_v = np.ascontiguousarray(w1, dtype=np.float64)
    cdef const double[::1] b1_v = np.ascontiguousarray(b1, dtype=np.float64)
    cdef const double[::1] w2_v = np.ascontiguousarray(w2, dtype=np.float64)

    cdef int gat = gating, pmode = p_mode
    cdef double pv = float(p_value), b2c = float(b2)
    cdef double pcarry = float(p_carry), plo = float(p_lo), phi_ = float(p_hi)

    cdef int R = whh_v.shape[0], w4 = whh_v.shape[1], Dm = whh_v.shape[2]
    cdef int m = w4 // 4
    cdef int D = Dm // m
    cdef int T = xs_v.shape[0], l = xs_v.shape[1]
    cdef int hid = w1_v.shape[0]

    H_arr = np.empty((T, m))
    C_arr = np.empty((T, m))
    U_arr = np.empty((T, R, w4))
    A_arr = np.empty((T, w4))
    P_arr = np.empty(T)
    PRAW_arr = np.zeros(T)
    A1_arr = np.zeros((T, hid))
    hist_final_arr = np.empty((D, m))
    c_final_arr = np.array(c0, dtype=np.float64, copy=True)
    cdef double[:, ::1] H = H_arr
    cdef double[:, ::1] C = C_arr
    cdef double[:, :, ::1] U = U_arr
    cdef double[:, ::1] A = A_arr
    cdef double[::1] P = P_arr
    cdef double[::1] PRAW = PRAW_arr
    cdef double[:, ::1] A1 = A1_arr
    cdef double[:, ::1] hist_final = hist_final_arr
    cdef double[::1] c_prev = c_final_arr

    cdef double[::1] hist = np.empty(Dm)
    cdef double[::1] u_in = np.empty(1 + m + l)

    cdef int t, r, i, k
    cdef double p_prev = pcarry, p_t, s
    for t in range(T):
        _fill_hist(H, hist0_v, hist, t, D, m)
        if pmode == 2:
            p_t = _subnet_fwd(w1_v, b1_v, w2_v, b2c, p_prev, H, hist0_v,
                              xs_v, t, m, l, plo, phi_, u_in, A1, PRAW)
        else:
            p_t = pv
        P[t] = p_t
        _branch_preact(whh_v, whx_v, hist, xs_v, t, U)
        for i in range(w4):
            s = 0.0
            for r in range(R):
                s += _phi(U[t, r, i], p_t)
            A[t, i] = s + b_v[i]
        _gate_fwd(A, c_prev, C, H, t, m, gat)
        for k in range(m):
            c_prev[k] = C[t, k]
        p_prev = p_t

    _final_hist(H, hist0_v, hist_final, T, D, m)
    p_final = float(P[T - 1]) if T > 0 else pcarry
    return (H_arr, C_arr, U_arr, A_arr, P_arr, PRAW_arr, A1_arr,
            hist_final_arr, c_final_arr, p_final)


def lstm_window_backward(whh, whx, xs, hist0, c0, H, C, U, A, P, PRAW, A1,
                         dH_ext, dC_last, dP_last,
                         gating, p_mode, w1, b1, w2, b2, p_carry, p_lo, p_hi):
    """Compiled twin of ``_pure.lstm_window_backward``."""
    cdef const double[:, :, ::1] whh_v = np.ascontiguousarray(whh, dtype=np.float64)
    cdef const double[:, :, ::1] whx_v = np.ascontiguousarray(whx, dtype=np.float64)
    cdef const double[:, ::1] xs_v = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const double[:, ::1] hist0_v = np.ascontiguousarray(hist0, dtype=np.float64)
    cdef const double[::1] c0_v = np.ascontiguousarray(c0, dtype=np.float64)
    cdef const double[:, ::1] H_v = np.ascontiguousarray(H, dtype=np.float64)
    cdef const double[:, ::1] C_v = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[:, :, ::1] U_v = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[:, ::1] A_v = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[::1] P_v = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[::1] PRAW_v = np.ascontiguousarray(PRAW, dtype=np.float64)
    cdef const double[:, ::1] A1_v = np.ascontiguousarray(A1, dtype=np.float64)
    cdef const double[:, ::1] w1_v = np.ascontiguousarray(w1, dtype=np.float64)
    cdef const double[::1] b1_v = np.ascontiguousarray(b1, dtype=np.float64)
    cdef const double[::1] w2_v = np.ascontiguousarray(w2, dtype=np.float64)

    cdef int gat = gating, pmode = p_mode
    cdef double pcarry = float(p_carry), plo = float(p_lo), phi_ = float(p_hi)

    cdef int R = whh_v.shape[0], w4 = whh_v.shape[1], Dm = whh_v.shape[2]
    cdef int m = w4 // 4
    cdef int D = Dm // m
    cdef int T = xs_v.shape[0], l = xs_v.shape[1]
    cdef int hid = w1_v.shape[0]

    dwhh_arr = np.zeros((R, w4, Dm))
    dwhx_arr = np.zeros((R, w4, l))
    db_arr = np.zeros(w4)
    dw1_arr = np.zeros((hid, 1 + m + l))
    db1_arr = np.zeros(hid)
    dw2_arr = np.zeros(hid)
    dhist0_arr = np.zeros((D, m))
    GH_arr = np.array(dH_ext, dtype=np.float64, copy=True)
    gc_arr = np.array(dC_last, dtype=np.float64, copy=True)
    cdef double[:, :, ::1] dwhh = dwhh_arr
    cdef double[:, :, ::1] dwhx = dwhx_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] dw1 = dw1_arr
    cdef double[::1] db1 = db1_arr
    cdef double[::1] dw2 = dw2_arr
    cdef double[:, ::1] dhist0 = dhist0_arr
    cdef double[:, ::1] GH = GH_arr
    cdef double[::1] gc = gc_arr

    cdef double db2c = 0.0, dp_scalar = 0.0, g_p
    cdef double din_p_next = float(dP_last)
    cdef double[::1] hist = np.empty(Dm)
    cdef double[::1] back = np.empty(Dm)
    cdef double[:, ::1] delta_u = np.empty((R, w4))
    cdef double[::1] dA = np.empty(w4)
    cdef double[::1] u_in = np.empty(1 + m + l)
    cdef double[::1] din_h = np.empty(m)
    cdef double[::1] din_x = np.empty(l)
    cdef double[::1] dz1 = np.empty(hid)

    cdef int t, k
    cdef const double[::1] c_prev
    for t in range(T - 1, -1, -1):
        c_prev = C_v[t - 1] if t > 0 else c0_v
        _gate_bwd(A_v, c_prev, C_v, GH[t], gc, t, m, gat, dA)
        _fill_hist(H_v, hist0_v, hist, t, D, m)
        g_p = _phi_backward_step(U_v, P_v, dA, t, delta_u) + din_p_next
        for k in range(w4):
            db[k] += dA[k]
        _accumulate_weight_grads(delta_u, hist, xs_v, t, dwhh, dwhx)
        _route_history(whh_v, delta_u, GH, dhist0, back, t, D, m)
        if pmode == 2:
            _bwd_fill_u_in(H_v, hist0_v, P_v, pcarry, xs_v, t, m, l, u_in)
            din_p_next = _subnet_bwd(w1_v, w2_v, A1_v, u_in, PRAW_v[t], g_p,
                                     plo, phi_, t, m, l, dw1, db1, dw2, &db2c,
                                     din_h, din_x, dz1)
            if t > 0:
                for k in range(m):
                    GH[t - 1, k] += din_h[k]
            else:
                for k in range(m):
                    dhist0[0, k] += din_h[k]
        else:
            dp_scalar += g_p
            din_p_next = 0.0

    return (dwhh_arr, dwhx_arr, db_arr, dp_scalar, dw1_arr, db1_arr, dw2_arr,
            db2c, dhist0_arr, gc_arr, din_p_next)


def lstm_decode_forward(whh, whx, b, wout, bout, x_init, hist0, c0, horizon,
                        gating, p_mode, p_value, w1, b1, w2, b2, p_carry,
                        p_lo, p_hi):
    """Compiled twin of ``_pure.lstm_decode_forward``."""
    cdef const double[:, :, ::1] whh_v = np.ascontiguousarray(whh, dtype=np.float64)
    cdef const double[:, :, ::1] whx_v = np.ascontiguousarray(whx, dtype=np.float64)
    cdef const double[::1] b_v = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[:, ::1] wout_v = np.ascontiguousarray(wout, dtype=np.float64)
    cdef const double[::1] bout_v = np.ascontiguousarray(bout, dtype=np.float64)
    cdef const double[::1] x_init_v = np.ascontiguousarray(x_init, dtype=np.float64)
    cdef const double[:, ::1] hist0_v = np.ascontiguousarray(hist0, dtype=np.float64)
    cdef const double[:, ::1] w1_v = np.ascontiguousarray(w1, dtype=np.float64)
    cdef const double[::1] b1_v = np.ascontiguousarray(b1, dtype=np.float64)
    cdef const double[::1] w2_v = np.ascontiguousarray(w2, dtype=np.float64)

    cdef int gat = gating, pmode = p_mode
    cdef double pv = float(p_value), b2c = float(b2)
    cdef double pcarry = float(p_carry), plo = float(p_lo), phi_ = float(p_hi)

    cdef int R = whh_v.shape[0], w4 = whh_v.shape[1], Dm = whh_v.shape[2]
    cdef int m = w4 // 4
    cdef int D = Dm // m
    cdef int l = x_init_v.shape[0]
    cdef int hid = w1_v.shape[0]
    cdef int T = horizon

    Y_arr = np.empty((T, l))
    XS_arr = np.empty((T, l))
    H_arr = np.empty((T, m))
    C_arr = np.empty((T, m))
    U_arr = np.empty((T, R, w4))
    A_arr = np.empty((T, w4))
    P_arr = np.empty(T)
    PRAW_arr = np.zeros(T)
    A1_arr = np.zeros((T, hid))
    hist_final_arr = np.empty((D, m))
    c_final_arr = np.array(c0, dtype=np.float64, copy=True)
    cdef double[:, ::1] Y = Y_arr
    cdef double[:, ::1] XS = XS_arr
    cdef double[:, ::1] H = H_arr
    cdef double[:, ::1] C = C_arr
    cdef double[:, :, ::1] U = U_arr
    cdef double[:, ::1] A = A_arr
    cdef double[::1] P = P_arr
    cdef double[::1] PRAW = PRAW_arr
    cdef double[:, ::1] A1 = A1_arr
    cdef double[:, ::1] hist_final = hist_final_arr
    cdef double[::1] c_prev = c_final_arr

    cdef double[::1] hist = np.empty(Dm)
    cdef double[::1] u_in = np.empty(1 + m + l)

    cdef int t, r, i, k, j
    cdef double p_prev = pcarry, p_t, s, acc
    for t in range(T):
        if t == 0:
            for k in range(l):
                XS[0, k] = x_init_v[k]
        else:
            for k in range(l):
                XS[t, k] = Y[t - 1, k]
        _fill_hist(H, hist0_v, hist, t, D, m)
        if pmode == 2:
            p_t = _subnet_fwd(w1_v, b1_v, w2_v, b2c, p_prev, H, hist0_v,
                              XS, t, m, l, plo, phi_, u_in, A1, PRAW)
        else:
            p_t = pv
        P[t] = p_t
        _branch_preact(whh_v, whx_v, hist, XS, t, U)
        for i in range(w4):
            s = 0.0
            for r in range(R):
                s += _phi(U[t, r, i], p_t)
            A[t, i] = s + b_v[i]
        _gate_fwd(A, c_prev, C, H, t, m, gat)
        for k in range(m):
            c_prev[k] = C[t, k]
        for j in range(l):
            acc = 0.0
            for i in range(m):
                acc += wout_v[j, i] * H[t, i]
            Y[t, j] = acc + bout_v[j]
        p_prev = p_t

    _final_hist(H, hist0_v, hist_final, T, D, m)
    p_final = float(P[T - 1]) if T > 0 else pcarry
    return (Y_arr, XS_arr, H_arr, C_arr, U_arr, A_arr, P_arr, PRAW_arr,
            A1_arr, hist_final_arr, c_final_arr, p_final)


def lstm_decode_backward(whh, whx, wout, XS, hist0, c0, H, C, U, A, P, PRAW,
                         A1, dY_loss, gating, p_mode, w1, b1, w2, b2, p_carry,
                         p_lo, p_hi):
    """Compiled twin of ``_pure.lstm_decode_backward``."""
    cdef const double[:, :, ::1] whh_v = np.ascontiguousarray(whh, dtype=np.float64)
    cdef const double[:, :, ::1] whx_v = np.ascontiguousarray(whx, dtype=np.float64)
    cdef const double[:, ::1] wout_v = np.ascontiguousarray(wout, dtype=np.float64)
    cdef const double[:, ::1] XS_v = np.ascontiguousarray(XS, dtype=np.float64)
    cdef const double[:, ::1] hist0_v = np.ascontiguousarray(hist0, dtype=np.float64)
    cdef const double[::1] c0_v = np.ascontiguousarray(c0, dtype=np.float64)
    cdef const double[:, ::1] H_v = np.ascontiguousarray(H, dtype=np.float64)
    cdef const double[:, ::1] C_v = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[:, :, ::1] U_v = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[:, ::1] A_v = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[::1] P_v = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[::1] PRAW_v = np.ascontiguousarray(PRAW, dtype=np.float64)
    cdef const double[:, ::1] A1_v = np.ascontiguousarray(A1, dtype=np.float64)
    cdef const double[:, ::1] dY_v = np.ascontiguousarray(dY_loss, dtype=np.float64)
    cdef const double[:, ::1] w1_v = np.ascontiguousarray(w1, dtype=np.float64)
    cdef const double[::1] b1_v = np.ascontiguousarray(b1, dtype=np.float64)
    cdef const double[::1] w2_v = np.ascontiguousarray(w2, dtype=np.float64)

    cdef int gat = gating, pmode = p_mode
    cdef double pcarry = float(p_carry), plo = float(p_lo), phi_ = float(p_hi)

    cdef int R = whh_v.shape[0], w4 = whh_v.shape[1], Dm = whh_v.shape[2]
    cdef int m = w4 // 4
    cdef int D = Dm // m
    cdef int T = XS_v.shape[0], l = XS_v.shape[1]
    cdef int hid = w1_v.shape[0]

    dwhh_arr = np.zeros((R, w4, Dm))
    dwhx_arr = np.zeros((R, w4, l))
    db_arr = np.zeros(w4)
    dwout_arr = np.zeros((l, m))
    dbout_arr = np.zeros(l)
    dw1_arr = np.zeros((hid, 1 + m + l))
    db1_arr = np.zeros(hid)
    dw2_arr = np.zeros(hid)
    dhist0_arr = np.zeros((D, m))
    gc_arr = np.zeros(m)
    cdef double[:, :, ::1] dwhh = dwhh_arr
    cdef double[:, :, ::1] dwhx = dwhx_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] dwout = dwout_arr
    cdef double[::1] dbout = dbout_arr
    cdef double[:, ::1] dw1 = dw1_arr
    cdef double[::1] db1 = db1_arr
    cdef double[::1] dw2 = dw2_arr
    cdef double[:, ::1] dhist0 = dhist0_arr
    cdef double[::1] gc = gc_arr
    cdef double[:, ::1] GH = np.zeros((T, m))

    cdef double db2c = 0.0, dp_scalar = 0.0, din_p_next = 0.0, g_p, acc
    cdef double[::1] hist = np.empty(Dm)
    cdef double[::1] back = np.empty(Dm)
    cdef double[:, ::1] delta_u = np.empty((R, w4))
    cdef double[::1] dA = np.empty(w4)
    cdef double[::1] dy = np.empty(l)
    cdef double[::1] dx_feedback = np.zeros(l)
    cdef double[::1] u_in = np.empty(1 + m + l)
    cdef double[::1] din_h = np.empty(m)
    cdef double[::1] din_x = np.empty(l)
    cdef double[::1] dz1 = np.empty(hid)

    cdef int t, k, j, i, r
    cdef const double[::1] c_prev
    cdef double dv
    for t in range(T - 1, -1, -1):
        for j in range(l):
            dy[j] = dY_v[t, j] + dx_feedback[j]
            dbout[j] += dy[j]
            for i in range(m):
                dwout[j, i] += dy[j] * H_v[t, i]
        for i in range(m):
            acc = 0.0
            for j in range(l):
                acc += wout_v[j, i] * dy[j]
            GH[t, i] += acc

        c_prev = C_v[t - 1] if t > 0 else c0_v
        _gate_bwd(A_v, c_prev, C_v, GH[t], gc, t, m, gat, dA)
        _fill_hist(H_v, hist0_v, hist, t, D, m)
        g_p = _phi_backward_step(U_v, P_v, dA, t, delta_u) + din_p_next
        for k in range(w4):
            db[k] += dA[k]
        _accumulate_weight_grads(delta_u, hist, XS_v, t, dwhh, dwhx)
        # feedback: this step's input was the previous step's output
        for k in range(l):
            dx_feedback[k] = 0.0
        for r in range(R):
            for i in range(w4):
                dv = delta_u[r, i]
                for k in range(l):
                    dx_feedback[k] += whx_v[r, i, k] * dv
        _route_history(whh_v, delta_u, GH, dhist0, back, t, D, m)
        if pmode == 2:
            _bwd_fill_u_in(H_v, hist0_v, P_v, pcarry, XS_v, t, m, l, u_in)
            din_p_next = _subnet_bwd(w1_v, w2_v, A1_v, u_in, PRAW_v[t], g_p,
                                     plo, phi_, t, m, l, dw1, db1, dw2, &db2c,
                                     din_h, din_x, dz1)
            for k in range(l):
                dx_feedback[k] = dx_feedback[k] + din_x[k]
            if t > 0:
                for k in range(m):
                    GH[t - 1, k] += din_h[k]
            else:
                for k in range(m):
                    dhist0[0, k] += din_h[k]
        else:
            dp_scalar += g_p
            din_p_next = 0.0

    return (dwhh_arr, dwhx_arr, db_arr, dwout_arr, dbout_arr, dp_scalar,
            dw1_arr, db1_arr, dw2_arr, db2c, dhist0_arr, gc_arr, din_p_next)


def simulate_transition_path(m_flat, n, p, noise, s0, threshold):
    """Compiled twin of ``_pure.simulate_transition_path``."""
    m_arr = np.ascontiguousarray(m_flat, dtype=np.float64).reshape(-1)
    cdef const double[::1] M = m_arr
    cdef const double[:, ::1] noise_v = np.ascontiguousarray(noise, dtype=np.float64)
    cdef int nn = n, pp = p
    cdef double thr = float(threshold)
    cdef int T = noise_v.shape[0]

    cdef int size_full = 1
    cdef int q
    for q in range(pp):
        size_full *= nn

    S_arr = np.zeros((T, nn))
    cdef double[:, ::1] S = S_arr
    cdef double[::1] s = np.array(s0, dtype=np.float64, copy=True).reshape(-1)
    cdef double[::1] buf_a = np.empty(size_full)
    cdef double[::1] buf_b = np.empty(size_full)

    cdef int t, step, i, k, size, K
    cdef double acc
    cdef double[::1] src, dst, tmp
    cdef bint over
    for t in range(T):
        # first contraction reads the flat tensor, later ones the scratch
        size = size_full
        K = size
        for k in range(K):
            acc = 0.0
            for i in range(nn):
                acc += s[i] * M[i * K + k]
            buf_a[k] = acc
        src = buf_a
        dst = buf_b
        for step in range(pp - 1):
            K = size // nn
            for k in range(K):
                acc = 0.0
                for i in range(nn):
                    acc += s[i] * src[i * K + k]
                dst[k] = acc
            tmp = src
            src = dst
            dst = tmp
            size = K
        over = False
        for i in range(nn):
            s[i] = src[i] + noise_v[t, i]
            if fabs(s[i]) > thr:
                over = True
        if over:
            return S_arr, True, t
        for i in range(nn):
            S[t, i] = s[i]
    return S_arr, False, -1
