"""Pure-numpy reference kernels for the recurrence hot paths.

Every function here has a compiled twin in ``_core`` (Cython) with the same
signature and semantics; the package picks one at import time.  The kernels
are deliberately flat: plain ndarrays in, tuples of ndarrays out, no
dataclasses, so both backends stay trivially comparable.

Shared conventions
------------------
* ``whh`` has shape (R, w, D*m) and ``whx`` (R, w, l) where w = m for the
  plain cell and w = 4m for the LSTM; history vectors are the last D hidden
  states flattened newest-first.
* ``p_mode``: 0 = fixed degree, 1 = trainable scalar (identical forward),
  2 = degree sub-network (2-layer MLP, tanh hidden, affine out, clamped).
* The activation is the signed power sgn(u)*|u|**p; its backward uses
  |u| clamped below at 1e-6 (matching the public activation module).
* Degree-gradient chains: the clamp gate zeroes the gradient when the raw
  MLP output left [p_lo, p_hi].
"""

import numpy as np

PHI_GRAD_EPS = 1e-6


def _phi(u, p):
    return np.sign(u) * np.abs(u) ** p


def _phi_grads(u, p):
    a = np.maximum(np.abs(u), PHI_GRAD_EPS)
    d_s = p * a ** (p - 1.0)
    d_p = np.sign(u) * a**p * np.log(a)
    return d_s, d_p


def _hist_vec(H, hist0, t, D, m):
    """History (h_{t-1}, ..., h_{t-D}) flattened, pulling from hist0 for t-1-d < 0."""
    parts = []
    for d in range(D):
        j = t - 1 - d
        parts.append(H[j] if j >= 0 else hist0[-1 - j])
    return np.concatenate(parts)


def _subnet_forward(w1, b1, w2, b2, p_prev, h_prev, x_t, p_lo, p_hi):
    u_in = np.concatenate(([p_prev], h_prev, x_t))
    a1 = np.tanh(w1 @ u_in + b1)
    raw = float(w2 @ a1 + b2)
    return min(max(raw, p_lo), p_hi), raw, a1, u_in


def _subnet_backward(w1, w2, a1, u_in, raw, g_p, p_lo, p_hi, m, l):
    """Backprop g_p (dL/dp_t) through the controller MLP.

    Returns per-step weight gradients plus the gradients w.r.t. the three
    input slots (previous degree, previous hidden state, current input).
    """
    if not (p_lo < raw < p_hi):
        z = np.zeros(1 + m + l)
        return (
            np.zeros_like(w1), np.zeros(w1.shape[0]),
            np.zeros_like(w2), 0.0,
            0.0, z[1 : 1 + m], z[1 + m :],
        )
    da1 = w2 * g_p
    dz1 = da1 * (1.0 - a1 * a1)
    dw1 = np.outer(dz1, u_in)
    db1 = dz1
    dw2 = g_p * a1
    db2 = g_p
    din = w1.T @ dz1
    return dw1, db1, dw2, db2, float(din[0]), din[1 : 1 + m], din[1 + m :]


def rnn_window_forward(
    whh, whx, b, xs, hist0,
    p_mode, p_value, w1, b1, w2, b2, p_carry, p_lo, p_hi,
):
    """Run the decomposed tensor-power cell over a window.

    Returns (H, U, P, PRAW, A1, hist_final, p_final) where H is (T, m),
    U the per-branch pre-activations (T, R, m), P the degree used at each
    step, and PRAW / A1 the sub-network caches (raw output, tanh hidden).
    """
    R, m, Dm = whh.shape
    D = Dm // m
    T, l = xs.shape
    hid = w1.shape[0]

    H = np.empty((T, m))
    U = np.empty((T, R, m))
    P = np.empty(T)
    PRAW = np.zeros(T)
    A1 = np.zeros((T, hid))

    p_prev = p_carry
    for t in range(T):
        hist = _hist_vec(H, hist0, t, D, m)
        if p_mode == 2:
            h_prev = H[t - 1] if t > 0 else hist0[0]
            p_t, raw, a1, _ = _subnet_forward(
                w1, b1, w2, b2, p_prev, h_prev, xs[t], p_lo, p_hi
            )
            PRAW[t] = raw
            A1[t] = a1
        else:
            p_t = p_value
        P[t] = p_t
        u = whh @ hist + whx @ xs[t]
        U[t] = u
        H[t] = _phi(u, p_t).sum(axis=0) + b
        p_prev = p_t

    hist_final = np.empty((D, m))
    for d in range(D):
        j = T - 1 - d
        hist_final[d] = H[j] if j >= 0 else hist0[-1 - j]
    return H, U, P, PRAW, A1, hist_final, P[T - 1] if T > 0 else p_carry


def rnn_window_backward(
    whh, whx, xs, hist0, H, U, P, PRAW, A1, dH_ext,
    p_mode, w1, b1, w2, b2, p_carry, p_lo, p_hi,
):
    """Reverse-mode sweep matching :func:`rnn_window_forward`.

    ``dH_ext`` is dL/dh_t from outside the recurrence (readout path).
    Returns (dwhh, dwhx, db, dp_scalar, dw1, db1, dw2, db2, dhist0,
    dp_carry); dp_scalar accumulates the per-step degree gradient in
    fixed/scalar modes, dp_carry is dL/d(degree entering the window).
    """
    R, m, Dm = whh.shape
    D = Dm // m
    T, l = xs.shape

    dwhh = np.zeros_like(whh)
    dwhx = np.zeros_like(whx)
    db = np.zeros(m)
    dw1 = np.zeros_like(w1)
    db1 = np.zeros(w1.shape[0])
    dw2 = np.zeros_like(w2)
    db2 = 0.0
    dp_scalar = 0.0
    dhist0 = np.zeros((D, m))

    GH = np.array(dH_ext, dtype=np.float64, copy=True)
    din_p_next = 0.0
    for t in range(T - 1, -1, -1):
        g = GH[t]
        hist = _hist_vec(H, hist0, t, D, m)
        d_s, d_p = _phi_grads(U[t], P[t])
        delta_u = g * d_s  # (R, m)
        g_p = float(np.sum(g * d_p)) + din_p_next

        db += g
        dwhh += delta_u[:, :, None] * hist[None, None, :]
        dwhx += delta_u[:, :, None] * xs[t][None, None, :]

        # route through the history slots to earlier hidden states
        back = np.einsum("rwk,rw->k", whh, delta_u)  # (D*m,)
        for d in range(D):
            j = t - 1 - d
            chunk = back[d * m : (d + 1) * m]
            if j >= 0:
                GH[j] += chunk
            else:
                dhist0[-1 - j] += chunk

        if p_mode == 2:
            h_prev = H[t - 1] if t > 0 else hist0[0]
            p_prev = P[t - 1] if t > 0 else p_carry
            u_in = np.concatenate(([p_prev], h_prev, xs[t]))
            gw1, gb1, gw2, gb2, din_p, din_h, _ = _subnet_backward(
                w1, w2, A1[t], u_in, PRAW[t], g_p, p_lo, p_hi, m, l
            )
            dw1 += gw1
            db1 += gb1
            dw2 += gw2
            db2 += gb2
            din_p_next = din_p
            if t > 0:
                GH[t - 1] += din_h
            else:
                dhist0[0] += din_h
        else:
            dp_scalar += g_p
            din_p_next = 0.0

    return dwhh, dwhx, db, dp_scalar, dw1, db1, dw2, db2, dhist0, din_p_next


def _lstm_gate_step(a, c_prev, m, gating):
    """Apply the gate update; returns (c, h, cache-tuple for backward)."""
    f = a[2 * m : 3 * m]
    o = a[3 * m : 4 * m]
    if gating == 0:
        c = c_prev * f
        h = c * o
        return c, h, None
    i = a[0:m]
    g = a[m : 2 * m]
    si = 1.0 / (1.0 + np.exp(-i))
    tg = np.tanh(g)
    sf = 1.0 / (1.0 + np.exp(-f))
    so = 1.0 / (1.0 + np.exp(-o))
    c = c_prev * sf + si * tg
    h = np.tanh(c) * so
    return c, h, (si, tg, sf, so)


def lstm_window_forward(
    whh, whx, b, xs, hist0, c0, gating,
    p_mode, p_value, w1, b1, w2, b2, p_carry, p_lo, p_hi,
):
    """Gated cell over a window; gate order in the stacked 4m vector is
    (input, candidate, forget, output).

    ``gating`` 0 keeps the raw update c' = c*f, h' = c'*o (candidate and
    input slots are computed but unused); 1 is the standard squashed
    update.  Returns (H, C, U, A, P, PRAW, A1, hist_final, c_final,
    p_final).
    """
    R, w4, Dm = whh.shape
    m = w4 // 4
    D = Dm // m
    T, l = xs.shape
    hid = w1.shape[0]

    H = np.empty((T, m))
    C = np.empty((T, m))
    U = np.empty((T, R, w4))
    A = np.empty((T, w4))
    P = np.empty(T)
    PRAW = np.zeros(T)
    A1 = np.zeros((T, hid))

    p_prev = p_carry
    c_prev = np.array(c0, dtype=np.float64, copy=True)
    for t in range(T):
        hist = _hist_vec(H, hist0, t, D, m)
        if p_mode == 2:
            h_prev = H[t - 1] if t > 0 else hist0[0]
            p_t, raw, a1, _ = _subnet_forward(
                w1, b1, w2, b2, p_prev, h_prev, xs[t], p_lo, p_hi
            )
            PRAW[t] = raw
            A1[t] = a1
        else:
            p_t = p_value
        P[t] = p_t
        u = whh @ hist + whx @ xs[t]
        U[t] = u
        a = _phi(u, p_t).sum(axis=0) + b
        A[t] = a
        c_prev, h_t, _ = _lstm_gate_step(a, c_prev, m, gating)
        C[t] = c_prev
        H[t] = h_t
        p_prev = p_t

    hist_final = np.empty((D, m))
    for d in range(D):
        j = T - 1 - d
        hist_final[d] = H[j] if j >= 0 else hist0[-1 - j]
    return H, C, U, A, P, PRAW, A1, hist_final, c_prev, P[T - 1] if T > 0 else p_carry


def _lstm_gate_backward(a, c_prev, c_t, gh, gc_in, m, gating):
    """Gradients of one gate update.

    Returns (dA, gc_prev_factor) where dA is dL/da (4m) and the caller
    propagates gc_prev = gc * factor into the previous cell state.
    """
    dA = np.zeros(4 * m)
    f = a[2 * m : 3 * m]
    o = a[3 * m : 4 * m]
    if gating == 0:
        gc = gh * o + gc_in
        dA[2 * m : 3 * m] = gc * c_prev
        dA[3 * m : 4 * m] = gh * c_t
        gc_prev = gc * f
        return dA, gc_prev
    i = a[0:m]
    g = a[m : 2 * m]
    si = 1.0 / (1.0 + np.exp(-i))
    tg = np.tanh(g)
    sf = 1.0 / (1.0 + np.exp(-f))
    so = 1.0 / (1.0 + np.exp(-o))
    tc = np.tanh(c_t)
    gc = gh * so * (1.0 - tc * tc) + gc_in
    dA[0:m] = gc * tg * si * (1.0 - si)
    dA[m : 2 * m] = gc * si * (1.0 - tg * tg)
    dA[2 * m : 3 * m] = gc * c_prev * sf * (1.0 - sf)
    dA[3 * m : 4 * m] = gh * tc * so * (1.0 - so)
    gc_prev = gc * sf
    return dA, gc_prev


def lstm_window_backward(
    whh, whx, xs, hist0, c0, H, C, U, A, P, PRAW, A1,
    dH_ext, dC_last, dP_last,
    gating, p_mode, w1, b1, w2, b2, p_carry, p_lo, p_hi,
):
    """Reverse sweep for :func:`lstm_window_forward`.

    ``dC_last`` and ``dP_last`` seed the cell-state / degree chains at the
    window end (used when a decoder consumed the final state).  Returns
    (dwhh, dwhx, db, dp_scalar, dw1, db1, dw2, db2, dhist0, dc0,
    dp_carry).
    """
    R, w4, Dm = whh.shape
    m = w4 // 4
    D = Dm // m
    T, l = xs.shape

    dwhh = np.zeros_like(whh)
    dwhx = np.zeros_like(whx)
    db = np.zeros(w4)
    dw1 = np.zeros_like(w1)
    db1 = np.zeros(w1.shape[0])
    dw2 = np.zeros_like(w2)
    db2 = 0.0
    dp_scalar = 0.0
    dhist0 = np.zeros((D, m))

    GH = np.array(dH_ext, dtype=np.float64, copy=True)
    gc_next = np.array(dC_last, dtype=np.float64, copy=True)
    din_p_next = float(dP_last)
    for t in range(T - 1, -1, -1):
        gh = GH[t]
        c_prev = C[t - 1] if t > 0 else c0
        dA, gc_next = _lstm_gate_backward(A[t], c_prev, C[t], gh, gc_next, m, gating)

        hist = _hist_vec(H, hist0, t, D, m)
        d_s, d_p = _phi_grads(U[t], P[t])
        delta_u = dA * d_s  # (R, 4m)
        g_p = float(np.sum(dA * d_p)) + din_p_next

        db += dA
        dwhh += delta_u[:, :, None] * hist[None, None, :]
        dwhx += delta_u[:, :, None] * xs[t][None, None, :]

        back = np.einsum("rwk,rw->k", whh, delta_u)
        for d in range(D):
            j = t - 1 - d
            chunk = back[d * m : (d + 1) * m]
            if j >= 0:
                GH[j] += chunk
            else:
                dhist0[-1 - j] += chunk

        if p_mode == 2:
            h_prev = H[t - 1] if t > 0 else hist0[0]
            p_prev = P[t - 1] if t > 0 else p_carry
            u_in = np.concatenate(([p_prev], h_prev, xs[t]))
            gw1, gb1, gw2, gb2, din_p, din_h, _ = _subnet_backward(
                w1, w2, A1[t], u_in, PRAW[t], g_p, p_lo, p_hi, m, l
            )
            dw1 += gw1
            db1 += gb1
            dw2 += gw2
            db2 += gb2
            din_p_next = din_p
            if t > 0:
                GH[t - 1] += din_h
            else:
                dhist0[0] += din_h
        else:
            dp_scalar += g_p
            din_p_next = 0.0

    return (
        dwhh, dwhx, db, dp_scalar, dw1, db1, dw2, db2,
        dhist0, gc_next, din_p_next,
    )


def lstm_decode_forward(
    whh, whx, b, wout, bout, x_init, hist0, c0, horizon, gating,
    p_mode, p_value, w1, b1, w2, b2, p_carry, p_lo, p_hi,
):
    """Autoregressive decoding: each step feeds back its own projection.

    y_t = wout @ h_t + bout becomes the next input.  Returns
    (Y, XS, H, C, U, A, P, PRAW, A1, hist_final, c_final, p_final) where
    XS records the inputs actually consumed (XS[0] = x_init).
    """
    R, w4, Dm = whh.shape
    m = w4 // 4
    D = Dm // m
    l = x_init.shape[0]
    hid = w1.shape[0]
    T = horizon

    Y = np.empty((T, l))
    XS = np.empty((T, l))
    H = np.empty((T, m))
    C = np.empty((T, m))
    U = np.empty((T, R, w4))
    A = np.empty((T, w4))
    P = np.empty(T)
    PRAW = np.zeros(T)
    A1 = np.zeros((T, hid))

    x_t = np.array(x_init, dtype=np.float64, copy=True)
    p_prev = p_carry
    c_prev = np.array(c0, dtype=np.float64, copy=True)
    for t in range(T):
        XS[t] = x_t
        hist = _hist_vec(H, hist0, t, D, m)
        if p_mode == 2:
            h_prev = H[t - 1] if t > 0 else hist0[0]
            p_t, raw, a1, _ = _subnet_forward(
                w1, b1, w2, b2, p_prev, h_prev, x_t, p_lo, p_hi
            )
            PRAW[t] = raw
            A1[t] = a1
        else:
            p_t = p_value
        P[t] = p_t
        u = whh @ hist + whx @ x_t
        U[t] = u
        a = _phi(u, p_t).sum(axis=0) + b
        A[t] = a
        c_prev, h_t, _ = _lstm_gate_step(a, c_prev, m, gating)
        C[t] = c_prev
        H[t] = h_t
        y_t = wout @ h_t + bout
        Y[t] = y_t
        x_t = y_t
        p_prev = p_t

    hist_final = np.empty((D, m))
    for d in range(D):
        j = T - 1 - d
        hist_final[d] = H[j] if j >= 0 else hist0[-1 - j]
    return Y, XS, H, C, U, A, P, PRAW, A1, hist_final, c_prev, P[T - 1] if T > 0 else p_carry


def lstm_decode_backward(
    whh, whx, wout, XS, hist0, c0, H, C, U, A, P, PRAW, A1,
    dY_loss, gating, p_mode, w1, b1, w2, b2, p_carry, p_lo, p_hi,
):
    """Reverse sweep for :func:`lstm_decode_forward`.

    The feedback path (y_t is x_{t+1}) is differentiated: each step's input
    gradient is added to the previous step's output gradient.  Returns
    (dwhh, dwhx, db, dwout, dbout, dp_scalar, dw1, db1, dw2, db2, dhist0,
    dc0, dp_carry).
    """
    R, w4, Dm = whh.shape
    m = w4 // 4
    D = Dm // m
    T, l = XS.shape

    dwhh = np.zeros_like(whh)
    dwhx = np.zeros_like(whx)
    db = np.zeros(w4)
    dwout = np.zeros_like(wout)
    dbout = np.zeros(l)
    dw1 = np.zeros_like(w1)
    db1 = np.zeros(w1.shape[0])
    dw2 = np.zeros_like(w2)
    db2 = 0.0
    dp_scalar = 0.0
    dhist0 = np.zeros((D, m))

    GH = np.zeros((T, m))
    gc_next = np.zeros(m)
    din_p_next = 0.0
    dx_feedback = np.zeros(l)
    for t in range(T - 1, -1, -1):
        dy = dY_loss[t] + dx_feedback
        dwout += np.outer(dy, H[t])
        dbout += dy
        GH[t] += wout.T @ dy

        gh = GH[t]
        c_prev = C[t - 1] if t > 0 else c0
        dA, gc_next = _lstm_gate_backward(A[t], c_prev, C[t], gh, gc_next, m, gating)

        hist = _hist_vec(H, hist0, t, D, m)
        d_s, d_p = _phi_grads(U[t], P[t])
        delta_u = dA * d_s
        g_p = float(np.sum(dA * d_p)) + din_p_next

        db += dA
        dwhh += delta_u[:, :, None] * hist[None, None, :]
        dwhx += delta_u[:, :, None] * XS[t][None, None, :]
        dx_feedback = np.einsum("rwk,rw->k", whx, delta_u)

        back = np.einsum("rwk,rw->k", whh, delta_u)
        for d in range(D):
            j = t - 1 - d
            chunk = back[d * m : (d + 1) * m]
            if j >= 0:
                GH[j] += chunk
            else:
                dhist0[-1 - j] += chunk

        if p_mode == 2:
            h_prev = H[t - 1] if t > 0 else hist0[0]
            p_prev = P[t - 1] if t > 0 else p_carry
            u_in = np.concatenate(([p_prev], h_prev, XS[t]))
            gw1, gb1, gw2, gb2, din_p, din_h, din_x = _subnet_backward(
                w1, w2, A1[t], u_in, PRAW[t], g_p, p_lo, p_hi, m, l
            )
            dw1 += gw1
            db1 += gb1
            dw2 += gw2
            db2 += gb2
            din_p_next = din_p
            dx_feedback = dx_feedback + din_x
            if t > 0:
                GH[t - 1] += din_h
            else:
                dhist0[0] += din_h
        else:
            dp_scalar += g_p
            din_p_next = 0.0

    return (
        dwhh, dwhx, db, dwout, dbout, dp_scalar,
        dw1, db1, dw2, db2, dhist0, gc_next, din_p_next,
    )


def simulate_transition_path(m_flat, n, p, noise, s0, threshold):
    """Iterate s_{t+1} = M . s_t^(tensor p) + e_{t+1} over the noise rows.

    ``m_flat`` is the transition tensor reshaped to (n**p, n); ``noise`` is
    (T, n) with inactive coordinates already zeroed.  Stops early if any
    coordinate magnitude exceeds ``threshold``; returns (S, diverged,
    t_div) with rows of S beyond t_div left as zero.
    """
    T = noise.shape[0]
    S = np.zeros((T, n))
    s = np.array(s0, dtype=np.float64, copy=True)
    for t in range(T):
        cur = m_flat
        for _ in range(p):
            cur = s @ cur.reshape(n, -1)
        s = cur + noise[t]
        if np.any(np.abs(s) > threshold):
            return S, True, t
        S[t] = s
    return S, False, -1
