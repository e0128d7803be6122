"""Recurrence cells, their Jacobians, and the instability witness.

Three cell forms:

* :func:`tp_cell_exact` -- the literal tensor transition G.(x;h)^(tensor p)
  + b; integer degrees only, used as the reference/oracle.
* :func:`tp_cell_decomposed` -- the trainable rank-R form
  sum_r phi_p(W_hh,r . hist + W_hx,r . x) + b, which supports real degrees
  and multi-step history (D_h > 1).
* :func:`tp_lstm_step` -- the gated variant producing a stacked
  (input, candidate, forget, output) pre-activation.  The default update
  uses only the forget and output gates without squashing (c' = c*f,
  h' = c'*o); ``standard_gating`` switches to the usual sigmoid/tanh form.

:func:`jacobian_analytic` gives the exact state Jacobian of the exact cell;
:func:`stability_probe` uses its homogeneity in h (degree p-1) to construct
inputs with arbitrarily large local amplification when p > 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .degree import phi
from .errors import ArgumentError, DomainError, NumericError, ShapeError
from .tensor import SymTensor, spectral_norm, tp_contract

__all__ = [
    "TPCellParams",
    "TPLSTMParams",
    "CellState",
    "tp_cell_exact",
    "tp_cell_decomposed",
    "tp_lstm_step",
    "jacobian_analytic",
    "stability_probe",
    "params_from_factors",
    "init_tp_cell",
    "init_tp_lstm",
]


def _check_weight_stack(whh, whx, b, width_mult, cls_name):
    if whh.ndim != 3 or whx.ndim != 3:
        raise ShapeError(f"{cls_name} weights must be stacked (R, out, in) arrays")
    R, w_hh, dm = whh.shape
    R2, w_hx, _ = whx.shape
    if R != R2 or w_hh != w_hx:
        raise ShapeError(
            f"branch stacks disagree: whh {whh.shape}, whx {whx.shape}"
        )
    if b.shape != (w_hh,):
        raise ShapeError(f"bias shape {b.shape} does not match output width {w_hh}")
    m = w_hh // width_mult
    if w_hh != width_mult * m or m == 0:
        raise ShapeError(f"output width {w_hh} is not {width_mult}*m")
    if dm % m != 0:
        raise ShapeError(f"history width {dm} is not a multiple of m = {m}")
    for name, arr in (("whh", whh), ("whx", whx), ("b", b)):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite entries in {name}")


@dataclass
class TPCellParams:
    """Rank-R decomposed cell weights.

    ``whh[r]`` is m x (m*D_h) over the flattened history (newest first),
    ``whx[r]`` is m x l, bias ``b`` is length m.
    """

    whh: np.ndarray
    whx: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.whh = np.ascontiguousarray(self.whh, dtype=np.float64)
        self.whx = np.ascontiguousarray(self.whx, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64).reshape(-1)
        _check_weight_stack(self.whh, self.whx, self.b, 1, "TPCellParams")

    @property
    def rank(self) -> int:
        return self.whh.shape[0]

    @property
    def m(self) -> int:
        return self.whh.shape[1]

    @property
    def l(self) -> int:
        return self.whx.shape[2]

    @property
    def d_h(self) -> int:
        return self.whh.shape[2] // self.m

    def to_dict(self) -> dict:
        return {
            "whh": self.whh.tolist(),
            "whx": self.whx.tolist(),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TPCellParams":
        return cls(np.array(d["whh"]), np.array(d["whx"]), np.array(d["b"]))


@dataclass
class TPLSTMParams:
    """Gate-stacked variant: per-branch output width 4m, split (i, g, f, o)."""

    whh: np.ndarray
    whx: np.ndarray
    b: np.ndarray
    standard_gating: bool = False

    def __post_init__(self):
        self.whh = np.ascontiguousarray(self.whh, dtype=np.float64)
        self.whx = np.ascontiguousarray(self.whx, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64).reshape(-1)
        self.standard_gating = bool(self.standard_gating)
        _check_weight_stack(self.whh, self.whx, self.b, 4, "TPLSTMParams")

    @property
    def rank(self) -> int:
        return self.whh.shape[0]

    @property
    def m(self) -> int:
        return self.whh.shape[1] // 4

    @property
    def l(self) -> int:
        return self.whx.shape[2]

    @property
    def d_h(self) -> int:
        return self.whh.shape[2] // self.m

    def to_dict(self) -> dict:
        return {
            "whh": self.whh.tolist(),
            "whx": self.whx.tolist(),
            "b": self.b.tolist(),
            "standard_gating": self.standard_gating,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TPLSTMParams":
        return cls(
            np.array(d["whh"]), np.array(d["whx"]), np.array(d["b"]),
            d.get("standard_gating", False),
        )


@dataclass
class CellState:
    """Hidden-state history (newest row first), optional cell memory, and
    the degree carried into the next step (consumed by subnet mode)."""

    h_history: np.ndarray
    c: np.ndarray | None = None
    p_carry: float = 1.0

    def __post_init__(self):
        self.h_history = np.ascontiguousarray(self.h_history, dtype=np.float64)
        if self.h_history.ndim != 2:
            raise ShapeError(
                f"h_history must be (D_h, m), got shape {self.h_history.shape}"
            )
        if self.c is not None:
            self.c = np.ascontiguousarray(self.c, dtype=np.float64).reshape(-1)
            if self.c.size != self.h_history.shape[1]:
                raise ShapeError(
                    f"cell memory length {self.c.size} != m = "
                    f"{self.h_history.shape[1]}"
                )
        self.p_carry = float(self.p_carry)

    @classmethod
    def zeros(cls, m: int, d_h: int = 1, with_cell: bool = False,
              p0: float = 1.0) -> "CellState":
        c = np.zeros(m) if with_cell else None
        return cls(np.zeros((d_h, m)), c, p0)

    @property
    def h(self) -> np.ndarray:
        """Most recent hidden state."""
        return self.h_history[0]

    def hist_flat(self) -> np.ndarray:
        return self.h_history.reshape(-1)

    def advanced(self, h_new: np.ndarray, c_new=None, p_used=None) -> "CellState":
        hist = np.vstack([h_new[None, :], self.h_history[:-1]])
        return CellState(
            hist,
            self.c if c_new is None else c_new,
            self.p_carry if p_used is None else p_used,
        )


def _check_cell_io(G: SymTensor, x, h, p: int):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    if p < 1 or p != int(p):
        raise ArgumentError(f"exact cell needs a positive integer degree, got {p}")
    n = x.size + h.size
    if G.ndim != p + 1:
        raise ShapeError(f"tensor has {G.ndim} indices, expected {p + 1}")
    if any(G.dims[i] != n for i in range(p)):
        raise ShapeError(
            f"leading dims {G.dims[:p]} do not match l + m = {n}"
        )
    if G.dims[p] != h.size:
        raise ShapeError(
            f"output dim {G.dims[p]} does not match hidden size {h.size}"
        )
    return x, h, int(p)


def tp_cell_exact(G: SymTensor, b, x, h, p: int) -> np.ndarray:
    """Reference transition: G.(x;h)^(tensor p) + b, integer p."""
    x, h, p = _check_cell_io(G, x, h, p)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if b.size != h.size:
        raise ShapeError(f"bias length {b.size} != hidden size {h.size}")
    v = np.concatenate([x, h])
    return tp_contract(G, v, p) + b


def tp_cell_decomposed(params: TPCellParams, x, state: CellState, p: float) -> np.ndarray:
    """Trainable cell: sum_r phi_p(whh[r] . hist + whx[r] . x) + b.

    With D_h > 1 the history vector concatenates the last D_h hidden
    states, newest first.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != params.l:
        raise ShapeError(f"input length {x.size} != l = {params.l}")
    if state.h_history.shape != (params.d_h, params.m):
        raise ShapeError(
            f"state history shape {state.h_history.shape} != "
            f"({params.d_h}, {params.m})"
        )
    with np.errstate(over="ignore"):
        u = params.whh @ state.hist_flat() + params.whx @ x  # (R, m)
        vals = np.sign(u) * np.abs(u) ** float(p)
    for r in range(params.rank):
        if not np.all(np.isfinite(vals[r])):
            raise NumericError(f"non-finite activation in branch {r}")
    return vals.sum(axis=0) + params.b


def tp_lstm_step(params: TPLSTMParams, x, state: CellState, p: float) -> CellState:
    """One gated step; returns the advanced state (h pushed onto history).

    Default update: c' = c * f, h' = c' * o (gates used raw; the input and
    candidate slots are computed but do not enter the update).  With
    ``standard_gating``: c' = c*sigmoid(f) + sigmoid(i)*tanh(g),
    h' = tanh(c')*sigmoid(o).
    """
    if state.c is None:
        raise ShapeError("LSTM step requires a state with cell memory c")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != params.l:
        raise ShapeError(f"input length {x.size} != l = {params.l}")
    if state.h_history.shape != (params.d_h, params.m):
        raise ShapeError(
            f"state history shape {state.h_history.shape} != "
            f"({params.d_h}, {params.m})"
        )
    m = params.m
    u = params.whh @ state.hist_flat() + params.whx @ x  # (R, 4m)
    a = phi(u, float(p)).sum(axis=0) + params.b
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite gate pre-activation")
    f = a[2 * m : 3 * m]
    o = a[3 * m :]
    if params.standard_gating:
        i = a[:m]
        g = a[m : 2 * m]
        sig = lambda z: 1.0 / (1.0 + np.exp(-z))
        c_new = state.c * sig(f) + sig(i) * np.tanh(g)
        h_new = np.tanh(c_new) * sig(o)
    else:
        c_new = state.c * f
        h_new = c_new * o
    return state.advanced(h_new, c_new, float(p))


def params_from_factors(factors, out_weights, p: int, l: int) -> TPCellParams:
    """Decomposed-cell weights realizing a factor-built exact tensor.

    For G = sum_r w_r^(tensor p) (x) a_r the cell needs, in branch r and
    output row j, the weight row sgn(a_r[j]) * |a_r[j]|**(1/p) * w_r; the
    signed power then reproduces a_r[j] * <w_r, (x;h)>**p exactly for odd
    integer p (for even p the sign of the inner product is preserved rather
    than squared away -- a documented heuristic).
    """
    if p < 1 or p != int(p):
        raise ArgumentError(f"p must be a positive integer, got {p}")
    factors = [np.asarray(w, dtype=np.float64).reshape(-1) for w in factors]
    out_weights = [np.asarray(a, dtype=np.float64).reshape(-1) for a in out_weights]
    if not factors:
        raise ArgumentError("factor list is empty")
    n = factors[0].size
    m = out_weights[0].size
    if n <= l:
        raise ShapeError(f"factor length {n} must exceed input size l = {l}")
    if n - l != m:
        raise ShapeError(
            f"factor length {n} minus l = {l} must equal output size m = {m}"
        )
    R = len(factors)
    whh = np.zeros((R, m, m))
    whx = np.zeros((R, m, l))
    for r, (w, a) in enumerate(zip(factors, out_weights)):
        scale = np.sign(a) * np.abs(a) ** (1.0 / p)
        whx[r] = scale[:, None] * w[None, :l]
        whh[r] = scale[:, None] * w[None, l:]
    return TPCellParams(whh, whx, np.zeros(m))


def jacobian_analytic(G: SymTensor, b, x, h, p: int) -> np.ndarray:
    """Exact d(new h)/d(h) of the exact cell at (x, h).

    For a tensor symmetric (fully or cyclically) over its leading p indices
    this is p * (G . v^(tensor p-1))^T restricted to the h rows, with
    v = (x;h); without declared symmetry it falls back to the sum over
    which mode the derivative hits.  The bias never enters.  p = 1 gives a
    constant matrix (the h-block of the weight matrix, transposed).
    """
    x, h, p = _check_cell_io(G, x, h, p)
    l = x.size
    m = h.size
    n = l + m
    v = np.concatenate([x, h])
    arr = G.array
    if p == 1:
        return arr[l:, :].T.copy()
    if G.sym_prefix == p:
        cur = arr
        for _ in range(p - 1):
            cur = (v @ cur.reshape(n, -1)).reshape(
                cur.shape[1:]
            )
        # cur is (n, m): the once-contracted slice
        return p * cur[l:, :].T
    J = np.zeros((m, h.size))
    for k in range(p):
        operands = [arr, list(range(p + 1))]
        for mode in range(p):
            if mode != k:
                operands.extend([v, [mode]])
        t_k = np.einsum(*operands, [k, p], optimize=True)  # (n, m)
        J += t_k[l:, :].T
    return J


def stability_probe(G: SymTensor, x, K: float, p: int, seed: int = 0):
    """Construct a hidden state where the local Jacobian norm exceeds K.

    Works by degree-(p-1) homogeneity of the Jacobian in h: pick a direction
    h0 whose hidden-block response is nonzero, then double the scale until
    the Jacobian 2-norm passes K.  Requires integer p > 1; at p = 1 the
    Jacobian is constant and no scaling can change it.

    Returns (h_witness, norm_value) with norm_value the certified spectral
    norm of the Jacobian at the witness.
    """
    if p == 1:
        raise ArgumentError(
            "degree-1 transitions have a constant Jacobian; scaling h cannot "
            "raise its norm, probe inapplicable"
        )
    if p < 1 or p != int(p):
        raise ArgumentError(f"p must be an integer > 1, got {p}")
    if K <= 0:
        raise ArgumentError(f"threshold K must be > 0, got {K}")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    l = x.size
    m = G.dims[-1]
    n = G.dims[0]
    if n != l + m:
        raise ShapeError(f"leading dim {n} != l + m = {l + m}")
    p = int(p)

    hidden_block = G.array[(slice(l, None),) * p + (slice(None),)]
    block_scale = float(np.abs(hidden_block).max())
    if block_scale == 0.0:
        raise DomainError(
            "the hidden-to-hidden block of the transition tensor is zero; "
            "the instability witness does not apply (the model may be stable)"
        )

    rng = np.random.default_rng(seed)
    h0 = None
    for _ in range(50):
        cand = rng.standard_normal(m)
        cand /= np.linalg.norm(cand)
        # leading-order Jacobian direction: hidden block contracted p-1 times
        cur = hidden_block
        for _ in range(p - 1):
            cur = (cand @ cur.reshape(m, -1)).reshape(cur.shape[1:])
        if np.abs(cur).max() > 1e-12 * block_scale:
            h0 = cand
            break
    if h0 is None:
        raise DomainError(
            "could not find a direction with nonzero hidden-block response"
        )

    b = np.zeros(m)
    t = 1.0
    last_norm = 0.0
    for _ in range(200):
        J = jacobian_analytic(G, b, x, t * h0, p)
        if not np.all(np.isfinite(J)):
            raise NumericError(
                f"Jacobian overflowed before exceeding K={K}; last finite "
                f"norm was {last_norm}"
            )
        nrm = float(np.linalg.norm(J, 2))
        if nrm > K:
            cert = spectral_norm(SymTensor.from_array(J), restarts=5, seed=seed)
            return t * h0, cert.value
        last_norm = nrm
        t *= 2.0
    raise NumericError(
        f"200 doublings did not push the Jacobian norm past K={K}; last "
        f"norm {last_norm}"
    )


def init_tp_cell(m: int, l: int, rank: int = 1, d_h: int = 1,
                 seed: int = 0) -> TPCellParams:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, zero bias."""
    rng = np.random.default_rng(seed)
    fan_in = d_h * m + l
    s = 1.0 / math.sqrt(fan_in)
    return TPCellParams(
        whh=rng.uniform(-s, s, size=(rank, m, d_h * m)),
        whx=rng.uniform(-s, s, size=(rank, m, l)),
        b=np.zeros(m),
    )


def init_tp_lstm(m: int, l: int, rank: int = 1, d_h: int = 1, seed: int = 0,
                 standard_gating: bool = False) -> TPLSTMParams:
    """Same init as the plain cell.  With the squashed gates the forget bias
    starts at one (sigmoid(1) ~ 0.73) so early cell states persist; the raw
    product gating keeps a zero bias, where |f| < 1 at init keeps the
    multiplicative state chain contractive."""
    rng = np.random.default_rng(seed)
    fan_in = d_h * m + l
    s = 1.0 / math.sqrt(fan_in)
    b = np.zeros(4 * m)
    if standard_gating:
        b[2 * m : 3 * m] = 1.0
    return TPLSTMParams(
        whh=rng.uniform(-s, s, size=(rank, 4 * m, d_h * m)),
        whx=rng.uniform(-s, s, size=(rank, 4 * m, l)),
        b=b,
        standard_gating=standard_gating,
    )
