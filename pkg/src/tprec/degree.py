"""Sign-preserving power activation and degree parameterisations.

The activation phi(s, p) = sgn(s) * |s|**p extends integer tensor-power
degrees to real values: it is odd, strictly increasing in s for p > 0, and
reduces to the identity at p = 1.  The degree itself can be a fixed
constant, a trainable scalar, or the output of a small gating MLP evaluated
every time step ("subnet" mode).

Also implemented here: the closed-form lower bound on the degree required
for long memory, (p0/2) * (1 + sqrt(1 + C1/(n*sigma2) - C2/n)) - 1 with
p0 = ln(3/2).  The constants C1 and C2 are inputs, never hard-coded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DomainError, NumericError, ShapeError

__all__ = [
    "P0",
    "GRAD_EPS",
    "DEFAULT_BOUNDS",
    "DegreeParam",
    "MlpParams",
    "DegreeBoundInputs",
    "phi",
    "phi_grad",
    "degree_bound",
    "controller_step",
    "init_mlp_params",
]

#: ln(3/2), the base constant of the degree lower bound.
P0 = math.log(1.5)

#: |s| is clamped below at this value inside phi_grad only (the forward pass
#: is exact); prevents infinite d_s at s = 0 when p < 1.
GRAD_EPS = 1e-6

#: Default clamp range for a learnable degree.  p = 1 is the stable linear
#: regime; values above ~3 explode quickly, values near 0 are numerically
#: degenerate.
DEFAULT_BOUNDS = (0.1, 3.0)

DEGREE_MODES = ("fixed", "scalar", "subnet")


def phi(s, p):
    """Sign-preserving power: sgn(s) * |s|**p, elementwise.

    phi(s, 1) = s and phi(0, p) = 0 for every p (by convention also when
    p <= 0, where the limit does not exist).  Accepts scalars or arrays.
    """
    s_arr = np.asarray(s, dtype=np.float64)
    p_arr = np.asarray(p, dtype=np.float64)
    if not (np.all(np.isfinite(s_arr)) and np.all(np.isfinite(p_arr))):
        raise NumericError("phi requires finite s and p")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sign(s_arr) * np.abs(s_arr) ** p_arr
    out = np.where(s_arr == 0.0, 0.0, out)
    if out.ndim == 0:
        return float(out)
    return out


def phi_grad(s, p):
    """Partial derivatives (d_s, d_p) of phi(s, p).

    d_s = p * a**(p-1) and d_p = sgn(s) * a**p * ln(a) with a = max(|s|,
    1e-6).  The clamp keeps both derivatives finite at s = 0; away from the
    clamp they match central finite differences of :func:`phi`.
    """
    s_arr = np.asarray(s, dtype=np.float64)
    p_arr = np.asarray(p, dtype=np.float64)
    if not (np.all(np.isfinite(s_arr)) and np.all(np.isfinite(p_arr))):
        raise NumericError("phi_grad requires finite s and p")
    a = np.maximum(np.abs(s_arr), GRAD_EPS)
    d_s = p_arr * a ** (p_arr - 1.0)
    d_p = np.sign(s_arr) * a**p_arr * np.log(a)
    if d_s.ndim == 0 and d_p.ndim == 0:
        return float(d_s), float(d_p)
    return d_s, d_p


@dataclass
class MlpParams:
    """Weights of the 2-layer degree controller (tanh hidden, affine out).

    Input layout is (previous degree, previous hidden state, current input),
    so ``w1`` has shape (hidden, 1 + m + l); the output is a single raw
    degree value, clamped by the caller.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64).reshape(-1)
        self.w2 = np.asarray(self.w2, dtype=np.float64).reshape(-1)
        self.b2 = float(self.b2)
        if self.w1.ndim != 2:
            raise ShapeError(f"w1 must be 2-D, got shape {self.w1.shape}")
        hidden = self.w1.shape[0]
        if self.b1.size != hidden or self.w2.size != hidden:
            raise ShapeError(
                f"inconsistent hidden width: w1 rows {hidden}, "
                f"b1 {self.b1.size}, w2 {self.w2.size}"
            )
        for name, arr in (("w1", self.w1), ("b1", self.b1), ("w2", self.w2)):
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite entries in {name}")
        if not math.isfinite(self.b2):
            raise NumericError("non-finite entry in b2")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    def to_dict(self) -> dict:
        return {
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        return cls(np.array(d["w1"]), np.array(d["b1"]), np.array(d["w2"]), d["b2"])


def init_mlp_params(m: int, l: int, seed: int, hidden: int = 3) -> MlpParams:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, zero biases."""
    rng = np.random.default_rng(seed)
    d_in = 1 + m + l
    s1 = 1.0 / math.sqrt(d_in)
    s2 = 1.0 / math.sqrt(hidden)
    return MlpParams(
        w1=rng.uniform(-s1, s1, size=(hidden, d_in)),
        b1=np.zeros(hidden),
        w2=rng.uniform(-s2, s2, size=hidden),
        b2=0.0,
    )


@dataclass
class DegreeParam:
    """The degree p of the recurrence, in one of three modes.

    * ``fixed`` -- constant, never updated.
    * ``scalar`` -- a single trainable value, updated by the optimizer and
      clamped to ``bounds`` after every step.
    * ``subnet`` -- recomputed each time step by the MLP controller from
      (previous degree, previous hidden state, current input).
    """

    mode: str = "fixed"
    value: float = 1.0
    bounds: tuple = DEFAULT_BOUNDS
    subnet: MlpParams | None = None

    def __post_init__(self):
        if self.mode not in DEGREE_MODES:
            raise ArgumentError(
                f"degree mode must be one of {DEGREE_MODES}, got {self.mode!r}"
            )
        self.bounds = (float(self.bounds[0]), float(self.bounds[1]))
        if not self.bounds[0] <= self.bounds[1]:
            raise ArgumentError(f"empty degree bounds {self.bounds}")
        if (self.subnet is not None) != (self.mode == "subnet"):
            raise ArgumentError(
                "subnet weights must be present exactly when mode='subnet'"
            )
        self.value = self.clamp(float(self.value))

    def clamp(self, v: float) -> float:
        lo, hi = self.bounds
        return min(max(float(v), lo), hi)

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "value": self.value, "bounds": list(self.bounds)}
        if self.subnet is not None:
            out["subnet"] = self.subnet.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DegreeParam":
        subnet = MlpParams.from_dict(d["subnet"]) if "subnet" in d else None
        return cls(d["mode"], d["value"], tuple(d["bounds"]), subnet)


def controller_step(ctrl: DegreeParam, p_prev: float, h_prev, x_t) -> float:
    """Degree for the current time step.

    Fixed and scalar modes return the stored value; subnet mode evaluates
    clamp(MLP(p_prev, h_prev, x_t), p_min, p_max) with a tanh hidden layer
    and affine output.
    """
    if ctrl.mode in ("fixed", "scalar"):
        return ctrl.value
    mlp = ctrl.subnet
    h_prev = np.asarray(h_prev, dtype=np.float64).reshape(-1)
    x_t = np.asarray(x_t, dtype=np.float64).reshape(-1)
    u = np.concatenate(([float(p_prev)], h_prev, x_t))
    if u.size != mlp.input_dim:
        raise ShapeError(
            f"controller input has length {u.size}, expected {mlp.input_dim} "
            f"(1 + m + l)"
        )
    a1 = np.tanh(mlp.w1 @ u + mlp.b1)
    raw = float(mlp.w2 @ a1 + mlp.b2)
    return ctrl.clamp(raw)


@dataclass
class DegreeBoundInputs:
    """Inputs to the long-memory degree lower bound.

    ``n`` is the full state dimension l + m, ``sigma2`` the sub-Gaussian
    variance proxy of the transition entries, and C1, C2 the two positive
    constants of the bound (problem-dependent; supplied by the caller).
    """

    n: int
    sigma2: float
    c1: float
    c2: float

    def __post_init__(self):
        self.n = int(self.n)
        self.sigma2 = float(self.sigma2)
        self.c1 = float(self.c1)
        self.c2 = float(self.c2)
        if self.n < 1:
            raise ArgumentError(f"n must be a positive integer, got {self.n}")
        if self.sigma2 <= 0:
            raise DomainError(f"sigma2 must be > 0, got {self.sigma2}")
        if self.c1 <= 0 or self.c2 < 0:
            raise DomainError(
                f"C1 must be > 0 and C2 >= 0, got C1={self.c1}, C2={self.c2}"
            )


def degree_bound(inputs: DegreeBoundInputs) -> float:
    """Closed-form degree lower bound for long memory.

    Returns (p0/2) * (1 + sqrt(1 + C1/(n*sigma2) - C2/n)) - 1 with
    p0 = ln(3/2).  Raises a domain error when the radicand is negative.
    """
    radicand = 1.0 + inputs.c1 / (inputs.n * inputs.sigma2) - inputs.c2 / inputs.n
    if radicand < 0.0:
        raise DomainError(
            "degree bound undefined: 1 + C1/(n*sigma2) - C2/n = "
            f"{radicand} < 0"
        )
    return (P0 / 2.0) * (1.0 + math.sqrt(radicand)) - 1.0
