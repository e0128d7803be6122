"""Stochastic simulation of tensor-power transition processes and
long/short-memory diagnostics.

The transition process iterates s^(t) = M . (s^(t-1))^{(x) p} + e^(t) from the
origin, where M is a (p+1)-way tensor whose first p modes are contracted with
copies of the state and the noise e^(t) is supported on the first l
coordinates.  Diagnostics estimate autocovariance summability and the R/S
Hurst exponent, and classify a series as short- or long-memory consistent.
The classification thresholds are heuristics (summability of an infinite
series is undecidable from finite data) and every one of them is exposed in
``MemoryConfig``.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._kernels import simulate_transition_path
from .errors import ArgumentError, DomainError
from .tensor import SymTensor, spectral_norm, symmetrize_first_p

VERDICT_SHORT = "short-memory-consistent"
VERDICT_LONG = "long-memory-consistent"
VERDICT_INCONCLUSIVE = "inconclusive"

DIVERGENCE_THRESHOLD = 1e12
DEFAULT_BURN_IN = 1000

NOISE_DISTRIBUTIONS = ("gaussian", "uniform", "none")


@dataclass
class NoiseSpec:
    """Innovation distribution, supported on the first ``active_dims`` coords.

    ``kappa`` optionally records the assumed finite moment order (>= 2); it is
    diagnostic metadata and does not alter sampling.
    """

    distribution: str
    active_dims: int
    sigma: float = 1.0
    a: float = 0.0
    b: float = 1.0
    kappa: Optional[float] = None

    def __post_init__(self):
        if self.distribution not in NOISE_DISTRIBUTIONS:
            raise ArgumentError(
                f"unknown distribution {self.distribution!r}; "
                f"expected one of {NOISE_DISTRIBUTIONS}"
            )
        self.active_dims = int(self.active_dims)
        if self.active_dims < 1:
            raise ArgumentError("active_dims must be at least 1")
        if self.distribution == "gaussian" and not self.sigma > 0:
            raise DomainError("gaussian noise requires sigma > 0")
        if self.distribution == "uniform" and not self.a < self.b:
            raise DomainError("uniform noise requires a < b")
        if self.kappa is not None and not self.kappa >= 2:
            raise DomainError("moment order kappa must be >= 2")

    def sample(self, steps: int, n: int, rng) -> np.ndarray:
        out = np.zeros((steps, n))
        l = self.active_dims
        if self.distribution == "gaussian":
            out[:, :l] = self.sigma * rng.standard_normal((steps, l))
        elif self.distribution == "uniform":
            out[:, :l] = rng.uniform(self.a, self.b, (steps, l))
        return out


@dataclass
class ProcessSpec:
    """Transition tensor M (p+1 modes, all of length n) plus noise law."""

    M: SymTensor
    p: int
    noise: NoiseSpec
    n: int

    def __post_init__(self):
        self.p = int(self.p)
        self.n = int(self.n)
        if self.p < 1:
            raise ArgumentError("p must be a positive integer")
        dims = self.M.dims
        if len(dims) != self.p + 1 or any(d != self.n for d in dims):
            raise ArgumentError(
                f"M must have {self.p + 1} modes all of length {self.n}, "
                f"got dims {dims}"
            )
        if self.M.sym_prefix != self.p:
            raise ArgumentError("M must be symmetric over its first p modes")
        if self.noise.active_dims > self.n:
            raise ArgumentError("noise active_dims cannot exceed n")


@dataclass
class SimulationResult:
    values: np.ndarray  # (T_kept, n); shorter than requested if divergent
    diverged: bool
    divergence_step: int  # absolute step index, -1 if the path stayed finite


def simulate_tprnp(spec: ProcessSpec, T: int, burn_in: int = DEFAULT_BURN_IN,
                   seed: int = 0,
                   divergence_threshold: float = DIVERGENCE_THRESHOLD,
                   ) -> SimulationResult:
    """Iterate the process from s^(0) = 0 and drop the burn-in prefix.

    Divergence (any coordinate beyond the threshold) is data, not an error:
    the path is truncated at the offending step and flagged.
    """
    T = int(T)
    burn_in = int(burn_in)
    if T < 1:
        raise ArgumentError("T must be positive")
    if burn_in < 0:
        raise ArgumentError("burn_in must be nonnegative")
    n, p = spec.n, spec.p
    m_flat = np.ascontiguousarray(spec.M.array.reshape(n**p, n))
    steps = burn_in + T
    rng = np.random.default_rng(seed)
    noise = spec.noise.sample(steps, n, rng)
    S, diverged, t_div = simulate_transition_path(
        m_flat, n, p, noise, np.zeros(n), divergence_threshold
    )
    S = np.asarray(S)
    if diverged:
        kept = S[burn_in:t_div] if t_div > burn_in else np.empty((0, n))
    else:
        kept = S[burn_in:]
    return SimulationResult(values=kept, diverged=bool(diverged),
                            divergence_step=int(t_div))


def sample_subgaussian_M(n: int, p: int, sigma: float, seed: int = 0) -> SymTensor:
    """Gaussian random transition tensor, averaged over cyclic index shifts.

    Entries of the raw (p+1)-way tensor are i.i.d. N(0, sigma^2); the first p
    modes are then cyclically symmetrized, which preserves zero mean and
    sub-Gaussianity while enforcing the symmetry the contraction needs.
    """
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    rng = np.random.default_rng(seed)
    arr = rng.normal(0.0, sigma, size=(n,) * (p + 1))
    return symmetrize_first_p(arr, p)


def autocovariance(series, max_lag: int) -> np.ndarray:
    """Biased autocovariance estimates gamma_hat(0..max_lag).

    gamma_hat(k) = (1/T) sum_t (s_t - mean)(s_{t+k} - mean); the 1/T factor
    (rather than 1/(T-k)) keeps the sequence positive semidefinite.
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    max_lag = int(max_lag)
    if max_lag < 0:
        raise ArgumentError("max_lag must be nonnegative")
    T = x.size
    if not T > 10 * max_lag:
        raise ArgumentError(
            f"series length {T} too short for max_lag {max_lag} "
            "(need length > 10 * max_lag)"
        )
    x = x - x.mean()
    gamma = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        gamma[k] = x[: T - k] @ x[k:] / T
    return gamma


def hurst_rs(series) -> float:
    """Rescaled-range Hurst estimate.

    Averages R/S over non-overlapping blocks at window sizes 16, 32, ... up
    to T/4 and returns the slope of the log-log regression.  NaN when fewer
    than two window sizes are usable (short or constant input).
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    T = x.size
    sizes = []
    w = 16
    while w <= T // 4:
        sizes.append(w)
        w *= 2
    log_w, log_rs = [], []
    for w in sizes:
        blocks = x[: (T // w) * w].reshape(-1, w)
        centered = blocks - blocks.mean(axis=1, keepdims=True)
        z = np.cumsum(centered, axis=1)
        r = z.max(axis=1) - z.min(axis=1)
        s = blocks.std(axis=1)
        ok = s > 0
        if not np.any(ok):
            continue
        rs = float(np.mean(r[ok] / s[ok]))
        if rs > 0:
            log_w.append(math.log2(w))
            log_rs.append(math.log2(rs))
    if len(log_w) < 2:
        return float("nan")
    slope = np.polyfit(log_w, log_rs, 1)[0]
    return float(slope)


@dataclass
class MemoryConfig:
    """Thresholds for the memory verdict; all of them are heuristics.

    max_lag:          autocovariance horizon (default: length // 20).
    plateau_rel_tol:  partial sums count as plateaued when they grow by less
                      than this fraction over the last decade of lags.
    noise_floor_mult: lags whose |autocovariance| falls below mult * the
                      Bartlett standard error are treated as zero in the
                      plateau test (the raw partial sums otherwise grow
                      linearly in estimation noise alone).  0 disables.
    hurst_short/long: Hurst cutoffs for the two consistent verdicts.
    """

    max_lag: Optional[int] = None
    plateau_rel_tol: float = 0.01
    noise_floor_mult: float = 4.0
    hurst_short: float = 0.6
    hurst_long: float = 0.65
    divergence_threshold: float = DIVERGENCE_THRESHOLD


@dataclass
class MemoryReport:
    autocov: np.ndarray
    partial_sums: np.ndarray
    hurst: float
    verdict: str
    divergence_rate: float = 0.0

    def __post_init__(self):
        self.autocov = np.asarray(self.autocov, dtype=np.float64)
        self.partial_sums = np.asarray(self.partial_sums, dtype=np.float64)
        if self.autocov[0] < 0:
            raise DomainError("autocov[0] is a variance and cannot be negative")
        if np.any(np.diff(self.partial_sums) < 0):
            raise DomainError("partial sums of |autocov| must be nondecreasing")
        if math.isfinite(self.hurst) and not 0.0 < self.hurst < 1.0:
            raise DomainError(f"hurst estimate {self.hurst} outside (0, 1)")
        if self.verdict not in (VERDICT_SHORT, VERDICT_LONG, VERDICT_INCONCLUSIVE):
            raise ArgumentError(f"unknown verdict {self.verdict!r}")

    def to_dict(self) -> dict:
        return {
            "autocov": self.autocov.tolist(),
            "partial_sums": self.partial_sums.tolist(),
            "hurst": self.hurst,
            "verdict": self.verdict,
            "divergence_rate": self.divergence_rate,
        }


def _plateaued(gamma: np.ndarray, T: int, cfg: MemoryConfig) -> bool:
    """Plateau test on noise-floor-masked |autocovariance| partial sums."""
    L = gamma.size - 1
    masked = np.abs(gamma).copy()
    if cfg.noise_floor_mult > 0 and L >= 1:
        # Bartlett large-lag standard error of the autocovariance estimate
        bartlett_var = (gamma[0] ** 2 + 2.0 * float(gamma[1:] @ gamma[1:])) / T
        floor = cfg.noise_floor_mult * math.sqrt(max(bartlett_var, 0.0))
        small = masked[1:] < floor
        masked[1:][small] = 0.0
    ps = np.cumsum(masked)
    k0 = max(1, L // 10)
    if ps[k0] <= 0:
        return True
    rel_increase = ps[L] / ps[k0] - 1.0
    return rel_increase < cfg.plateau_rel_tol


def memory_diagnostic(series, config: Optional[MemoryConfig] = None) -> MemoryReport:
    """Autocovariance partial sums, R/S Hurst estimate, and a memory verdict.

    Verdict rules: plateaued partial sums AND hurst < hurst_short lean short;
    unbounded-looking partial sums AND hurst > hurst_long lean long;
    everything else is inconclusive.
    """
    cfg = config or MemoryConfig()
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) >= cfg.divergence_threshold):
        raise DomainError(
            "divergent series: diagnose batch runs via their divergence_rate"
        )
    T = x.size
    max_lag = cfg.max_lag if cfg.max_lag is not None else max(1, T // 20)
    gamma = autocovariance(x, max_lag)
    partial_sums = np.cumsum(np.abs(gamma))
    hurst = hurst_rs(x)
    plateau = _plateaued(gamma, T, cfg)
    if plateau and hurst < cfg.hurst_short:
        verdict = VERDICT_SHORT
    elif not plateau and hurst > cfg.hurst_long:
        verdict = VERDICT_LONG
    else:
        verdict = VERDICT_INCONCLUSIVE
    return MemoryReport(autocov=gamma, partial_sums=partial_sums,
                        hurst=hurst, verdict=verdict)


def divergence_rate_batch(n: int, p: int, sigma: float, noise: NoiseSpec,
                          n_seeds: int, T: int = 100, burn_in: int = 0,
                          base_seed: int = 0) -> float:
    """Fraction of sampled-tensor simulations that blow past the threshold."""
    if n_seeds < 1:
        raise ArgumentError("n_seeds must be positive")
    diverged = 0
    for k in range(n_seeds):
        M = sample_subgaussian_M(n, p, sigma, seed=base_seed + k)
        spec = ProcessSpec(M=M, p=p, noise=noise, n=n)
        result = simulate_tprnp(spec, T, burn_in=burn_in,
                                seed=base_seed + 10_000 + k)
        diverged += int(result.diverged)
    return diverged / n_seeds


@dataclass
class Lemma1Report:
    """Outcome of the norm-vs-memory consistency check.

    When the spectral norm estimate is below one, the short-memory verdict is
    asserted against a simulated path; a norm at or above one supports no
    conclusion in either direction, and ``applicable`` is False.
    """

    norm_value: float
    applicable: bool
    verdict: Optional[str]
    agreement: Optional[bool]
    note: str
    hurst: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "norm_value": self.norm_value,
            "applicable": self.applicable,
            "verdict": self.verdict,
            "agreement": self.agreement,
            "note": self.note,
            "hurst": self.hurst,
        }


def lemma1_check(spec: ProcessSpec, T: int = 60_000,
                 burn_in: int = DEFAULT_BURN_IN, seed: int = 0,
                 config: Optional[MemoryConfig] = None) -> Lemma1Report:
    cert = spectral_norm(spec.M, seed=seed)
    norm = cert.value
    if norm >= 1.0:
        return Lemma1Report(
            norm_value=norm, applicable=False, verdict=None, agreement=None,
            note="criterion inapplicable: spectral norm >= 1 supports no "
                 "conclusion about memory",
        )
    result = simulate_tprnp(spec, T, burn_in=burn_in, seed=seed)
    if result.diverged:
        return Lemma1Report(
            norm_value=norm, applicable=True, verdict=None, agreement=False,
            note=f"path diverged at step {result.divergence_step} despite "
                 "sub-unit norm estimate",
        )
    report = memory_diagnostic(result.values[:, 0], config=config)
    agreement = report.verdict == VERDICT_SHORT
    return Lemma1Report(
        norm_value=norm, applicable=True, verdict=report.verdict,
        agreement=agreement, hurst=report.hurst,
        note="sub-unit spectral norm predicts a short-memory verdict",
    )
