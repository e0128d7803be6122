"""Dense partially-symmetric tensors and spectral-norm estimation.

The central object is :class:`SymTensor`: a dense real tensor whose leading
``sym_prefix`` indices are declared mutually symmetric.  Symmetry is an exact
(bit-level) invariant, so constructors that produce symmetric tensors compute
each orbit of index tuples once, in a canonical order, and broadcast the same
float to every member of the orbit.

Spectral norms come in two flavours:

* :func:`spectral_norm` -- alternating higher-order power iteration with
  random restarts.  Returns a certificate whose value is a guaranteed lower
  bound on the true norm (witness vectors are part of the certificate).
* :func:`spectral_norm_bruteforce` -- deterministic grid search used as an
  oracle at desk scale.  The last two modes are optimised exactly through a
  matrix SVD; any remaining leading modes are swept over spherical grids.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, NumericError, ResourceError, ShapeError

__all__ = [
    "SymTensor",
    "NormCertificate",
    "tp_contract",
    "build_from_factors",
    "symmetrize_first_p",
    "multilinear_form",
    "spectral_norm",
    "spectral_norm_bruteforce",
]

#: Maximum number of tensor entries accepted by the brute-force oracle.
BRUTEFORCE_ENTRY_GUARD = 100_000

#: Maximum number of grid evaluations accepted by the brute-force oracle.
BRUTEFORCE_GRID_GUARD = 2_000_000


@dataclass
class SymTensor:
    """Dense row-major float64 tensor, symmetric over its first indices.

    Parameters
    ----------
    dims:
        Tensor shape.  For model weights this is ``(n, ..., n, m)`` with
        ``sym_prefix`` copies of ``n``.
    data:
        Flat row-major array of length ``prod(dims)``.
    sym_prefix:
        Number of leading indices declared mutually symmetric.
    sym_mode:
        ``"full"`` (invariant under every permutation of the leading indices)
        or ``"cyclic"`` (invariant under cyclic shifts only).  The two
        coincide for ``sym_prefix <= 2``.
    """

    dims: tuple
    data: np.ndarray
    sym_prefix: int
    sym_mode: str = "full"

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) == 0 or any(d <= 0 for d in self.dims):
            raise ShapeError(f"dims must be positive integers, got {self.dims}")
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        if data.size != int(np.prod(self.dims)):
            raise ShapeError(
                f"data length {data.size} does not match prod(dims) = "
                f"{int(np.prod(self.dims))}"
            )
        self.sym_prefix = int(self.sym_prefix)
        if not 0 <= self.sym_prefix <= len(self.dims):
            raise ShapeError(
                f"sym_prefix {self.sym_prefix} out of range for a "
                f"{len(self.dims)}-index tensor"
            )
        if self.sym_mode not in ("full", "cyclic"):
            raise ArgumentError(f"unknown sym_mode {self.sym_mode!r}")
        self.data = data
        self.data.setflags(write=False)
        if self.sym_prefix >= 2:
            lead = self.dims[: self.sym_prefix]
            if len(set(lead)) != 1:
                raise ShapeError(
                    f"leading {self.sym_prefix} dims must be equal, got {lead}"
                )
            self._check_symmetry()

    def _check_symmetry(self):
        """Exact invariance check via group generators.

        Adjacent transpositions generate the full symmetric group; a single
        rotation generates the cyclic group.  Exact float equality is
        transitive, so checking generators suffices.
        """
        arr = self.array
        p = self.sym_prefix
        trailing = list(range(p, arr.ndim))
        if self.sym_mode == "full":
            for i in range(p - 1):
                axes = list(range(p))
                axes[i], axes[i + 1] = axes[i + 1], axes[i]
                if not np.array_equal(arr, np.transpose(arr, axes + trailing)):
                    raise ShapeError(
                        f"tensor is not symmetric under swap of leading "
                        f"indices {i} and {i + 1}"
                    )
        else:
            axes = list(range(1, p)) + [0]
            if not np.array_equal(arr, np.transpose(arr, axes + trailing)):
                raise ShapeError(
                    "tensor is not invariant under a cyclic shift of its "
                    "leading indices"
                )

    @property
    def array(self) -> np.ndarray:
        """Read-only view shaped to ``dims``."""
        return self.data.reshape(self.dims)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    def scaled(self, c: float) -> "SymTensor":
        return SymTensor(self.dims, c * self.data, self.sym_prefix, self.sym_mode)

    @classmethod
    def from_array(cls, arr, sym_prefix: int = 0, sym_mode: str = "full") -> "SymTensor":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr.shape, arr.reshape(-1).copy(), sym_prefix, sym_mode)

    def to_dict(self) -> dict:
        out = {
            "dims": list(self.dims),
            "sym_prefix": self.sym_prefix,
            "data": self.data.tolist(),
        }
        if self.sym_mode != "full":
            out["sym_mode"] = self.sym_mode
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SymTensor":
        return cls(
            tuple(d["dims"]),
            np.asarray(d["data"], dtype=np.float64),
            int(d["sym_prefix"]),
            d.get("sym_mode", "full"),
        )


@dataclass
class NormCertificate:
    """Lower-bound certificate for the tensor spectral norm.

    ``value`` equals the absolute multilinear form evaluated at the witness
    vectors, so it is always attainable (a certified lower bound).
    """

    value: float
    witnesses: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def tp_contract(G: SymTensor, z, p: int) -> np.ndarray:
    """Contract the first ``p`` modes of ``G`` with the same vector ``z``.

    Returns the length-``m`` vector ``G . z^(tensor p)``, computed as
    sequential mode-1 tensor-vector products.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if p < 1:
        raise ArgumentError(f"p must be a positive integer, got {p}")
    if G.ndim != p + 1:
        raise ShapeError(
            f"tensor has {G.ndim} indices, expected p + 1 = {p + 1}"
        )
    n = z.size
    for mode in range(p):
        if G.dims[mode] != n:
            raise ShapeError(
                f"mode {mode + 1} has length {G.dims[mode]}, "
                f"expected {n} (length of z)"
            )
    arr = G.array
    for mode in range(p):
        arr = (z @ arr.reshape(n, -1)).reshape(G.dims[mode + 1 :])
    return np.asarray(arr, dtype=np.float64).reshape(-1)


def _leading_index_columns(n: int, p: int) -> np.ndarray:
    """All index tuples of the leading modes as a ``(p, n**p)`` array."""
    return np.indices((n,) * p).reshape(p, -1)


def build_from_factors(factors, out_weights, p: int) -> SymTensor:
    """Assemble ``sum_r w_r^(tensor p) (x) a_r`` as a SymTensor.

    ``factors`` holds R length-``n`` vectors ``w_r`` and ``out_weights`` the
    matching length-``m`` output vectors ``a_r``.  Entries are computed in a
    canonical (sorted-index) order so the result is exactly symmetric over
    its first ``p`` indices.
    """
    if p < 1:
        raise ArgumentError(f"p must be a positive integer, got {p}")
    factors = [np.asarray(w, dtype=np.float64).reshape(-1) for w in factors]
    out_weights = [np.asarray(a, dtype=np.float64).reshape(-1) for a in out_weights]
    if len(factors) == 0:
        raise ArgumentError("factor list is empty")
    if len(factors) != len(out_weights):
        raise ArgumentError(
            f"{len(factors)} factors but {len(out_weights)} output weights"
        )
    n = factors[0].size
    m = out_weights[0].size
    for r, w in enumerate(factors):
        if w.size != n:
            raise ShapeError(f"factor {r} has length {w.size}, expected {n}")
    for r, a in enumerate(out_weights):
        if a.size != m:
            raise ShapeError(f"output weight {r} has length {a.size}, expected {m}")

    idx_sorted = np.sort(_leading_index_columns(n, p), axis=0)
    acc = np.zeros((n**p, m))
    for w, a in zip(factors, out_weights):
        # product taken in sorted-index order: identical float for every
        # permutation of the same index multiset
        wprod = np.prod(w[idx_sorted], axis=0)
        acc += np.outer(wprod, a)
    return SymTensor((n,) * p + (m,), acc.reshape(-1), sym_prefix=p)


def symmetrize_first_p(arr, p: int, full_permutations: bool = False) -> SymTensor:
    """Average a raw tensor over shifts (or permutations) of its first ``p`` indices.

    The default averages the ``p`` cyclic shifts of the leading indices;
    with ``full_permutations=True`` it averages over all ``p!`` permutations.
    Each orbit of index tuples is averaged once and the same float is written
    to every member, so the declared symmetry holds exactly and
    orbit-constant inputs are fixed points.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if p < 1:
        raise ArgumentError(f"p must be a positive integer, got {p}")
    if arr.ndim < p:
        raise ShapeError(f"tensor has {arr.ndim} indices, expected at least {p}")
    lead = arr.shape[:p]
    if len(set(lead)) != 1:
        raise ShapeError(f"leading {p} dims must be equal, got {lead}")
    n = lead[0]
    if p == 1:
        return SymTensor(arr.shape, arr.reshape(-1).copy(), sym_prefix=1)

    idx = _leading_index_columns(n, p)
    if full_permutations:
        key = np.ravel_multi_index(tuple(np.sort(idx, axis=0)), (n,) * p)
    else:
        codes = [
            np.ravel_multi_index(tuple(np.roll(idx, -s, axis=0)), (n,) * p)
            for s in range(p)
        ]
        key = np.minimum.reduce(codes)

    a2 = arr.reshape(n**p, -1)
    order = np.argsort(key, kind="stable")
    sorted_key = key[order]
    starts = np.flatnonzero(np.r_[True, sorted_key[1:] != sorted_key[:-1]])
    counts = np.diff(np.r_[starts, key.size])
    rows = a2[order]
    sums = np.add.reduceat(rows, starts, axis=0)
    means = sums / counts[:, None]
    # orbits whose members are already identical pass through unchanged
    gmax = np.maximum.reduceat(rows, starts, axis=0)
    gmin = np.minimum.reduceat(rows, starts, axis=0)
    const = gmax == gmin
    means[const] = gmax[const]

    group_of = np.empty(key.size, dtype=np.intp)
    group_of[order] = np.repeat(np.arange(starts.size), counts)
    out = means[group_of].reshape(arr.shape)
    mode = "full" if (full_permutations or p == 2) else "cyclic"
    return SymTensor(arr.shape, out.reshape(-1), sym_prefix=p, sym_mode=mode)


def multilinear_form(G: SymTensor, vectors) -> float:
    """Evaluate ``G x_1 u_1 ... x_q u_q`` (full contraction to a scalar)."""
    arr = G.array
    if len(vectors) != arr.ndim:
        raise ShapeError(
            f"need {arr.ndim} vectors for a {arr.ndim}-index tensor, "
            f"got {len(vectors)}"
        )
    dims = arr.shape
    flat = arr.reshape(dims[0], -1)
    for mode, u in enumerate(vectors):
        u = np.asarray(u, dtype=np.float64).reshape(-1)
        if u.size != dims[mode]:
            raise ShapeError(
                f"mode {mode + 1} has length {dims[mode]}, got vector "
                f"of length {u.size}"
            )
        flat = u @ flat
        if mode + 1 < len(dims):
            flat = flat.reshape(dims[mode + 1], -1)
    return float(flat[0])


def _contract_all_except(arr: np.ndarray, us, skip: int) -> np.ndarray:
    operands = [arr, list(range(arr.ndim))]
    for j, u in enumerate(us):
        if j != skip:
            operands.extend([u, [j]])
    return np.einsum(*operands, [skip], optimize=True)


def spectral_norm(
    G: SymTensor,
    restarts: int = 20,
    tol: float = 1e-8,
    max_iters: int = 500,
    seed: int = 0,
) -> NormCertificate:
    """Estimate the tensor spectral norm by alternating power iteration.

    Runs ``restarts`` independent random unit initialisations and keeps the
    best run.  Each sweep maximises the multilinear form over one mode at a
    time, so the value sequence is nondecreasing; the reported value is the
    form at the final witnesses and therefore a guaranteed lower bound on
    the true norm.  For 2-index tensors this recovers the matrix operator
    norm (up to ``tol``).
    """
    if restarts < 1:
        raise ArgumentError(f"restarts must be >= 1, got {restarts}")
    arr = G.array
    if arr.size == 0:
        raise ShapeError("empty tensor")
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor contains non-finite entries")
    q = arr.ndim
    rng = np.random.default_rng(seed)

    best_val = -1.0
    best_us = None
    best_iters = 0
    best_conv = False
    for _ in range(restarts):
        us = []
        for d in arr.shape:
            v = rng.standard_normal(d)
            us.append(v / np.linalg.norm(v))
        prev = -np.inf
        val = 0.0
        converged = False
        iters = 0
        for it in range(max_iters):
            iters = it + 1
            for i in range(q):
                v = _contract_all_except(arr, us, i)
                nrm = float(np.linalg.norm(v))
                if nrm > 0.0:
                    us[i] = v / nrm
            val = abs(multilinear_form(G, us))
            if abs(val - prev) <= tol * max(1.0, val):
                converged = True
                break
            prev = val
        if val > best_val:
            best_val = val
            best_us = [u.copy() for u in us]
            best_iters = iters
            best_conv = converged
    return NormCertificate(
        value=best_val,
        witnesses=best_us,
        iterations=best_iters,
        converged=best_conv,
    )


def _sphere_grid(dim: int, resolution: float) -> np.ndarray:
    """Deterministic grid on the unit sphere S^(dim-1), angular step ``resolution``."""
    if resolution <= 0:
        raise ArgumentError("grid resolution must be positive")
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        theta = np.arange(0.0, 2.0 * math.pi, resolution)
        return np.column_stack([np.cos(theta), np.sin(theta)])
    # hyperspherical: dim-2 polar angles in [0, pi], one azimuthal in [0, 2*pi)
    polar = [np.arange(0.0, math.pi + 0.5 * resolution, resolution)] * (dim - 2)
    azim = np.arange(0.0, 2.0 * math.pi, resolution)
    mesh = np.meshgrid(*polar, azim, indexing="ij")
    angles = np.stack([m.reshape(-1) for m in mesh], axis=1)
    pts = np.empty((angles.shape[0], dim))
    sin_running = np.ones(angles.shape[0])
    for k in range(dim - 1):
        pts[:, k] = sin_running * np.cos(angles[:, k])
        sin_running = sin_running * np.sin(angles[:, k])
    pts[:, dim - 1] = sin_running
    return pts


def spectral_norm_bruteforce(G: SymTensor, grid_resolution: float = 0.01) -> float:
    """Deterministic grid-search oracle for the tensor spectral norm.

    The last two modes are optimised exactly (largest singular value of the
    remaining matrix); every other leading mode is swept over a spherical
    grid with the given angular resolution.  Intended for desk-scale
    cross-checks of :func:`spectral_norm` only.
    """
    arr = G.array
    if arr.size > BRUTEFORCE_ENTRY_GUARD:
        raise ResourceError(
            f"tensor has {arr.size} entries; brute-force guard is "
            f"{BRUTEFORCE_ENTRY_GUARD}"
        )
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor contains non-finite entries")
    q = arr.ndim
    if q == 1:
        return float(np.linalg.norm(arr))
    if q == 2:
        return float(np.linalg.svd(arr, compute_uv=False)[0])

    grids = [_sphere_grid(arr.shape[i], grid_resolution) for i in range(q - 2)]
    total = 1
    for g in grids:
        total *= g.shape[0]
    if total > BRUTEFORCE_GRID_GUARD:
        raise ResourceError(
            f"grid would need {total} evaluations (guard "
            f"{BRUTEFORCE_GRID_GUARD}); use a coarser resolution"
        )
    batch = grids[-1]
    best = 0.0
    for pts in itertools.product(*grids[:-1]):
        sub = arr
        for u in pts:
            sub = np.tensordot(u, sub, axes=(0, 0))
        stacked = np.tensordot(batch, sub, axes=(1, 0))
        svals = np.linalg.svd(stacked, compute_uv=False)
        best = max(best, float(svals[:, 0].max()))
    return best
