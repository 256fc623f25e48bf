"""Tucker and CP factorization, reconstruction, and random low-rank generation.

HOSVD/HOOI handle the Tucker side; CP is fit by alternating least squares
with unit-normalized factor columns and absorbed weights.  Random generators
draw cores with standard normal entries and factors with orthonormal columns
(QR of a Gaussian matrix), which produces tensors of exactly the requested
multilinear / CP rank.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensor_ops import as_tensor, frobenius, mode_product, multi_mode_product, unfold

__all__ = [
    "TuckerForm",
    "CpForm",
    "CpFit",
    "tucker_reconstruct",
    "cp_reconstruct",
    "hosvd",
    "hooi_refine",
    "cp_als",
    "random_tucker",
    "random_cp",
]

_UNIT_NORM_TOL = 1e-10


@dataclass
class TuckerForm:
    """Core tensor plus one factor matrix per mode."""

    core: np.ndarray
    factors: list[np.ndarray]

    def __post_init__(self):
        self.core = as_tensor(self.core)
        self.factors = [as_tensor(f) for f in self.factors]
        if len(self.factors) != self.core.ndim:
            raise ValueError("one factor matrix per core mode is required")
        for i, f in enumerate(self.factors):
            if f.ndim != 2 or f.shape[1] != self.core.shape[i]:
                raise ValueError(
                    f"factor {i} has shape {f.shape}, expected (*, {self.core.shape[i]})"
                )

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.core.shape

    def reconstruct(self) -> np.ndarray:
        return tucker_reconstruct(self)


@dataclass
class CpForm:
    """Weighted sum of rank-1 tensors; factor columns are unit norm."""

    weights: np.ndarray
    factors: list[np.ndarray]

    def __post_init__(self):
        self.weights = as_tensor(self.weights).ravel()
        self.factors = [as_tensor(f) for f in self.factors]
        r = self.weights.size
        for i, f in enumerate(self.factors):
            if f.ndim != 2 or f.shape[1] != r:
                raise ValueError(f"factor {i} must have {r} columns, got {f.shape}")
        for i, f in enumerate(self.factors):
            norms = np.linalg.norm(f, axis=0)
            # columns paired with zero weight may be arbitrary unit vectors
            if np.any(np.abs(norms - 1.0) > _UNIT_NORM_TOL):
                raise ValueError(f"factor {i} columns are not unit norm")

    @property
    def rank(self) -> int:
        return self.weights.size

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    def reconstruct(self) -> np.ndarray:
        return cp_reconstruct(self)


def tucker_reconstruct(f: TuckerForm) -> np.ndarray:
    """core x_1 H^(1) x_2 ... x_N H^(N)."""
    return multi_mode_product(f.core, f.factors)


def _khatri_rao(factors: list[np.ndarray]) -> np.ndarray:
    """Column-wise Kronecker product, ordered so that column r equals the
    canonical vectorization of the rank-1 tensor built from the r-th columns."""
    out = factors[0]
    for f in factors[1:]:
        out = np.einsum("ir,jr->jir", out, f).reshape(-1, out.shape[1])
    return out


def cp_reconstruct(f: CpForm) -> np.ndarray:
    kr = _khatri_rao(f.factors)
    vec = kr @ f.weights
    return vec.reshape(f.shape, order="F")


def hosvd(t: np.ndarray, ranks) -> TuckerForm:
    """Higher-order SVD truncated to the requested multilinear ranks.

    Factors are the leading left singular vectors of each unfolding; the core
    is the input contracted with the factor transposes.  Exact whenever the
    input's true Tucker ranks are within the requested ones.
    """
    t = as_tensor(t)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != t.ndim:
        raise ValueError("one rank per mode is required")
    for i, r in enumerate(ranks):
        if not 1 <= r <= t.shape[i]:
            raise ValueError(f"rank {r} out of range for mode {i + 1} extent {t.shape[i]}")
    factors = []
    for i in range(t.ndim):
        u, _, _ = np.linalg.svd(unfold(t, i + 1), full_matrices=False)
        factors.append(u[:, : ranks[i]])
    core = multi_mode_product(t, factors, transpose=True)
    return TuckerForm(core=core, factors=factors)


def hooi_refine(
    t: np.ndarray, initial: TuckerForm, max_iters: int = 100, tol: float = 1e-12
) -> TuckerForm:
    """Higher-order orthogonal iteration starting from ``initial``.

    Each sweep re-solves every factor against the others; the reconstruction
    error is non-increasing across sweeps and iteration stops once the error
    decrease falls below ``tol``.
    """
    t = as_tensor(t)
    factors = [f.copy() for f in initial.factors]
    ranks = initial.ranks
    nrm = frobenius(t)
    best = initial
    prev_err = _rel_error(t, tucker_reconstruct(initial), nrm)
    for _ in range(max_iters):
        for j in range(t.ndim):
            others = [factors[i] for i in range(t.ndim) if i != j]
            modes = [i + 1 for i in range(t.ndim) if i != j]
            y = multi_mode_product(t, others, modes=modes, transpose=True)
            u, _, _ = np.linalg.svd(unfold(y, j + 1), full_matrices=False)
            factors[j] = u[:, : ranks[j]]
        core = multi_mode_product(t, factors, transpose=True)
        cand = TuckerForm(core=core, factors=[f.copy() for f in factors])
        err = _rel_error(t, tucker_reconstruct(cand), nrm)
        if err <= prev_err:
            best = cand
        if prev_err - err < tol:
            break
        prev_err = err
    return best


def _rel_error(t: np.ndarray, rec: np.ndarray, nrm: float) -> float:
    if nrm == 0.0:
        return frobenius(rec)
    return frobenius(t - rec) / nrm


@dataclass
class CpFit:
    """ALS output: the fitted form, its fit, and the per-sweep fit history
    of the winning restart."""

    form: CpForm
    fit: float
    fit_history: np.ndarray = field(repr=False)
    restart: int = 0


def cp_als(
    t: np.ndarray,
    rank: int,
    max_iters: int = 500,
    tol: float = 1e-10,
    restarts: int = 1,
    seed: int = 0,
) -> CpFit:
    """CP decomposition by alternating least squares.

    Fit is ``1 - ||t - rec||_F / ||t||_F``.  Restart 0 initializes from the
    leading singular vectors of each unfolding; further restarts draw Gaussian
    factors from ``seed + restart``.  The best restart is returned.
    """
    t = as_tensor(t)
    if rank < 1:
        raise ValueError("rank must be >= 1")
    shape = t.shape
    bound = int(np.prod(sorted(shape)[:-1], dtype=np.int64))
    if rank > bound:
        warnings.warn(
            f"requested CP rank {rank} exceeds the generic bound {bound} "
            "for this shape; the fit may be under-determined",
            stacklevel=2,
        )
    nrm = frobenius(t)
    if nrm == 0.0:
        factors = []
        for s in shape:
            f = np.zeros((s, rank))
            f[0, :] = 1.0
            factors.append(f)
        form = CpForm(weights=np.zeros(rank), factors=factors)
        return CpFit(form=form, fit=1.0, fit_history=np.array([1.0]), restart=0)

    best: CpFit | None = None
    for restart in range(max(1, restarts)):
        factors = _cp_init(t, rank, restart, seed)
        history = []
        prev_fit = -np.inf
        weights = np.ones(rank)
        for _ in range(max_iters):
            for j in range(t.ndim):
                others = [factors[i] for i in range(t.ndim) if i != j]
                kr = _khatri_rao_skip(factors, j)
                gram = np.ones((rank, rank))
                for f in others:
                    gram *= f.T @ f
                rhs = unfold(t, j + 1) @ kr
                sol = np.linalg.lstsq(gram, rhs.T, rcond=None)[0].T
                norms = np.linalg.norm(sol, axis=0)
                norms[norms == 0.0] = 1.0
                factors[j] = sol / norms
                weights = norms
            rec_vec = _khatri_rao(factors) @ weights
            fit = 1.0 - np.linalg.norm(t.ravel(order="F") - rec_vec) / nrm
            history.append(fit)
            if fit - prev_fit < tol:
                break
            prev_fit = fit
        form = CpForm(weights=weights, factors=factors)
        cand = CpFit(form=form, fit=history[-1], fit_history=np.array(history), restart=restart)
        if best is None or cand.fit > best.fit:
            best = cand
    return best


def _khatri_rao_skip(factors: list[np.ndarray], skip: int) -> np.ndarray:
    sub = [f for i, f in enumerate(factors) if i != skip]
    return _khatri_rao(sub)


def _cp_init(t: np.ndarray, rank: int, restart: int, seed: int) -> list[np.ndarray]:
    if restart == 0:
        factors = []
        for j in range(t.ndim):
            u, _, _ = np.linalg.svd(unfold(t, j + 1), full_matrices=False)
            f = u[:, : min(rank, u.shape[1])]
            if f.shape[1] < rank:
                rng = np.random.default_rng([seed, j])
                extra = rng.standard_normal((t.shape[j], rank - f.shape[1]))
                f = np.hstack([f, extra])
            factors.append(_unit_columns(f))
        return factors
    rng = np.random.default_rng([seed, restart])
    return [_unit_columns(rng.standard_normal((s, rank))) for s in t.shape]


def _unit_columns(f: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(f, axis=0)
    norms[norms == 0.0] = 1.0
    return f / norms


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    if cols > rows:
        raise ValueError(f"cannot draw {cols} orthonormal columns in dimension {rows}")
    q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q[:, :cols]


def random_tucker(shape, ranks, seed: int = 0) -> TuckerForm:
    """Random Tucker form: standard normal core, orthonormal-column factors.

    Deterministic under ``seed``; the reconstruction has exact multilinear
    ranks equal to ``ranks`` almost surely.
    """
    shape = tuple(int(s) for s in shape)
    ranks = tuple(int(r) for r in ranks)
    if len(shape) != len(ranks):
        raise ValueError("shape and ranks must have equal length")
    for s, r in zip(shape, ranks):
        if not 1 <= r <= s:
            raise ValueError(f"rank {r} out of range for extent {s}")
    rng = np.random.default_rng(seed)
    core = rng.standard_normal(ranks)
    factors = [_orthonormal_columns(rng, s, r) for s, r in zip(shape, ranks)]
    return TuckerForm(core=core, factors=factors)


def random_cp(shape, rank: int, seed: int = 0, weights: np.ndarray | None = None) -> CpForm:
    """Random CP form with orthonormal-column factors.

    Weights default to i.i.d. standard normal draws; pass ``weights``
    explicitly (e.g. all ones) to pin them.
    """
    shape = tuple(int(s) for s in shape)
    rank = int(rank)
    for s in shape:
        if rank > s:
            raise ValueError(f"rank {rank} exceeds extent {s}")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(rank) if weights is None else as_tensor(weights).ravel()
    factors = [_orthonormal_columns(rng, s, rank) for s in shape]
    return CpForm(weights=w, factors=factors)
