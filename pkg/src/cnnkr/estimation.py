"""Trainers for the linearized model: least squares and logistic regression
under free, Tucker-factorized, and CP-factorized kernel parameterizations.

All trainers run full-batch gradient descent with momentum and stop once the
objective drop falls below the configured tolerance.  The reference
objective/gradient implementations here are plain numpy and serve as the
ground truth for the compiled loops in :mod:`cnnkr.kernels`; gradients are
validated against central finite differences in the test suite.

A transformed input of shape (l1*p1, ..., lN*pN) is rearranged once into a
(pool-cells x kernel-cells) matrix per sample so that model predictions and
gradients are matrix products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .decomposition import CpForm, TuckerForm, _khatri_rao
from .linearize import KernelBank
from .tensor_ops import as_tensor, fold, multi_mode_product, unfold, vectorize

__all__ = [
    "TrainConfig",
    "Dataset",
    "FreeParam",
    "TuckerParam",
    "CpParam",
    "FreeState",
    "TuckerState",
    "CpState",
    "FitResult",
    "TrainingDiverged",
    "z_matrix_columns",
    "dataset_matrix",
    "weight_matrix_to_tensor",
    "tensor_to_weight_matrix",
    "init_state",
    "objective",
    "gradient",
    "ls_objective",
    "gradient_least_squares",
    "logistic_objective",
    "gradient_logistic",
    "train_least_squares",
    "train_logistic",
    "train_multiclass",
    "state_to_bank",
    "state_to_forms",
]


@dataclass(frozen=True)
class TrainConfig:
    """Gradient-descent hyperparameters."""

    learning_rate: float = 0.01
    momentum: float = 0.9
    tol: float = 1e-8
    max_iters: int = 200_000
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class Dataset:
    """Transformed inputs with scalar targets or class labels."""

    inputs: list[np.ndarray]
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = [as_tensor(z) for z in self.inputs]
        self.targets = np.asarray(self.targets)
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets must have equal length")
        if not self.inputs:
            raise ValueError("dataset is empty")
        for z in self.inputs[1:]:
            if z.shape != self.inputs[0].shape:
                raise ValueError("input shapes are inconsistent")

    @property
    def n(self) -> int:
        return len(self.inputs)

    @property
    def z_dims(self) -> tuple[int, ...]:
        return self.inputs[0].shape


# parameterization descriptors -------------------------------------------------


@dataclass(frozen=True)
class FreeParam:
    kernel_count: int


@dataclass(frozen=True)
class TuckerParam:
    """Multilinear ranks of the stacked kernel (trailing entry = rank along
    the output-channel mode) plus the kernel count being factorized."""

    ranks: tuple[int, ...]
    kernel_count: int


@dataclass(frozen=True)
class CpParam:
    rank: int
    kernel_count: int


# parameter states -------------------------------------------------------------


@dataclass
class FreeState:
    """kernel_mat columns are vectorized kernels; fc is (P, K, M)."""

    kernel_mat: np.ndarray
    fc: np.ndarray

    def arrays(self):
        return [self.kernel_mat, self.fc]

    def copy(self) -> "FreeState":
        return FreeState(self.kernel_mat.copy(), self.fc.copy())


@dataclass
class TuckerState:
    """Tucker-factorized stack: core over (ranks..., R), per-mode factors,
    the output-channel factor (K, R), and fc (P, K, M)."""

    core: np.ndarray
    factors: list[np.ndarray]
    stack_factor: np.ndarray
    fc: np.ndarray

    def arrays(self):
        return [self.core, *self.factors, self.stack_factor, self.fc]

    def copy(self) -> "TuckerState":
        return TuckerState(
            self.core.copy(),
            [f.copy() for f in self.factors],
            self.stack_factor.copy(),
            self.fc.copy(),
        )


@dataclass
class CpState:
    """CP-factorized stack: per-mode factors (columns unnormalized during
    training), output-channel factor (K, R), and fc (P, K, M)."""

    factors: list[np.ndarray]
    stack_factor: np.ndarray
    fc: np.ndarray

    def arrays(self):
        return [*self.factors, self.stack_factor, self.fc]

    def copy(self) -> "CpState":
        return CpState(
            [f.copy() for f in self.factors],
            self.stack_factor.copy(),
            self.fc.copy(),
        )


class TrainingDiverged(RuntimeError):
    """Objective exceeded the divergence limit; carries the trace."""

    def __init__(self, trace: np.ndarray):
        super().__init__(
            f"training diverged after {len(trace) - 1} iterations "
            f"(objective {trace[-1]:.3e})"
        )
        self.trace = trace


@dataclass
class FitResult:
    state: object
    weight_matrix: np.ndarray  # (P, L) for one output, (P, L, M) stacked
    weight: np.ndarray  # composite weight tensor(s) in transformed space
    trace: np.ndarray = field(repr=False)
    iterations: int = 0
    converged: bool = False

    @property
    def objective(self) -> float:
        return float(self.trace[-1])


# rearrangement ----------------------------------------------------------------


def z_matrix_columns(kernel_dims, pool_dims) -> np.ndarray:
    """Column gather turning a vectorized transformed input into the row-major
    flattening of its (pool-cells x kernel-cells) matrix."""
    l = tuple(int(v) for v in kernel_dims)
    p = tuple(int(v) for v in pool_dims)
    z_dims = tuple(li * pi for li, pi in zip(l, p))
    d = int(np.prod(z_dims, dtype=np.int64))
    pos = np.arange(d, dtype=np.int64).reshape(z_dims, order="F")
    inter = []
    for li, pi in zip(l, p):
        inter.extend([li, pi])
    pos = pos.reshape(tuple(inter), order="F")
    n = len(l)
    perm = tuple(2 * j + 1 for j in range(n)) + tuple(2 * j for j in range(n))
    pos = pos.transpose(perm).reshape(
        (int(np.prod(p, dtype=np.int64)), int(np.prod(l, dtype=np.int64))), order="F"
    )
    return np.ascontiguousarray(pos.ravel(order="C"))


def dataset_matrix(data: Dataset, kernel_dims, pool_dims) -> np.ndarray:
    """Stack the rearranged inputs into the (n, P*L) design matrix."""
    z_dims = tuple(
        int(li) * int(pi) for li, pi in zip(kernel_dims, pool_dims)
    )
    if data.z_dims != z_dims:
        raise ValueError(
            f"dataset inputs have shape {data.z_dims}, expected {z_dims}"
        )
    cols = z_matrix_columns(kernel_dims, pool_dims)
    zmat = np.stack([vectorize(z) for z in data.inputs])
    return np.ascontiguousarray(zmat[:, cols])


def weight_matrix_to_tensor(wmat: np.ndarray, kernel_dims, pool_dims) -> np.ndarray:
    """Invert the rearrangement: (P, L) matrix back to the transformed-space
    weight tensor of shape (l1*p1, ..., lN*pN)."""
    l = tuple(int(v) for v in kernel_dims)
    p = tuple(int(v) for v in pool_dims)
    z_dims = tuple(li * pi for li, pi in zip(l, p))
    cols = z_matrix_columns(l, p)
    flat = np.empty(wmat.size)
    flat[cols] = wmat.ravel(order="C")
    return flat.reshape(z_dims, order="F")


def tensor_to_weight_matrix(w: np.ndarray, kernel_dims, pool_dims) -> np.ndarray:
    l = tuple(int(v) for v in kernel_dims)
    p = tuple(int(v) for v in pool_dims)
    cols = z_matrix_columns(l, p)
    big_p = int(np.prod(p, dtype=np.int64))
    big_l = int(np.prod(l, dtype=np.int64))
    return vectorize(w)[cols].reshape(big_p, big_l)


# state construction -----------------------------------------------------------


def init_state(
    param,
    kernel_dims,
    pool_dims,
    rng: np.random.Generator,
    n_classes: int = 1,
):
    """Draw an initial state: normal entries scaled by 1/sqrt(fan-in)."""
    l = tuple(int(v) for v in kernel_dims)
    big_l = int(np.prod(l, dtype=np.int64))
    big_p = int(np.prod([int(v) for v in pool_dims], dtype=np.int64))
    if isinstance(param, FreeParam):
        k = param.kernel_count
        return FreeState(
            kernel_mat=rng.standard_normal((big_l, k)) / math.sqrt(big_l),
            fc=rng.standard_normal((big_p, k, n_classes)) / math.sqrt(big_p),
        )
    if isinstance(param, TuckerParam):
        ranks = tuple(int(r) for r in param.ranks)
        if len(ranks) != len(l) + 1:
            raise ValueError("need one rank per kernel mode plus the stack mode")
        k = param.kernel_count
        core = rng.standard_normal(ranks) / math.sqrt(np.prod(ranks[:-1]))
        factors = [
            rng.standard_normal((li, ri)) / math.sqrt(li) for li, ri in zip(l, ranks)
        ]
        stack_factor = rng.standard_normal((k, ranks[-1])) / math.sqrt(k)
        return TuckerState(
            core=core,
            factors=factors,
            stack_factor=stack_factor,
            fc=rng.standard_normal((big_p, k, n_classes)) / math.sqrt(big_p),
        )
    if isinstance(param, CpParam):
        r = param.rank
        k = param.kernel_count
        return CpState(
            factors=[rng.standard_normal((li, r)) / math.sqrt(li) for li in l],
            stack_factor=rng.standard_normal((k, r)) / math.sqrt(k),
            fc=rng.standard_normal((big_p, k, n_classes)) / math.sqrt(big_p),
        )
    raise TypeError(f"unknown parameterization {param!r}")


# reference objective / gradient ------------------------------------------------


def _kernel_matrix(state) -> np.ndarray:
    """Columns are the vectorized kernels implied by the state."""
    if isinstance(state, FreeState):
        return state.kernel_mat
    if isinstance(state, TuckerState):
        stack = multi_mode_product(
            state.core, [*state.factors, state.stack_factor]
        )
        return unfold(stack, stack.ndim).T
    if isinstance(state, CpState):
        return _khatri_rao(state.factors) @ state.stack_factor.T
    raise TypeError(f"unknown state {state!r}")


def _weight_stack(state) -> np.ndarray:
    """(M, P, L): per-class rearranged composite weights."""
    amat = _kernel_matrix(state)
    return np.einsum("pkm,lk->mpl", state.fc, amat)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    neg = ~pos
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[neg])
    out[neg] = ez / (1.0 + ez)
    return out


def _predictions(state, mmat: np.ndarray) -> np.ndarray:
    w = _weight_stack(state)
    return mmat @ w.reshape(w.shape[0], -1).T


def objective(state, mmat: np.ndarray, y: np.ndarray, loss: int) -> float:
    """Mean loss over samples (and classes, for multiclass)."""
    preds = _predictions(state, mmat)
    nm = preds.size
    if loss == kernels.LOSS_LS:
        return float(np.sum((preds - y) ** 2) / nm)
    return float(np.sum(np.logaddexp(0.0, preds) - y * preds) / nm)


def gradient(state, mmat: np.ndarray, y: np.ndarray, loss: int):
    """Analytic gradient, returned as a state of the same type/shapes."""
    preds = _predictions(state, mmat)
    nm = preds.size
    if loss == kernels.LOSS_LS:
        score = 2.0 * (preds - y) / nm
    else:
        score = (_sigmoid(preds) - y) / nm
    m_cls = preds.shape[1]
    big_p, k = state.fc.shape[0], state.fc.shape[1]
    amat = _kernel_matrix(state)
    big_l = amat.shape[0]
    gw = (mmat.T @ score).T.reshape(m_cls, big_p, big_l)
    g_fc = np.einsum("mpl,lk->pkm", gw, amat)
    ga = np.einsum("mpl,pkm->lk", gw, state.fc)
    if isinstance(state, FreeState):
        return FreeState(kernel_mat=ga, fc=g_fc)
    if isinstance(state, TuckerState):
        n_modes = state.core.ndim
        stack_dims = tuple(f.shape[0] for f in state.factors) + (
            state.stack_factor.shape[0],
        )
        ga_stack = fold(ga.T, n_modes, stack_dims)
        all_factors = [*state.factors, state.stack_factor]
        g_core = multi_mode_product(ga_stack, all_factors, transpose=True)
        g_factors = []
        for j in range(n_modes):
            others = [all_factors[i] for i in range(n_modes) if i != j]
            modes = [i + 1 for i in range(n_modes) if i != j]
            yj = multi_mode_product(state.core, others, modes=modes)
            g_factors.append(unfold(ga_stack, j + 1) @ unfold(yj, j + 1).T)
        return TuckerState(
            core=g_core,
            factors=g_factors[:-1],
            stack_factor=g_factors[-1],
            fc=g_fc,
        )
    if isinstance(state, CpState):
        kr = _khatri_rao(state.factors)
        g_sf = ga.T @ kr
        cmat = ga @ state.stack_factor
        l_dims = tuple(f.shape[0] for f in state.factors)
        rank = state.stack_factor.shape[1]
        g_factors = [np.empty_like(f) for f in state.factors]
        for r in range(rank):
            ct = cmat[:, r].reshape(l_dims, order="F")
            for j in range(len(l_dims)):
                others = [
                    state.factors[i][:, r : r + 1] for i in range(len(l_dims)) if i != j
                ]
                modes = [i + 1 for i in range(len(l_dims)) if i != j]
                contracted = multi_mode_product(ct, others, modes=modes, transpose=True)
                g_factors[j][:, r] = np.moveaxis(contracted, j, 0).ravel()
        return CpState(factors=g_factors, stack_factor=g_sf, fc=g_fc)
    raise TypeError(f"unknown state {state!r}")


# public wrappers


def ls_objective(state, mmat, y) -> float:
    return objective(state, mmat, _as_column(y), kernels.LOSS_LS)


def gradient_least_squares(state, mmat, y):
    return gradient(state, mmat, _as_column(y), kernels.LOSS_LS)


def logistic_objective(state, mmat, y) -> float:
    return objective(state, mmat, _as_column(y), kernels.LOSS_LOGISTIC)


def gradient_logistic(state, mmat, y):
    return gradient(state, mmat, _as_column(y), kernels.LOSS_LOGISTIC)


def _as_column(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y.reshape(-1, 1) if y.ndim == 1 else y


# training drivers ---------------------------------------------------------------


def _train_numpy(state, mmat, y, loss, cfg: TrainConfig, clip_radius: float):
    """Pure-numpy training loop: same update rule and stopping logic as the
    compiled kernels, built on the reference gradient."""
    arrays = state.arrays()
    vel = [np.zeros_like(a) for a in arrays]
    trace = []
    status = kernels.STATUS_MAX_ITERS
    it = 0
    for t in range(cfg.max_iters + 1):
        obj = objective(state, mmat, y, loss)
        trace.append(obj)
        it = t
        if not np.isfinite(obj) or obj > kernels.DIVERGENCE_LIMIT:
            status = kernels.STATUS_DIVERGED
            break
        if t > 0 and 0.0 <= trace[t - 1] - obj < cfg.tol:
            status = kernels.STATUS_CONVERGED
            break
        if t == cfg.max_iters:
            break
        grads = gradient(state, mmat, y, loss).arrays()
        for a, v, g in zip(arrays, vel, grads):
            v *= cfg.momentum
            v += g
            a -= cfg.learning_rate * v
        if clip_radius > 0.0:
            w = _weight_stack(state)
            nrm = float(np.linalg.norm(w))
            if nrm > clip_radius:
                state.fc *= clip_radius / nrm
    return np.asarray(trace), it, status


def _unfold_gather_indices(dims) -> list[np.ndarray]:
    dims = tuple(int(v) for v in dims)
    d = int(np.prod(dims, dtype=np.int64))
    flat = np.arange(d, dtype=np.int64).reshape(dims, order="F")
    out = []
    for j in range(len(dims)):
        out.append(
            np.ascontiguousarray(
                np.reshape(np.moveaxis(flat, j, 0), (dims[j], -1), order="F")
            )
        )
    return out


def _train_numba(state, mmat, y, loss, cfg: TrainConfig, clip_radius: float):
    b = np.ascontiguousarray(np.moveaxis(state.fc, 2, 0))
    if isinstance(state, FreeState):
        a = np.ascontiguousarray(state.kernel_mat)
        trace, it, status = kernels.train_free(
            mmat, y, a, b, cfg.learning_rate, cfg.momentum, cfg.tol,
            cfg.max_iters, loss, clip_radius,
        )
        state.kernel_mat = a
    elif isinstance(state, TuckerState):
        stack_dims = tuple(f.shape[0] for f in state.factors) + (
            state.stack_factor.shape[0],
        )
        rdims = state.core.shape
        core_flat = np.ascontiguousarray(state.core.ravel(order="F"))
        factors = kernels.as_typed_list([*state.factors, state.stack_factor])
        src_t = kernels.as_typed_list(_unfold_gather_indices(stack_dims))
        src_r = kernels.as_typed_list(_unfold_gather_indices(rdims))
        trace, it, status = kernels.train_tucker(
            mmat, y, core_flat, factors, b,
            np.asarray(stack_dims, dtype=np.int64),
            np.asarray(rdims, dtype=np.int64),
            src_t, src_r,
            cfg.learning_rate, cfg.momentum, cfg.tol, cfg.max_iters, loss,
            clip_radius,
        )
        state.core = core_flat.reshape(rdims, order="F")
        state.factors = [np.asarray(factors[i]) for i in range(len(state.factors))]
        state.stack_factor = np.asarray(factors[len(state.factors)])
    elif isinstance(state, CpState):
        l_dims = tuple(f.shape[0] for f in state.factors)
        factors = kernels.as_typed_list(state.factors)
        sf = np.ascontiguousarray(state.stack_factor)
        src_l = kernels.as_typed_list(_unfold_gather_indices(l_dims))
        trace, it, status = kernels.train_cp(
            mmat, y, factors, sf, b, src_l,
            cfg.learning_rate, cfg.momentum, cfg.tol, cfg.max_iters, loss,
            clip_radius,
        )
        state.factors = [np.asarray(factors[i]) for i in range(len(state.factors))]
        state.stack_factor = sf
    else:
        raise TypeError(f"unknown state {state!r}")
    state.fc = np.moveaxis(b, 0, 2)
    return trace, it, status


def _train(state, mmat, y, loss, cfg, clip_radius, backend):
    backend = backend or kernels.BACKEND
    if backend == "numba":
        if not kernels.HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable")
        trace, it, status = _train_numba(state, mmat, y, loss, cfg, clip_radius)
    elif backend == "numpy":
        trace, it, status = _train_numpy(state, mmat, y, loss, cfg, clip_radius)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if status == kernels.STATUS_DIVERGED:
        raise TrainingDiverged(trace)
    return trace, it, status == kernels.STATUS_CONVERGED


def _finalize(state, kernel_dims, pool_dims, trace, it, converged) -> FitResult:
    w = _weight_stack(state)  # (M, P, L)
    m_cls = w.shape[0]
    if m_cls == 1:
        wmat = w[0]
        tensor = weight_matrix_to_tensor(wmat, kernel_dims, pool_dims)
    else:
        wmat = np.moveaxis(w, 0, 2)
        tensor = np.stack(
            [
                weight_matrix_to_tensor(w[m], kernel_dims, pool_dims)
                for m in range(m_cls)
            ],
            axis=-1,
        )
    return FitResult(
        state=state,
        weight_matrix=wmat,
        weight=tensor,
        trace=trace,
        iterations=it,
        converged=converged,
    )


def _prepare(data, param, kernel_dims, pool_dims, cfg, n_classes, init):
    mmat = dataset_matrix(data, kernel_dims, pool_dims)
    if init is not None:
        state = init.copy()
    else:
        rng = np.random.default_rng(cfg.seed)
        state = init_state(param, kernel_dims, pool_dims, rng, n_classes=n_classes)
    return mmat, state


def train_least_squares(
    data: Dataset,
    param,
    kernel_dims,
    pool_dims,
    cfg: TrainConfig = TrainConfig(),
    init: FreeState | TuckerState | CpState | None = None,
    backend: str | None = None,
) -> FitResult:
    """Least-squares fit of the composite-weight model.

    ``param`` selects the parameterization: :class:`FreeParam`,
    :class:`TuckerParam`, or :class:`CpParam`.  Raises
    :class:`TrainingDiverged` when the objective blows up.
    """
    y = _as_column(np.asarray(data.targets, dtype=np.float64))
    mmat, state = _prepare(data, param, kernel_dims, pool_dims, cfg, 1, init)
    trace, it, conv = _train(
        state, mmat, y, kernels.LOSS_LS, cfg, 0.0, backend
    )
    return _finalize(state, kernel_dims, pool_dims, trace, it, conv)


def train_logistic(
    data: Dataset,
    param,
    kernel_dims,
    pool_dims,
    cfg: TrainConfig = TrainConfig(),
    radius_clip: float | None = None,
    init: FreeState | TuckerState | CpState | None = None,
    backend: str | None = None,
) -> FitResult:
    """Binary-label negative log-likelihood fit; labels must be 0/1.

    ``radius_clip`` optionally projects the composite weight onto a Frobenius
    ball of that radius after each step.
    """
    labels = np.asarray(data.targets)
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("logistic training requires labels in {0, 1}")
    y = _as_column(labels.astype(np.float64))
    mmat, state = _prepare(data, param, kernel_dims, pool_dims, cfg, 1, init)
    trace, it, conv = _train(
        state, mmat, y, kernels.LOSS_LOGISTIC, cfg,
        float(radius_clip) if radius_clip else 0.0, backend,
    )
    return _finalize(state, kernel_dims, pool_dims, trace, it, conv)


def train_multiclass(
    data: Dataset,
    param,
    kernel_dims,
    pool_dims,
    n_classes: int,
    cfg: TrainConfig = TrainConfig(),
    radius_clip: float | None = None,
    init: FreeState | TuckerState | CpState | None = None,
    backend: str | None = None,
) -> FitResult:
    """One-vs-rest stacked logistic fit with shared kernels and per-class
    fully-connected weights; labels must lie in 1..n_classes."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    labels = np.asarray(data.targets)
    if not np.isin(labels, np.arange(1, n_classes + 1)).all():
        raise ValueError(f"labels must lie in 1..{n_classes}")
    y = np.zeros((len(labels), n_classes))
    y[np.arange(len(labels)), labels.astype(int) - 1] = 1.0
    mmat, state = _prepare(data, param, kernel_dims, pool_dims, cfg, n_classes, init)
    trace, it, conv = _train(
        state, mmat, y, kernels.LOSS_LOGISTIC, cfg,
        float(radius_clip) if radius_clip else 0.0, backend,
    )
    return _finalize(state, kernel_dims, pool_dims, trace, it, conv)


# conversions to user-facing forms ------------------------------------------------


def state_to_bank(state, kernel_dims, pool_dims, class_index: int = 0) -> KernelBank:
    """Materialize a state as kernels plus fc weights (one class slice)."""
    l = tuple(int(v) for v in kernel_dims)
    p = tuple(int(v) for v in pool_dims)
    amat = _kernel_matrix(state)
    kernels_ = [amat[:, k].reshape(l, order="F") for k in range(amat.shape[1])]
    fc = [
        state.fc[:, k, class_index].reshape(p, order="F")
        for k in range(state.fc.shape[1])
    ]
    return KernelBank(kernels=kernels_, fc_weights=fc)


def state_to_forms(state):
    """Expose the factorized stack as a decomposition form, when applicable."""
    if isinstance(state, TuckerState):
        return TuckerForm(
            core=state.core, factors=[*state.factors, state.stack_factor]
        )
    if isinstance(state, CpState):
        norms = [np.linalg.norm(f, axis=0) for f in state.factors]
        norms.append(np.linalg.norm(state.stack_factor, axis=0))
        weights = np.prod(norms, axis=0)
        safe = [np.where(n == 0, 1.0, n) for n in norms]
        factors = [f / s for f, s in zip(state.factors, safe[:-1])]
        factors.append(state.stack_factor / safe[-1])
        for f in factors:
            zero = np.linalg.norm(f, axis=0) == 0
            f[0, zero] = 1.0
        return CpForm(weights=weights, factors=factors)
    raise TypeError("only factorized states map to decomposition forms")
