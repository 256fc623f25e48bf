"""Exact linear-operator formulation of conv -> average-pool -> fully-connected
networks.

A single conv+pool stage is described by :class:`ConvPoolSpec`.  Positioning
matrices embed a kernel window at a given sliding offset; averaging them per
pooling block yields the fixed pooled factor matrices.  With a linear
activation the whole network collapses into one composite weight tensor:
the prediction equals a single inner product against the input, which
:func:`forward_oracle` verifies by direct computation (sliding windows,
explicit pooling) with no linearization involved.

The same machinery supports the two-stage (five-layer) network and the
rank-based reparameterization that exposes kernel-count redundancy.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .decomposition import CpForm, TuckerForm, tucker_reconstruct
from .tensor_ops import (
    as_tensor,
    inner,
    kronecker,
    mode_product,
    multi_mode_product,
    vectorize,
)

__all__ = [
    "ConvPoolSpec",
    "KernelBank",
    "LinearizedModel",
    "embedding_matrix",
    "positioning_matrix",
    "pooled_factor",
    "pooled_factor_stack",
    "input_operator_matrix",
    "forward_oracle",
    "build_composite",
    "transform_input",
    "stack_kernels",
    "split_stack",
    "reparameterize_tucker",
    "reparameterize_cp",
    "forward_oracle_5layer",
    "build_composite_5layer",
]


@dataclass(frozen=True)
class ConvPoolSpec:
    """Geometry of one convolution + average-pooling stage.

    ``conv_stride`` is shared across modes.  ``pool_stride=None`` selects the
    default non-overlapping pooling where the stride along each mode equals
    that mode's pooling size; an integer selects a shared stride, allowing
    overlapped pooling windows.
    """

    input_dims: tuple[int, ...]
    kernel_dims: tuple[int, ...]
    conv_stride: int = 1
    pool_sizes: tuple[int, ...] = ()
    pool_stride: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        object.__setattr__(self, "kernel_dims", tuple(int(l) for l in self.kernel_dims))
        pool = self.pool_sizes or tuple(1 for _ in self.input_dims)
        object.__setattr__(self, "pool_sizes", tuple(int(q) for q in pool))
        n = len(self.input_dims)
        if len(self.kernel_dims) != n or len(self.pool_sizes) != n:
            raise ValueError("input, kernel, and pooling must have equal order")
        if n < 1:
            raise ValueError("order must be at least 1")
        if self.conv_stride < 1:
            raise ValueError("conv stride must be positive")
        if self.pool_stride is not None and self.pool_stride < 1:
            raise ValueError("pool stride must be positive")
        for j, (d, l, q) in enumerate(
            zip(self.input_dims, self.kernel_dims, self.pool_sizes), start=1
        ):
            if not 1 <= l <= d:
                raise ValueError(f"mode {j}: kernel extent {l} invalid for input {d}")
            if (d - l) % self.conv_stride != 0:
                raise ValueError(
                    f"mode {j}: (d - l) = {d - l} not divisible by conv stride "
                    f"{self.conv_stride}; refusing to zero-pad"
                )
            m = (d - l) // self.conv_stride + 1
            sp = q if self.pool_stride is None else self.pool_stride
            if q < 1 or q > m:
                raise ValueError(f"mode {j}: pooling size {q} invalid for {m} windows")
            if (m - q) % sp != 0:
                raise ValueError(
                    f"mode {j}: (m - q) = {m - q} not divisible by pool stride {sp}"
                )
        for j, (d, l, p) in enumerate(
            zip(self.input_dims, self.kernel_dims, self.pool_out_dims), start=1
        ):
            if p * l > d:
                raise ValueError(
                    f"mode {j}: p*l = {p * l} exceeds input extent {d}; the pooled "
                    "factor would lose full column rank"
                )

    @property
    def order(self) -> int:
        return len(self.input_dims)

    @property
    def conv_out_dims(self) -> tuple[int, ...]:
        s = self.conv_stride
        return tuple(
            (d - l) // s + 1 for d, l in zip(self.input_dims, self.kernel_dims)
        )

    @property
    def pool_out_dims(self) -> tuple[int, ...]:
        out = []
        for m, q in zip(self.conv_out_dims, self.pool_sizes):
            sp = q if self.pool_stride is None else self.pool_stride
            out.append((m - q) // sp + 1)
        return tuple(out)

    def pool_stride_at(self, j: int) -> int:
        return self.pool_sizes[j - 1] if self.pool_stride is None else self.pool_stride

    @property
    def z_dims(self) -> tuple[int, ...]:
        return tuple(
            l * p for l, p in zip(self.kernel_dims, self.pool_out_dims)
        )

    @property
    def kernel_size(self) -> int:
        return int(np.prod(self.kernel_dims, dtype=np.int64))

    @property
    def pool_size(self) -> int:
        return int(np.prod(self.pool_out_dims, dtype=np.int64))


@dataclass
class KernelBank:
    """K kernels with their fully-connected weights."""

    kernels: list[np.ndarray]
    fc_weights: list[np.ndarray]

    def __post_init__(self):
        self.kernels = [as_tensor(a) for a in self.kernels]
        self.fc_weights = [as_tensor(b) for b in self.fc_weights]
        if len(self.kernels) != len(self.fc_weights) or not self.kernels:
            raise ValueError("need equal, nonzero counts of kernels and fc weights")
        for a in self.kernels[1:]:
            if a.shape != self.kernels[0].shape:
                raise ValueError("kernel shapes are inconsistent")
        for b in self.fc_weights[1:]:
            if b.shape != self.fc_weights[0].shape:
                raise ValueError("fc weight shapes are inconsistent")

    @property
    def count(self) -> int:
        return len(self.kernels)


@dataclass
class LinearizedModel:
    """Composite weight in transformed space plus its input-space image."""

    weight: np.ndarray
    weight_x: np.ndarray
    factors: list[np.ndarray] = field(repr=False)

    def __post_init__(self):
        ref = multi_mode_product(self.weight, self.factors)
        scale = 1.0 + float(np.abs(ref).max())
        if float(np.abs(ref - self.weight_x).max()) > 1e-12 * scale:
            raise ValueError("weight_x is not the factor image of weight")

    def predict(self, x: np.ndarray) -> float:
        return inner(x, self.weight_x)


def embedding_matrix(d: int, l: int, stride: int, window: int) -> np.ndarray:
    """0/1 matrix of shape (d, l) embedding a length-l window at sliding
    offset ``window`` (1-based): rows (window-1)*stride+1 .. +l carry the
    identity.  Valid for any geometry whose window fits inside d."""
    windows = (d - l) // stride + 1
    if not 1 <= window <= windows:
        raise ValueError(f"window {window} out of range 1..{windows}")
    off = (window - 1) * stride
    u = np.zeros((d, l))
    u[off : off + l, :] = np.eye(l)
    return u


def positioning_matrix(spec: ConvPoolSpec, mode: int, window: int) -> np.ndarray:
    """0/1 matrix embedding the mode-``mode`` kernel extent at sliding-window
    offset ``window`` (1-based) inside the input extent."""
    j = mode - 1
    if not 1 <= mode <= spec.order:
        raise ValueError(f"mode {mode} out of range")
    m = spec.conv_out_dims[j]
    if not 1 <= window <= m:
        raise ValueError(f"window {window} out of range 1..{m} for mode {mode}")
    return embedding_matrix(
        spec.input_dims[j], spec.kernel_dims[j], spec.conv_stride, window
    )


def pooled_factor(spec: ConvPoolSpec, mode: int) -> np.ndarray:
    """Pooled factor matrix for one mode: horizontal blocks, one per pooling
    block, each the average of that block's positioning matrices."""
    j = mode - 1
    if not 1 <= mode <= spec.order:
        raise ValueError(f"mode {mode} out of range")
    q = spec.pool_sizes[j]
    sp = spec.pool_stride_at(mode)
    p = spec.pool_out_dims[j]
    blocks = []
    for k in range(p):
        start = k * sp
        acc = sum(
            positioning_matrix(spec, mode, i + 1) for i in range(start, start + q)
        )
        blocks.append(acc / q)
    return np.hstack(blocks)


def pooled_factors(spec: ConvPoolSpec) -> list[np.ndarray]:
    return [pooled_factor(spec, j + 1) for j in range(spec.order)]


def pooled_factor_stack(spec: ConvPoolSpec, mode: int) -> np.ndarray:
    """The per-block averaged positioning matrices stacked along a third axis:
    shape (input extent, kernel extent, pooling blocks)."""
    u = pooled_factor(spec, mode)
    j = mode - 1
    d, l, p = spec.input_dims[j], spec.kernel_dims[j], spec.pool_out_dims[j]
    return u.reshape(d, l, p, order="F")


def input_operator_matrix(spec: ConvPoolSpec) -> np.ndarray:
    """Single matrix carrying the whole fixed input operation: maps the
    vectorized input to the vectorized transformed input (by its transpose).

    Equals the Kronecker chain of the pooled factors arranged to match the
    canonical column-major vectorization.
    """
    us = pooled_factors(spec)
    out = us[0]
    for u in us[1:]:
        out = np.kron(u, out)
    return out


def _activation(name: str):
    if name == "linear":
        return lambda v: v
    if name == "relu":
        return lambda v: v if v > 0.0 else 0.0
    raise ValueError(f"unknown activation {name!r}")


def _conv_values(x: np.ndarray, a: np.ndarray, spec: ConvPoolSpec, g) -> np.ndarray:
    m = spec.conv_out_dims
    s = spec.conv_stride
    l = spec.kernel_dims
    xc = np.empty(m)
    for idx in itertools.product(*(range(mi) for mi in m)):
        sl = tuple(slice(i * s, i * s + li) for i, li in zip(idx, l))
        xc[idx] = g(float(np.sum(x[sl] * a)))
    return xc


def _avg_pool(xc: np.ndarray, spec: ConvPoolSpec) -> np.ndarray:
    p = spec.pool_out_dims
    q = spec.pool_sizes
    xcp = np.empty(p)
    for idx in itertools.product(*(range(pi) for pi in p)):
        sl = tuple(
            slice(k * spec.pool_stride_at(j + 1), k * spec.pool_stride_at(j + 1) + qj)
            for j, (k, qj) in enumerate(zip(idx, q))
        )
        xcp[idx] = float(np.mean(xc[sl]))
    return xcp


def forward_oracle(
    x: np.ndarray, bank: KernelBank, spec: ConvPoolSpec, activation: str = "linear"
) -> float:
    """Ground-truth forward pass: direct sliding-window inner products, the
    activation, per-block average pooling, then the fully-connected sum.
    Uses no linearization; this is the oracle the composite weight is checked
    against."""
    x = as_tensor(x)
    if x.shape != spec.input_dims:
        raise ValueError(f"input shape {x.shape} != spec dims {spec.input_dims}")
    g = _activation(activation)
    total = 0.0
    for a, b in zip(bank.kernels, bank.fc_weights):
        if a.shape != spec.kernel_dims:
            raise ValueError(f"kernel shape {a.shape} != spec dims {spec.kernel_dims}")
        if b.shape != spec.pool_out_dims:
            raise ValueError(
                f"fc weight shape {b.shape} != pooled dims {spec.pool_out_dims}"
            )
        xcp = _avg_pool(_conv_values(x, a, spec, g), spec)
        total += inner(xcp, b)
    return total


def composite_weight(bank: KernelBank, spec: ConvPoolSpec) -> np.ndarray:
    """Sum over kernels of fc-weight (x) kernel Kronecker products; lives in
    the transformed space of shape ``spec.z_dims``."""
    w = np.zeros(spec.z_dims)
    for a, b in zip(bank.kernels, bank.fc_weights):
        w += kronecker(b, a)
    return w


def build_composite(bank: KernelBank, spec: ConvPoolSpec) -> LinearizedModel:
    """Collapse the linear-activation network into a single weight tensor.

    The returned model satisfies ``inner(x, weight_x) == forward_oracle(x)``
    for every input, which is this module's central identity.
    """
    for a in bank.kernels:
        if a.shape != spec.kernel_dims:
            raise ValueError(f"kernel shape {a.shape} != spec dims {spec.kernel_dims}")
    for b in bank.fc_weights:
        if b.shape != spec.pool_out_dims:
            raise ValueError(
                f"fc weight shape {b.shape} != pooled dims {spec.pool_out_dims}"
            )
    w = composite_weight(bank, spec)
    us = pooled_factors(spec)
    wx = multi_mode_product(w, us)
    return LinearizedModel(weight=w, weight_x=wx, factors=us)


def transform_input(x: np.ndarray, spec: ConvPoolSpec) -> np.ndarray:
    """Adjoint of the fixed operator: maps an input-space tensor into the
    transformed space so that ``inner(z, weight) == inner(x, weight_x)``."""
    x = as_tensor(x)
    if x.shape != spec.input_dims:
        raise ValueError(f"input shape {x.shape} != spec dims {spec.input_dims}")
    return multi_mode_product(x, pooled_factors(spec), transpose=True)


def stack_kernels(bank: KernelBank) -> np.ndarray:
    """Stack the K kernels along a new trailing mode."""
    return np.stack(bank.kernels, axis=-1)


def split_stack(stack: np.ndarray) -> list[np.ndarray]:
    """Inverse of :func:`stack_kernels`: trailing-mode slices."""
    stack = as_tensor(stack)
    return [stack[..., k].copy() for k in range(stack.shape[-1])]


def _check_stack_match(bank: KernelBank, rec: np.ndarray, tol: float = 1e-8) -> None:
    stack = stack_kernels(bank)
    scale = 1.0 + float(np.abs(stack).max())
    if float(np.abs(stack - rec).max()) > tol * scale:
        raise ValueError("factorization does not reconstruct the stacked kernels")


def reparameterize_tucker(bank: KernelBank, form: TuckerForm) -> KernelBank:
    """Rewrite a K-kernel bank as an equivalent R-kernel bank using a Tucker
    factorization of the stacked kernels (R = trailing-mode rank).

    The new kernels are the trailing-mode core slices pushed through the
    per-mode factors; the new fc weights mix the old ones by the trailing
    factor's columns.  The composite weight is preserved exactly.
    """
    n = bank.kernels[0].ndim
    if form.core.ndim != n + 1:
        raise ValueError("factorization must cover the stacked kernels")
    _check_stack_match(bank, tucker_reconstruct(form))
    r = form.core.shape[-1]
    h_last = form.factors[-1]
    new_kernels = []
    new_fc = []
    for ridx in range(r):
        core_slice = form.core[..., ridx]
        new_kernels.append(multi_mode_product(core_slice, form.factors[:-1]))
        mix = sum(h_last[k, ridx] * bank.fc_weights[k] for k in range(bank.count))
        new_fc.append(mix)
    return KernelBank(kernels=new_kernels, fc_weights=new_fc)


def reparameterize_cp(bank: KernelBank, form: CpForm) -> KernelBank:
    """CP analog of :func:`reparameterize_tucker`: one kernel per rank-1 term."""
    n = bank.kernels[0].ndim
    if len(form.factors) != n + 1:
        raise ValueError("factorization must cover the stacked kernels")
    _check_stack_match(bank, form.reconstruct())
    new_kernels = []
    new_fc = []
    for ridx in range(form.rank):
        vecs = [f[:, ridx] for f in form.factors[:-1]]
        rank1 = vecs[0]
        for v in vecs[1:]:
            rank1 = np.multiply.outer(rank1, v)
        new_kernels.append(form.weights[ridx] * rank1)
        h_last = form.factors[-1][:, ridx]
        new_fc.append(sum(h_last[k] * bank.fc_weights[k] for k in range(bank.count)))
    return KernelBank(kernels=new_kernels, fc_weights=new_fc)


def forward_oracle_5layer(
    x: np.ndarray,
    kernels1: list[np.ndarray],
    kernels2: list[np.ndarray],
    fc_weights,
    spec1: ConvPoolSpec,
    spec2: ConvPoolSpec,
    activation: str = "linear",
) -> float:
    """Direct two-stage forward pass: conv/pool with each first-stage kernel,
    conv/pool of that map with each second-stage kernel, then the
    fully-connected sum over both kernel indices."""
    x = as_tensor(x)
    g = _activation(activation)
    total = 0.0
    for k1, a1 in enumerate(kernels1):
        xcp = _avg_pool(_conv_values(x, as_tensor(a1), spec1, g), spec1)
        for k2, a2 in enumerate(kernels2):
            xcp2 = _avg_pool(_conv_values(xcp, as_tensor(a2), spec2, g), spec2)
            total += inner(xcp2, as_tensor(fc_weights[k1][k2]))
    return total


def _two_stage_factor(spec1: ConvPoolSpec, spec2: ConvPoolSpec, mode: int) -> np.ndarray:
    """Fixed per-mode operator of the two-stage network: contract the pooled
    positioning stacks of both stages over the shared intermediate extent."""
    u1 = pooled_factor_stack(spec1, mode)  # (d, l, p)
    u2 = pooled_factor_stack(spec2, mode)  # (p, lt, pt)
    t = np.einsum("ask,ktc->astc", u1, u2)
    d = t.shape[0]
    return t.reshape(d, -1, order="F")


def build_composite_5layer(
    kernels1: list[np.ndarray],
    kernels2: list[np.ndarray],
    fc_weights,
    spec1: ConvPoolSpec,
    spec2: ConvPoolSpec,
) -> LinearizedModel:
    """Composite weight of the two-stage linear-activation network.

    ``fc_weights[k1][k2]`` is the fully-connected tensor for the (k1, k2)
    kernel pair; ``spec2`` must consume the pooled output of ``spec1``.
    """
    if spec2.input_dims != spec1.pool_out_dims:
        raise ValueError(
            f"stage-2 input dims {spec2.input_dims} != stage-1 pooled dims "
            f"{spec1.pool_out_dims}"
        )
    z2 = tuple(
        l1 * l2 * p2
        for l1, l2, p2 in zip(
            spec1.kernel_dims, spec2.kernel_dims, spec2.pool_out_dims
        )
    )
    w = np.zeros(z2)
    for k1, a1 in enumerate(kernels1):
        a1 = as_tensor(a1)
        if a1.shape != spec1.kernel_dims:
            raise ValueError("stage-1 kernel shape mismatch")
        for k2, a2 in enumerate(kernels2):
            a2 = as_tensor(a2)
            if a2.shape != spec2.kernel_dims:
                raise ValueError("stage-2 kernel shape mismatch")
            b = as_tensor(fc_weights[k1][k2])
            if b.shape != spec2.pool_out_dims:
                raise ValueError("fc weight shape mismatch")
            w += kronecker(b, kronecker(a2, a1))
    factors = [_two_stage_factor(spec1, spec2, j + 1) for j in range(spec1.order)]
    wx = multi_mode_product(w, factors)
    return LinearizedModel(weight=w, weight_x=wx, factors=factors)
