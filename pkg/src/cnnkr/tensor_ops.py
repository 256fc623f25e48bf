"""Dense tensor algebra: unfoldings, mode products, Kronecker and outer products.

Tensors are plain ``numpy.ndarray`` objects with float64 entries.  The
canonical flat layout used throughout the package is *column-major*
("Fortran") vectorization: ``vectorize(t)`` enumerates entries with the
first index varying fastest.  All identities in this module (and everything
built on top of it) are consistent with that single choice.

Modes are 1-based in the public API, matching the usual multilinear-algebra
notation; a tensor of order N has modes 1..N.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_tensor",
    "unfold",
    "fold",
    "mode_product",
    "multi_mode_product",
    "inner",
    "frobenius",
    "kronecker",
    "outer",
    "vectorize",
    "fold_vec",
]


def as_tensor(x) -> np.ndarray:
    """Coerce input to a float64 ndarray (the universal value type here)."""
    return np.asarray(x, dtype=np.float64)


def _check_mode(t: np.ndarray, mode: int) -> int:
    if not 1 <= mode <= t.ndim:
        raise ValueError(f"mode {mode} out of range for order-{t.ndim} tensor")
    return mode - 1


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-n unfolding: rows index mode ``mode``, columns are its fibers.

    Columns enumerate the remaining modes with the lowest remaining mode
    varying fastest (consistent with column-major vectorization).
    """
    t = as_tensor(t)
    ax = _check_mode(t, mode)
    return np.reshape(np.moveaxis(t, ax, 0), (t.shape[ax], -1), order="F")


def fold(mat: np.ndarray, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`unfold`: rebuild a tensor of ``shape`` from its
    mode-``mode`` unfolding."""
    mat = as_tensor(mat)
    shape = tuple(int(s) for s in shape)
    ax = mode - 1
    if not 1 <= mode <= len(shape):
        raise ValueError(f"mode {mode} out of range for shape {shape}")
    rest = shape[:ax] + shape[ax + 1 :]
    if mat.shape != (shape[ax], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(
            f"matrix of shape {mat.shape} cannot fold to {shape} along mode {mode}"
        )
    return np.moveaxis(mat.reshape((shape[ax],) + rest, order="F"), 0, ax)


def mode_product(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """Mode-n product ``t x_n m``: contracts mode ``mode`` of ``t`` with the
    columns of ``m``, replacing its extent by ``m.shape[0]``."""
    t = as_tensor(t)
    m = as_tensor(m)
    ax = _check_mode(t, mode)
    if m.ndim != 2:
        raise ValueError("mode_product expects a matrix")
    if m.shape[1] != t.shape[ax]:
        raise ValueError(
            f"matrix columns {m.shape[1]} != tensor extent {t.shape[ax]} at mode {mode}"
        )
    new_shape = t.shape[:ax] + (m.shape[0],) + t.shape[ax + 1 :]
    return fold(m @ unfold(t, mode), mode, new_shape)


def multi_mode_product(
    t: np.ndarray, mats, modes=None, transpose: bool = False
) -> np.ndarray:
    """Apply a mode product along several modes in sequence.

    ``mats`` is a sequence of matrices; ``modes`` defaults to ``1..len(mats)``.
    With ``transpose=True`` each matrix is transposed first (the adjoint map).
    """
    t = as_tensor(t)
    if modes is None:
        modes = range(1, len(mats) + 1)
    for m, mode in zip(mats, modes):
        m = as_tensor(m)
        t = mode_product(t, m.T if transpose else m, mode)
    return t


def inner(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product: sum of elementwise products of two same-shape tensors."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.tensordot(a, b, axes=a.ndim))


def frobenius(t: np.ndarray) -> float:
    t = as_tensor(t)
    return float(np.linalg.norm(t.ravel()))


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-mode Kronecker product of two equal-order tensors.

    Mode j of the result has extent ``a.shape[j] * b.shape[j]`` and its index
    splits as (a-index major, b-index minor): the b index varies fastest
    inside each block.  For matrices this is the classical Kronecker product.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != b.ndim:
        raise ValueError(f"order mismatch: {a.ndim} vs {b.ndim}")
    return np.kron(a, b)


def outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Outer product: result(i..., j...) = a(i...) * b(j...)."""
    a = as_tensor(a)
    b = as_tensor(b)
    return np.multiply.outer(a, b)


def vectorize(t: np.ndarray) -> np.ndarray:
    """Flatten in the canonical (first index fastest) order."""
    return as_tensor(t).ravel(order="F")


def fold_vec(v: np.ndarray, shape) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    v = as_tensor(v)
    shape = tuple(int(s) for s in shape)
    if v.ndim != 1 or v.size != int(np.prod(shape, dtype=np.int64)):
        raise ValueError(f"vector of length {v.size} cannot fold to shape {shape}")
    return v.reshape(shape, order="F")
