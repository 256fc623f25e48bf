"""Compiled trainers against the numpy reference path."""

import numpy as np
import pytest

from cnnkr import kernels
from cnnkr.estimation import (
    CpParam,
    Dataset,
    FreeParam,
    TrainConfig,
    TuckerParam,
    gradient,
    init_state,
    train_least_squares,
    train_logistic,
    train_multiclass,
    z_matrix_columns,
)

L_DIMS, P_DIMS = (2, 2, 2), (2, 2, 2)

pytestmark = pytest.mark.skipif(
    not kernels.HAVE_NUMBA, reason="numba unavailable"
)


def make_dataset(n, seed, labels=None, n_classes=None):
    rng = np.random.default_rng(seed)
    zdims = tuple(a * b for a, b in zip(L_DIMS, P_DIMS))
    inputs = [rng.standard_normal(zdims) for _ in range(n)]
    cols = z_matrix_columns(L_DIMS, P_DIMS)
    zmat = np.stack([z.ravel(order="F") for z in inputs])[:, cols]
    w = rng.standard_normal((8, 8))
    signal = zmat @ w.ravel()
    if labels == "binary":
        targets = (signal + 0.5 * rng.standard_normal(n) > 0).astype(float)
    elif labels == "multi":
        targets = 1 + (rng.random(n) * n_classes).astype(int)
    else:
        targets = signal + 0.3 * rng.standard_normal(n)
    return Dataset(inputs=inputs, targets=targets)


FIXED_ITERS = TrainConfig(learning_rate=0.005, tol=1e-300, max_iters=120, seed=3)


@pytest.mark.parametrize(
    "param",
    [
        FreeParam(2),
        TuckerParam(ranks=(2, 2, 2, 2), kernel_count=3),
        CpParam(rank=2, kernel_count=3),
    ],
    ids=["free", "tucker", "cp"],
)
def test_least_squares_paths_agree(param):
    data = make_dataset(60, seed=1)
    a = train_least_squares(data, param, L_DIMS, P_DIMS, FIXED_ITERS, backend="numpy")
    b = train_least_squares(data, param, L_DIMS, P_DIMS, FIXED_ITERS, backend="numba")
    np.testing.assert_allclose(a.trace, b.trace, rtol=1e-7, atol=1e-12)
    np.testing.assert_allclose(a.weight_matrix, b.weight_matrix, rtol=1e-6, atol=1e-10)


@pytest.mark.parametrize(
    "param",
    [FreeParam(2), TuckerParam(ranks=(2, 2, 2, 2), kernel_count=2),
     CpParam(rank=2, kernel_count=2)],
    ids=["free", "tucker", "cp"],
)
def test_logistic_paths_agree(param):
    data = make_dataset(50, seed=2, labels="binary")
    a = train_logistic(data, param, L_DIMS, P_DIMS, FIXED_ITERS, backend="numpy")
    b = train_logistic(data, param, L_DIMS, P_DIMS, FIXED_ITERS, backend="numba")
    np.testing.assert_allclose(a.trace, b.trace, rtol=1e-7, atol=1e-12)


def test_logistic_clipped_paths_agree():
    data = make_dataset(50, seed=4, labels="binary")
    a = train_logistic(
        data, FreeParam(2), L_DIMS, P_DIMS, FIXED_ITERS,
        radius_clip=0.8, backend="numpy",
    )
    b = train_logistic(
        data, FreeParam(2), L_DIMS, P_DIMS, FIXED_ITERS,
        radius_clip=0.8, backend="numba",
    )
    np.testing.assert_allclose(a.trace, b.trace, rtol=1e-7, atol=1e-12)
    assert np.linalg.norm(b.weight_matrix) <= 0.8 + 1e-9


def test_multiclass_paths_agree():
    data = make_dataset(45, seed=5, labels="multi", n_classes=3)
    a = train_multiclass(
        data, FreeParam(2), L_DIMS, P_DIMS, 3, FIXED_ITERS, backend="numpy"
    )
    b = train_multiclass(
        data, FreeParam(2), L_DIMS, P_DIMS, 3, FIXED_ITERS, backend="numba"
    )
    np.testing.assert_allclose(a.trace, b.trace, rtol=1e-7, atol=1e-12)
    np.testing.assert_allclose(a.weight_matrix, b.weight_matrix, rtol=1e-6, atol=1e-10)


def test_compiled_first_step_matches_reference_gradient():
    # one momentum step from velocity zero is exactly (param - lr * grad)
    from cnnkr import estimation as est

    data = make_dataset(30, seed=6)
    mmat = est.dataset_matrix(data, L_DIMS, P_DIMS)
    y = np.asarray(data.targets, float).reshape(-1, 1)
    state = init_state(
        TuckerParam(ranks=(2, 2, 2, 2), kernel_count=2),
        L_DIMS, P_DIMS, np.random.default_rng(7),
    )
    expect = [
        arr - 0.01 * g
        for arr, g in zip(
            state.copy().arrays(),
            gradient(state.copy(), mmat, y, kernels.LOSS_LS).arrays(),
        )
    ]
    stepped = state.copy()
    est._train_numba(
        stepped, mmat, y, kernels.LOSS_LS,
        TrainConfig(learning_rate=0.01, tol=1e-300, max_iters=1), 0.0,
    )
    for want, got in zip(expect, stepped.arrays()):
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-13)


def test_status_codes():
    data = make_dataset(30, seed=8)
    fit = train_least_squares(
        data, FreeParam(1), L_DIMS, P_DIMS,
        TrainConfig(learning_rate=0.01, tol=1e-300, max_iters=25),
    )
    assert fit.iterations == 25
    assert not fit.converged
    fit = train_least_squares(
        data, FreeParam(1), L_DIMS, P_DIMS,
        TrainConfig(learning_rate=0.01, tol=1e-3, max_iters=50_000),
    )
    assert fit.converged


def test_backend_flag_exposed():
    assert kernels.BACKEND in ("numba", "numpy")
    assert kernels.LOSS_LS == 0 and kernels.LOSS_LOGISTIC == 1
