"""Trainers and gradients: finite-difference checks, recovery, equivalences."""

import numpy as np
import pytest

from cnnkr import kernels
from cnnkr.decomposition import random_tucker
from cnnkr.estimation import (
    CpParam,
    CpState,
    Dataset,
    FreeParam,
    FreeState,
    TrainConfig,
    TrainingDiverged,
    TuckerParam,
    TuckerState,
    dataset_matrix,
    gradient,
    gradient_least_squares,
    init_state,
    logistic_objective,
    ls_objective,
    objective,
    state_to_bank,
    state_to_forms,
    tensor_to_weight_matrix,
    train_least_squares,
    train_logistic,
    train_multiclass,
    weight_matrix_to_tensor,
    z_matrix_columns,
)
from cnnkr.linearize import ConvPoolSpec, build_composite, transform_input
from cnnkr.tensor_ops import inner

L_DIMS = (2, 3)
P_DIMS = (2, 2)
BIG_L, BIG_P = 6, 4


def rand_mmat(n, seed=0):
    return np.random.default_rng(seed).standard_normal((n, BIG_P * BIG_L))


def rand_state(kind, seed, n_classes=1, k=2):
    rng = np.random.default_rng(seed)
    if kind == "free":
        param = FreeParam(k)
    elif kind == "tucker":
        param = TuckerParam(ranks=(2, 2, 2), kernel_count=k)
    else:
        param = CpParam(rank=2, kernel_count=k)
    return init_state(param, L_DIMS, P_DIMS, rng, n_classes=n_classes)


def fd_gradient(state, mmat, y, loss, h=1e-6):
    """Central finite differences of the objective, array by array."""
    grads = []
    for arr in state.arrays():
        g = np.empty_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + h
            f1 = objective(state, mmat, y, loss)
            arr[idx] = old - h
            f0 = objective(state, mmat, y, loss)
            arr[idx] = old
            g[idx] = (f1 - f0) / (2 * h)
        grads.append(g)
    return grads


def assert_gradient_matches(state, mmat, y, loss, rtol=1e-5):
    analytic = gradient(state, mmat, y, loss).arrays()
    numeric = fd_gradient(state, mmat, y, loss)
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
        assert np.max(np.abs(a - n) / denom) <= rtol


class TestGradients:
    @pytest.mark.parametrize("kind", ["free", "tucker", "cp"])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_least_squares_matches_finite_differences(self, kind, seed):
        mmat = rand_mmat(10, seed=seed)
        y = np.random.default_rng(100 + seed).standard_normal((10, 1))
        state = rand_state(kind, seed)
        assert_gradient_matches(state, mmat, y, kernels.LOSS_LS)

    @pytest.mark.parametrize("kind", ["free", "tucker", "cp"])
    def test_logistic_matches_finite_differences(self, kind):
        rng = np.random.default_rng(5)
        mmat = rand_mmat(12, seed=6)
        y = (rng.random((12, 1)) < 0.5).astype(float)
        state = rand_state(kind, 7)
        assert_gradient_matches(state, mmat, y, kernels.LOSS_LOGISTIC)

    def test_multiclass_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        mmat = rand_mmat(9, seed=9)
        y = np.zeros((9, 3))
        y[np.arange(9), rng.integers(0, 3, 9)] = 1.0
        state = rand_state("free", 10, n_classes=3)
        assert_gradient_matches(state, mmat, y, kernels.LOSS_LOGISTIC)

    def test_zero_residual_gives_zero_gradient(self):
        state = rand_state("free", 11)
        mmat = rand_mmat(8, seed=12)
        w = state.fc[:, :, 0] @ state.kernel_mat.T
        y = (mmat @ w.ravel()).reshape(-1, 1)
        g = gradient_least_squares(state, mmat, y)
        for arr in g.arrays():
            np.testing.assert_allclose(arr, 0.0, atol=1e-12)

    def test_single_sample_closed_form(self):
        # one sample, one kernel: d(obj)/dA = 2 (yhat - y) * B^T M
        state = rand_state("free", 13, k=1)
        mmat = rand_mmat(1, seed=14)
        y = np.array([[0.7]])
        m = mmat[0].reshape(BIG_P, BIG_L)
        yhat = float(state.fc[:, 0, 0] @ m @ state.kernel_mat[:, 0])
        g = gradient_least_squares(state, mmat, y)
        want = 2.0 * (yhat - 0.7) * (m.T @ state.fc[:, 0, 0])
        np.testing.assert_allclose(g.kernel_mat[:, 0], want, rtol=1e-10)


class TestRearrangement:
    def test_weight_matrix_roundtrip(self):
        rng = np.random.default_rng(15)
        w = rng.standard_normal((BIG_P, BIG_L))
        t = weight_matrix_to_tensor(w, L_DIMS, P_DIMS)
        assert t.shape == (4, 6)
        np.testing.assert_array_equal(tensor_to_weight_matrix(t, L_DIMS, P_DIMS), w)

    def test_matrix_inner_product_equals_tensor_inner(self):
        # the rearrangement is a permutation, so inner products transfer
        rng = np.random.default_rng(16)
        spec = ConvPoolSpec((7, 5), (2, 2), 1, (3, 2))
        l, p = spec.kernel_dims, spec.pool_out_dims
        x = rng.standard_normal(spec.input_dims)
        z = transform_input(x, spec)
        state = init_state(FreeParam(2), l, p, np.random.default_rng(17))
        bank = state_to_bank(state, l, p)
        model = build_composite(bank, spec)
        cols = z_matrix_columns(l, p)
        zrow = z.ravel(order="F")[cols]
        wmat = tensor_to_weight_matrix(model.weight, l, p)
        np.testing.assert_allclose(
            float(zrow @ wmat.ravel()), inner(z, model.weight), rtol=1e-10
        )


class TestTrainLeastSquares:
    def make_data(self, n, noise, seed, k=2):
        rng = np.random.default_rng(seed)
        truth = rand_state("free", seed + 1000, k=k)
        wmat = truth.fc[:, :, 0] @ truth.kernel_mat.T
        zdims = tuple(a * b for a, b in zip(L_DIMS, P_DIMS))
        inputs = [rng.standard_normal(zdims) for _ in range(n)]
        cols = z_matrix_columns(L_DIMS, P_DIMS)
        zmat = np.stack([z.ravel(order="F") for z in inputs])
        y = zmat[:, cols] @ wmat.ravel() + noise * rng.standard_normal(n)
        return Dataset(inputs=inputs, targets=y), wmat

    def test_noiseless_recovery(self):
        data, wstar = self.make_data(100, 0.0, seed=18)
        cfg = TrainConfig(learning_rate=0.02, tol=1e-14, max_iters=100_000, seed=5)
        fit = train_least_squares(data, FreeParam(2), L_DIMS, P_DIMS, cfg)
        rel = np.linalg.norm(fit.weight_matrix - wstar) / np.linalg.norm(wstar)
        assert rel <= 1e-3

    def test_zero_targets_reach_zero_objective(self):
        rng = np.random.default_rng(19)
        zdims = tuple(a * b for a, b in zip(L_DIMS, P_DIMS))
        data = Dataset(
            inputs=[rng.standard_normal(zdims) for _ in range(30)],
            targets=np.zeros(30),
        )
        init = rand_state("free", 20)
        for arr in init.arrays():
            arr *= 1e-3
        cfg = TrainConfig(learning_rate=0.3, tol=1e-300, max_iters=20_000, seed=0)
        fit = train_least_squares(data, FreeParam(2), L_DIMS, P_DIMS, cfg, init=init)
        assert fit.objective <= 1e-12
        assert np.linalg.norm(fit.weight_matrix) < 0.1

    def test_tucker_recovery_improves_with_n(self):
        # exact Tucker-structured truth, trained at matching ranks
        spec = ConvPoolSpec((7, 5, 7), (2, 2, 2), 1, (3, 2, 3))
        l, p = spec.kernel_dims, spec.pool_out_dims
        k = 2
        ranks = (2, 2, 2, 1)
        rng = np.random.default_rng(21)
        form = random_tucker(l + (k,), ranks, seed=22)
        amat = form.reconstruct().reshape(-1, k, order="F")
        bmat = rng.standard_normal((spec.pool_size, k))
        wstar = bmat @ amat.T
        cols = z_matrix_columns(l, p)
        errs = []
        for n in (150, 1200):
            zdims = spec.z_dims
            inputs = [rng.standard_normal(zdims) for _ in range(n)]
            zmat = np.stack([z.ravel(order="F") for z in inputs])
            y = zmat[:, cols] @ wstar.ravel() + rng.standard_normal(n)
            data = Dataset(inputs=inputs, targets=y)
            fit = train_least_squares(
                data,
                TuckerParam(ranks=ranks, kernel_count=k),
                l,
                p,
                TrainConfig(learning_rate=0.002, seed=4),
            )
            errs.append(np.linalg.norm(fit.weight_matrix - wstar))
        assert errs[1] < errs[0]

    def test_divergence_raises_with_trace(self):
        data, _ = self.make_data(40, 1.0, seed=23)
        cfg = TrainConfig(learning_rate=50.0, max_iters=5000, seed=1)
        with pytest.raises(TrainingDiverged) as exc:
            train_least_squares(data, FreeParam(2), L_DIMS, P_DIMS, cfg)
        assert exc.value.trace[-1] > 1e12 or not np.isfinite(exc.value.trace[-1])

    def test_objective_monotone_at_small_lr(self):
        data, _ = self.make_data(60, 0.5, seed=24)
        cfg = TrainConfig(learning_rate=1e-3, tol=1e-300, max_iters=2000, seed=2)
        fit = train_least_squares(data, FreeParam(2), L_DIMS, P_DIMS, cfg)
        assert np.all(np.diff(fit.trace) <= 1e-12)

    def test_backends_agree(self):
        data, _ = self.make_data(50, 0.3, seed=25)
        cfg = TrainConfig(learning_rate=0.01, tol=1e-300, max_iters=150, seed=3)
        for param in (
            FreeParam(2),
            TuckerParam(ranks=(2, 2, 2), kernel_count=2),
            CpParam(rank=2, kernel_count=2),
        ):
            a = train_least_squares(data, param, L_DIMS, P_DIMS, cfg, backend="numpy")
            b = train_least_squares(data, param, L_DIMS, P_DIMS, cfg, backend="numba")
            np.testing.assert_allclose(a.trace, b.trace, rtol=1e-7, atol=1e-12)
            np.testing.assert_allclose(
                a.weight_matrix, b.weight_matrix, rtol=1e-6, atol=1e-10
            )

    def test_reparameterized_models_reach_same_objective(self):
        # Tucker-structured truth: the K-kernel factorized model and its
        # rank-count reparameterization are the same model class, so both
        # reach (near-)zero objective on noiseless data
        spec_l, spec_p = L_DIMS, P_DIMS
        k, r = 3, 1
        ranks = (2, 2, r)
        rng = np.random.default_rng(26)
        form = random_tucker(spec_l + (k,), ranks, seed=27)
        amat = form.reconstruct().reshape(BIG_L, k, order="F")
        bmat = rng.standard_normal((BIG_P, k))
        wstar = bmat @ amat.T
        zdims = tuple(a * b for a, b in zip(spec_l, spec_p))
        inputs = [rng.standard_normal(zdims) for _ in range(120)]
        cols = z_matrix_columns(spec_l, spec_p)
        zmat = np.stack([z.ravel(order="F") for z in inputs])
        y = zmat[:, cols] @ wstar.ravel()
        data = Dataset(inputs=inputs, targets=y)
        cfg = TrainConfig(learning_rate=0.003, tol=1e-16, max_iters=200_000, seed=6)
        fit_k = train_least_squares(
            data, TuckerParam(ranks=ranks, kernel_count=k), spec_l, spec_p, cfg
        )
        fit_r = train_least_squares(data, FreeParam(r), spec_l, spec_p, cfg)
        assert abs(fit_k.objective - fit_r.objective) <= 1e-6

    def test_requires_consistent_shapes(self):
        data, _ = self.make_data(10, 0.0, seed=28)
        with pytest.raises(ValueError):
            train_least_squares(data, FreeParam(1), (3, 3), (2, 2))


class TestTrainLogistic:
    def make_labels(self, n, wmat, seed, scale=1.0):
        rng = np.random.default_rng(seed)
        zdims = tuple(a * b for a, b in zip(L_DIMS, P_DIMS))
        inputs = [rng.standard_normal(zdims) for _ in range(n)]
        cols = z_matrix_columns(L_DIMS, P_DIMS)
        zmat = np.stack([z.ravel(order="F") for z in inputs])
        logits = scale * (zmat[:, cols] @ wmat.ravel())
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(float)
        return Dataset(inputs=inputs, targets=y)

    def test_loss_at_zero_weights_is_ln2(self):
        data = self.make_labels(50, np.zeros((BIG_P, BIG_L)), seed=29)
        mmat = dataset_matrix(data, L_DIMS, P_DIMS)
        state = rand_state("free", 30)
        for arr in state.arrays():
            arr[:] = 0.0
        y = np.asarray(data.targets, dtype=float).reshape(-1, 1)
        assert logistic_objective(state, mmat, y) == pytest.approx(np.log(2), abs=1e-15)

    def test_symmetric_data_keeps_weights_small(self):
        # labels are fair coin flips independent of inputs, truth is zero
        data = self.make_labels(400, np.zeros((BIG_P, BIG_L)), seed=31)
        cfg = TrainConfig(learning_rate=0.05, tol=1e-12, max_iters=20_000, seed=7)
        fit = train_logistic(data, FreeParam(1), L_DIMS, P_DIMS, cfg)
        assert np.linalg.norm(fit.weight_matrix) <= 0.6

    def test_error_decreases_with_n(self):
        truth = rand_state("free", 32)
        wmat = truth.fc[:, :, 0] @ truth.kernel_mat.T
        wmat *= np.sqrt(BIG_P + BIG_L + 1) * 2 / np.linalg.norm(wmat)
        errs = []
        for n, seed in ((120, 33), (2400, 34)):
            data = self.make_labels(n, wmat, seed=seed)
            cfg = TrainConfig(learning_rate=0.05, tol=1e-10, max_iters=60_000, seed=8)
            fit = train_logistic(
                data, FreeParam(2), L_DIMS, P_DIMS, cfg,
                radius_clip=2 * np.linalg.norm(wmat),
            )
            errs.append(np.linalg.norm(fit.weight_matrix - wmat))
        assert errs[1] < errs[0]

    def test_radius_clip_enforced(self):
        truth = rand_state("free", 35)
        wmat = 5.0 * (truth.fc[:, :, 0] @ truth.kernel_mat.T)
        data = self.make_labels(60, wmat, seed=36, scale=3.0)
        cfg = TrainConfig(learning_rate=0.1, tol=1e-12, max_iters=5000, seed=9)
        fit = train_logistic(
            data, FreeParam(1), L_DIMS, P_DIMS, cfg, radius_clip=1.0
        )
        assert np.linalg.norm(fit.weight_matrix) <= 1.0 + 1e-9

    def test_label_validation(self):
        zdims = tuple(a * b for a, b in zip(L_DIMS, P_DIMS))
        data = Dataset(inputs=[np.zeros(zdims)], targets=np.array([2.0]))
        with pytest.raises(ValueError, match="labels"):
            train_logistic(data, FreeParam(1), L_DIMS, P_DIMS)


class TestTrainMulticlass:
    def make_data(self, n, m, seed):
        rng = np.random.default_rng(seed)
        zdims = tuple(a * b for a, b in zip(L_DIMS, P_DIMS))
        truth = rand_state("free", seed + 1, n_classes=m)
        amat = truth.kernel_mat
        inputs = [rng.standard_normal(zdims) for _ in range(n)]
        cols = z_matrix_columns(L_DIMS, P_DIMS)
        zmat = np.stack([z.ravel(order="F") for z in inputs])[:, cols]
        logits = np.stack(
            [zmat @ (truth.fc[:, :, c] @ amat.T).ravel() for c in range(m)], axis=1
        )
        labels = 1 + np.argmax(logits + 0.1 * rng.standard_normal(logits.shape), axis=1)
        return Dataset(inputs=inputs, targets=labels)

    def test_mirrored_binary_pair(self):
        # with mirrored fc initialization and labels (1 vs 2) forming
        # complementary indicator problems, the dynamics preserve the mirror
        data = self.make_data(80, 2, seed=37)
        init = rand_state("free", 38, n_classes=2)
        init.fc[:, :, 1] = -init.fc[:, :, 0]
        cfg = TrainConfig(learning_rate=0.05, tol=1e-10, max_iters=4000, seed=10)
        fit = train_multiclass(data, FreeParam(2), L_DIMS, P_DIMS, 2, cfg, init=init)
        w = fit.weight_matrix  # (P, L, 2)
        np.testing.assert_allclose(w[:, :, 0], -w[:, :, 1], atol=1e-8)

    def test_three_class_loss_below_ln2(self):
        data = self.make_data(150, 3, seed=39)
        cfg = TrainConfig(learning_rate=0.05, tol=1e-10, max_iters=30_000, seed=11)
        fit = train_multiclass(data, FreeParam(2), L_DIMS, P_DIMS, 3, cfg)
        assert fit.objective < np.log(2)

    def test_label_range_validation(self):
        zdims = tuple(a * b for a, b in zip(L_DIMS, P_DIMS))
        data = Dataset(inputs=[np.zeros(zdims)] * 2, targets=np.array([1, 4]))
        with pytest.raises(ValueError, match="labels"):
            train_multiclass(data, FreeParam(1), L_DIMS, P_DIMS, 3)

    def test_stacked_weight_shape(self):
        data = self.make_data(40, 3, seed=40)
        cfg = TrainConfig(learning_rate=0.05, tol=1e-6, max_iters=500, seed=12)
        fit = train_multiclass(data, FreeParam(2), L_DIMS, P_DIMS, 3, cfg)
        assert fit.weight.shape == (4, 6, 3)
        assert fit.weight_matrix.shape == (BIG_P, BIG_L, 3)


class TestStateConversions:
    def test_bank_from_free_state(self):
        state = rand_state("free", 41)
        bank = state_to_bank(state, L_DIMS, P_DIMS)
        assert bank.count == 2
        assert bank.kernels[0].shape == L_DIMS
        assert bank.fc_weights[0].shape == P_DIMS
        np.testing.assert_allclose(
            bank.kernels[1].ravel(order="F"), state.kernel_mat[:, 1]
        )

    def test_forms_from_factorized_states(self):
        tstate = rand_state("tucker", 42)
        form = state_to_forms(tstate)
        assert form.core.shape == (2, 2, 2)
        cstate = rand_state("cp", 43)
        cp = state_to_forms(cstate)
        # normalized columns with weights absorbing the scale
        rec_direct = (
            np.stack(
                [
                    np.outer(cstate.factors[0][:, r], cstate.factors[1][:, r]).ravel(
                        order="F"
                    )
                    for r in range(2)
                ],
                axis=1,
            )
            @ cstate.stack_factor.T
        )
        rec_form = cp.reconstruct().reshape(BIG_L, -1, order="F")
        np.testing.assert_allclose(rec_form, rec_direct, rtol=1e-10)
