"""Throughput comparison of the compiled and pure-numpy training loops.

Runs representative workloads from the simulation studies through both
backends and reports per-run wall time.  Usage:

    python benchmarks/bench_kernels.py [--reps 5]

The backend is chosen per call here; the CNNKR_BACKEND environment variable
only sets the package default and is not needed for this script.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cnnkr import estimation as est
from cnnkr import experiments as ex
from cnnkr.estimation import CpParam, FreeParam, TrainConfig, TuckerParam
from cnnkr.linearize import input_operator_matrix


def build_workload(study: str, setting: str, n: int, seed: int = 0):
    table = {
        "uncompressed": ex.UNCOMPRESSED_SETTINGS,
        "tucker": ex.TUCKER_SETTINGS,
        "kernel": ex.KERNEL_SETTINGS,
    }[study]
    s = table[setting]
    spec = s.spec()
    l, p = spec.kernel_dims, spec.pool_out_dims
    big_l, big_p = spec.kernel_size, spec.pool_size
    rng = np.random.default_rng(seed)
    if study == "uncompressed":
        k = s.kernels
        param = FreeParam(k)
        amat = rng.standard_normal((big_l, k))
        bmat = rng.standard_normal((big_p, k))
        wstar = bmat @ amat.T
    elif study == "tucker":
        k = s.kernels
        ranks = s.ranks + (s.stack_rank,)
        param = TuckerParam(ranks=ranks, kernel_count=k)
        form = ex.random_tucker(l + (k,), ranks, seed=seed)
        wstar = rng.standard_normal((big_p, k)) @ form.reconstruct().reshape(
            big_l, k, order="F"
        ).T
    else:
        k = s.k_values[-1]
        param = CpParam(rank=s.cp_rank, kernel_count=k)
        form = ex._random_cp_unit(l + (k,), s.cp_rank, rng)
        w = rng.standard_normal((big_p, k)) @ form.reconstruct().reshape(
            big_l, k, order="F"
        ).T
        wstar = w / np.linalg.norm(w)
    u_g = input_operator_matrix(spec)
    cols = est.z_matrix_columns(l, p)
    x = rng.standard_normal((n, u_g.shape[0]))
    mmat = np.ascontiguousarray((x @ u_g)[:, cols])
    y = mmat @ wstar.ravel() + rng.standard_normal(n)
    return param, l, p, mmat, y.reshape(-1, 1)


def time_backend(backend, param, l, p, mmat, y, cfg, reps):
    times = []
    final = None
    for rep in range(reps):
        state = est.init_state(param, l, p, np.random.default_rng(7))
        t0 = time.perf_counter()
        trace, it, _ = est._train(
            state, mmat, y, 0, cfg, 0.0, backend
        )
        times.append(time.perf_counter() - t0)
        final = (trace[-1], it)
    return min(times), final


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=3, help="timing repetitions")
    ap.add_argument("--iters", type=int, default=2000, help="GD iterations per run")
    args = ap.parse_args()

    workloads = [
        ("uncompressed", "S1", 400),
        ("uncompressed", "S4", 1500),
        ("tucker", "T1", 600),
        ("kernel", "KS", 500),
    ]
    cfg = TrainConfig(tol=1e-300, max_iters=args.iters)
    print(f"{'workload':<18}{'n':>6}{'numpy':>12}{'numba':>12}{'speedup':>9}")
    for study, setting, n in workloads:
        param, l, p, mmat, y = build_workload(study, setting, n)
        t_np, (obj_np, _) = time_backend("numpy", param, l, p, mmat, y, cfg, args.reps)
        t_nb, (obj_nb, _) = time_backend("numba", param, l, p, mmat, y, cfg, args.reps)
        assert abs(obj_np - obj_nb) <= 1e-6 * max(1.0, abs(obj_np)), (
            "backends disagree on the final objective"
        )
        print(
            f"{study + '/' + setting:<18}{n:>6}{t_np:>11.3f}s{t_nb:>11.3f}s"
            f"{t_np / t_nb:>8.1f}x"
        )


if __name__ == "__main__":
    main()
