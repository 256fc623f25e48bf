"""Command-line interface.

Subcommands: verify-linearization, complexity, audit-blocks, run-experiment,
decompose.  Exit codes: 0 success, 1 check failure, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .complexity import (
    DEFAULT_KR_THRESHOLD,
    NetworkSpecError,
    audit_csv,
    cp_report,
    kr_classify,
    naive_count_uncompressed,
    parse_network_spec,
    sample_complexity_uncompressed,
    tucker_report,
)
from .decomposition import cp_als, hooi_refine, hosvd
from .experiments import emit_csv, emit_svg_plot, load_config, run_study
from .linearize import (
    ConvPoolSpec,
    KernelBank,
    build_composite,
    build_composite_5layer,
    forward_oracle,
    forward_oracle_5layer,
)
from .tensor_ops import fold_vec, vectorize

USAGE_ERROR = 2


def _add_verify(sub):
    p = sub.add_parser(
        "verify-linearization",
        help="randomized equivalence checks of the composite-weight construction",
    )
    p.add_argument(
        "--trials", type=int, default=100,
        help="3-layer trials; two-stage checks run trials//4 times",
    )
    p.add_argument("--max-order", type=int, default=3)
    p.add_argument("--max-dim", type=int, default=12)
    p.add_argument("--max-kernels", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_verify_linearization)


def random_valid_spec(rng: np.random.Generator, max_order: int, max_dim: int) -> ConvPoolSpec:
    """Rejection-sample a spec with consistent window/pool geometry."""
    while True:
        order = int(rng.integers(1, max_order + 1))
        dims, kernels, pools = [], [], []
        stride = int(rng.integers(1, 3))
        ok = True
        for _ in range(order):
            d = int(rng.integers(2, max_dim + 1))
            cands = [
                l
                for l in range(1, d + 1)
                if (d - l) % stride == 0
            ]
            rng.shuffle(cands)
            found = False
            for l in cands:
                m = (d - l) // stride + 1
                qs = [q for q in range(1, m + 1) if m % q == 0 and (m // q) * l <= d]
                if qs:
                    q = int(qs[int(rng.integers(0, len(qs)))])
                    dims.append(d)
                    kernels.append(l)
                    pools.append(q)
                    found = True
                    break
            if not found:
                ok = False
                break
        if not ok:
            continue
        return ConvPoolSpec(tuple(dims), tuple(kernels), stride, tuple(pools))


def random_bank(rng: np.random.Generator, spec: ConvPoolSpec, max_kernels: int) -> KernelBank:
    k = int(rng.integers(1, max_kernels + 1))
    return KernelBank(
        kernels=[rng.standard_normal(spec.kernel_dims) for _ in range(k)],
        fc_weights=[rng.standard_normal(spec.pool_out_dims) for _ in range(k)],
    )


def _second_stage(rng: np.random.Generator, first: ConvPoolSpec) -> ConvPoolSpec | None:
    dims = first.pool_out_dims
    kernels, pools = [], []
    for d in dims:
        cands = []
        for l in range(1, d + 1):
            m = d - l + 1
            for q in range(1, m + 1):
                if m % q == 0 and (m // q) * l <= d:
                    cands.append((l, q))
        if not cands:
            return None
        l, q = cands[int(rng.integers(0, len(cands)))]
        kernels.append(l)
        pools.append(q)
    return ConvPoolSpec(dims, tuple(kernels), 1, tuple(pools))


def cmd_verify_linearization(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    checks = 0
    worst_case = None
    for _ in range(args.trials):
        spec = random_valid_spec(rng, args.max_order, args.max_dim)
        bank = random_bank(rng, spec, args.max_kernels)
        model = build_composite(bank, spec)
        x = rng.standard_normal(spec.input_dims)
        oracle = forward_oracle(x, bank, spec)
        dev = abs(oracle - model.predict(x)) / (1.0 + abs(oracle))
        checks += 1
        if dev > worst:
            worst, worst_case = dev, ("3-layer", spec)
    for _ in range(args.trials // 4):
        spec1 = random_valid_spec(rng, args.max_order, args.max_dim)
        spec2 = _second_stage(rng, spec1)
        if spec2 is None:
            continue
        k1 = int(rng.integers(1, 3))
        k2 = int(rng.integers(1, 3))
        kernels1 = [rng.standard_normal(spec1.kernel_dims) for _ in range(k1)]
        kernels2 = [rng.standard_normal(spec2.kernel_dims) for _ in range(k2)]
        fc = [
            [rng.standard_normal(spec2.pool_out_dims) for _ in range(k2)]
            for _ in range(k1)
        ]
        model = build_composite_5layer(kernels1, kernels2, fc, spec1, spec2)
        x = rng.standard_normal(spec1.input_dims)
        oracle = forward_oracle_5layer(x, kernels1, kernels2, fc, spec1, spec2)
        dev = abs(oracle - model.predict(x)) / (1.0 + abs(oracle))
        checks += 1
        if dev > worst:
            worst, worst_case = dev, ("5-layer", (spec1, spec2))
    print(f"checks run: {checks}")
    print(f"max relative deviation: {worst:.3e} (tolerance {args.tol:g})")
    if checks and worst > args.tol:
        print(f"FAIL: first offending case: {worst_case}")
        return 1
    return 0


def _add_complexity(sub):
    p = sub.add_parser(
        "complexity", help="parameter counts, sample complexities, K/R readout"
    )
    p.add_argument("--K", type=int, required=True, help="number of kernels")
    p.add_argument("--P", type=int, required=True, help="pooled output size")
    p.add_argument("--L", type=int, help="kernel size (uncompressed report)")
    p.add_argument(
        "--tucker",
        help="R1,..,RN:R  per-mode ranks and the output-channel rank",
    )
    p.add_argument("--cp", type=int, help="CP rank")
    p.add_argument("--l", help="kernel dims l1,..,lN (compressed reports)")
    p.add_argument("--threshold", type=float, default=DEFAULT_KR_THRESHOLD)
    p.set_defaults(func=cmd_complexity)


def cmd_complexity(args) -> int:
    if args.tucker is None and args.cp is None:
        if args.L is None:
            print("error: need --L for the uncompressed report", file=sys.stderr)
            return USAGE_ERROR
        d_naive = naive_count_uncompressed(args.K, args.P, args.L)
        d_m = sample_complexity_uncompressed(args.K, args.P, args.L)
        print(f"naive parameter count: {d_naive}")
        print(f"sample complexity:     {d_m}")
        return 0
    if args.l is None:
        print("error: compressed reports need --l", file=sys.stderr)
        return USAGE_ERROR
    try:
        dims = tuple(int(v) for v in args.l.split(","))
        if args.tucker is not None:
            ranks_s, _, r_s = args.tucker.partition(":")
            if not r_s:
                raise ValueError("--tucker wants R1,..,RN:R")
            ranks = tuple(int(v) for v in ranks_s.split(","))
            rep = tucker_report(ranks, int(r_s), dims, args.K, args.P, args.threshold)
        else:
            rep = cp_report(args.cp, dims, args.K, args.P, args.threshold)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    print(f"naive count (uncompressed):      {rep.naive_count_uncompressed}")
    print(f"naive count (compressed):        {rep.naive_count_compressed}")
    print(f"sample complexity (uncompressed): {rep.sample_complexity_uncompressed}")
    print(f"sample complexity (compressed):   {rep.sample_complexity_compressed}")
    print(f"discrepancy:                      {rep.discrepancy}")
    print(f"K/R ratio:                        {rep.kr_ratio} -> {rep.classification}")
    return 0


def _add_audit(sub):
    p = sub.add_parser("audit-blocks", help="K/R audit of a network spec file")
    p.add_argument("specfile")
    p.add_argument("--threshold", type=float, default=DEFAULT_KR_THRESHOLD)
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_audit_blocks)


def cmd_audit_blocks(args) -> int:
    try:
        with open(args.specfile, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read {args.specfile}: {exc}", file=sys.stderr)
        return USAGE_ERROR
    try:
        blocks = parse_network_spec(text)
    except NetworkSpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    csv = audit_csv(blocks, threshold=args.threshold)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv)
    else:
        sys.stdout.write(csv)
    return 0


def _add_run(sub):
    p = sub.add_parser("run-experiment", help="run a simulation study from a config")
    p.add_argument("configfile")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_run_experiment)


def cmd_run_experiment(args) -> int:
    try:
        cfg = load_config(args.configfile)
        cfg.lookup_setting()
    except (OSError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    result = run_study(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    stem = f"{cfg.study}_{cfg.setting}_{cfg.input_kind}_seed{cfg.seed}"
    csv_path = os.path.join(args.out_dir, stem + ".csv")
    svg_path = os.path.join(args.out_dir, stem + ".svg")
    emit_csv(result.records, csv_path)
    emit_svg_plot(
        result.records, svg_path, result.slope, result.r_squared,
        title=f"{cfg.study} {cfg.setting} ({cfg.input_kind})",
    )
    failed = sum(r.failed_reps for r in result.records)
    print(f"slope={result.slope:.4f} R2={result.r_squared:.4f} failed_reps={failed}")
    if cfg.study == "kernel":
        ks = sorted({int(r.setting.rsplit("-K", 1)[1]) for r in result.records})
        ns = sorted({r.n for r in result.records})
        print("mean error by K (rows) and n (columns):")
        print("K\\n " + " ".join(f"{n:>8d}" for n in ns))
        for k in ks:
            row = " ".join(f"{result.mean_table[(k, n)]:8.4f}" for n in ns)
            print(f"K={k:<2d} {row}")
    print(f"wrote {csv_path}")
    print(f"wrote {svg_path}")
    return 0


def _add_decompose(sub):
    p = sub.add_parser("decompose", help="Tucker or CP factorization of a tensor file")
    p.add_argument("tensorfile")
    p.add_argument("--tucker", help="ranks r1,..,rN")
    p.add_argument("--cp", type=int, help="CP rank")
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_decompose)


def read_tensor_file(path) -> np.ndarray:
    """Line 1: space-separated shape; then one value per line in canonical
    (first index fastest) order."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError("empty tensor file")
    shape = tuple(int(v) for v in lines[0].split())
    values = np.array([float(v) for v in lines[1:]])
    return fold_vec(values, shape)


def write_tensor_file(t: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join(str(s) for s in t.shape) + "\n")
        for v in vectorize(t):
            fh.write(repr(float(v)) + "\n")


def cmd_decompose(args) -> int:
    if (args.tucker is None) == (args.cp is None):
        print("error: choose exactly one of --tucker or --cp", file=sys.stderr)
        return USAGE_ERROR
    try:
        t = read_tensor_file(args.tensorfile)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    nrm = float(np.linalg.norm(t))
    if args.tucker is not None:
        try:
            ranks = tuple(int(v) for v in args.tucker.split(","))
            form = hooi_refine(t, hosvd(t, ranks))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return USAGE_ERROR
        err = float(np.linalg.norm(t - form.reconstruct()))
        fit = 1.0 if nrm == 0 else 1.0 - err / nrm
        print(f"tucker ranks {ranks}: fit={fit:.12f}")
        for i, f in enumerate(form.factors, start=1):
            print(f"factor {i}: shape {f.shape}")
        return 0
    if args.cp < 1:
        print("error: CP rank must be >= 1", file=sys.stderr)
        return USAGE_ERROR
    result = cp_als(t, args.cp, restarts=args.restarts, seed=args.seed)
    print(f"cp rank {args.cp}: fit={result.fit:.12f} (restart {result.restart})")
    print(f"weights: {np.array2string(result.form.weights, precision=6)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cnnkr",
        description=(
            "Exact linearization of conv/pool/fc networks, sample-complexity "
            "measures, K/R redundancy audits, and the scaling-law studies."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_verify(sub)
    _add_complexity(sub)
    _add_audit(sub)
    _add_run(sub)
    _add_decompose(sub)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
