"""Simulation studies verifying the sample-complexity scaling laws.

Four study families:

* ``uncompressed`` -- 3-layer settings S1-S4, free parameterization,
  i.i.d. or VAR(1) inputs; mean estimation error against root-(d/n).
* ``tucker`` -- 4-mode Tucker-compressed settings T1-T4 (desk scale),
  Tucker parameterization.
* ``kernel`` -- the efficient-number-of-kernels study: a CP-structured
  ground truth trained with growing output-channel counts K at fixed rank.
* ``logistic`` -- binary-classification analogue of the uncompressed study.

Every study is deterministic under its seed: replication r of grid point n
derives its generator from (seed, n, r).  Replications may run on a thread
pool (the trainers release the GIL); aggregation happens in replication
order afterwards, so results do not depend on scheduling.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimation as est
from .complexity import (
    sample_complexity_cp,
    sample_complexity_tucker,
    sample_complexity_uncompressed,
)
from .decomposition import CpForm, random_tucker
from .estimation import (
    CpParam,
    FreeParam,
    TrainConfig,
    TuckerParam,
    TrainingDiverged,
)
from .linearize import ConvPoolSpec, input_operator_matrix

__all__ = [
    "UncompressedSetting",
    "TuckerSetting",
    "KernelStudySetting",
    "UNCOMPRESSED_SETTINGS",
    "TUCKER_SETTINGS",
    "KERNEL_SETTINGS",
    "LOGISTIC_SETTINGS",
    "ExperimentConfig",
    "RunRecord",
    "StudyResult",
    "gen_inputs_iid",
    "gen_inputs_var1",
    "n_grid_from_ratio",
    "fit_through_origin",
    "run_uncompressed_study",
    "run_tucker_study",
    "run_kernel_redundancy_study",
    "run_logistic_study",
    "run_study",
    "emit_csv",
    "emit_svg_plot",
    "parse_config",
    "load_config",
    "CSV_HEADER",
]


# setting registries -------------------------------------------------------------


@dataclass(frozen=True)
class UncompressedSetting:
    input_dims: tuple[int, ...]
    kernel_dims: tuple[int, ...]
    pool_sizes: tuple[int, ...]
    kernels: int

    def spec(self) -> ConvPoolSpec:
        return ConvPoolSpec(self.input_dims, self.kernel_dims, 1, self.pool_sizes)

    def d_m(self) -> int:
        s = self.spec()
        return sample_complexity_uncompressed(
            self.kernels, s.pool_size, s.kernel_size
        )


@dataclass(frozen=True)
class TuckerSetting:
    input_dims: tuple[int, ...]
    kernel_dims: tuple[int, ...]
    pool_sizes: tuple[int, ...]
    ranks: tuple[int, ...]  # per kernel mode
    stack_rank: int
    kernels: int

    def spec(self) -> ConvPoolSpec:
        return ConvPoolSpec(self.input_dims, self.kernel_dims, 1, self.pool_sizes)

    def d_m(self) -> int:
        s = self.spec()
        return sample_complexity_tucker(
            self.ranks, self.stack_rank, self.kernel_dims, s.pool_size
        )


@dataclass(frozen=True)
class KernelStudySetting:
    input_dims: tuple[int, ...]
    kernel_dims: tuple[int, ...]
    pool_sizes: tuple[int, ...]
    cp_rank: int
    k_values: tuple[int, ...]

    def spec(self) -> ConvPoolSpec:
        return ConvPoolSpec(self.input_dims, self.kernel_dims, 1, self.pool_sizes)

    def d_m(self) -> int:
        s = self.spec()
        n_modes = len(self.kernel_dims)
        return sample_complexity_cp(
            self.cp_rank, n_modes, self.kernel_dims, s.pool_size
        )


# 3-mode uncompressed settings
UNCOMPRESSED_SETTINGS = {
    "S1": UncompressedSetting((7, 5, 7), (2, 2, 2), (3, 2, 3), 1),
    "S2": UncompressedSetting((7, 5, 7), (2, 2, 2), (3, 2, 3), 3),
    "S3": UncompressedSetting((8, 8, 3), (3, 3, 3), (3, 3, 1), 1),
    "S4": UncompressedSetting((8, 8, 3), (3, 3, 3), (3, 3, 1), 3),
}

# desk-scale 4-mode compressed settings; the kernel covers the trailing
# (channel) mode fully so the stage geometry is explicit
TUCKER_SETTINGS = {
    "T1": TuckerSetting((6, 6, 4, 3), (3, 3, 2, 3), (2, 2, 3, 1), (2, 2, 2, 1), 1, 2),
    "T2": TuckerSetting((6, 6, 4, 3), (3, 3, 2, 3), (2, 2, 3, 1), (2, 2, 2, 1), 1, 3),
    "T3": TuckerSetting((8, 6, 4, 3), (3, 3, 2, 3), (3, 2, 3, 1), (2, 3, 2, 1), 2, 2),
    "T4": TuckerSetting((8, 6, 4, 3), (3, 3, 2, 3), (3, 2, 3, 1), (2, 3, 2, 1), 2, 3),
}

# Only the desk-scale geometry is registered: the full-scale variant
# (32x32x16 inputs, 8x8x16 kernel, pooling 5) has p*l = 40 > 32 along the
# spatial modes, so its pooled factors cannot have full column rank and the
# stage constructor rejects it.
KERNEL_SETTINGS = {
    "KS": KernelStudySetting((8, 8, 4), (3, 3, 4), (3, 3, 1), 2, (2, 4, 8)),
}

# binary-label analogues of the uncompressed settings
LOGISTIC_SETTINGS = {
    "L1": UNCOMPRESSED_SETTINGS["S1"],
    "L2": UNCOMPRESSED_SETTINGS["S3"],
}

_STUDY_KINDS = ("uncompressed", "tucker", "kernel", "logistic")


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one study run."""

    study: str
    setting: str
    replications: int = 50
    noise_std: float = 1.0
    input_kind: str = "iid"  # "iid" or "var1"
    rho: float = 0.5
    seed: int = 0
    grid_points: int = 8
    ratio_lo: float = 0.15
    ratio_hi: float = 0.60
    n_grid: tuple[int, ...] | None = None
    train: TrainConfig = TrainConfig()
    max_workers: int = 1

    def __post_init__(self):
        if self.study not in _STUDY_KINDS:
            raise ValueError(f"study must be one of {_STUDY_KINDS}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.input_kind not in ("iid", "var1"):
            raise ValueError("input_kind must be 'iid' or 'var1'")
        if not 0 < self.ratio_lo < self.ratio_hi:
            raise ValueError("need 0 < ratio_lo < ratio_hi")
        if self.noise_std < 0:
            raise ValueError("noise std must be nonnegative")
        if abs(self.rho) >= 1:
            raise ValueError("|rho| must be < 1 for a stationary process")
        if self.n_grid is not None:
            ns = tuple(int(v) for v in self.n_grid)
            if any(v < 1 for v in ns) or list(ns) != sorted(set(ns)):
                raise ValueError("n_grid must be positive and strictly increasing")
            object.__setattr__(self, "n_grid", ns)

    def lookup_setting(self):
        table = {
            "uncompressed": UNCOMPRESSED_SETTINGS,
            "tucker": TUCKER_SETTINGS,
            "kernel": KERNEL_SETTINGS,
            "logistic": LOGISTIC_SETTINGS,
        }[self.study]
        if self.setting not in table:
            raise ValueError(
                f"unknown setting {self.setting!r} for study {self.study!r}; "
                f"choose from {sorted(table)}"
            )
        return table[self.setting]


@dataclass
class RunRecord:
    """Aggregated result for one grid point."""

    setting: str
    n: int
    sqrt_ratio: float
    mean_err: float
    std_err: float
    reps: int
    failed_reps: int


@dataclass
class StudyResult:
    records: list[RunRecord]
    slope: float
    r_squared: float
    config: ExperimentConfig
    mean_table: dict = field(default_factory=dict)  # kernel study: (K, n) -> mean


# input generation ----------------------------------------------------------------


def gen_inputs_iid(shape, n: int, seed) -> np.ndarray:
    """n tensors with i.i.d. standard normal entries, stacked along axis 0."""
    shape = tuple(int(s) for s in shape)
    rng = _rng(seed)
    return rng.standard_normal((n,) + shape)


def gen_inputs_var1(shape, n: int, rho: float, seed) -> np.ndarray:
    """Stationary first-order autoregressive inputs.

    Each vectorized sample is rho times the previous one plus
    sqrt(1 - rho^2) fresh standard normal noise; the first sample is a
    stationary draw, so the marginal law is standard normal throughout.
    """
    if not abs(rho) < 1:
        raise ValueError("|rho| must be < 1")
    shape = tuple(int(s) for s in shape)
    rng = _rng(seed)
    d = int(np.prod(shape, dtype=np.int64)) if shape else 1
    out = np.empty((n, d))
    if n == 0:
        return out.reshape((0,) + shape)
    prev = rng.standard_normal(d)
    scale = math.sqrt(1.0 - rho * rho)
    for i in range(n):
        prev = rho * prev + scale * rng.standard_normal(d)
        out[i] = prev
    # rows are canonical (column-major) vectorizations of the samples
    return out.reshape((n,) + shape[::-1]).transpose(
        (0,) + tuple(range(len(shape), 0, -1))
    )


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def n_grid_from_ratio(d_m: int, lo: float = 0.15, hi: float = 0.60, points: int = 8):
    """Sample sizes such that sqrt(d_m / n) is equally spaced on [lo, hi].

    Returned ascending (descending ratio); duplicates after rounding are
    dropped.
    """
    if not 0 < lo < hi:
        raise ValueError("need 0 < lo < hi")
    if points < 2:
        raise ValueError("need at least two grid points")
    ratios = np.linspace(hi, lo, points)
    ns = []
    for r in ratios:
        n = max(1, int(round(d_m / (r * r))))
        if n not in ns:
            ns.append(n)
    return ns


def fit_through_origin(x, y) -> tuple[float, float]:
    """Least-squares slope of y = slope * x and the no-intercept R-squared.

    R-squared follows the standard convention for models without an
    intercept: 1 - SS_res / sum(y^2).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sxx = float(x @ x)
    if sxx == 0.0:
        raise ValueError("degenerate fit: all x are zero")
    slope = float(x @ y) / sxx
    ss_res = float(np.sum((y - slope * x) ** 2))
    ss_tot = float(y @ y)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return slope, r2


# study internals ------------------------------------------------------------------


def _gen_x_rows(cfg: ExperimentConfig, rng: np.random.Generator, n: int, dx: int):
    if cfg.input_kind == "iid":
        return rng.standard_normal((n, dx))
    out = np.empty((n, dx))
    prev = rng.standard_normal(dx)
    scale = math.sqrt(1.0 - cfg.rho * cfg.rho)
    for i in range(n):
        prev = cfg.rho * prev + scale * rng.standard_normal(dx)
        out[i] = prev
    return out


@dataclass
class _Problem:
    """Everything fixed across replications of one setting."""

    spec: ConvPoolSpec
    param: object
    d_m: int
    u_g: np.ndarray
    cols: np.ndarray

    @classmethod
    def build(cls, spec: ConvPoolSpec, param, d_m: int) -> "_Problem":
        return cls(
            spec=spec,
            param=param,
            d_m=d_m,
            u_g=input_operator_matrix(spec),
            cols=est.z_matrix_columns(spec.kernel_dims, spec.pool_out_dims),
        )


def _replication(problem: _Problem, cfg: ExperimentConfig, n: int, rep: int,
                 make_wstar, loss: int, clip_radius: float = 0.0, arm: int = 0):
    """One training replication; returns the Frobenius estimation error or
    None on divergence.

    The ground truth and initialization derive from (seed, n, rep, arm) while
    the inputs and noise derive from (seed, n, rep) only, so studies that
    compare arms (the kernel study's K values) share data realizations across
    arms (common random numbers)."""
    spec = problem.spec
    wstar = make_wstar(_rng([cfg.seed, 2, n, rep, arm]))
    rng = _rng([cfg.seed, 1, n, rep])
    x = _gen_x_rows(cfg, rng, n, problem.u_g.shape[0])
    z = x @ problem.u_g
    mmat = np.ascontiguousarray(z[:, problem.cols])
    signal = mmat @ wstar.ravel()
    if loss == 0:
        y = signal + cfg.noise_std * rng.standard_normal(n)
    else:
        y = (rng.random(n) < _sigmoid_vec(signal)).astype(np.float64)
    state = est.init_state(
        problem.param, spec.kernel_dims, spec.pool_out_dims,
        _rng([cfg.seed, 3, n, rep, arm]),
    )
    try:
        est._train(state, mmat, y.reshape(-1, 1), loss, cfg.train, clip_radius, None)
    except TrainingDiverged:
        return None
    return float(np.linalg.norm(est._weight_stack(state)[0] - wstar))


def _sigmoid_vec(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    neg = ~pos
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[neg])
    out[neg] = ez / (1.0 + ez)
    return out


def _run_grid(problem: _Problem, cfg: ExperimentConfig, make_wstar, loss: int,
              clip_radius: float = 0.0, label: str | None = None, arm: int = 0):
    ns = (
        list(cfg.n_grid)
        if cfg.n_grid is not None
        else n_grid_from_ratio(problem.d_m, cfg.ratio_lo, cfg.ratio_hi, cfg.grid_points)
    )
    records = []
    for n in ns:
        results = _map_replications(
            lambda rep: _replication(
                problem, cfg, n, rep, make_wstar, loss, clip_radius, arm
            ),
            cfg.replications,
            cfg.max_workers,
        )
        errs = [r for r in results if r is not None]
        failed = cfg.replications - len(errs)
        mean = float(np.mean(errs)) if errs else float("nan")
        std = float(np.std(errs, ddof=1)) if len(errs) > 1 else 0.0
        records.append(
            RunRecord(
                setting=label or cfg.setting,
                n=n,
                sqrt_ratio=math.sqrt(problem.d_m / n),
                mean_err=mean,
                std_err=std,
                reps=len(errs),
                failed_reps=failed,
            )
        )
    return records


def _map_replications(fn, reps: int, max_workers: int):
    if max_workers <= 1:
        return [fn(r) for r in range(reps)]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, range(reps)))


def _fit_records(records) -> tuple[float, float]:
    xs = np.array([r.sqrt_ratio for r in records])
    ys = np.array([r.mean_err for r in records])
    keep = np.isfinite(ys)
    return fit_through_origin(xs[keep], ys[keep])


# the four studies ----------------------------------------------------------------


def run_uncompressed_study(cfg: ExperimentConfig) -> StudyResult:
    """Uncompressed scaling law: free-parameterization training on data from
    a random dense ground truth; mean error vs root-(d/n) with a
    through-origin fit."""
    setting: UncompressedSetting = cfg.lookup_setting()
    spec = setting.spec()
    k = setting.kernels
    problem = _Problem.build(spec, FreeParam(k), setting.d_m())
    big_l, big_p = spec.kernel_size, spec.pool_size

    def make_wstar(rng: np.random.Generator) -> np.ndarray:
        amat = rng.standard_normal((big_l, k))
        bmat = rng.standard_normal((big_p, k))
        return bmat @ amat.T

    records = _run_grid(problem, cfg, make_wstar, loss=0)
    slope, r2 = _fit_records(records)
    return StudyResult(records=records, slope=slope, r_squared=r2, config=cfg)


def run_tucker_study(cfg: ExperimentConfig) -> StudyResult:
    """Compressed scaling law: Tucker-parameterized training on data whose
    ground-truth stacked kernel is exactly low rank (normal core, orthonormal
    factors) with dense fully-connected weights."""
    setting: TuckerSetting = cfg.lookup_setting()
    spec = setting.spec()
    k = setting.kernels
    ranks = setting.ranks + (setting.stack_rank,)
    problem = _Problem.build(
        spec, TuckerParam(ranks=ranks, kernel_count=k), setting.d_m()
    )
    big_l, big_p = spec.kernel_size, spec.pool_size
    stack_shape = spec.kernel_dims + (k,)

    def make_wstar(rng: np.random.Generator) -> np.ndarray:
        form = random_tucker(stack_shape, ranks, seed=int(rng.integers(2**63)))
        amat = form.reconstruct().reshape(big_l, k, order="F")
        bmat = rng.standard_normal((big_p, k))
        return bmat @ amat.T

    records = _run_grid(problem, cfg, make_wstar, loss=0)
    slope, r2 = _fit_records(records)
    return StudyResult(records=records, slope=slope, r_squared=r2, config=cfg)


def run_kernel_redundancy_study(cfg: ExperimentConfig) -> StudyResult:
    """Efficient-number-of-kernels study.

    The ground truth has a rank-R CP stacked kernel (orthonormal factor
    columns, unit weights) and is normalized to unit Frobenius norm so errors
    are comparable across K; training uses the CP parameterization with K
    output channels for each K in the setting's list."""
    setting: KernelStudySetting = cfg.lookup_setting()
    spec = setting.spec()
    rank = setting.cp_rank
    big_l, big_p = spec.kernel_size, spec.pool_size
    all_records: list[RunRecord] = []
    table: dict = {}
    for k in setting.k_values:
        problem = _Problem.build(
            spec, CpParam(rank=rank, kernel_count=k), setting.d_m()
        )
        stack_shape = spec.kernel_dims + (k,)

        def make_wstar(rng: np.random.Generator, k=k, stack_shape=stack_shape):
            form = _random_cp_unit(stack_shape, rank, rng)
            amat = form.reconstruct().reshape(big_l, k, order="F")
            bmat = rng.standard_normal((big_p, k))
            w = bmat @ amat.T
            return w / np.linalg.norm(w)

        records = _run_grid(
            problem, cfg, make_wstar, loss=0, label=f"{cfg.setting}-K{k}", arm=k
        )
        all_records.extend(records)
        for r in records:
            table[(k, r.n)] = r.mean_err
    slope, r2 = _fit_records(all_records)
    return StudyResult(
        records=all_records, slope=slope, r_squared=r2, config=cfg, mean_table=table
    )


def _random_cp_unit(shape, rank: int, rng: np.random.Generator) -> CpForm:
    factors = []
    for s in shape:
        q, _ = np.linalg.qr(rng.standard_normal((s, rank)))
        factors.append(q[:, :rank])
    return CpForm(weights=np.ones(rank), factors=factors)


def run_logistic_study(cfg: ExperimentConfig) -> StudyResult:
    """Binary-classification scaling: labels drawn from the logistic model at
    a ground truth scaled to Frobenius norm sqrt(d_m); logistic training with
    a Frobenius-ball projection at twice that radius."""
    setting: UncompressedSetting = cfg.lookup_setting()
    spec = setting.spec()
    k = setting.kernels
    d_m = setting.d_m()
    problem = _Problem.build(spec, FreeParam(k), d_m)
    big_l, big_p = spec.kernel_size, spec.pool_size
    target_norm = math.sqrt(d_m)

    def make_wstar(rng: np.random.Generator) -> np.ndarray:
        amat = rng.standard_normal((big_l, k))
        bmat = rng.standard_normal((big_p, k))
        w = bmat @ amat.T
        return w * (target_norm / np.linalg.norm(w))

    records = _run_grid(
        problem, cfg, make_wstar, loss=1, clip_radius=2.0 * target_norm
    )
    slope, r2 = _fit_records(records)
    return StudyResult(records=records, slope=slope, r_squared=r2, config=cfg)


_RUNNERS = {
    "uncompressed": run_uncompressed_study,
    "tucker": run_tucker_study,
    "kernel": run_kernel_redundancy_study,
    "logistic": run_logistic_study,
}


def run_study(cfg: ExperimentConfig) -> StudyResult:
    return _RUNNERS[cfg.study](cfg)


# artifacts ------------------------------------------------------------------------

CSV_HEADER = "setting,n,sqrt_dM_over_n,mean_err,std_err,reps,failed_reps"


def emit_csv(records: list[RunRecord], path) -> None:
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.setting},{r.n},{r.sqrt_ratio:.12g},{r.mean_err:.12g},"
            f"{r.std_err:.12g},{r.reps},{r.failed_reps}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> list[RunRecord]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"unexpected CSV header in {path}")
    out = []
    for ln in lines[1:]:
        s, n, ratio, mean, std, reps, failed = ln.split(",")
        out.append(
            RunRecord(s, int(n), float(ratio), float(mean), float(std),
                      int(reps), int(failed))
        )
    return out


def emit_svg_plot(records: list[RunRecord], path, slope: float | None = None,
                  r_squared: float | None = None, title: str = "") -> None:
    """Self-contained scatter of mean error vs the root ratio, with the
    through-origin fitted line and a slope/R2 annotation."""
    xs = [r.sqrt_ratio for r in records]
    ys = [r.mean_err for r in records]
    if slope is None and xs:
        slope, r_squared = fit_through_origin(xs, ys)
    width, height, margin = 640, 440, 60
    x_max = max(xs + [1e-9]) * 1.08
    y_max = max(ys + [slope * x_max if slope else 0.0, 1e-9]) * 1.08

    def sx(v):
        return margin + (width - 2 * margin) * v / x_max

    def sy(v):
        return height - margin - (height - 2 * margin) * v / y_max

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv, yv = x_max * frac, y_max * frac
        parts.append(
            f'<text x="{sx(xv):.1f}" y="{height - margin + 18}" font-size="11" '
            f'text-anchor="middle">{xv:.3g}</text>'
        )
        parts.append(
            f'<text x="{margin - 8}" y="{sy(yv):.1f}" font-size="11" '
            f'text-anchor="end" dominant-baseline="middle">{yv:.3g}</text>'
        )
    if slope is not None:
        parts.append(
            f'<line x1="{sx(0):.1f}" y1="{sy(0):.1f}" x2="{sx(x_max):.1f}" '
            f'y2="{sy(slope * x_max):.1f}" stroke="#1f77b4" stroke-width="1.5"/>'
        )
    for x, y in zip(xs, ys):
        parts.append(
            f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="4" fill="#d62728"/>'
        )
    label = title or (records[0].setting if records else "")
    parts.append(
        f'<text x="{margin}" y="{margin - 24}" font-size="13">{label}</text>'
    )
    if slope is not None:
        parts.append(
            f'<text x="{margin}" y="{margin - 8}" font-size="12">'
            f"slope={slope:.3f} R2={r_squared:.3f}</text>"
        )
    parts.append(
        f'<text x="{width / 2:.0f}" y="{height - 16}" font-size="12" '
        f'text-anchor="middle">sqrt(d_M / n)</text>'
    )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


# configuration files --------------------------------------------------------------


def parse_config(text: str) -> ExperimentConfig:
    """Parse a JSON config whose keys map 1:1 to ExperimentConfig fields
    (``train`` holds TrainConfig overrides)."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ValueError("config must be a JSON object")
    train_raw = raw.pop("train", {})
    if not isinstance(train_raw, dict):
        raise ValueError("'train' must be an object of TrainConfig fields")
    known_train = {"learning_rate", "momentum", "tol", "max_iters", "seed"}
    bad = set(train_raw) - known_train
    if bad:
        raise ValueError(f"unknown train fields: {sorted(bad)}")
    train = TrainConfig(**train_raw)
    known = {
        "study", "setting", "replications", "noise_std", "input_kind", "rho",
        "seed", "grid_points", "ratio_lo", "ratio_hi", "n_grid", "max_workers",
    }
    bad = set(raw) - known
    if bad:
        raise ValueError(f"unknown config fields: {sorted(bad)}")
    if "n_grid" in raw and raw["n_grid"] is not None:
        raw["n_grid"] = tuple(raw["n_grid"])
    return ExperimentConfig(train=train, **raw)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def default_train_config(study: str) -> TrainConfig:
    """Per-study training defaults: the common recipe everywhere, with the
    kernel study stopping at the looser documented tolerance."""
    if study == "kernel":
        return TrainConfig(tol=1e-5)
    return TrainConfig()


def make_config(study: str, setting: str, **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(
        study=study, setting=setting, train=default_train_config(study)
    )
    return replace(cfg, **overrides) if overrides else cfg
