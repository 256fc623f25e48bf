"""Parameter counts, sample-complexity measures, and the K/R redundancy audit.

The naive counts tally raw tensor entries of a model; the sample-complexity
measures are the dimension quantities governing the root-(d/n) estimation
error rate.  Their gap for a compressed model, ``R*K + K*P - R*P``, is
positive whenever K > R, which is what the K/R ratio summarizes.  Block
designs of popular compressed networks map onto Tucker or CP structures of
the stacked kernel, so the same measures apply to them.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass
from fractions import Fraction

__all__ = [
    "naive_count_uncompressed",
    "naive_count_tucker",
    "naive_count_cp",
    "sample_complexity_uncompressed",
    "sample_complexity_tucker",
    "sample_complexity_cp",
    "ComplexityReport",
    "tucker_report",
    "cp_report",
    "BlockDesign",
    "BLOCK_KINDS",
    "block_to_ranks",
    "kr_classify",
    "block_report",
    "parse_network_spec",
    "render_network_spec",
    "audit_csv",
    "DEFAULT_KR_THRESHOLD",
]

DEFAULT_KR_THRESHOLD = 4.0


def _check_positive(**kwargs) -> None:
    for name, value in kwargs.items():
        if value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value}")


def naive_count_uncompressed(K: int, P: int, L: int) -> int:
    """Raw entry count of the uncompressed model: K kernels of L entries plus
    K fully-connected tensors of P entries."""
    _check_positive(K=K, P=P, L=L)
    return K * (P + L)


def naive_count_tucker(ranks, R: int, kernel_dims, K: int, P: int) -> int:
    """Raw entry count of the Tucker-compressed model: core, per-mode factors,
    the output-channel factor, and the fully-connected weights."""
    ranks = tuple(int(r) for r in ranks)
    l = tuple(int(v) for v in kernel_dims)
    if len(ranks) != len(l):
        raise ValueError("ranks and kernel dims must have equal length")
    _check_positive(R=R, K=K, P=P, **{f"R{i + 1}": r for i, r in enumerate(ranks)})
    core = R * math.prod(ranks)
    factors = sum(li * ri for li, ri in zip(l, ranks))
    return core + factors + R * K + K * P


def naive_count_cp(R: int, kernel_dims, K: int, P: int) -> int:
    """Raw entry count of the CP-compressed model."""
    l = tuple(int(v) for v in kernel_dims)
    _check_positive(R=R, K=K, P=P)
    return R * (sum(l) + K + 1) + K * P


def sample_complexity_uncompressed(K: int, P: int, L: int) -> int:
    """Sample-complexity dimension of the uncompressed model: K(P+L+1) while
    K is below min(P, L); saturates at P*L once K reaches it."""
    _check_positive(K=K, P=P, L=L)
    if K < min(P, L):
        return K * (P + L + 1)
    return P * L


def sample_complexity_tucker(ranks, R: int, kernel_dims, P: int) -> int:
    """Sample-complexity dimension of the Tucker-compressed model; note it is
    independent of K, which is the source of the redundancy gap."""
    ranks = tuple(int(r) for r in ranks)
    l = tuple(int(v) for v in kernel_dims)
    if len(ranks) != len(l):
        raise ValueError("ranks and kernel dims must have equal length")
    _check_positive(R=R, P=P, **{f"R{i + 1}": r for i, r in enumerate(ranks)})
    return R * math.prod(ranks) + sum(li * ri for li, ri in zip(l, ranks)) + R * P


def sample_complexity_cp(R: int, order: int, kernel_dims, P: int) -> int:
    """CP variant: the Tucker formula with every per-mode rank set to R."""
    l = tuple(int(v) for v in kernel_dims)
    if len(l) != order:
        raise ValueError("kernel dims must match the stated order")
    _check_positive(R=R, P=P)
    return sample_complexity_tucker((R,) * order, R, l, P)


CLASS_NO = "no_redundancy"
CLASS_POSSIBLE = "possible_redundancy"
CLASS_HAS = "has_redundancy"


def kr_classify(ratio, threshold: float = DEFAULT_KR_THRESHOLD) -> str:
    """Classify a K/R ratio: 1 means none, up to ``threshold`` possible,
    beyond it redundant.  The default threshold is the empirical elbow."""
    r = float(ratio)
    if r < 1.0:
        warnings.warn(f"K/R ratio {r} < 1; treating as no redundancy", stacklevel=2)
        return CLASS_NO
    if r == 1.0:
        return CLASS_NO
    if r <= threshold:
        return CLASS_POSSIBLE
    return CLASS_HAS


@dataclass
class ComplexityReport:
    """All counts for one compressed model, plus the redundancy readouts."""

    naive_count_uncompressed: int
    naive_count_compressed: int
    sample_complexity_uncompressed: int
    sample_complexity_compressed: int
    discrepancy: int
    kr_ratio: Fraction
    classification: str


def tucker_report(
    ranks,
    R: int,
    kernel_dims,
    K: int,
    P: int,
    threshold: float = DEFAULT_KR_THRESHOLD,
) -> ComplexityReport:
    l = tuple(int(v) for v in kernel_dims)
    L = math.prod(l)
    d_naive_c = naive_count_tucker(ranks, R, l, K, P)
    d_m_c = sample_complexity_tucker(ranks, R, l, P)
    ratio = Fraction(K, R)
    return ComplexityReport(
        naive_count_uncompressed=naive_count_uncompressed(K, P, L),
        naive_count_compressed=d_naive_c,
        sample_complexity_uncompressed=sample_complexity_uncompressed(K, P, L),
        sample_complexity_compressed=d_m_c,
        discrepancy=d_naive_c - d_m_c,
        kr_ratio=ratio,
        classification=kr_classify(ratio, threshold),
    )


def cp_report(
    R: int,
    kernel_dims,
    K: int,
    P: int,
    threshold: float = DEFAULT_KR_THRESHOLD,
) -> ComplexityReport:
    l = tuple(int(v) for v in kernel_dims)
    L = math.prod(l)
    d_naive_c = naive_count_cp(R, l, K, P)
    d_m_c = sample_complexity_cp(R, len(l), l, P)
    ratio = Fraction(K, R)
    return ComplexityReport(
        naive_count_uncompressed=naive_count_uncompressed(K, P, L),
        naive_count_compressed=d_naive_c,
        sample_complexity_uncompressed=sample_complexity_uncompressed(K, P, L),
        sample_complexity_compressed=d_m_c,
        discrepancy=d_naive_c - d_m_c,
        kr_ratio=ratio,
        classification=kr_classify(ratio, threshold),
    )


BLOCK_KINDS = (
    "bottleneck",
    "funnel",
    "depthwise",
    "inverted",
    "grouped",
)

_KIND_ALIASES = {
    "bottleneck": "bottleneck",
    "standard_bottleneck": "bottleneck",
    "funnel": "funnel",
    "depthwise": "depthwise",
    "depthwise_separable": "depthwise",
    "inverted": "inverted",
    "inverted_residual": "inverted",
    "grouped": "grouped",
    "grouped_bottleneck": "grouped",
}


@dataclass
class BlockDesign:
    """One compressed-CNN block: channel sizes plus the spatial kernel."""

    kind: str
    input_channels: int
    bottleneck_channels: int
    output_channels: int
    kernel_hw: tuple[int, int] = (3, 3)
    expansion: float = 1.0
    groups: int = 1

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind)
        if kind is None:
            raise ValueError(f"unknown block kind {self.kind!r}")
        self.kind = kind
        _check_positive(
            C=self.input_channels,
            R=self.bottleneck_channels,
            K=self.output_channels,
        )
        h, w = self.kernel_hw
        _check_positive(kernel_h=h, kernel_w=w)
        if self.kind == "funnel" and self.output_channels != self.bottleneck_channels:
            raise ValueError("a funnel block requires K == R")
        if self.kind == "grouped":
            if self.groups < 1 or self.bottleneck_channels % self.groups != 0:
                raise ValueError("groups must divide the bottleneck channel count")
        if self.kind == "inverted":
            if self.expansion < 1:
                raise ValueError("expansion factor must be >= 1")
            xc = self.expansion * self.input_channels
            if abs(xc - round(xc)) > 1e-9:
                raise ValueError("expansion * input channels must be an integer")


@dataclass
class BlockStructure:
    """Decomposition structure equivalent to a block design."""

    decomposition: str  # "tucker" or "cp"
    stack_shape: tuple[int, int, int, int]
    ranks: tuple[int, ...] | None  # per-mode Tucker ranks (spatial, spatial, channel)
    cp_rank: int | None
    K: int
    R: int
    core_blocks: tuple[int, tuple[int, int, int, int]] | None = None

    @property
    def kr_ratio(self) -> Fraction:
        return Fraction(self.K, self.R)


def block_to_ranks(block: BlockDesign) -> BlockStructure:
    """Map a block design to the decomposition it imposes on the stacked
    kernel of shape (l1, l2, C, K)."""
    l1, l2 = block.kernel_hw
    c = block.input_channels
    k = block.output_channels
    r = block.bottleneck_channels
    shape = (l1, l2, c, k)
    if block.kind in ("bottleneck", "funnel"):
        return BlockStructure(
            decomposition="tucker",
            stack_shape=shape,
            ranks=(l1, l2, r, r),
            cp_rank=None,
            K=k,
            R=r,
        )
    if block.kind == "grouped":
        g = block.groups
        sub = r // g
        return BlockStructure(
            decomposition="tucker",
            stack_shape=shape,
            ranks=(l1, l2, r, r),
            cp_rank=None,
            K=k,
            R=r,
            core_blocks=(g, (l1, l2, sub, sub)),
        )
    if block.kind == "depthwise":
        return BlockStructure(
            decomposition="cp",
            stack_shape=shape,
            ranks=None,
            cp_rank=r,
            K=k,
            R=r,
        )
    if block.kind == "inverted":
        rank = int(round(block.expansion * c))
        return BlockStructure(
            decomposition="cp",
            stack_shape=shape,
            ranks=None,
            cp_rank=rank,
            K=k,
            R=rank,
        )
    raise ValueError(f"unknown block kind {block.kind!r}")


def block_report(
    block: BlockDesign, P: int = 1, threshold: float = DEFAULT_KR_THRESHOLD
) -> ComplexityReport:
    """Complexity report for one block.

    Blocks carry no fully-connected stage, so counts are reported per output
    unit (P=1 by default); the K/R classification does not depend on P.
    """
    s = block_to_ranks(block)
    l1, l2, c, k = s.stack_shape
    dims = (l1, l2, c)
    if s.decomposition == "tucker":
        ranks3 = s.ranks[:3]
        stack_rank = s.ranks[3]
        return tucker_report(ranks3, stack_rank, dims, k, P, threshold)
    return cp_report(s.cp_rank, dims, k, P, threshold)


_LINE_RE = re.compile(r"^(?P<kind>[A-Za-z_]+)(?P<rest>(\s+[A-Za-z]+=\S+)*)\s*$")
_FIELD_RE = re.compile(r"([A-Za-z]+)=(\S+)")
_KERNEL_RE = re.compile(r"^(\d+)x(\d+)$")


class NetworkSpecError(ValueError):
    """Raised on malformed network spec text; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def parse_network_spec(text: str) -> list[BlockDesign]:
    """Parse the line-oriented block format.

    One block per line: ``<kind> C=<int> R=<int> K=<int> [g=<int>] [x=<num>]
    k=<h>x<w>``; ``#`` starts a comment.  Raises :class:`NetworkSpecError`
    with the offending line number on any syntax or validity problem.
    """
    blocks: list[BlockDesign] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE_RE.match(line)
        if m is None:
            raise NetworkSpecError(line_no, f"unparseable block line: {raw.strip()!r}")
        kind = m.group("kind").lower()
        if kind not in _KIND_ALIASES:
            raise NetworkSpecError(line_no, f"unknown block kind {kind!r}")
        fields = dict(_FIELD_RE.findall(m.group("rest")))
        try:
            c = int(fields.pop("C"))
            r = int(fields.pop("R"))
            k_out = int(fields.pop("K"))
        except KeyError as exc:
            raise NetworkSpecError(line_no, f"missing field {exc.args[0]}") from None
        except ValueError:
            raise NetworkSpecError(line_no, "C, R, K must be integers") from None
        kernel = fields.pop("k", "3x3")
        groups = fields.pop("g", None)
        expansion = fields.pop("x", None)
        if fields:
            raise NetworkSpecError(line_no, f"unknown fields: {sorted(fields)}")
        km = _KERNEL_RE.match(kernel)
        if km is None:
            raise NetworkSpecError(line_no, f"bad kernel spec {kernel!r}, want <h>x<w>")
        try:
            block = BlockDesign(
                kind=kind,
                input_channels=c,
                bottleneck_channels=r,
                output_channels=k_out,
                kernel_hw=(int(km.group(1)), int(km.group(2))),
                expansion=float(expansion) if expansion is not None else 1.0,
                groups=int(groups) if groups is not None else 1,
            )
        except ValueError as exc:
            raise NetworkSpecError(line_no, str(exc)) from None
        blocks.append(block)
    return blocks


def render_network_spec(blocks: list[BlockDesign]) -> str:
    """Serialize block designs back into the line format (parse inverse)."""
    lines = []
    for b in blocks:
        parts = [b.kind, f"C={b.input_channels}", f"R={b.bottleneck_channels}",
                 f"K={b.output_channels}"]
        if b.kind == "grouped":
            parts.append(f"g={b.groups}")
        if b.kind == "inverted":
            x = b.expansion
            parts.append(f"x={int(x) if float(x).is_integer() else x}")
        parts.append(f"k={b.kernel_hw[0]}x{b.kernel_hw[1]}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


AUDIT_HEADER = (
    "block_index,kind,C,R,K,kr_ratio,d_naive,d_M,discrepancy,classification"
)


def audit_csv(
    blocks: list[BlockDesign], threshold: float = DEFAULT_KR_THRESHOLD, P: int = 1
) -> str:
    """Per-block CSV report plus a totals row."""
    lines = [AUDIT_HEADER]
    total_naive = 0
    total_dm = 0
    for i, b in enumerate(blocks):
        rep = block_report(b, P=P, threshold=threshold)
        s = block_to_ranks(b)
        total_naive += rep.naive_count_compressed
        total_dm += rep.sample_complexity_compressed
        lines.append(
            f"{i},{b.kind},{b.input_channels},{s.R},{s.K},"
            f"{float(rep.kr_ratio):g},{rep.naive_count_compressed},"
            f"{rep.sample_complexity_compressed},{rep.discrepancy},"
            f"{rep.classification}"
        )
    if blocks:
        lines.append(
            f"total,,,,,,{total_naive},{total_dm},{total_naive - total_dm},"
        )
    return "\n".join(lines) + "\n"
