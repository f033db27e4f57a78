"""Detection metrics over labelled source IPs.

Everything is counted per unique source IP, never per packet. Rates are
computed from integer counts with :class:`fractions.Fraction` and only
converted to float at the end.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .hull import upper_left_chain
from .traffic import Label, LabeledIpSpace

__all__ = [
    "ALLOW_ALL",
    "BLOCK_ALL",
    "MetricsError",
    "ConfusionCounts",
    "RocPoint",
    "CostCurve",
    "MetricsRow",
    "confusion",
    "roc_point",
    "f1_score",
    "prf1",
    "macro_f1",
    "invert",
    "invert_counts",
    "cost",
    "min_cost_curve",
    "frontier_area",
    "metrics_row",
    "metrics_table_csv",
    "metrics_table_json",
]


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise MetricsError(f"negative count in {self}")

    @property
    def num_malicious(self) -> int:
        return self.tp + self.fn

    @property
    def num_benign(self) -> int:
        return self.fp + self.tn


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    variant_label: str = ""
    inverted: bool = False

    def __post_init__(self):
        for name in ("fpr", "tpr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise MetricsError(f"{name}={v} outside [0, 1]")

    @property
    def xy(self) -> tuple[float, float]:
        return (self.fpr, self.tpr)

    @property
    def is_bad(self) -> bool:
        """Worse than chance: more false than true positives, rate-wise."""
        return self.fpr > self.tpr


ALLOW_ALL = RocPoint(0.0, 0.0, "allow-all")
BLOCK_ALL = RocPoint(1.0, 1.0, "block-all")


def confusion(flagged: Iterable[str], labels: LabeledIpSpace) -> ConfusionCounts:
    flagged = set(flagged)
    missing = sorted(ip for ip in flagged if ip not in labels)
    if missing:
        raise MetricsError(f"{len(missing)} flagged IPs have no label, e.g. {missing[0]}")
    tp = sum(1 for ip in flagged if labels[ip] is Label.MALICIOUS)
    fp = len(flagged) - tp
    num_mal, num_ben = labels.counts
    return ConfusionCounts(tp=tp, fp=fp, tn=num_ben - fp, fn=num_mal - tp)


def roc_point(c: ConfusionCounts, label: str = "") -> RocPoint:
    if c.num_malicious == 0 or c.num_benign == 0:
        raise MetricsError("ROC point undefined with an empty class")
    return RocPoint(
        fpr=float(Fraction(c.fp, c.num_benign)),
        tpr=float(Fraction(c.tp, c.num_malicious)),
        variant_label=label,
    )


def f1_score(precision, recall):
    """Harmonic mean; 0 when both inputs are 0."""
    if precision + recall == 0:
        return 0 * precision
    return 2 * precision * recall / (precision + recall)


def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def prf1(c: ConfusionCounts, positive_class: Label | str = Label.MALICIOUS) -> tuple[float, float, float]:
    """(precision, recall, f1) with either class taken as positive.

    Zero denominators give 0 rather than raising.
    """
    if Label(positive_class) is Label.MALICIOUS:
        tp, fp, fn = c.tp, c.fp, c.fn
    else:
        # benign is "positive" when it is *not* flagged
        tp, fp, fn = c.tn, c.fn, c.fp
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    return float(p), float(r), float(f1_score(p, r))


def macro_f1(f1_malicious: float, f1_benign: float) -> float:
    return (f1_malicious + f1_benign) / 2


def invert(p: RocPoint) -> RocPoint:
    """Negate the classifier's decision: (fpr, tpr) -> (1 - fpr, 1 - tpr)."""
    return RocPoint(1.0 - p.fpr, 1.0 - p.tpr, p.variant_label, not p.inverted)


def invert_counts(c: ConfusionCounts) -> ConfusionCounts:
    return ConfusionCounts(tp=c.fn, fp=c.tn, tn=c.fp, fn=c.tp)


def cost(theta: float, p: RocPoint) -> float:
    """theta * fpr + (1 - theta) * fnr."""
    return theta * p.fpr + (1.0 - theta) * (1.0 - p.tpr)


@dataclass(frozen=True)
class CostCurve:
    thetas: np.ndarray
    min_costs: np.ndarray
    argmin_labels: tuple[str, ...]

    @property
    def samples(self) -> list[tuple[float, float, str]]:
        return list(zip(self.thetas.tolist(), self.min_costs.tolist(), self.argmin_labels))

    @property
    def area(self) -> float:
        return float(np.trapezoid(self.min_costs, self.thetas))

    def interval(self, label: str) -> tuple[float, float] | None:
        """Smallest and largest theta on the grid where ``label`` is the argmin."""
        hits = [t for t, lab in zip(self.thetas.tolist(), self.argmin_labels) if lab == label]
        return (min(hits), max(hits)) if hits else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("theta", "min_cost", "argmin"))
        for t, c, lab in self.samples:
            writer.writerow((f"{t:.6f}", f"{c:.10f}", lab))
        return buf.getvalue()


def _has_anchor(points: Sequence[RocPoint], x: float, y: float) -> bool:
    return any(p.fpr == x and p.tpr == y for p in points)


def min_cost_curve(points: Sequence[RocPoint], thetas: Sequence[float] | int = 1001) -> CostCurve:
    """Pointwise minimum cost over the ROC hull's vertices.

    Cost is linear in (fpr, tpr), so a hull vertex is always optimal. Points
    worse than chance are inverted before hulling. Ties go to the vertex with
    the smallest fpr.
    """
    if not (_has_anchor(points, 0.0, 0.0) and _has_anchor(points, 1.0, 1.0)):
        raise MetricsError("min_cost_curve needs the (0,0) and (1,1) anchors")
    grid = np.linspace(0.0, 1.0, thetas) if isinstance(thetas, int) else np.asarray(thetas, float)
    oriented = [invert(p) if p.is_bad else p for p in points]
    labels: dict[tuple[float, float], str] = {}
    for p in oriented:
        labels.setdefault(p.xy, p.variant_label)
    labels[(0.0, 0.0)] = labels.get((0.0, 0.0)) or ALLOW_ALL.variant_label
    labels[(1.0, 1.0)] = labels.get((1.0, 1.0)) or BLOCK_ALL.variant_label
    vertices = upper_left_chain([p.xy for p in oriented])
    fpr = np.array([v[0] for v in vertices])
    fnr = 1.0 - np.array([v[1] for v in vertices])
    costs = np.outer(grid, fpr) + np.outer(1.0 - grid, fnr)
    best = np.argmin(costs, axis=1)
    return CostCurve(
        thetas=grid,
        min_costs=costs[np.arange(len(grid)), best],
        argmin_labels=tuple(labels[vertices[i]] for i in best),
    )


def frontier_area(frontier: Sequence[RocPoint | tuple[float, float]]) -> float:
    """Trapezoidal area under a piecewise-linear frontier from (0,0) to (1,1)."""
    xy = [(p.fpr, p.tpr) if isinstance(p, RocPoint) else tuple(p) for p in frontier]
    if len(xy) < 2:
        raise MetricsError("frontier needs at least two points")
    if xy[0] != (0.0, 0.0) or xy[-1] != (1.0, 1.0):
        raise MetricsError("frontier must start at (0,0) and end at (1,1)")
    for x, y in xy:
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise MetricsError(f"point {(x, y)} outside the unit square")
    xs = [x for x, _ in xy]
    if any(b < a for a, b in zip(xs, xs[1:])):
        raise MetricsError("frontier not sorted by fpr")
    return float(sum((x1 - x0) * (y0 + y1) / 2 for (x0, y0), (x1, y1) in zip(xy, xy[1:])))


@dataclass(frozen=True)
class MetricsRow:
    variant_label: str
    tpr: float
    fpr: float
    precision_mal: float
    recall_mal: float
    f1_mal: float
    f1_ben: float
    f1_macro: float
    inverted: bool

    FIELDS = ("variant_label", "tpr", "fpr", "precision_mal", "recall_mal",
              "f1_mal", "f1_ben", "f1_macro", "inverted")


def metrics_row(c: ConfusionCounts, label: str, inverted: bool = False) -> MetricsRow:
    """One f1-table row; with ``inverted`` the counts are those of the negated classifier."""
    if inverted:
        c = invert_counts(c)
    point = roc_point(c, label)
    p_mal, r_mal, f_mal = prf1(c, Label.MALICIOUS)
    _, _, f_ben = prf1(c, Label.BENIGN)
    return MetricsRow(label, point.tpr, point.fpr, p_mal, r_mal, f_mal, f_ben,
                      macro_f1(f_mal, f_ben), inverted)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def metrics_table_csv(rows: Iterable[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MetricsRow.FIELDS)
    for row in rows:
        writer.writerow([_fmt(getattr(row, f)) for f in MetricsRow.FIELDS])
    return buf.getvalue()


def metrics_table_json(rows: Iterable[MetricsRow]) -> str:
    return json.dumps([asdict(r) for r in rows], indent=2, sort_keys=True) + "\n"
