from __future__ import annotations

import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snortprune.metrics import (
    ALLOW_ALL,
    BLOCK_ALL,
    ConfusionCounts,
    MetricsError,
    RocPoint,
    confusion,
    cost,
    f1_score,
    frontier_area,
    invert,
    macro_f1,
    metrics_row,
    metrics_table_csv,
    metrics_table_json,
    min_cost_curve,
    prf1,
    roc_point,
)
from snortprune.traffic import Label, LabeledIpSpace

ORIGINAL = RocPoint(0.0779, 0.4454, "original")


def space(n_mal, n_ben):
    labels = {f"10.0.{i // 250}.{i % 250}": Label.MALICIOUS for i in range(n_mal)}
    labels.update({f"10.9.{i // 250}.{i % 250}": Label.BENIGN for i in range(n_ben)})
    return LabeledIpSpace(labels)


def test_confusion_examples():
    s = space(200, 50)
    flagged = sorted(s.malicious)[:100]
    c = confusion(flagged, s)
    assert (c.tp, c.fn, c.fp, c.tn) == (100, 100, 0, 50)
    everyone = confusion(s.labels, s)
    assert roc_point(everyone).xy == (1.0, 1.0)
    nobody = confusion([], s)
    assert nobody.tp == nobody.fp == 0
    with pytest.raises(MetricsError):
        confusion(["1.2.3.4"], s)


def test_roc_point():
    assert roc_point(ConfusionCounts(3, 4, 4, 3)).xy == (0.5, 0.5)
    with pytest.raises(MetricsError):
        roc_point(ConfusionCounts(0, 1, 1, 0))


@given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500), st.integers(0, 500))
def test_roc_point_rational_oracle(tp, fp, tn, fn):
    c = ConfusionCounts(tp, fp, tn, fn)
    if tp + fn == 0 or fp + tn == 0:
        return
    p = roc_point(c)
    assert Fraction(p.tpr) == Fraction(tp, tp + fn).limit_denominator(10**6) or \
        abs(p.tpr - tp / (tp + fn)) < 1e-15
    assert abs(p.fpr - fp / (fp + tn)) < 1e-15


def test_f1_values():
    assert f1_score(0.9744, 0.4454) == pytest.approx(0.6113, abs=1e-4)
    assert f1_score(0.8696, 1.0) == pytest.approx(0.9302, abs=1e-4)
    assert f1_score(0.0, 0.0) == 0
    assert f1_score(0.37, 0.37) == pytest.approx(0.37)


def test_flags_style_universal_matcher():
    # flags everyone: benign side has no true negatives
    c = ConfusionCounts(tp=20, fp=3, tn=0, fn=0)
    p, r, f = prf1(c, Label.MALICIOUS)
    assert r == 1.0 and f == pytest.approx(2 * p / (p + 1))
    assert prf1(c, Label.BENIGN) == (0.0, 0.0, 0.0)


def test_macro_f1():
    assert macro_f1(0.6113, 0.3282) == pytest.approx(0.46975, abs=1e-9)
    assert macro_f1(0.9302, 0.0) == pytest.approx(0.4651)
    assert macro_f1(0.42, 0.42) == 0.42


@given(st.floats(0, 1), st.floats(0, 1))
def test_invert_involution(x, y):
    p = RocPoint(x, y)
    back = invert(invert(p))
    assert back.fpr == pytest.approx(x, abs=1e-15) and back.tpr == pytest.approx(y, abs=1e-15)
    assert back.inverted is False


def test_invert_examples():
    q = invert(RocPoint(0.9984, 0.9581))
    assert (q.fpr, q.tpr) == pytest.approx((0.0016, 0.0419), abs=1e-12)
    assert q.inverted
    assert invert(RocPoint(0.5, 0.5)).xy == (0.5, 0.5)


def test_cost_examples():
    assert cost(0.0, BLOCK_ALL) == 0
    assert cost(1.0, ALLOW_ALL) == 0
    assert cost(0.5, ORIGINAL) == pytest.approx(0.31625, abs=1e-12)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_cost_nonnegative_and_linear(x, y, t1, t2):
    p = RocPoint(x, y)
    assert cost(t1, p) >= 0
    mid = (t1 + t2) / 2
    assert cost(mid, p) == pytest.approx((cost(t1, p) + cost(t2, p)) / 2, abs=1e-12)


def test_min_cost_anchors_only():
    curve = min_cost_curve([ALLOW_ALL, BLOCK_ALL])
    assert np.allclose(curve.min_costs, np.minimum(curve.thetas, 1 - curve.thetas))
    assert curve.area == pytest.approx(0.25, abs=1e-6)
    assert curve.min_costs[0] == 0 and curve.min_costs[-1] == 0


def test_min_cost_requires_anchors():
    with pytest.raises(MetricsError):
        min_cost_curve([ORIGINAL])


def test_min_cost_original_point():
    curve = min_cost_curve([ALLOW_ALL, BLOCK_ALL, ORIGINAL])
    assert curve.area == pytest.approx(0.2064, abs=1e-3)
    lo, hi = curve.interval("original")
    # the exact switch points are where the cost lines cross
    exact_lo = (1 - ORIGINAL.tpr) / (1 - ORIGINAL.tpr + 1 - ORIGINAL.fpr)
    exact_hi = ORIGINAL.tpr / (ORIGINAL.tpr + ORIGINAL.fpr)
    assert lo == pytest.approx(np.ceil(exact_lo * 1000) / 1000)
    assert hi == pytest.approx(np.floor(exact_hi * 1000) / 1000)
    assert curve.argmin_labels[0] == "block-all" and curve.argmin_labels[-1] == "allow-all"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=10),
       st.data())
def test_min_cost_subset_monotone(points, data):
    pts = [RocPoint(x, y, f"p{i}") for i, (x, y) in enumerate(points)]
    subset = data.draw(st.lists(st.sampled_from(pts), unique=True))
    full = min_cost_curve([ALLOW_ALL, BLOCK_ALL] + pts, thetas=101)
    part = min_cost_curve([ALLOW_ALL, BLOCK_ALL] + subset, thetas=101)
    assert np.all(full.min_costs <= part.min_costs + 1e-12)
    # brute force: minimum over every oriented point
    oriented = [invert(p) if p.is_bad else p for p in pts] + [ALLOW_ALL, BLOCK_ALL]
    brute = np.array([min(cost(t, p) for p in oriented) for t in full.thetas])
    assert np.allclose(full.min_costs, brute, atol=1e-12)


def test_frontier_area_examples():
    assert frontier_area([(0, 0), (0.0779, 0.4454), (1, 1)]) == pytest.approx(0.6837, abs=5e-4)
    assert frontier_area([(0.0, 0.0), (1.0, 1.0)]) == 0.5


@pytest.mark.parametrize("bad", [
    [(0.0, 0.0), (0.5, 0.6), (0.4, 0.7), (1.0, 1.0)],
    [(0.1, 0.0), (1.0, 1.0)],
    [(0.0, 0.0), (0.5, 1.5), (1.0, 1.0)],
    [(0.0, 0.0)],
])
def test_frontier_area_rejects(bad):
    with pytest.raises(MetricsError):
        frontier_area(bad)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), max_size=8))
def test_frontier_area_riemann_oracle(raw):
    xs = sorted(x for x, _ in raw)
    ys = sorted(y for _, y in raw)
    frontier = [(0.0, 0.0)] + list(zip(xs, ys)) + [(1.0, 1.0)]
    grid = (np.arange(10**6) + 0.5) / 10**6
    fx = np.array([x for x, _ in frontier])
    fy = np.array([y for _, y in frontier])
    # np.interp on a nondecreasing staircase-free chain; vertical jumps
    # contribute nothing to the integral
    riemann = float(np.mean(np.interp(grid, fx, fy)))
    assert frontier_area(frontier) == pytest.approx(riemann, abs=2e-6)


@given(st.floats(0, 1), st.floats(0, 1))
def test_frontier_area_grows_with_points_above(x, y):
    base = [(0.0, 0.0), (0.3, 0.6), (1.0, 1.0)]
    from snortprune.frontier import roc_hull

    before = frontier_area(roc_hull([RocPoint(0.3, 0.6)]))
    after = frontier_area(roc_hull([RocPoint(0.3, 0.6), RocPoint(x, y)]))
    assert after >= before - 1e-12
    assert frontier_area(base) == pytest.approx(before)


def test_metrics_rows_and_tables():
    c = ConfusionCounts(tp=4, fp=1, tn=9, fn=6)
    row = metrics_row(c, "x")
    assert row.tpr == 0.4 and row.fpr == 0.1 and row.precision_mal == 0.8
    inv = metrics_row(c, "x", inverted=True)
    assert inv.tpr == pytest.approx(0.6) and inv.fpr == pytest.approx(0.9) and inv.inverted
    text = metrics_table_csv([row, inv])
    assert text.splitlines()[0] == ("variant_label,tpr,fpr,precision_mal,recall_mal,"
                                    "f1_mal,f1_ben,f1_macro,inverted")
    assert text.splitlines()[1].endswith(",false")
    data = json.loads(metrics_table_json([row]))
    assert data[0]["variant_label"] == "x" and data[0]["f1_mal"] == row.f1_mal
