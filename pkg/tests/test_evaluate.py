import numpy as np
import pytest

from calcmatch.cluster import Rect
from calcmatch.evaluate import (
    METRIC_COLUMNS,
    EvalMetrics,
    ConfusionCounts,
    build_grid,
    confusion,
    format_table,
    metrics,
    positive_patches,
    predicted_patches,
)
from calcmatch.match import Match, MatchSet

from _oracles import naive_confusion, naive_metrics


def test_grid_exact_tiling():
    g = build_grid(600, 600, 300)
    assert g.n_patches == 4
    assert all((p.w, p.h) == (300, 300) for p in g.patches)


def test_grid_ceil_rule():
    g = build_grid(650, 600, 300)
    assert (g.cols, g.rows, g.n_patches) == (3, 2, 6)
    assert g.patch(2) == Rect(600, 0, 50, 300)


def test_grid_small_scene():
    g = build_grid(100, 100, 300)
    assert g.patches == [Rect(0, 0, 100, 100)]


def test_grid_covers_every_pixel_once():
    g = build_grid(97, 61, 20)
    cover = np.zeros((61, 97), dtype=int)
    for p in g.patches:
        cover[p.y0 : p.y1, p.x0 : p.x1] += 1
    assert np.all(cover == 1)


def test_positive_patches_examples():
    g = build_grid(900, 600, 300)
    assert positive_patches(g, Rect(10, 10, 50, 50)) == {0}
    assert positive_patches(g, Rect(280, 100, 40, 40)) == {0, 1}
    assert positive_patches(g, Rect(0, 0, 900, 600)) == set(range(6))
    # a box ending exactly at a boundary stays in one column
    assert positive_patches(g, Rect(200, 10, 100, 10)) == {0}


@pytest.mark.parametrize("seed", range(20))
def test_positive_patches_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    g = build_grid(int(rng.integers(1, 1000)), int(rng.integers(1, 1000)), int(rng.integers(50, 400)))
    x0, y0 = int(rng.integers(0, g.width)), int(rng.integers(0, g.height))
    box = Rect(x0, y0, int(rng.integers(1, g.width - x0 + 1)), int(rng.integers(1, g.height - y0 + 1)))
    expected = {i for i, p in enumerate(g.patches) if p.intersects(box)}
    assert positive_patches(g, box) == expected


def _ms(*xy):
    return MatchSet([Match(x, y, float(10 - i), 0) for i, (x, y) in enumerate(xy)], 99.0, {})


def test_predicted_patches_examples():
    g = build_grid(900, 600, 300)
    assert predicted_patches(g, _ms((10, 10))) == {0}
    spread = _ms((10, 10), (400, 10), (10, 400))
    assert predicted_patches(g, spread) == {0, 1, 3}
    assert predicted_patches(g, spread, "top1") == {0}
    assert predicted_patches(g, _ms((300, 10))) == {1}
    assert predicted_patches(g, _ms((299, 299))) == {0}
    assert predicted_patches(g, MatchSet([], 99.0, {})) == set()
    with pytest.raises(ValueError):
        predicted_patches(g, spread, "top3")


def test_confusion_examples():
    g = build_grid(1000, 1000, 100)
    assert confusion(g, {5}, {5}) == ConfusionCounts(1, 0, 0, 99)
    assert confusion(g, {5}, {6}) == ConfusionCounts(0, 1, 1, 98)
    assert confusion(g, {1, 2}, {2, 3}) == ConfusionCounts(1, 1, 1, 97)
    with pytest.raises(ValueError):
        confusion(g, {100}, set())


def test_metrics_example():
    m = metrics(ConfusionCounts(2, 1, 1, 96))
    assert abs(m.precision - 2 / 3) <= 1e-9
    assert abs(m.recall - 2 / 3) <= 1e-9
    assert m.accuracy == pytest.approx(0.98)
    assert m.specificity == pytest.approx(96 / 97)
    assert m.npv == pytest.approx(96 / 97)


def test_metrics_zero_denominators():
    m = metrics(ConfusionCounts(0, 0, 0, 50))
    assert m.precision is None and m.recall is None
    assert m.accuracy == 1.0
    empty = metrics(ConfusionCounts())
    assert empty.as_tuple() == (None,) * 5
    assert empty.row("x") == "x\tn/a\tn/a\tn/a\tn/a\tn/a"


def test_confusion_and_metrics_match_naive_loop():
    rng = np.random.default_rng(123)
    for _ in range(1000):
        g = build_grid(int(rng.integers(1, 2000)), int(rng.integers(1, 2000)), int(rng.integers(50, 500)))
        n = g.n_patches
        predicted = set(np.flatnonzero(rng.random(n) < rng.random()).tolist())
        positive = set(np.flatnonzero(rng.random(n) < rng.random()).tolist())
        counts = confusion(g, predicted, positive)
        ref = naive_confusion(n, predicted, positive)
        assert (counts.tp, counts.fp, counts.fn, counts.tn) == ref
        assert counts.total == n
        assert metrics(counts).as_tuple() == naive_metrics(*ref)


def test_pooled_metrics_micro_average_and_order_invariance():
    rng = np.random.default_rng(5)
    cases = [ConfusionCounts(*rng.integers(0, 20, 4).tolist()) for _ in range(6)]
    total = sum(cases[1:], cases[0])
    pooled = metrics(None, cases)
    assert pooled == metrics(total)
    for perm in (rng.permutation(6) for _ in range(5)):
        assert metrics(None, [cases[i] for i in perm]) == pooled
    assert metrics(cases[0], cases[1:]) == pooled


def test_top1_predicts_single_patch():
    rng = np.random.default_rng(8)
    g = build_grid(1200, 900, 300)
    for _ in range(50):
        locs = [Match(int(x), int(y), float(s), 0)
                for x, y, s in zip(rng.integers(0, 1200, 7), rng.integers(0, 900, 7), rng.random(7))]
        ms = MatchSet(sorted(locs, key=lambda m: -m.score), 99.0, {})
        counts = confusion(g, predicted_patches(g, ms, "top1"), {int(rng.integers(0, 12))})
        assert counts.tp + counts.fp == 1


def test_table_column_order():
    table = format_table([("CC", metrics(ConfusionCounts(2, 1, 1, 96)))])
    header, row = table.splitlines()
    assert header.split("\t") == ["View", *METRIC_COLUMNS]
    assert METRIC_COLUMNS == ("Accuracy", "Precision", "Recall", "Specificity", "NPV")
    assert row.split("\t") == ["CC", "0.98", "0.67", "0.67", "0.99", "0.99"]


def test_row_format_two_decimals_tab_separated():
    row = EvalMetrics(0.99, 0.66, 0.61, 0.99, 0.98).row("Magnified ML")
    assert row == "Magnified ML\t0.99\t0.66\t0.61\t0.99\t0.98"
