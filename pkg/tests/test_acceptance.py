"""Acceptance suite: one group of checks per criterion.

The conftest hook prints a PASS/FAIL line per criterion at the end of the run.
"""
import logging
import math
import time

import numpy as np
import pytest

from calcmatch.cli import main
from calcmatch.cluster import Template, rotation_variants, dbscan
from calcmatch.config import PipelineConfig
from calcmatch.detect import DetectParams, detect_blobs
from calcmatch.evaluate import METRIC_COLUMNS, build_grid, confusion, format_table, metrics
from calcmatch.evaluate import ConfusionCounts
from calcmatch.match import ScoreMap, best_match, correlate_variants, cross_correlate_direct, cross_correlate_fft
from calcmatch.match import pad_scene, select_matches
from calcmatch.pipeline import run_case
from calcmatch.synth import SynthParams, generate_case, render_blobs, write_case

from _oracles import dbscan_reference, naive_confusion, naive_metrics, partition

MAGNIFICATIONS = (1.0, 1.5, 2.0)


def _report(line):
    print(f"[acceptance] {line}")


# 1. FFT and direct correlation agree; full-size runtime

@pytest.mark.acceptance(1, "FFT correlation equals direct correlation; 4000x3000 runtime")
def test_ac1_fft_matches_direct_on_200_pairs():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        h, w = rng.integers(1, 257, 2)
        th, tw = rng.integers(1, 65, 2)
        density = rng.uniform(0.01, 0.5)
        scene = rng.random((h, w)) < density
        tpl = rng.random((th, tw)) < rng.uniform(0.05, 0.7)
        diff = cross_correlate_fft(tpl, scene).scores - cross_correlate_direct(tpl, scene).scores
        worst = max(worst, float(np.max(np.abs(diff))))
    _report(f"AC1 max |fft - direct| over 200 pairs = {worst:.3g}")
    assert worst < 1e-4


@pytest.mark.acceptance(1, "FFT correlation equals direct correlation; 4000x3000 runtime")
def test_ac1_real_valued_pairs_within_tolerance():
    rng = np.random.default_rng(7)
    for _ in range(20):
        h, w = rng.integers(1, 257, 2)
        th, tw = rng.integers(1, 65, 2)
        scene, tpl = rng.random((h, w)), rng.random((th, tw))
        diff = cross_correlate_fft(tpl, scene).scores - cross_correlate_direct(tpl, scene).scores
        assert np.max(np.abs(diff)) < 1e-4


@pytest.mark.acceptance(1, "FFT correlation equals direct correlation; 4000x3000 runtime")
def test_ac1_full_size_runtime():
    rng = np.random.default_rng(1)
    scene = rng.random((3000, 4000)) < 0.01
    bits = rng.random((300, 280)) < 0.05
    templates = rotation_variants(Template(bits))
    start = time.perf_counter()
    maps = correlate_variants(templates, scene)
    elapsed = time.perf_counter() - start
    _report(f"AC1 FFT path on 4000x3000 with four 300x280 templates: {elapsed:.2f} s")
    assert len(maps) == 4 and maps[0].scores.shape == (3000, 4000)
    assert elapsed < 10.0


# 2. DBSCAN partitions equal the brute-force reference

@pytest.mark.acceptance(2, "DBSCAN partition equals brute-force reference")
def test_ac2_dbscan_matches_reference_on_500_sets():
    rng = np.random.default_rng(99)
    for _ in range(500):
        n = int(rng.integers(1, 201))
        scale = rng.uniform(10, 300)
        pts = rng.uniform(0, scale, (n, 2))
        if rng.random() < 0.3:
            pts = np.round(pts)  # integer grids exercise exact-distance ties
        eps = float(rng.uniform(0.5, scale / 4))
        min_pts = int(rng.integers(1, 8))
        ours = dbscan(pts, eps, min_pts).labels
        assert partition(ours) == partition(dbscan_reference(pts, eps, min_pts))


@pytest.mark.acceptance(2, "DBSCAN partition equals brute-force reference")
def test_ac2_exact_cases():
    lab = dbscan(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), eps=1.5, min_pts=3)
    assert lab.labels.tolist() == [0, 0, 0] and lab.k == 1
    lab = dbscan(np.array([[3.0, 4.0]]), eps=1.5, min_pts=2)
    assert lab.labels.tolist() == [-1] and lab.k == 0


# 3. Synthetic end-to-end recovery, plus the twin-cluster failure mode

def _synthetic_case(seed, confuser=False):
    return generate_case(
        SynthParams(
            seed=seed,
            planted_rotation=90 * (seed % 4),
            specimen_magnification=MAGNIFICATIONS[seed % 3],
            n_background_blobs=20,
            noise_sigma=0.01,
            confuser=confuser,
        )
    )


@pytest.mark.slow
@pytest.mark.acceptance(3, "synthetic end-to-end recovery >= 95/100; confuser failures reported")
def test_ac3_recovery_over_100_seeds():
    hits, top1_hits, rotation_ok = 0, 0, 0
    for seed in range(100):
        case = _synthetic_case(seed)
        result = run_case(case.scene, case.specimen, case.meta, case.truth.reference_box, PipelineConfig())
        report = result.report
        hits += report.counts.tp >= 1
        grid = report.grid
        top = best_match(result.matches)
        top1_hits += grid.index_of(top.x, top.y) in report.positive
        rotation_ok += top.rotation == case.truth.planted_rotation
    _report(f"AC3 all-selected hits {hits}/100, top-1 hits {top1_hits}/100, best rotation correct {rotation_ok}/100")
    assert hits >= 95


@pytest.mark.slow
@pytest.mark.acceptance(3, "synthetic end-to-end recovery >= 95/100; confuser failures reported")
def test_ac3_confuser_failures_are_reported():
    failures = []
    for seed in range(20):
        case = _synthetic_case(seed, confuser=True)
        config = PipelineConfig(mode="top1")
        report = run_case(case.scene, case.specimen, case.meta, case.truth.reference_box, config).report
        if report.counts.tp == 0:
            failures.append(seed)
    _report(f"AC3 confuser cases (top-1 mode): {len(failures)}/20 failures, seeds {failures}")
    assert failures, "the twin cluster should mislead the top-1 prediction at least once"


# 4. Padding

@pytest.mark.acceptance(4, "zero padding by half the template size")
def test_ac4_padding_contract():
    scene = np.random.default_rng(0).random((5, 5)) < 0.5
    padded = pad_scene(scene, 3, 3)
    assert padded.shape == (7, 7)
    np.testing.assert_array_equal(padded[1:6, 1:6], scene)
    ring = np.ones((7, 7), dtype=bool)
    ring[1:6, 1:6] = False
    assert not padded[ring].any()


# 5. Percentile selection

@pytest.mark.acceptance(5, "percentile selection: strict > rule, constant maps warn")
def test_ac5_percentile_selection(caplog):
    scores = np.random.default_rng(3).permutation(10000).astype(np.float32).reshape(100, 100)
    assert len(select_matches([ScoreMap(scores, 0)], 99)) == 100
    with caplog.at_level(logging.WARNING, logger="calcmatch.match"):
        empty = select_matches([ScoreMap(np.full((100, 100), 7.0, np.float32), 0)], 99)
    assert len(empty) == 0
    assert any(r.levelno == logging.WARNING for r in caplog.records)


# 6. Metrics oracle

@pytest.mark.acceptance(6, "confusion and metrics equal a naive per-patch loop")
def test_ac6_metrics_oracle():
    rng = np.random.default_rng(6)
    for _ in range(1000):
        grid = build_grid(int(rng.integers(1, 3000)), int(rng.integers(1, 3000)), 300)
        n = grid.n_patches
        predicted = set(np.flatnonzero(rng.random(n) < rng.random()).tolist())
        positive = set(np.flatnonzero(rng.random(n) < rng.random()).tolist())
        counts = confusion(grid, predicted, positive)
        expected = naive_confusion(n, predicted, positive)
        assert (counts.tp, counts.fp, counts.fn, counts.tn) == expected
        assert metrics(counts).as_tuple() == naive_metrics(*expected)

    m = metrics(ConfusionCounts(2, 1, 1, 96))
    assert abs(m.precision - 2 / 3) <= 1e-9 and abs(m.recall - 2 / 3) <= 1e-9
    undefined = metrics(ConfusionCounts(0, 0, 0, 12))
    assert undefined.precision is None and undefined.recall is None and undefined.accuracy == 1.0
    header = format_table([("case", m)]).splitlines()[0].split("\t")
    assert header[1:] == list(METRIC_COLUMNS) == ["Accuracy", "Precision", "Recall", "Specificity", "NPV"]


# 7. Detection properties

@pytest.mark.acceptance(7, "detection: planted blob, blank image, ridge, translation")
def test_ac7_planted_blob_on_50_seeds():
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        center = rng.uniform(20, 108, 2)
        img = render_blobs(128, 128, center[None, :], [rng.uniform(1.5, 2.5)], [rng.uniform(0.4, 0.9)])
        blobs = detect_blobs(img)
        assert len(blobs) == 1, seed
        worst = max(worst, math.hypot(blobs[0].x - center[0], blobs[0].y - center[1]))
    _report(f"AC7 worst planted-blob error over 50 seeds = {worst:.3f} px")
    assert worst <= 1.0


@pytest.mark.acceptance(7, "detection: planted blob, blank image, ridge, translation")
def test_ac7_blank_and_ridge():
    assert detect_blobs(np.zeros((96, 96))) == []
    ridge = np.zeros((96, 96))
    ridge[:, 48] = 1.0
    assert detect_blobs(ridge, DetectParams(hessian_ratio_max=5)) == []


@pytest.mark.acceptance(7, "detection: planted blob, blank image, ridge, translation")
def test_ac7_translation_equivariance():
    rng = np.random.default_rng(70)
    for _ in range(20):
        centers = rng.uniform(30, 70, (4, 2))
        sig, amp = rng.uniform(1.5, 2.5, 4), rng.uniform(0.4, 0.9, 4)
        dx, dy = rng.integers(-15, 16, 2)
        a = detect_blobs(render_blobs(110, 110, centers, sig, amp))
        b = detect_blobs(render_blobs(110, 110, centers + [dx, dy], sig, amp))
        assert len(a) == len(b)
        for p, q in zip(a, b):
            assert abs(q.x - p.x - dx) <= 0.51 and abs(q.y - p.y - dy) <= 0.51


# 8. Determinism

@pytest.mark.acceptance(8, "pipeline artifacts byte-identical across runs and thread counts")
def test_ac8_pipeline_is_deterministic(tmp_path):
    case_dir = tmp_path / "case"
    write_case(_synthetic_case(10), case_dir)
    outputs = []
    for run, threads in enumerate(("1", "4", "4")):
        out = tmp_path / f"run{run}"
        code = main([
            "--threads", threads, "pipeline",
            "--scene", str(case_dir / "scene.pgm"),
            "--specimen", str(case_dir / "specimen.pgm"),
            "--meta", str(case_dir / "case.json"),
            "--truth", str(case_dir / "truth.json"),
            "--out-dir", str(out),
        ])
        assert code == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert len(outputs[0]) >= 10
    assert outputs[0] == outputs[1] == outputs[2]
