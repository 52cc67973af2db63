"""
Integration tests for the fuse -> evaluate -> rank flow over image directories.
"""

import numpy as np
import pytest

from src.amfusion import metrics
from src.amfusion.dataio import discover_pairs, load_gray, quantize, save_gray, to_tensor
from src.amfusion.fusion import FusionKind, FusionStrategy
from src.amfusion.metrics import METRIC_NAMES
from src.amfusion.nn.blocks import autoencode, fuse_forward


def fuse_directory(pair_dirs, params, kind, out_dir):
    for stem, ir_path, vis_path in discover_pairs(*pair_dirs):
        fused = fuse_forward(to_tensor(load_gray(ir_path)), to_tensor(load_gray(vis_path)), params,
                             FusionStrategy(kind))
        save_gray(fused, out_dir / f"{stem}.png")


def evaluate_directory(pair_dirs, fused_dir):
    triples = [(stem, load_gray(ir), load_gray(vis), load_gray(fused_dir / f"{stem}.png"))
               for stem, ir, vis in discover_pairs(*pair_dirs)]
    return metrics.evaluate_pairs(triples, threads=2)


def test_fuse_evaluate_rank(pair_dirs, tiny_params, tmp_path):
    reports = {}
    for kind in FusionKind:
        fused_dir = tmp_path / "fused" / kind.value
        fuse_directory(pair_dirs, tiny_params, kind, fused_dir)
        assert sorted(p.name for p in fused_dir.iterdir()) == ["a01.png", "b02.png"]
        report = evaluate_directory(pair_dirs, fused_dir)
        assert [pid for pid, _ in report.rows] == ["a01", "b02"]
        path = tmp_path / "reports" / f"{kind.value}.csv"
        metrics.write_report_csv(report, path)
        reports[kind.value] = path

    # plain pixel average as a reference method; its SCD is never negative
    average_dir = tmp_path / "fused" / "pixel_average"
    for stem, ir_path, vis_path in discover_pairs(*pair_dirs):
        ir, vis = load_gray(ir_path).astype(np.uint16), load_gray(vis_path).astype(np.uint16)
        save_gray(((ir + vis) // 2).astype(np.uint8), average_dir / f"{stem}.png")
    reports["pixel_average"] = tmp_path / "reports" / "pixel_average.csv"
    metrics.write_report_csv(evaluate_directory(pair_dirs, average_dir), reports["pixel_average"])

    table = {name: metrics.read_report_summary(path) for name, path in reports.items()}
    for summary in table.values():
        assert set(summary) == set(METRIC_NAMES)
        assert all(np.isfinite(v) for v in summary.values())
        assert 0.0 <= summary["EN"] <= 8.0

    index = metrics.normalized_index(table)
    assert all(xi <= 9.0 for xi in index.values())
    assert index["pixel_average"] > 0.0
    metrics.write_ranking_csv(table, tmp_path / "ranking.csv")
    ranked = (tmp_path / "ranking.csv").read_text().splitlines()[1:]
    assert sorted(line.split(",")[0] for line in ranked) == ["avg", "l1", "mean", "pixel_average"]


def test_identical_sources_fuse_to_reconstruction(synthetic_pair, tiny_params):
    """Test that every strategy reduces to the autoencoder when IR equals VIS."""
    ir, _ = synthetic_pair
    x = to_tensor(ir)
    expected = quantize(autoencode(x, tiny_params))
    for kind in FusionKind:
        np.testing.assert_array_equal(quantize(fuse_forward(x, x, tiny_params, FusionStrategy(kind))), expected)


def test_self_fusion_scores_perfect_similarity(synthetic_pair):
    """Test the metric side of the flow on a fused image equal to both sources."""
    ir, _ = synthetic_pair
    values = metrics.evaluate_pair(ir, ir, ir)
    assert values["SSIM"] == pytest.approx(1.0)
    assert values["VIF"] == pytest.approx(1.0, abs=1e-6)
    assert values["MI"] == pytest.approx(2 * values["EN"])
