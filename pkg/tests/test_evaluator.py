import numpy as np
import pytest

from semloop import pipeline
from semloop.cache import load_graphs
from semloop.evaluator import (
    MAX_YAW_DEG, OCCLUSION_FOV_DEG, MissingGraphWarning, apply_perturbation, draw_wedge, draw_yaw, evaluate,
    in_wedge, perturb_occlusion, perturb_rotation, read_report, write_report,
)
from semloop.ingest import LabeledPointCloud, ScanPair, read_pairs
from semloop.trainer import load_checkpoint


def _isotropic(rng, n=200_000):
    pts = rng.normal(size=(n, 3)) * [10, 10, 1]
    return LabeledPointCloud(pts, rng.integers(0, 12, n), np.zeros(n, int))


def test_protocol_constants():
    assert MAX_YAW_DEG == 30.0 and OCCLUSION_FOV_DEG == 30.0
    rng = np.random.default_rng(0)
    yaws = np.degrees([draw_yaw(rng) for _ in range(2000)])
    assert yaws.min() >= -30 and yaws.max() <= 30 and yaws.min() < -29 and yaws.max() > 29
    assert draw_wedge(rng)[1] == pytest.approx(np.radians(30))


def test_rotation_preserves_norms_and_labels(rng):
    cloud = _isotropic(rng, 5000)
    out = perturb_rotation(cloud, seed=3)
    np.testing.assert_allclose(np.linalg.norm(out.points, axis=1), np.linalg.norm(cloud.points, axis=1),
                               rtol=0, atol=1e-9)
    np.testing.assert_allclose(out.points[:, 2], cloud.points[:, 2], atol=1e-12)
    assert np.array_equal(out.semantic, cloud.semantic)
    assert np.array_equal(perturb_rotation(cloud, yaw=0.0).points, cloud.points)


def test_occlusion_empty_and_outside_wedge(rng):
    assert len(perturb_occlusion(LabeledPointCloud.empty(), seed=0)) == 0
    cloud = _isotropic(rng, 20000)
    wedge = (np.radians(350.0), np.radians(30.0))  # wraps through azimuth 0
    out = perturb_occlusion(cloud, wedge=wedge)
    assert not in_wedge(out.points, *wedge).any()
    az = np.degrees(np.arctan2(out.points[:, 1], out.points[:, 0])) % 360
    assert not np.any((az >= 350) | (az < 20))


def test_occlusion_fraction_matches_coverage(rng):
    cloud = _isotropic(rng)
    fracs = [1 - len(perturb_occlusion(cloud, seed=s)) / len(cloud) for s in range(20)]
    # binomial standard error for 2e5 points is ~6e-4
    assert abs(np.mean(fracs) - 30 / 360) < 3e-3
    assert max(abs(f - 30 / 360) for f in fracs) < 5e-3


def test_both_rotates_then_occludes(rng):
    cloud = _isotropic(rng, 5000)
    out, rec = apply_perturbation(cloud, "both", np.random.default_rng(9))
    expect = perturb_occlusion(perturb_rotation(cloud, yaw=rec["yaw"]), wedge=rec["wedge"])
    assert np.array_equal(out.points, expect.points)
    wrong = perturb_rotation(perturb_occlusion(cloud, wedge=rec["wedge"]), yaw=rec["yaw"])
    assert len(wrong) != len(out) or not np.array_equal(wrong.points, out.points)


def test_unknown_mode(rng):
    with pytest.raises(ValueError):
        apply_perturbation(_isotropic(rng, 10), "flip", rng)


def test_report_round_trip(tmp_path):
    curve = [(float("inf"), 1.0, 0.0), (0.9, 1.0, 0.5), (0.1, 0.5, 1.0)]
    report = {"max_f1": 2 / 3, "auc": 0.625, "threshold": 0.9, "curve": curve, "n_pairs": 4, "n_positive": 2}
    write_report(report, tmp_path / "r.txt", "abc123", extra={"checkpoint_hash": "ff"})
    back = read_report(tmp_path / "r.txt")
    assert back["curve"] == curve
    assert back["max_f1"] == 2 / 3 and back["config_hash"] == "abc123" and back["checkpoint_hash"] == "ff"


# ---------------------------------------------------------------------------
# checks on the desk-scale checkpoint


@pytest.fixture(scope="module")
def desk_eval(desk_data, desk_checkpoint):
    model = load_checkpoint(desk_checkpoint).build_model()
    out = {}
    for seq in ("s1", "s2"):
        pairs = read_pairs(desk_data / seq / "pairs.csv")
        graphs, missing = load_graphs(desk_data / "graphs", pairs)
        assert not missing
        out[seq] = (pairs, graphs)
    return model, out


def test_overfit_on_training_pairs(desk_eval):
    model, sets = desk_eval
    report = evaluate(model, *sets["s1"])
    assert report["max_f1"] >= 0.95


def test_report_is_deterministic(desk_eval, tmp_path):
    model, sets = desk_eval
    for name in ("a", "b"):
        write_report(evaluate(model, *sets["s2"]), tmp_path / f"{name}.txt", "h")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_perturbed_drop_is_bounded(desk_eval, desk_data):
    model, sets = desk_eval
    pairs, graphs = sets["s2"]
    meta = pipeline.read_dataset_meta(desk_data, "s2")
    keys = sorted({(p.seq_id, k) for p in pairs for k in (p.i, p.j)})
    clouds = {key: pipeline.load_cloud(desk_data, key[0], key[1], meta) for key in keys}
    clean = evaluate(model, pairs, graphs)
    hit = evaluate(model, pairs, graphs, clouds, perturb="both", seed=0)
    assert len(hit["perturbations"]) == len(pairs)
    assert all(r["scan"] == "i" for r in hit["perturbations"])
    assert clean["max_f1"] - hit["max_f1"] < 0.15
    # labels are untouched by perturbation
    assert hit["n_positive"] == clean["n_positive"]


def test_missing_graphs_skipped(desk_eval):
    model, sets = desk_eval
    pairs, graphs = sets["s2"]
    extra = ScanPair("s2", 0, 9999, 0)
    with pytest.warns(MissingGraphWarning):
        report = evaluate(model, list(pairs) + [extra], graphs)
    assert report["skipped"] == [("s2", 0, 9999)]
    assert report["n_pairs"] == len(pairs)
