import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posekit import evalkit as ek
from posekit import geometry as geo
from posekit.geometry import Pose
from posekit.ply import PlyError, read_ply_vertices, write_ply_vertices


def brute_diameter(points):
    return max(np.linalg.norm(a - b) for a in points for b in points)


def circle(n=100, radius=0.05):
    a = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([radius * np.cos(a), radius * np.sin(a), np.zeros(n)])


def shift(dx):
    return Pose(np.eye(3), [dx, 0.0, 0.0])


@pytest.fixture
def cloud(rng):
    return ek.ObjectModel.from_points(rng.uniform(-0.05, 0.05, (10, 3)), "obj")


# ---------------------------------------------------------------- models


def test_diameter_matches_brute_force(rng):
    for n in (4, 10, 200):
        pts = rng.standard_normal((n, 3))
        assert ek.max_pairwise_distance(pts) == pytest.approx(brute_diameter(pts), rel=1e-12)


def test_diameter_flat_set_falls_back():
    pts = circle(20)
    assert ek.max_pairwise_distance(pts) == pytest.approx(0.1, rel=1e-12)


def test_model_validation():
    with pytest.raises(ValueError):
        ek.ObjectModel(np.zeros((3, 3)), 1.0)
    with pytest.raises(ValueError):
        ek.ObjectModel(np.zeros((5, 3)), 0.0)


def test_subsampling_stride(rng):
    m = ek.ObjectModel(rng.standard_normal((25_000, 3)), 1.0)
    assert m.eval_stride == 3
    assert len(m.eval_points) <= ek.MAX_EVAL_POINTS


@pytest.mark.parametrize("binary", [False, True])
def test_ply_round_trip(tmp_path, rng, binary):
    pts = rng.standard_normal((30, 3)).astype(np.float32).astype(float)
    p = tmp_path / "m.ply"
    write_ply_vertices(p, pts, binary=binary)
    np.testing.assert_allclose(read_ply_vertices(p), pts, rtol=1e-6)


def test_ply_with_faces_and_extra_properties(tmp_path):
    p = tmp_path / "mesh.ply"
    p.write_text(
        "ply\nformat ascii 1.0\ncomment made by hand\n"
        "element vertex 4\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
        "0 0 0 255\n1 0 0 0\n0 1 0 0\n0 0 1 0\n3 0 1 2\n"
    )
    np.testing.assert_array_equal(read_ply_vertices(p), np.vstack([np.zeros(3), np.eye(3)]))


def test_ply_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_text("not a ply\n")
    with pytest.raises(PlyError):
        read_ply_vertices(p)


def test_load_model_sidecar_and_symmetry(tmp_path, rng):
    pts = rng.uniform(-50, 50, (20, 3))
    write_ply_vertices(tmp_path / "glue.ply", pts)
    write_ply_vertices(tmp_path / "ape.ply", pts)
    (tmp_path / "ape.json").write_text(json.dumps({"diameter": 0.10, "symmetric": True}))
    models = ek.load_models(tmp_path, scale=0.001)
    assert list(models) == ["ape", "glue"]
    assert models["ape"].diameter == 0.10 and models["ape"].symmetric
    assert models["glue"].symmetric
    assert models["glue"].diameter == pytest.approx(brute_diameter(pts * 0.001), rel=1e-6)
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(FileNotFoundError):
        ek.load_models(empty)


# ---------------------------------------------------------------- metrics


def test_add_examples(cloud):
    ident = Pose(np.eye(3))
    assert ek.add_metric(cloud, ident, ident) == 0.0
    assert ek.add_metric(cloud, ident, shift(0.01)) == pytest.approx(0.01, abs=1e-15)


def test_add_matches_hand_average(cloud, rng):
    gt = Pose(geo.random_rotation(rng), rng.standard_normal(3))
    pred = Pose(geo.random_rotation(rng), rng.standard_normal(3))
    expected = np.mean([np.linalg.norm((gt.R @ x + gt.t) - (pred.R @ x + pred.t)) for x in cloud.points])
    assert ek.add_metric(cloud, gt, pred) == pytest.approx(expected, rel=1e-13)


def test_adds_matches_hand_minimum(cloud, rng):
    gt = Pose(geo.random_rotation(rng), rng.standard_normal(3))
    pred = Pose(geo.random_rotation(rng), gt.t + 0.01)
    a, b = gt.apply(cloud.points), pred.apply(cloud.points)
    expected = np.mean([min(np.linalg.norm(x - y) for y in b) for x in a])
    for mode in ("brute", "accelerated"):
        assert ek.adds_metric(cloud, gt, pred, mode) == pytest.approx(expected, rel=1e-13)


def test_adds_unknown_mode(cloud):
    with pytest.raises(ValueError):
        ek.adds_metric(cloud, Pose(np.eye(3)), Pose(np.eye(3)), "fast")


def test_ring_symmetry():
    ring = ek.ObjectModel.from_points(circle(100, 0.05), "ring", symmetric=True)
    gt = Pose(np.eye(3), [0, 0, 1])
    pred = Pose(geo.rot_z(np.deg2rad(36)), [0, 0, 1])  # a multiple of the 3.6 degree spacing
    assert ek.adds_metric(ring, gt, pred) < 1e-6
    # ADD for a 36 degree turn of radius r is 2 r sin(18 deg)
    assert ek.add_metric(ring, gt, pred) == pytest.approx(2 * 0.05 * np.sin(np.deg2rad(18)), rel=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 2**31))
def test_metric_properties(seed):
    rng = np.random.default_rng(seed)
    model = ek.ObjectModel.from_points(rng.standard_normal((40, 3)) * 0.05)
    gt = Pose(geo.random_rotation(rng), rng.standard_normal(3))
    pred = Pose(geo.random_rotation(rng), rng.standard_normal(3) * 0.1 + gt.t)
    add = ek.add_metric(model, gt, pred)
    adds = ek.adds_metric(model, gt, pred)
    assert adds <= add + 1e-15
    assert adds == ek.adds_metric(model, gt, pred, "brute")
    q = Pose(geo.random_rotation(rng), rng.standard_normal(3))
    assert ek.add_metric(model, q.compose(gt), q.compose(pred)) == pytest.approx(add, rel=1e-9)
    assert ek.adds_metric(model, q.compose(gt), q.compose(pred)) == pytest.approx(adds, rel=1e-9, abs=1e-15)


# ---------------------------------------------------------------- reports


def _records(name, offsets):
    return [ek.EvalRecord(name, Pose(np.eye(3), [0, 0, 1]), Pose(np.eye(3), [d, 0, 1])) for d in offsets]


def _box_model(name, d=0.10, symmetric=False):
    return ek.ObjectModel(np.array([[0, 0, 0], [d, 0, 0], [0, 0.01, 0], [0, 0, 0.01]]), d, symmetric, name)


def test_accuracy_threshold_count():
    rep = ek.accuracy_01d(_records("ape", [0.005, 0.02, 0.009]), {"ape": _box_model("ape")})
    assert rep.objects[0].accuracy == pytest.approx(200 / 3)
    assert rep.to_csv() == "object,n,accuracy_percent\nape,3,66.67\nAverage,3,66.67\n"


def test_ape_threshold_is_one_centimetre():
    models = {"ape": _box_model("ape", 0.10)}
    assert ek.accuracy_01d(_records("ape", [0.0099]), models).average == 100.0
    assert ek.accuracy_01d(_records("ape", [0.0101]), models).average == 0.0


def test_average_is_object_weighted():
    models = {"a": _box_model("a"), "b": _box_model("b")}
    recs = _records("a", [0.0] * 9) + _records("b", [0.5])
    rep = ek.accuracy_01d(recs, models)
    assert rep.average == 50.0 and rep.count == 10
    assert "Average" in rep.to_text()


def test_all_exact_is_100_and_unknown_object():
    assert ek.accuracy_01d(_records("a", [0, 0]), {"a": _box_model("a")}).average == 100.0
    with pytest.raises(LookupError):
        ek.accuracy_01d(_records("zzz", [0]), {"a": _box_model("a")})


def test_accuracy_monotone_in_factor(rng):
    models = {"a": _box_model("a")}
    recs = _records("a", rng.uniform(0, 0.03, 50))
    accs = [ek.accuracy_01d(recs, models, f).average for f in (0.3, 0.2, 0.1, 0.05, 0.01)]
    assert accs == sorted(accs, reverse=True)


def test_records_jsonl_round_trip(tmp_path, rng):
    rec = ek.EvalRecord("ape", Pose(geo.random_rotation(rng), [0, 0, 1]), Pose(np.eye(3), [0.1, 0, 1]))
    p = tmp_path / "r.jsonl"
    p.write_text(json.dumps(rec.to_dict()) + "\n\n")
    (back,) = ek.load_records(p)
    np.testing.assert_array_equal(back.gt.R, rec.gt.R)
    p.write_text('{"object": "ape"}\n')
    with pytest.raises(ValueError, match=":1:"):
        ek.load_records(p)


# ---------------------------------------------------------------- timing


def test_timing_table_total():
    rep = ek.timing_report({"Preprocess": 0.8, "Prediction": 13.1, "Postprocess": 2.1})
    assert rep.total == pytest.approx(16.0)
    assert rep.to_csv().splitlines()[-1] == "Total,16.0"


def test_timing_means_and_edge_cases():
    rep = ek.timing_report({"a": [1.0, 3.0], "b": [0.0]})
    assert rep.stages == [("a", 2.0), ("b", 0.0)]
    assert ek.timing_report({"only": 4.5}).total == 4.5
    assert ek.timing_report({"x": 0.0, "y": 0.0}).total == 0.0
    with pytest.raises(ValueError):
        ek.timing_report({"x": [-1.0]})
    assert "Total" in rep.to_text()
