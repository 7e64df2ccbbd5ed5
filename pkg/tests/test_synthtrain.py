from dataclasses import replace

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from posekit import diff as ad
from posekit import geometry as geo
from posekit import synthtrain as stn
from posekit.losses import LossWeights


@pytest.fixture(scope="module")
def small_cfg():
    return stn.SynthConfig(n_frames=60, seed=3)


@pytest.fixture(scope="module")
def small_data(small_cfg):
    return stn.generate_dataset(small_cfg)


# ---------------------------------------------------------------- data


def test_config_validation():
    with pytest.raises(ValueError):
        stn.SynthConfig(noise_px=-1)
    with pytest.raises(ValueError):
        stn.SynthConfig(occlusion=1.5)
    with pytest.raises(ValueError):
        stn.SynthConfig(n_frames=0)


def test_default_model_shape():
    m = stn.default_object_model()
    assert m.name == "synthbox"
    np.testing.assert_allclose(m.points.max(axis=0), [0.05, 0.04, 0.03])
    assert m.diameter == pytest.approx(np.sqrt(0.1**2 + 0.08**2 + 0.06**2), rel=1e-12)
    # point-symmetric sampling puts the centroid at the origin
    np.testing.assert_allclose(m.points.mean(axis=0), 0.0, atol=1e-15)


def test_clean_features_are_exact_projections(small_cfg, small_data):
    uv = small_data.features[:, :18].reshape(-1, 9, 2)
    np.testing.assert_allclose(uv, stn.normalize_pixels(small_cfg.cam, small_data.keypoints), atol=1e-15)
    np.testing.assert_array_equal(small_data.features[:, 18:], 1.0)


def test_labels_match_geometry(small_cfg, small_data):
    cam, pts = small_cfg.cam, small_cfg.model.points
    for i in range(len(small_data)):
        pose = geo.Pose(small_data.R[i], small_data.t[i])
        assert geo.check_rotation(pose.R)
        np.testing.assert_allclose(small_data.keypoints[i], geo.bbox9_keypoints(pts, pose, cam), atol=1e-9)
        uv, _ = geo.project_point(cam, geo.Pose(np.eye(3), pose.t), np.zeros(3))
        np.testing.assert_allclose(uv, small_data.center[i], atol=1e-9)
        assert geo.depth_decode(small_data.sigma[i], cam) == pytest.approx(pose.t[2], abs=1e-15)
        assert geo.depth_encode(geo.depth_decode(small_data.sigma[i], cam), cam) == pytest.approx(small_data.sigma[i], abs=1e-15)


def test_centers_in_inner_region(small_cfg, small_data):
    cam = small_cfg.cam
    assert np.all((small_data.center[:, 0] >= 0.1 * cam.width) & (small_data.center[:, 0] <= 0.9 * cam.width))
    assert np.all((small_data.center[:, 1] >= 0.1 * cam.height) & (small_data.center[:, 1] <= 0.9 * cam.height))
    assert np.all((small_data.sigma >= 0) & (small_data.sigma <= 1))


def test_same_seed_bit_identical(small_cfg, small_data):
    again = stn.generate_dataset(small_cfg)
    for f in small_data.__dataclass_fields__:
        assert getattr(again, f).tobytes() == getattr(small_data, f).tobytes()
    other = stn.generate_dataset(replace(small_cfg, seed=4))
    assert other.R.tobytes() != small_data.R.tobytes()


def test_noise_and_occlusion(small_cfg):
    d = stn.generate_dataset(replace(small_cfg, noise_px=2.0, occlusion=0.3, n_frames=400))
    hidden = d.observed == 0
    assert 0.2 < hidden.mean() < 0.4
    uv = d.features[:, :18].reshape(-1, 9, 2)
    assert np.all(uv[hidden] == 0)
    err = (uv - stn.normalize_pixels(small_cfg.cam, d.keypoints))[~hidden] * small_cfg.cam.fx
    assert err.std() == pytest.approx(2.0, rel=0.1)
    # occlusion only affects the inputs
    np.testing.assert_array_equal(d.features[:, 18:], d.observed)


def test_jsonl_round_trip(small_data):
    back = stn.SynthDataset.from_jsonl(small_data.subset(slice(0, 5)).to_jsonl())
    np.testing.assert_array_equal(back.R, small_data.R[:5])
    np.testing.assert_array_equal(back.keypoints, small_data.keypoints[:5])


# ---------------------------------------------------------------- heads and net


def test_heads_zero_output_is_identity():
    for mode, width in stn.ROT_DIMS.items():
        r = stn.rotation_from_head(mode, np.zeros((2, width)), differentiable=False)
        np.testing.assert_allclose(r, np.broadcast_to(np.eye(3), (2, 3, 3)), atol=1e-12)


def test_heads_match_independent_conversions(rng):
    raw = rng.normal(0, 0.5, (5, 9))
    r = stn.rotation_from_head("svd9", raw, differentiable=False)
    for i in range(5):
        np.testing.assert_allclose(r[i], geo.svd_project_so3(raw[i].reshape(3, 3) + np.eye(3)), atol=1e-14)
    g = stn.gso_head(raw[:, :6])
    for i in range(5):
        np.testing.assert_allclose(g[i], geo.gso_to_rot(raw[i, :3] + [1, 0, 0], raw[i, 3:6] + [0, 1, 0]), atol=1e-9)
    q = stn.quat_head(raw[:, :4]) + 0.0
    for i in range(5):
        w, x, y, z = raw[i, :4] + [1, 0, 0, 0]
        np.testing.assert_allclose(q[i], Rotation.from_quat([x, y, z, w]).as_matrix(), atol=1e-9)
    e = stn.euler_head(raw[:, :3])
    for i in range(5):
        np.testing.assert_allclose(e[i], Rotation.from_euler("ZYX", raw[i, :3]).as_matrix(), atol=1e-12)


@pytest.mark.parametrize("mode", stn.MODES)
@pytest.mark.parametrize("kp", [True, False])
def test_output_blocks(mode, kp):
    net = stn.ToyNet(mode=mode, keypoint_head=kp)
    blocks = dict(net.blocks())
    assert blocks["rot"] == stn.ROT_DIMS[mode] and blocks["sigma"] == 1 and blocks["center"] == 2
    assert blocks.get("kps", 0) == (27 if kp else 0)
    assert net.weights[-1][0].shape == (64, net.n_out)
    k = 1 / np.sqrt(net.n_in)
    assert np.abs(net.weights[0][0]).max() <= k


def test_variants_share_parameters():
    a = stn.ToyNet(mode="svd9", keypoint_head=True, seed=2)
    b = stn.ToyNet(mode="euler", keypoint_head=False, seed=2)
    for (wa, ba), (wb, bb) in zip(a.weights[:-1], b.weights[:-1]):
        np.testing.assert_array_equal(wa, wb)
        np.testing.assert_array_equal(ba, bb)
    # sigma/center/box head columns are identical across modes
    np.testing.assert_array_equal(a.weights[-1][0][:, 9:16], b.weights[-1][0][:, 3:10])


def test_embed_features_invariances(small_cfg, small_data):
    x, c, s = stn.embed_features(small_data.features)
    assert x.shape == (len(small_data), 31)
    # shifting every keypoint shifts c and leaves the relative block unchanged
    shifted = small_data.features.copy()
    shifted[:, :18] += np.tile([0.01, -0.02], 9)
    x2, c2, s2 = stn.embed_features(shifted)
    np.testing.assert_allclose(x2[:, :27], x[:, :27], atol=1e-12)
    np.testing.assert_allclose(c2 - c, np.broadcast_to([0.01, -0.02], c.shape), atol=1e-15)
    np.testing.assert_allclose(s2, s, rtol=1e-12)


def test_network_loss_gradient_matches_fd(small_cfg, small_data, rng):
    net = stn.ToyNet(hidden=(6,), seed=1)
    data = small_data.subset(slice(0, 4))
    net.fit_inputs(data.features)
    w = LossWeights(1.0, 1.0, 0.1, 0.0)
    cam = small_cfg.cam

    def total(params, diff=True):
        comps, _, _ = stn.loss_components(net, params, data, cam, differentiable=diff)
        from posekit.losses import total_term

        return total_term(comps, w)

    tape = ad.Tape()
    leaves = [[tape.var(W), tape.var(b)] for W, b in net.weights]
    grads = ad.backward(tape, total(leaves))
    for layer in range(2):
        W = net.weights[layer][0]
        for _ in range(6):
            idx = tuple(rng.integers(0, n) for n in W.shape)
            h = 1e-6
            plus = [[x.copy() for x in p] for p in net.weights]
            minus = [[x.copy() for x in p] for p in net.weights]
            plus[layer][0][idx] += h
            minus[layer][0][idx] -= h
            num = (float(total(plus, False)) - float(total(minus, False))) / (2 * h)
            ana = grads[leaves[layer][0]][idx]
            assert ad.relative_error(ana, num) < 1e-5


# ---------------------------------------------------------------- training


def test_zero_epochs_single_row(small_data):
    lg = stn.train(stn.ToyNet(seed=0), small_data, LossWeights(), stn.TrainConfig(epochs=0))
    assert len(lg.rows) == 1 and lg.rows[0]["epoch"] == 0
    assert all(np.isfinite(v) for v in lg.rows[0].values())
    assert lg.to_csv().splitlines()[0] == ",".join(stn.LOG_COLUMNS)


def test_training_deterministic_and_finite(small_data):
    cfg = stn.TrainConfig(epochs=3)
    a = stn.train(stn.ToyNet(seed=5), small_data, LossWeights(), cfg)
    b = stn.train(stn.ToyNet(seed=5), small_data, LossWeights(), cfg)
    assert a.to_csv() == b.to_csv()
    for (wa, ba), (wb, bb) in zip(a.params, b.params):
        assert wa.tobytes() == wb.tobytes() and ba.tobytes() == bb.tobytes()
        assert np.all(np.isfinite(wa))
    assert len(a.rows) == 4


def test_moving_average_loss_non_increasing():
    data = stn.generate_dataset(stn.SynthConfig(n_frames=300, seed=0))
    lg = stn.train(stn.ToyNet(seed=0), data, LossWeights(), stn.TrainConfig(epochs=15))
    losses = np.array([r["train_total"] for r in lg.rows])
    ma = np.convolve(losses, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(ma) <= 1e-12), ma


def test_split_holdout():
    tr, ho = stn.split_holdout(100, 0.2, 0)
    assert len(ho) == 20 and not set(tr) & set(ho)
    tr, ho = stn.split_holdout(1, 0.2, 0)
    np.testing.assert_array_equal(tr, ho)


def test_empty_dataset_rejected(small_data):
    with pytest.raises(ValueError):
        stn.train(stn.ToyNet(), small_data.subset(slice(0, 0)), LossWeights(), stn.TrainConfig())


# ---------------------------------------------------------------- experiments


def test_experiments_require_three_seeds():
    cfg = stn.SynthConfig(n_frames=10)
    with pytest.raises(ValueError):
        stn.compare_representations(cfg, stn.TrainConfig(epochs=0), [0, 1])
    with pytest.raises(ValueError):
        stn.ablate_keypoint_head(cfg, stn.TrainConfig(epochs=0), [0, 1])


def test_compare_representations_table_shape():
    cfg = stn.SynthConfig(n_frames=20)
    t = stn.compare_representations(cfg, stn.TrainConfig(epochs=1), [0, 1, 2])
    assert len(t.rows) == 12
    assert {r["variant"] for r in t.rows} == set(stn.MODES)
    again = stn.compare_representations(cfg, stn.TrainConfig(epochs=1), [0, 1, 2])
    assert t.to_csv() == again.to_csv()


def test_ablation_runs_without_keypoint_loss():
    t = stn.ablate_keypoint_head(stn.SynthConfig(n_frames=20), stn.TrainConfig(epochs=1), [0, 1, 2])
    s = t.summary("acc_01d")
    assert set(s) == {"kp", "no-kp"}
    csv = stn.ablation_object_csv(t, "synthbox")
    lines = csv.splitlines()
    assert lines[0] == "object,with_kp,without_kp"
    assert lines[1].startswith("synthbox,") and lines[2].startswith("Average,")
    assert lines[1].split(",")[1] == f"{s['kp'][0]:.2f}"
