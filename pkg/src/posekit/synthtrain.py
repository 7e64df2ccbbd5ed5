"""Synthetic pose data and a small numpy regressor trained through the full loss stack.

The regressor sees noisy projected box keypoints (not pixels) and predicts a
rotation in one of four parameterizations, the normalized depth, the object
center, a 2D box and optionally the 9 keypoints. It exists to exercise the
losses and the SVD gradient path end to end, compare rotation
representations, and ablate the auxiliary keypoint head.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import diff as ad
from . import geometry as geo
from . import losses
from .evalkit import ObjectModel
from .losses import LossWeights

log = logging.getLogger(__name__)

ROT_DIMS = {"svd9": 9, "gso6": 6, "quat": 4, "euler": 3}
MODES = tuple(ROT_DIMS)
N_KP = 9
# box width/height are BOX_SCALE * s * exp(raw), s being the keypoint RMS spread
BOX_SCALE = 2.5
CLIP_NORM = 10.0
CENTER_UNIT = 1.0


def default_object_model(seed: int = 0, n: int = 500) -> ObjectModel:
    """A 10 x 8 x 6 cm box sampled on its surface, point-symmetric about the origin."""
    rng = np.random.default_rng(seed)
    half = np.array([0.05, 0.04, 0.03])
    pts = rng.uniform(-1.0, 1.0, size=(n // 2, 3))
    axis = rng.integers(0, 3, size=n // 2)
    pts[np.arange(n // 2), axis] = np.sign(pts[np.arange(n // 2), axis])
    pts = pts * half
    corners = geo.CORNER_SIGNS * half
    return ObjectModel.from_points(np.vstack([corners, pts, -pts]), name="synthbox")


@dataclass
class SynthConfig:
    cam: geo.CameraModel = geo.DEFAULT_CAMERA
    model: ObjectModel = field(default_factory=default_object_model)
    n_frames: int = 2000
    noise_px: float = 0.0
    occlusion: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_px < 0:
            raise ValueError("noise_px must be >= 0")
        if not 0 <= self.occlusion <= 1:
            raise ValueError("occlusion must lie in [0, 1]")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")


@dataclass
class SynthDataset:
    features: np.ndarray  # (N, 27): normalized u, v (zeroed if hidden) and visibility
    R: np.ndarray
    t: np.ndarray
    sigma: np.ndarray
    center: np.ndarray  # pixels
    keypoints: np.ndarray  # (N, 9, 2) exact projections, pixels
    visible: np.ndarray  # (N, 9) label visibility: projection inside the image
    box: np.ndarray  # (N, 4) cx, cy, w, h of the keypoint hull
    observed: np.ndarray  # (N, 9) which keypoints survived simulated occlusion in the input

    def __len__(self):
        return len(self.features)

    def subset(self, idx) -> "SynthDataset":
        return SynthDataset(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))

    def __iter__(self):
        for i in range(len(self)):
            yield self.features[i], {
                "R": self.R[i], "t": self.t[i], "sigma": self.sigma[i], "center": self.center[i],
                "keypoints": self.keypoints[i], "visible": self.visible[i], "box": self.box[i],
                "observed": self.observed[i],
            }

    def to_jsonl(self) -> str:
        lines = []
        for feat, lab in self:
            row = {"features": feat.tolist(), **{k: np.asarray(v).tolist() for k, v in lab.items()}}
            lines.append(json.dumps(row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "SynthDataset":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        keys = ["features", "R", "t", "sigma", "center", "keypoints", "visible", "box", "observed"]
        return cls(*(np.array([r[k] for r in rows], dtype=float) for k in keys))


def _project_batch(cam, R, t, pts):
    xc = np.einsum("nij,kj->nki", R, pts) + t[:, None, :]
    u = cam.fx * xc[..., 0] / xc[..., 2] + cam.cx
    v = cam.fy * xc[..., 1] / xc[..., 2] + cam.cy
    return np.stack([u, v], axis=-1)


def _hull_boxes(kps):
    lo, hi = kps.min(axis=1), kps.max(axis=1)
    return np.concatenate([(lo + hi) / 2, hi - lo], axis=1)


def normalize_pixels(cam, uv):
    uv = np.asarray(uv, dtype=float)
    return np.stack([(uv[..., 0] - cam.cx) / cam.fx, (uv[..., 1] - cam.cy) / cam.fy], axis=-1)


def generate_dataset(cfg: SynthConfig) -> SynthDataset:
    """Uniform rotations, depth uniform in the camera range, center in the inner 80% of the image.

    Occlusion hides keypoints from the input features only. Box corners are
    virtual points whose labels come from the pose, so a keypoint label is
    visible whenever its projection falls inside the image.
    """
    cam, n = cfg.cam, cfg.n_frames
    rng = np.random.default_rng(cfg.seed)
    R = geo.random_rotation(rng, n)
    tz = rng.uniform(cam.dist_min, cam.dist_max, size=n)
    center = np.column_stack(
        [rng.uniform(0.1 * cam.width, 0.9 * cam.width, n), rng.uniform(0.1 * cam.height, 0.9 * cam.height, n)]
    )
    t = geo.backproject_center(cam, center[:, 0], center[:, 1], tz)
    kps = _project_batch(cam, R, t, geo.bbox9_points(cfg.model.points))
    noisy = kps + rng.normal(0.0, 1.0, size=kps.shape) * cfg.noise_px
    observed = (rng.random((n, N_KP)) >= cfg.occlusion).astype(float)
    feat_uv = normalize_pixels(cam, noisy) * observed[..., None]
    features = np.concatenate([feat_uv.reshape(n, -1), observed], axis=1)
    sigma = geo.depth_encode(tz, cam)
    inside = (kps[..., 0] >= 0) & (kps[..., 0] < cam.width) & (kps[..., 1] >= 0) & (kps[..., 1] < cam.height)
    return SynthDataset(
        features, R, t, np.asarray(sigma), center, kps, inside.astype(float), _hull_boxes(kps), observed
    )


# ---------------------------------------------------------------- network


def _cross(a, b):
    return ad.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def _normalize(a):
    return a / ad.sqrt(ad.vsum(a * a, axis=-1, keepdims=True) + 1e-12)


def gso_head(raw):
    """Gram-Schmidt on two 3-vectors, offset so a zero output is the identity."""
    a = raw[..., 0:3] + np.array([1.0, 0.0, 0.0])
    b = raw[..., 3:6] + np.array([0.0, 1.0, 0.0])
    c1 = _normalize(a)
    c2 = _normalize(b - c1 * ad.vsum(b * c1, axis=-1, keepdims=True))
    return ad.stack([c1, c2, _cross(c1, c2)], axis=-1)


def quat_head(raw):
    q = _normalize(raw + np.array([1.0, 0.0, 0.0, 0.0]))
    w, x, y, z = (q[..., i] for i in range(4))
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return ad.stack([ad.stack(r, axis=-1) for r in rows], axis=-2)


def euler_head(raw):
    """Z-Y-X Euler angles: Rz(yaw) Ry(pitch) Rx(roll)."""
    cy, sy = ad.cos(raw[..., 0]), ad.sin(raw[..., 0])
    cp, sp = ad.cos(raw[..., 1]), ad.sin(raw[..., 1])
    cr, sr = ad.cos(raw[..., 2]), ad.sin(raw[..., 2])
    rows = [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-1.0 * sp, cp * sr, cp * cr],
    ]
    return ad.stack([ad.stack(r, axis=-1) for r in rows], axis=-2)


def svd9_matrix(raw):
    """Raw 9 outputs as a 3x3 matrix, offset by the identity."""
    return ad.reshape(raw, raw.shape[:-1] + (3, 3)) + np.eye(3)


def rotation_from_head(mode: str, raw, differentiable: bool = True):
    if mode == "svd9":
        m = svd9_matrix(raw)
        if differentiable:
            return ad.svd_project(m)
        return geo.svd_project_so3(ad._val(m))
    return {"gso6": gso_head, "quat": quat_head, "euler": euler_head}[mode](raw)


def embed_features(features: np.ndarray):
    """Fixed input normalization: keypoints relative to the mean visible keypoint,
    divided by their RMS spread.

    Returns ``(x, c, s)``: the ``(N, 31)`` network input (18 relative coordinates,
    9 visibilities, the 2D reference point ``c``, ``log s`` and ``1 / s``), plus ``c`` and
    ``s`` in normalized image units for decoding.
    """
    f = np.atleast_2d(features)
    uv = f[:, : 2 * N_KP].reshape(-1, N_KP, 2)
    vis = f[:, 2 * N_KP :]
    count = vis.sum(axis=1)
    safe = np.maximum(count, 1.0)
    c = (uv * vis[..., None]).sum(axis=1) / safe[:, None]
    rel = (uv - c[:, None, :]) * vis[..., None]
    s = np.sqrt((rel**2).sum(axis=(1, 2)) / safe)
    s = np.where(count > 1, np.maximum(s, 1e-4), 0.05)
    x = np.concatenate(
        [(rel / s[:, None, None]).reshape(len(f), -1), vis, c, np.log(s)[:, None], 1.0 / s[:, None]], axis=1
    )
    return x, c, s


@dataclass
class ToyNet:
    mode: str = "svd9"
    hidden: tuple = (64, 64)
    keypoint_head: bool = True
    n_in: int = 3 * N_KP + 4
    seed: int = 0
    weights: list = field(default_factory=list)
    # input standardization, fitted on the training split by ``fit_inputs``
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    activation: str = "tanh"

    def __post_init__(self):
        if self.mode not in ROT_DIMS:
            raise ValueError(f"unknown rotation mode {self.mode!r}")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.weights:
            self.weights = self._init()

    def blocks(self):
        """Output blocks in order. Box outputs are extra so the CIoU term has something to
        supervise; keypoints carry (u, v, visibility logit) each."""
        b = [("rot", ROT_DIMS[self.mode]), ("sigma", 1), ("center", 2), ("box", 4)]
        if self.keypoint_head:
            b.append(("kps", 3 * N_KP))
        return b

    @property
    def n_out(self) -> int:
        return sum(w for _, w in self.blocks())

    def _init(self):
        """Uniform in +-1/sqrt(fan_in). Trunk and head come from separate streams; each head
        block uses a fixed slice of a full-width draw, so modes and ablation variants share
        every parameter they have in common."""
        trunk_rng = np.random.default_rng([self.seed, 0])
        head_rng = np.random.default_rng([self.seed, 1])
        weights, fan_in = [], self.n_in
        for width in self.hidden:
            k = 1.0 / math.sqrt(fan_in)
            weights.append([trunk_rng.uniform(-k, k, (fan_in, width)), trunk_rng.uniform(-k, k, width)])
            fan_in = width
        k = 1.0 / math.sqrt(fan_in)
        present = dict(self.blocks())
        W_cols, b_cols = [], []
        for name, width in (("rot", 9), ("sigma", 1), ("center", 2), ("box", 4), ("kps", 3 * N_KP)):
            Wb = head_rng.uniform(-k, k, (fan_in, width))
            bb = head_rng.uniform(-k, k, width)
            if name in present:
                W_cols.append(Wb[:, : present[name]])
                b_cols.append(bb[: present[name]])
        weights.append([np.concatenate(W_cols, axis=1), np.concatenate(b_cols)])
        return weights

    def fit_inputs(self, features: np.ndarray) -> None:
        x, _, _ = embed_features(features)
        self.x_mean = x.mean(axis=0)
        std = x.std(axis=0)
        self.x_std = np.where(std > 1e-8, std, 1.0)

    def forward(self, params, x):
        """Raw outputs split into named blocks; ``params`` may be Vars or arrays."""
        h = x
        act = ad.tanh if self.activation == "tanh" else ad.relu
        if self.x_mean is not None:
            h = (x - self.x_mean) / self.x_std
        for W, b in params[:-1]:
            h = act(h @ W + b)
        W, b = params[-1]
        out = h @ W + b
        blocks, lo = {}, 0
        for name, width in self.blocks():
            blocks[name] = out[:, lo : lo + width]
            lo += width
        return blocks


def _decode_outputs(net, blocks, c, s, cam, differentiable=True):
    """Rotation, sigma, center offset (object-scale units), pixel box and pixel keypoints.

    Center, box and keypoints are predicted in the frame of the input
    normalization and mapped back to pixels with the constants ``c`` and ``s``.
    """
    f = np.array([cam.fx, cam.fy])
    pp = np.array([cam.cx, cam.cy])
    out = {
        "R": rotation_from_head(net.mode, blocks["rot"], differentiable),
        "sigma": ad.sigmoid(blocks["sigma"][:, 0]),
        "center_s": blocks["center"],
        "center_px": (blocks["center"] * s[:, None] + c) * f + pp,
    }
    bx = blocks["box"]
    s_col = s[:, None]
    xy = (bx[:, 0:2] * s_col + c) * f + pp
    wh = ad.exp(bx[:, 2:4]) * (s_col * f * BOX_SCALE)
    out["box"] = ad.concat([xy, wh], axis=-1)
    if "kps" in blocks:
        k = ad.reshape(blocks["kps"], (-1, N_KP, 3))
        out["kps_s"] = k[..., 0:2]
        out["kps"] = (k[..., 0:2] * s[:, None, None] + c[:, None, :]) * f + pp
    return out


def center_offset(cam, center_px, c, s):
    """Label for the center head: offset from ``c`` in units of ``s``."""
    return (normalize_pixels(cam, center_px) - c) / s[:, None]


def keypoint_offsets(cam, kps_px, c, s):
    """Keypoint labels in the same object-scale frame as the keypoint head."""
    return (normalize_pixels(cam, kps_px) - c[:, None, :]) / s[:, None, None]


def loss_components(net, params, data: SynthDataset, cam, differentiable=True):
    """Returns ``(components, decoded, n_skipped)``; components are Vars when ``params`` are."""
    x, c, s = embed_features(data.features)
    blocks = net.forward(params, x)
    skipped = 0
    rows = np.arange(len(data))
    if net.mode == "svd9" and differentiable:
        good = ad.svd_gap_ok(ad._val(svd9_matrix(blocks["rot"])))
        skipped = int(np.count_nonzero(~good))
        if skipped:
            rows = np.flatnonzero(good)
            blocks["rot"] = blocks["rot"][rows]
    dec = _decode_outputs(net, blocks, c, s, cam, differentiable)
    comps = {}
    if len(rows):
        comps["r"] = losses.geodesic_term(dec["R"], data.R[rows])
    pred_t = ad.concat([ad.reshape(dec["sigma"], (-1, 1)), dec["center_s"] * CENTER_UNIT], axis=-1)
    gt_t = np.column_stack([data.sigma, center_offset(cam, data.center, c, s) * CENTER_UNIT])
    comps["t"] = losses.translation_term(pred_t, gt_t)
    comps["bb"] = losses.ciou_term(dec["box"], data.box)
    if "kps" in dec:
        # distances in units of the apparent object size, not pixels, so the
        # auxiliary term stays on the scale of the pose terms
        comps["kp"] = losses.keypoint_term(dec["kps_s"], keypoint_offsets(cam, data.keypoints, c, s), data.visible)
    return comps, dec, skipped


# ---------------------------------------------------------------- evaluation


def predict_poses(net, params, data: SynthDataset, cam):
    x, c, s = embed_features(data.features)
    dec = _decode_outputs(net, net.forward(params, x), c, s, cam, differentiable=False)
    tz = geo.depth_decode(np.clip(dec["sigma"], 0.0, 1.0), cam)
    center = (c + dec["center_s"] * s[:, None]) * np.array([cam.fx, cam.fy]) + np.array([cam.cx, cam.cy])
    t = geo.backproject_center(cam, center[:, 0], center[:, 1], tz)
    return dec["R"], t


def add_batch(model: ObjectModel, R_gt, t_gt, R_pred, t_pred) -> np.ndarray:
    pts = model.eval_points
    a = np.einsum("nij,kj->nki", R_gt, pts) + t_gt[:, None, :]
    b = np.einsum("nij,kj->nki", R_pred, pts) + t_pred[:, None, :]
    if model.symmetric:
        from .evalkit import adds_metric

        return np.array([
            adds_metric(model, geo.Pose(R_gt[i], t_gt[i]), geo.Pose(R_pred[i], t_pred[i]))
            for i in range(len(R_gt))
        ])
    return np.linalg.norm(a - b, axis=-1).mean(axis=1)


def evaluate(net, params, data: SynthDataset, cam, model: ObjectModel, weights: LossWeights) -> dict:
    R, t = predict_poses(net, params, data, cam)
    comps, _, _ = loss_components(net, params, data, cam, differentiable=False)
    add = add_batch(model, data.R, data.t, R, t)
    row = {
        "geodesic_deg": float(np.degrees(np.mean(geo.geodesic_distance(R, data.R)))),
        "trans_m": float(np.mean(np.linalg.norm(t - data.t, axis=1))),
        "acc_01d": float(100.0 * np.mean(add < 0.1 * model.diameter)),
    }
    for k in losses.COMPONENTS:
        row[f"loss_{k}"] = float(comps[k]) if k in comps else 0.0
    row["total"] = float(losses.total_term(comps, weights))
    return row


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 60
    lr: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 16
    holdout: float = 0.2
    schedule: str = "cosine"  # or "constant"
    seed: int = 0


LOG_COLUMNS = [
    "epoch", "geodesic_deg", "trans_m", "loss_r", "loss_t", "loss_kp", "loss_bb", "total",
    "acc_01d", "train_total", "skipped", "clipped",
]


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    skipped: int = 0
    clipped: int = 0
    params: list | None = None

    @property
    def final(self) -> dict:
        return self.rows[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, LOG_COLUMNS, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()


def split_holdout(n: int, frac: float, seed: int):
    """Deterministic train/held-out split; tiny sets are evaluated on themselves."""
    idx = np.random.default_rng([seed, 2]).permutation(n)
    n_hold = int(round(n * frac))
    if n < 5 or n_hold == 0:
        return idx, idx
    return idx[n_hold:], idx[:n_hold]


def train(
    net: ToyNet,
    data: SynthDataset,
    weights: LossWeights,
    cfg: TrainConfig,
    cam: geo.CameraModel = geo.DEFAULT_CAMERA,
    model: ObjectModel | None = None,
) -> TrainLog:
    """Mini-batch gradient descent with momentum on the weighted total loss.

    Logs held-out metrics before training (epoch 0) and after every epoch.
    Samples whose SVD is too close to degenerate are left out of the rotation
    term and counted; the global gradient norm is clipped at 10.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    model = model or default_object_model()
    train_idx, hold_idx = split_holdout(len(data), cfg.holdout, cfg.seed)
    train_set, hold_set = data.subset(train_idx), data.subset(hold_idx)
    if net.x_mean is None:
        net.fit_inputs(train_set.features)
    rng = np.random.default_rng([cfg.seed, 3])
    params = [[W.copy(), b.copy()] for W, b in net.weights]
    velocity = [[np.zeros_like(W), np.zeros_like(b)] for W, b in params]
    logbook = TrainLog()
    n_batches = max(1, math.ceil(len(train_set) / cfg.batch_size))
    total_steps = cfg.epochs * n_batches

    def record(epoch, train_total):
        row = {"epoch": epoch, **evaluate(net, params, hold_set, cam, model, weights)}
        row.update(train_total=train_total, skipped=logbook.skipped, clipped=logbook.clipped)
        logbook.rows.append(row)

    init_comps, _, _ = loss_components(net, params, train_set, cam, differentiable=False)
    record(0, float(losses.total_term(init_comps, weights)))
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        for bi in range(n_batches):
            batch = train_set.subset(order[bi * cfg.batch_size : (bi + 1) * cfg.batch_size])
            tape = ad.Tape()
            leaves = [[tape.var(W), tape.var(b)] for W, b in params]
            comps, _, skipped = loss_components(net, leaves, batch, cam)
            logbook.skipped += skipped
            total = losses.total_term(comps, weights)
            if not isinstance(total, ad.Var):
                continue
            epoch_loss += float(total.value)
            grads = ad.backward(tape, total)
            g = [[grads[W], grads[b]] for W, b in leaves]
            norm = math.sqrt(sum(float((x * x).sum()) for pair in g for x in pair))
            if not math.isfinite(norm):
                log.warning("non-finite gradient at step %d; skipping update", step)
                continue
            if norm > CLIP_NORM:
                logbook.clipped += 1
                g = [[x * (CLIP_NORM / norm) for x in pair] for pair in g]
            lr = cfg.lr
            if cfg.schedule == "cosine":
                lr = 0.5 * cfg.lr * (1.0 + math.cos(math.pi * step / total_steps))
            for p, v, gp in zip(params, velocity, g):
                for i in range(2):
                    v[i] = cfg.momentum * v[i] + gp[i]
                    p[i] = p[i] - lr * v[i]
            step += 1
        record(epoch, epoch_loss / n_batches)
    logbook.params = params
    return logbook


# ---------------------------------------------------------------- experiments


def _summary(values):
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0


@dataclass
class ExperimentTable:
    rows: list  # dicts with variant, seed and metrics
    columns: list

    def summary(self, key: str, by: str = "variant") -> dict:
        out = {}
        for r in self.rows:
            out.setdefault(r[by], []).append(r[key])
        return {k: _summary(v) for k, v in out.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, self.columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()


def compare_representations(
    cfg: SynthConfig,
    train_cfg: TrainConfig,
    seeds,
    weights: LossWeights = LossWeights(),
    modes=MODES,
) -> ExperimentTable:
    """Identical data, trunk and shared head initialization; only the rotation head differs.

    The keypoint head is left off: it does not interact with the rotation
    parameterization and would only add run time.
    """
    seeds = list(seeds)
    if len(seeds) < 3:
        raise ValueError("need at least 3 seeds")
    rows = []
    for seed in seeds:
        data = generate_dataset(replace(cfg, seed=seed))
        for mode in modes:
            net = ToyNet(mode=mode, keypoint_head=False, seed=seed)
            lg = train(net, data, weights, replace(train_cfg, seed=seed), cfg.cam, cfg.model)
            f = lg.final
            rows.append({"variant": mode, "seed": seed, "geodesic_deg": f["geodesic_deg"],
                         "trans_m": f["trans_m"], "acc_01d": f["acc_01d"], "skipped": lg.skipped})
    return ExperimentTable(rows, ["variant", "seed", "geodesic_deg", "trans_m", "acc_01d", "skipped"])


def ablate_keypoint_head(
    cfg: SynthConfig,
    train_cfg: TrainConfig,
    seeds,
    weights: LossWeights = LossWeights(),
    mode: str = "svd9",
) -> ExperimentTable:
    """Keypoint head with ``lambda_kp > 0`` versus no keypoint head (``lambda_kp = 0``)."""
    seeds = list(seeds)
    if len(seeds) < 3:
        raise ValueError("need at least 3 seeds")
    if weights.lambda_kp <= 0:
        raise ValueError("the keypoint variant needs lambda_kp > 0")
    rows = []
    for seed in seeds:
        data = generate_dataset(replace(cfg, seed=seed))
        for variant, head, w in (("kp", True, weights), ("no-kp", False, replace(weights, lambda_kp=0.0))):
            net = ToyNet(mode=mode, keypoint_head=head, seed=seed)
            lg = train(net, data, w, replace(train_cfg, seed=seed), cfg.cam, cfg.model)
            f = lg.final
            rows.append({"variant": variant, "seed": seed, "acc_01d": f["acc_01d"],
                         "geodesic_deg": f["geodesic_deg"], "trans_m": f["trans_m"]})
    return ExperimentTable(rows, ["variant", "seed", "acc_01d", "geodesic_deg", "trans_m"])


def ablation_object_csv(table: ExperimentTable, object_name: str) -> str:
    """Per-object comparison in the layout of a with/without-keypoint-head table."""
    s = table.summary("acc_01d")
    kp, nokp = s["kp"][0], s["no-kp"][0]
    return (
        "object,with_kp,without_kp\n"
        f"{object_name},{kp:.2f},{nokp:.2f}\n"
        f"Average,{kp:.2f},{nokp:.2f}\n"
    )
