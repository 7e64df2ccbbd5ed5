"""Decode raw per-detection head outputs into 6D poses, then filter and suppress."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import DegenerateMatrix, PoseKitError

log = logging.getLogger(__name__)

N_KP = 9
# score, box(4), rot9(9), depth_logit, center(2), kps(9 x (u, v, vis_logit))
RAW_WIDTH = 1 + 4 + 9 + 1 + 2 + 3 * N_KP

DEFAULT_SCORE_THRESHOLD = 0.25
DEFAULT_IOU_THRESHOLD = 0.65


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


@dataclass
class RawDetection:
    score: float
    box: np.ndarray
    rot9: np.ndarray
    depth_logit: float
    center: np.ndarray
    kps: np.ndarray

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=float).reshape(4)
        self.rot9 = np.asarray(self.rot9, dtype=float).reshape(9)
        self.center = np.asarray(self.center, dtype=float).reshape(2)
        self.kps = np.asarray(self.kps, dtype=float).reshape(N_KP, 3)
        self.score = float(self.score)
        self.depth_logit = float(self.depth_logit)

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [[self.score], self.box, self.rot9, [self.depth_logit], self.center, self.kps.ravel()]
        )

    @classmethod
    def from_vector(cls, v) -> "RawDetection":
        v = np.asarray(v, dtype=float)
        if v.shape != (RAW_WIDTH,):
            raise PoseKitError(f"raw detection needs {RAW_WIDTH} values, got {v.shape}")
        return cls(v[0], v[1:5], v[5:14], v[14], v[15:17], v[17:])

    def to_dict(self) -> dict:
        return {
            "score": self.score, "box": self.box.tolist(), "rot9": self.rot9.tolist(),
            "depth_logit": self.depth_logit, "center": self.center.tolist(), "kps": self.kps.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RawDetection":
        return cls(d["score"], d["box"], d["rot9"], d["depth_logit"], d["center"], d["kps"])


@dataclass
class Detection6D:
    pose: geo.Pose
    score: float
    box: np.ndarray
    keypoints: np.ndarray
    visible: np.ndarray


def decode_one(raw: RawDetection, cam: geo.CameraModel) -> Detection6D:
    """Activations, depth range mapping, backprojection and SVD projection.

    The pose uses only the rotation, depth and center outputs; keypoints are
    passed through for diagnostics.
    """
    for name in ("box", "rot9", "center", "kps"):
        if not np.all(np.isfinite(getattr(raw, name))):
            raise PoseKitError(f"non-finite {name} in raw detection")
    sigma = float(sigmoid(raw.depth_logit))
    tz = geo.depth_decode(sigma, cam)
    t = geo.backproject_center(cam, raw.center[0], raw.center[1], tz)
    r = geo.svd_project_so3(raw.rot9.reshape(3, 3))
    return Detection6D(
        geo.Pose(r, t),
        float(sigmoid(raw.score)),
        raw.box.copy(),
        raw.kps[:, :2].copy(),
        sigmoid(raw.kps[:, 2]) > 0.5,
    )


def encode_pose(pose: geo.Pose, cam: geo.CameraModel, score: float = 0.99, box=None) -> RawDetection:
    """Inverse of :func:`decode_one` for a known pose (used for round-trip tests)."""
    sigma = geo.depth_encode(pose.t[2], cam)
    uv, _ = geo.project_point(cam, geo.Pose(np.eye(3), pose.t), np.zeros(3))
    box = np.array([uv[0], uv[1], 10.0, 10.0]) if box is None else box
    kps = np.zeros((N_KP, 3))
    return RawDetection(float(logit(score)), box, pose.R.ravel(), float(logit(sigma)), uv, kps)


def box_iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx1, by1, bx2, by2 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def _order_key(det):
    return (-det.score, det.box[0], det.box[1])


def nms(dets: list[Detection6D], iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> list[Detection6D]:
    """Greedy suppression by descending score, ties broken by box cx then cy."""
    if not 0 < iou_threshold < 1:
        raise PoseKitError("iou_threshold must lie in (0, 1)")
    kept: list[Detection6D] = []
    for det in sorted(dets, key=_order_key):
        if all(box_iou(det.box, k.box) <= iou_threshold for k in kept):
            kept.append(det)
    return kept


def batch_decode(
    raws,
    cam: geo.CameraModel,
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    counter: Counter | None = None,
) -> list[Detection6D]:
    """Score filter, decode, NMS. Degenerate rotations are dropped and counted."""
    counter = Counter() if counter is None else counter
    decoded = []
    for raw in raws:
        if sigmoid(raw.score) < score_threshold:
            counter["below_threshold"] += 1
            continue
        try:
            decoded.append(decode_one(raw, cam))
        except DegenerateMatrix:
            counter["dropped_degenerate"] += 1
            log.warning("dropping detection with degenerate rotation output")
    out = nms(decoded, iou_threshold)
    counter["suppressed"] += len(decoded) - len(out)
    counter["kept"] += len(out)
    return out


# ---------------------------------------------------------------- I/O


def read_raw_jsonl(path) -> list[RawDetection]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(RawDetection.from_dict(json.loads(line)))
                except (KeyError, ValueError) as e:
                    raise PoseKitError(f"{path}:{lineno}: bad raw detection ({e})") from e
    return out


def write_raw_jsonl(path, raws) -> None:
    with open(path, "w") as fh:
        for r in raws:
            fh.write(json.dumps(r.to_dict()) + "\n")


def read_raw_binary(path) -> list[RawDetection]:
    """Flat little-endian float32 records of ``RAW_WIDTH`` values each."""
    data = np.fromfile(Path(path), dtype="<f4")
    if data.size % RAW_WIDTH:
        raise PoseKitError(f"{path}: size {data.size} is not a multiple of {RAW_WIDTH}")
    return [RawDetection.from_vector(row.astype(float)) for row in data.reshape(-1, RAW_WIDTH)]


def write_raw_binary(path, raws) -> None:
    np.stack([r.to_vector() for r in raws]).astype("<f4").tofile(Path(path))


def read_raw(path) -> list[RawDetection]:
    path = Path(path)
    return read_raw_binary(path) if path.suffix in (".bin", ".f32") else read_raw_jsonl(path)


def detection_to_dict(det: Detection6D) -> dict:
    return {
        **det.pose.to_dict(),
        "score": det.score,
        "box": det.box.tolist(),
        "keypoints": det.keypoints.tolist(),
        "visible": det.visible.astype(int).tolist(),
    }
