"""Pose losses: geodesic rotation, smooth-L1 depth, visibility-weighted keypoint
distance and CIoU, plus their weighted total.

The ``*_term`` functions operate on :class:`~posekit.diff.Var` inputs and are what
the trainer uses. The plain ``*_loss`` functions take arrays and return
``(value, grad)`` for a single prediction.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diff as ad
from .errors import InvalidBox, RangeError

N_KEYPOINTS = 9


@dataclass(frozen=True)
class LossWeights:
    # the keypoint term is in pixels, hence its smaller default
    lambda_r: float = 1.0
    lambda_t: float = 1.0
    lambda_kp: float = 0.1
    lambda_bb: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (v >= 0 and np.isfinite(v)):
                raise RangeError(f"{k} must be a nonnegative finite number, got {v}")

    def as_tuple(self):
        return (self.lambda_r, self.lambda_t, self.lambda_kp, self.lambda_bb)

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise RangeError(f"unknown loss weight keys {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


COMPONENTS = ("r", "t", "kp", "bb")


# ---------------------------------------------------------------- tape terms


def geodesic_term(r_pred, r_gt):
    """Mean geodesic angle between rotation stacks; ``r_pred`` is a Var."""
    cos = (ad.trace(ad.transpose(r_pred) @ r_gt) - 1.0) * 0.5
    return ad.mean(ad.arccos_clamped(cos))


def rotation_term(m, r_gt):
    """Geodesic loss of the SVD-projected raw 3x3 output(s)."""
    return geodesic_term(ad.svd_project(m), r_gt)


def translation_term(pred, gt, beta: float = 1.0):
    """Smooth L1 on the normalized depth scale.

    Scalars or a ``(B,)`` batch of scales; ``(B, k)`` inputs are summed over
    the last axis first. The result is averaged over the batch.
    """
    per = ad.smooth_l1(pred, gt, beta)
    if per.ndim >= 2:
        per = ad.vsum(per, axis=-1)
    return ad.mean(per)


def keypoint_weights(vis) -> tuple[np.ndarray, int]:
    """Per-instance weights ``N_kp / sum(vis)`` (0 where nothing is visible) and
    the effective batch size."""
    vis = np.asarray(vis, dtype=float)
    if np.any((vis != 0) & (vis != 1)):
        raise RangeError("visibility flags must be 0 or 1")
    count = vis.sum(axis=-1)
    w = np.where(count > 0, vis.shape[-1] / np.where(count > 0, count, 1.0), 0.0)
    return w, int(np.count_nonzero(count > 0))


def keypoint_term(pred, gt, vis):
    """Visibility-masked, count-renormalized l2 keypoint distance.

    ``pred``/``gt`` are ``(B, 9, 2)`` (or ``(9, 2)``), ``vis`` is ``(B, 9)``.
    Instances without visible keypoints contribute nothing and do not count
    towards the batch size.
    """
    vis = np.asarray(vis, dtype=float)
    if vis.shape[-1] != N_KEYPOINTS:
        raise RangeError(f"expected {N_KEYPOINTS} keypoints, got {vis.shape[-1]}")
    w, b_eff = keypoint_weights(vis)
    dist = ad.l2_distance(pred, gt)
    per = ad.vsum(dist * vis, axis=-1) * w
    return ad.scale(ad.vsum(per), 1.0 / max(b_eff, 1))


def _check_boxes(*boxes):
    for b in boxes:
        b = np.asarray(ad._val(b))
        if np.any(~(b[..., 2:] > 0)):
            raise InvalidBox(f"box width and height must be positive: {b}")


def _corners(box):
    cx, cy, w, h = (box[..., i] for i in range(4))
    return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2


def ciou_parts(pred, gt):
    """IoU, normalized center distance and aspect term for ``(cx, cy, w, h)`` boxes.

    Works on arrays or Vars (any mix).
    """
    px1, py1, px2, py2 = _corners(pred)
    gx1, gy1, gx2, gy2 = _corners(gt)
    iw = ad.maximum(ad.minimum(px2, gx2) - ad.maximum(px1, gx1), 0.0)
    ih = ad.maximum(ad.minimum(py2, gy2) - ad.maximum(py1, gy1), 0.0)
    inter = iw * ih
    union = pred[..., 2] * pred[..., 3] + gt[..., 2] * gt[..., 3] - inter
    iou = inter / union
    ew = ad.maximum(px2, gx2) - ad.minimum(px1, gx1)
    eh = ad.maximum(py2, gy2) - ad.minimum(py1, gy1)
    c2 = ew * ew + eh * eh
    dx = pred[..., 0] - gt[..., 0]
    dy = pred[..., 1] - gt[..., 1]
    rho = (dx * dx + dy * dy) / c2
    da = ad.arctan(gt[..., 2] / gt[..., 3]) - ad.arctan(pred[..., 2] / pred[..., 3])
    v = da * da * (4.0 / np.pi**2)
    return iou, rho, v


def ciou_alpha(iou, v) -> np.ndarray:
    iou, v = np.asarray(iou), np.asarray(v)
    denom = (1.0 - iou) + v
    return np.where(denom > 0, v / np.where(denom > 0, denom, 1.0), 0.0)


def ciou_term(pred, gt, alpha=None):
    """Mean CIoU loss; ``alpha`` is computed from current values and held constant."""
    _check_boxes(pred, gt)
    iou, rho, v = ciou_parts(pred, gt)
    if alpha is None:
        alpha = ciou_alpha(ad._val(iou), ad._val(v))
    per = 1.0 - iou + rho + v * alpha
    return ad.mean(per) if isinstance(per, ad.Var) else float(np.mean(per))


def total_term(components: dict, weights: LossWeights):
    lam = dict(zip(COMPONENTS, weights.as_tuple()))
    out = 0.0
    for k, v in components.items():
        if lam[k] != 0.0:
            out = out + v * lam[k]
    return out


# ---------------------------------------------------------------- array wrappers


def rotation_loss(pred9, r_gt) -> tuple[float, np.ndarray]:
    """Geodesic loss of ``svd_project_so3(pred9)``; gradient w.r.t. the 9 raw values."""
    pred9 = np.asarray(pred9, dtype=float)
    value, (g,) = ad.value_and_grad(lambda m: rotation_term(m.reshape(3, 3), np.asarray(r_gt)), pred9)
    return value, g


def translation_loss(pred_sigma, gt_sigma, beta: float = 1.0) -> tuple[float, np.ndarray]:
    value, (g,) = ad.value_and_grad(lambda p: translation_term(p, gt_sigma, beta), pred_sigma)
    return value, g


def keypoint_loss(pred, gt, vis) -> tuple[float, np.ndarray]:
    value, (g,) = ad.value_and_grad(lambda p: keypoint_term(p, np.asarray(gt, dtype=float), vis), pred)
    return value, g


def ciou_loss(pred, gt) -> tuple[float, np.ndarray]:
    """CIoU for ``(cx, cy, w, h)`` boxes; gradient w.r.t. ``pred`` with alpha held fixed."""
    gt = np.asarray(gt, dtype=float)
    value, (g,) = ad.value_and_grad(lambda p: ciou_term(p, gt), pred)
    return value, g


def total_loss(values: dict, weights: LossWeights) -> tuple[float, dict]:
    """Weighted sum of component values; the gradient w.r.t. each component is its weight."""
    lam = dict(zip(COMPONENTS, weights.as_tuple()))
    total = sum(lam[k] * float(v) for k, v in values.items())
    return total, {k: lam[k] for k in values}


@dataclass
class LossReport:
    components: dict
    total: float
    grads: dict | None = None
