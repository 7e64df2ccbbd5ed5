"""Analytic-vs-central-difference gradient checks for every differentiable loss.

Each check draws well-conditioned random inputs, differentiates through the
tape, and compares against central differences (h = 1e-5) of an independent
mpmath implementation of the same function.
"""
from __future__ import annotations

import math

import mpmath as mp
import numpy as np

from . import diff as ad
from . import geometry as geo
from . import losses
from .diff import GradCheckReport, central_difference, relative_error

H = 1e-5
DPS = 30


def mp_central_difference(f, x, h: float = H, dps: int = DPS, indices=None) -> np.ndarray:
    """Central differences with ``f`` evaluated in ``dps``-digit arithmetic.

    Only the flat ``indices`` given (default: all) are computed; the rest are NaN.
    """
    x = np.asarray(x, dtype=float)
    out = np.full(x.size, np.nan)
    with mp.workdps(dps):
        base = [mp.mpf(float(v)) for v in x.ravel()]
        hh = mp.mpf(h)
        for i in range(x.size) if indices is None else indices:
            xp, xm = list(base), list(base)
            xp[i] += hh
            xm[i] -= hh
            fp = f(np.array(xp, dtype=object).reshape(x.shape))
            fm = f(np.array(xm, dtype=object).reshape(x.shape))
            out[i] = float((fp - fm) / (2 * hh))
    return out.reshape(x.shape)


def checked_difference(f, f_mp, x, h: float = H, rtol: float = 1e-7) -> np.ndarray:
    """Central differences, escalating to extended precision where round-off could matter.

    Double-precision differencing carries an absolute error of roughly
    ``eps * |f| / h``; entries where that bound exceeds ``rtol`` relative to the
    estimate are recomputed with ``f_mp`` in 30-digit arithmetic.
    """
    x = np.asarray(x, dtype=float)
    num = central_difference(f, x, h)
    noise = 8 * np.finfo(float).eps * max(1.0, abs(float(f(x)))) / h
    suspect = np.flatnonzero(noise / np.maximum(1e-8, np.abs(num)).ravel() > rtol)
    if suspect.size:
        hi = mp_central_difference(f_mp, x, h, indices=suspect)
        num = num.copy()
        num.ravel()[suspect] = hi.ravel()[suspect]
    return num


def _mp_project(m):
    u, _, v = mp.svd_r(mp.matrix(m.tolist()))
    d = mp.sign(mp.det(u * v))
    return u * mp.diag([1, 1, d]) * v


def _mp_geodesic(r, r_gt):
    tr = sum(r[i, j] * r_gt[i][j] for i in range(3) for j in range(3))
    c = (tr - 1) / 2
    return mp.acos(max(-1, min(1, c)))


def _well_conditioned_matrix(rng, r_gt):
    # angle to r_gt kept away from 0 and pi where arccos is singular
    while True:
        m = geo.random_rotation(rng) + 0.4 * rng.standard_normal((3, 3))
        s = np.linalg.svd(m, compute_uv=False)
        if s[2] < 0.2 or not ad.svd_gap_ok(m, 0.2):
            continue
        ang = geo.geodesic_distance(geo.svd_project_so3(m), r_gt)
        if 0.2 < ang < math.pi - 0.2:
            return m


def _check_rotation(rng):
    r_gt = geo.random_rotation(rng)
    m = _well_conditioned_matrix(rng, r_gt)
    _, g = losses.rotation_loss(m.ravel(), r_gt)
    num = checked_difference(
        lambda x: geo.geodesic_distance(geo.svd_project_so3(x), r_gt),
        lambda x: _mp_geodesic(_mp_project(x.reshape(3, 3)), r_gt.tolist()),
        m.ravel(),
    )
    return relative_error(g, num)


def _check_svd_project(rng):
    m = _well_conditioned_matrix(rng, np.eye(3))
    w = rng.standard_normal((3, 3))
    _, (g,) = ad.value_and_grad(lambda x: ad.vsum(ad.svd_project(x) * w), m)

    def ref_mp(x):
        r = _mp_project(x)
        return sum(r[i, j] * w[i, j] for i in range(3) for j in range(3))

    num = checked_difference(lambda x: float(np.sum(geo.svd_project_so3(x) * w)), ref_mp, m)
    return relative_error(g, num)


def _smooth_l1_ref(d, beta=1.0):
    d = abs(d)
    return d * d / (2 * beta) if d < beta else d - beta / 2


def _check_translation(rng):
    # stay clear of the |d| = beta kink
    while True:
        pred, gt = rng.uniform(-1.5, 2.5, size=2)
        if abs(abs(pred - gt) - 1.0) > 1e-3:
            break
    _, g = losses.translation_loss(pred, gt)
    num = checked_difference(
        lambda x: _smooth_l1_ref(float(x) - gt),
        lambda x: _smooth_l1_ref(x[()] - mp.mpf(float(gt)), mp.mpf(1)),
        np.array(pred),
    )
    return relative_error(g, num)


def _keypoint_ref(pred, gt, vis, sqrt=math.sqrt):
    total, count = 0, 0
    for p, q, v in zip(pred, gt, vis):
        nv = int(v.sum())
        if nv == 0:
            continue
        count += 1
        dist = sum(sqrt((pi[0] - qi[0]) ** 2 + (pi[1] - qi[1]) ** 2) for pi, qi, vi in zip(p, q, v) if vi)
        total += len(v) * dist / nv
    return total / max(count, 1)


def _check_keypoint(rng):
    b = 4
    gt = rng.uniform(0, 640, size=(b, 9, 2))
    pred = gt + rng.normal(0, 5, size=(b, 9, 2))
    vis = (rng.random((b, 9)) > 0.3).astype(float)
    vis[0] = 0.0
    _, g = losses.keypoint_loss(pred, gt, vis)
    gt_mp = [[[mp.mpf(float(c)) for c in kp] for kp in inst] for inst in gt]
    num = checked_difference(
        lambda x: _keypoint_ref(x, gt, vis),
        lambda x: _keypoint_ref(x, gt_mp, vis, mp.sqrt),
        pred,
    )
    return relative_error(g, num)


def _ciou_ref(p, q, alpha, m=math):
    """CIoU with a frozen alpha; ``m`` supplies atan/pi (``math`` or ``mpmath``)."""
    px1, py1, px2, py2 = p[0] - p[2] / 2, p[1] - p[3] / 2, p[0] + p[2] / 2, p[1] + p[3] / 2
    qx1, qy1, qx2, qy2 = q[0] - q[2] / 2, q[1] - q[3] / 2, q[0] + q[2] / 2, q[1] + q[3] / 2
    iw = max(min(px2, qx2) - max(px1, qx1), 0)
    ih = max(min(py2, qy2) - max(py1, qy1), 0)
    inter = iw * ih
    iou = inter / (p[2] * p[3] + q[2] * q[3] - inter)
    c2 = (max(px2, qx2) - min(px1, qx1)) ** 2 + (max(py2, qy2) - min(py1, qy1)) ** 2
    rho2 = (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2
    v = 4 / m.pi**2 * (m.atan(q[2] / q[3]) - m.atan(p[2] / p[3])) ** 2
    return 1 - iou + rho2 / c2 + alpha * v, iou, v


def _box_kinks(p, q, margin):
    edges_p = [p[0] - p[2] / 2, p[0] + p[2] / 2, p[1] - p[3] / 2, p[1] + p[3] / 2]
    edges_q = [q[0] - q[2] / 2, q[0] + q[2] / 2, q[1] - q[3] / 2, q[1] + q[3] / 2]
    gaps = [abs(a - b) for a in edges_p[:2] for b in edges_q[:2]]
    gaps += [abs(a - b) for a in edges_p[2:] for b in edges_q[2:]]
    return min(gaps) < margin


def _check_ciou(rng):
    while True:
        q = np.array([rng.uniform(100, 200), rng.uniform(100, 200), rng.uniform(20, 80), rng.uniform(20, 80)])
        p = q + np.array([*rng.normal(0, 20, 2), *rng.normal(0, 10, 2)])
        if p[2] > 5 and p[3] > 5 and not _box_kinks(p, q, 1e-2):
            break
    _, g = losses.ciou_loss(p, q)
    _, iou, v = _ciou_ref(p, q, 0.0)
    alpha = v / ((1 - iou) + v) if (1 - iou) + v > 0 else 0.0
    with mp.workdps(DPS):
        q_mp = [mp.mpf(float(c)) for c in q]
        _, iou_mp, v_mp = _ciou_ref([mp.mpf(float(c)) for c in p], q_mp, 0, mp)
        alpha_mp = v_mp / ((1 - iou_mp) + v_mp) if (1 - iou_mp) + v_mp > 0 else 0
    num = checked_difference(
        lambda x: _ciou_ref(x, q, alpha)[0],
        lambda x: _ciou_ref(x, q_mp, alpha_mp, mp)[0],
        p,
    )
    return relative_error(g, num)


CHECKS = {
    "rotation": _check_rotation,
    "svd_project": _check_svd_project,
    "translation": _check_translation,
    "keypoint": _check_keypoint,
    "ciou": _check_ciou,
}


def grad_check(op: str, trials: int = 100, seed: int = 0) -> GradCheckReport:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if op not in CHECKS:
        raise KeyError(f"unknown op {op!r}; choose from {sorted(CHECKS)}")
    rng = np.random.default_rng(seed)
    worst = max(CHECKS[op](rng) for _ in range(trials))
    return GradCheckReport(op, worst, trials, seed)


def grad_check_all(trials: int = 100, seed: int = 0) -> list[GradCheckReport]:
    return [grad_check(op, trials, seed) for op in CHECKS]
