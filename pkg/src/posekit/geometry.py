"""Rigid-body representations, pinhole projection and the Procrustes projection.

All arrays are float64. Rotations are plain ``(3, 3)`` ndarrays; use
:func:`check_rotation` where validity matters. Quaternions are ``(w, x, y, z)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BehindCamera, DegenerateInput, DegenerateMatrix, InvalidDepth, RangeError

ROT_TOL = 1e-9
MIN_DEPTH = 1e-9

# xyz sign order of the box corners; the 9th keypoint is the model centroid.
CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [-1, -1, +1],
        [-1, +1, -1],
        [-1, +1, +1],
        [+1, -1, -1],
        [+1, -1, +1],
        [+1, +1, -1],
        [+1, +1, +1],
    ],
    dtype=float,
)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    dist_min: float
    dist_max: float
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise RangeError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 < self.dist_min < self.dist_max):
            raise RangeError(f"need 0 < dist_min < dist_max, got [{self.dist_min}, {self.dist_max}]")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "dist_min": self.dist_min, "dist_max": self.dist_max,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        keys = ("fx", "fy", "cx", "cy", "dist_min", "dist_max")
        missing = [k for k in keys if k not in d]
        if missing:
            raise RangeError(f"camera is missing fields {missing}")
        extra = {k: int(d[k]) for k in ("width", "height") if k in d}
        return cls(*(float(d[k]) for k in keys), **extra)

    @classmethod
    def load(cls, path) -> "CameraModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# LINEMOD-like intrinsics; the depth range covers the dataset's object distances.
DEFAULT_CAMERA = CameraModel(572.4114, 573.57043, 325.2611, 242.04899, 0.5, 1.5)


@dataclass(frozen=True)
class Pose:
    R: np.ndarray
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))
        if not np.all(np.isfinite(self.t)):
            raise RangeError("translation must be finite")

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Map model-frame points ``(..., 3)`` into the camera frame."""
        return np.asarray(x, dtype=float) @ self.R.T + self.t

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def to_dict(self) -> dict:
        return {"R": self.R.reshape(-1).tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.asarray(d["R"], dtype=float).reshape(3, 3), d["t"])


def check_rotation(m: np.ndarray, tol: float = ROT_TOL) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return bool(
        np.linalg.norm(m.T @ m - np.eye(3)) < tol and abs(np.linalg.det(m) - 1.0) < tol
    )


def svd_project_so3(m) -> np.ndarray:
    """Nearest rotation in Frobenius norm to an arbitrary 3x3 matrix.

    Accepts 9 values (row-major) or a ``(..., 3, 3)`` stack. Uses the
    sign-corrected solution ``U diag(1, 1, det(U V^T)) V^T`` so the result is
    always proper. When the two smallest singular values coincide and the
    correction applies the minimizer is not unique; the one produced by
    LAPACK's SVD is returned.
    """
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (3, 3):
        m = m.reshape(m.shape[:-1] + (3, 3))
    if not np.all(np.isfinite(m)):
        raise DegenerateMatrix("matrix has non-finite entries")
    u, s, vt = np.linalg.svd(m)
    if np.any(s[..., 1] < 1e-12):
        raise DegenerateMatrix(f"rank < 2 (singular values {s})")
    d = np.sign(np.linalg.det(u @ vt))
    u = u.copy()
    u[..., :, 2] *= d[..., None]
    return u @ vt


def gso_to_rot(a, b) -> np.ndarray:
    """Gram-Schmidt 6D representation to a rotation (columns c1, c2, c1 x c2)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na = np.linalg.norm(a)
    if na < 1e-12:
        raise DegenerateInput("first vector is zero")
    c1 = a / na
    b_perp = b - (b @ c1) * c1
    nb = np.linalg.norm(b_perp)
    if nb < 1e-12 * max(1.0, np.linalg.norm(b)):
        raise DegenerateInput("vectors are parallel or second vector is zero")
    c2 = b_perp / nb
    return np.column_stack([c1, c2, np.cross(c1, c2)])


def quat_to_rot(q) -> np.ndarray:
    """Rotation from a (not necessarily unit) quaternion; vectorised over ``(..., 4)``."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise DegenerateInput("zero quaternion")
    w, x, y, z = np.moveaxis(q / n, -1, 0)
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def euler_to_rot(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Intrinsic Z-Y-X Euler angles: ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def random_rotation(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Uniform rotations via normalized Gaussian quaternions."""
    q = rng.standard_normal(4 if n is None else (n, 4))
    return quat_to_rot(q)


def geodesic_distance(a, b) -> np.ndarray | float:
    """Rotation angle of ``a^T b`` in radians; works on stacks."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r = np.swapaxes(a, -1, -2) @ b
    cos = (np.trace(r, axis1=-2, axis2=-1) - 1.0) / 2.0
    # atan2 keeps full precision near 0 and pi, where arccos alone loses ~1e-8
    w = np.stack([r[..., 2, 1] - r[..., 1, 2], r[..., 0, 2] - r[..., 2, 0], r[..., 1, 0] - r[..., 0, 1]], -1)
    sin = np.linalg.norm(w, axis=-1) / 2.0
    out = np.arctan2(sin, cos)
    return float(out) if out.ndim == 0 else out


def project_point(cam: CameraModel, pose: Pose, x) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection of model points ``(..., 3)``.

    Returns ``(uv, depth)`` with ``uv`` of shape ``(..., 2)``.
    """
    xc = pose.apply(x)
    depth = xc[..., 2]
    if np.any(depth <= MIN_DEPTH):
        raise BehindCamera(f"point depth {np.min(depth):.3g} m is not in front of the camera")
    u = cam.fx * xc[..., 0] / depth + cam.cx
    v = cam.fy * xc[..., 1] / depth + cam.cy
    return np.stack([u, v], axis=-1), depth


def backproject_center(cam: CameraModel, ox, oy, tz) -> np.ndarray:
    """Translation from the projected object origin and its depth.

    Vectorised over ``ox, oy, tz``; returns ``(..., 3)``.
    """
    tz = np.asarray(tz, dtype=float)
    if np.any(~(tz > 0)):
        raise InvalidDepth(f"depth must be positive, got {tz}")
    ox = np.asarray(ox, dtype=float)
    oy = np.asarray(oy, dtype=float)
    return np.stack([tz * (ox - cam.cx) / cam.fx, tz * (oy - cam.cy) / cam.fy, tz * np.ones_like(ox)], axis=-1)


def depth_decode(sigma, cam: CameraModel):
    sigma = np.asarray(sigma, dtype=float)
    if np.any((sigma < 0) | (sigma > 1)) or not np.all(np.isfinite(sigma)):
        raise RangeError(f"normalized depth must lie in [0, 1], got {sigma}")
    tz = cam.dist_min + sigma * (cam.dist_max - cam.dist_min)
    return float(tz) if tz.ndim == 0 else tz


def depth_encode(tz, cam: CameraModel):
    tz = np.asarray(tz, dtype=float)
    if np.any((tz < cam.dist_min) | (tz > cam.dist_max)) or not np.all(np.isfinite(tz)):
        raise RangeError(f"depth {tz} outside [{cam.dist_min}, {cam.dist_max}]")
    sigma = (tz - cam.dist_min) / (cam.dist_max - cam.dist_min)
    return float(sigma) if sigma.ndim == 0 else sigma


def homography_principal_rotation(cam: CameraModel, theta: float) -> np.ndarray:
    """Image homography induced by rotating the scene about the optical axis."""
    return cam.K @ rot_z(theta) @ cam.K_inv


def apply_homography(h: np.ndarray, uv) -> np.ndarray:
    uv = np.asarray(uv, dtype=float)
    p = uv @ h[:, :2].T + h[:, 2]
    return p[..., :2] / p[..., 2:3]


def bbox_corners(points) -> np.ndarray:
    """The 8 axis-aligned model-frame box corners in sign order."""
    points = np.asarray(points, dtype=float)
    lo, hi = points.min(axis=0), points.max(axis=0)
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    return mid + CORNER_SIGNS * half


def bbox9_points(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return np.vstack([bbox_corners(points), points.mean(axis=0)])


def bbox9_keypoints(model, pose: Pose, cam: CameraModel) -> np.ndarray:
    """Projected box corners plus centroid, shape ``(9, 2)``.

    ``model`` is an ObjectModel-like object with ``points`` or an ``(m, 3)`` array.
    """
    points = getattr(model, "points", model)
    uv, _ = project_point(cam, pose, bbox9_points(points))
    return uv
