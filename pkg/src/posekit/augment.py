"""Label-preserving augmentations: HSV gains, background replacement and
rotation about the camera's optical axis.

Images are ``(H, W, 3)`` float arrays in [0, 1]; masks are ``(H, W)`` bool.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image, ImageDraw

from . import geometry as geo
from .errors import ShapeError


@dataclass(frozen=True)
class HsvGains:
    hsv_h: float = 0.015
    hsv_s: float = 0.7
    hsv_v: float = 0.4

    def __post_init__(self):
        if min(self.hsv_h, self.hsv_s, self.hsv_v) < 0:
            raise ValueError("HSV gains must be nonnegative")


@dataclass
class LabeledFrame:
    image: np.ndarray
    pose: geo.Pose
    keypoints: np.ndarray  # (9, 2) pixels
    visible: np.ndarray  # (9,) {0, 1}
    box: np.ndarray  # cx, cy, w, h
    mask: np.ndarray


def frame_seed(global_seed: int, index: int) -> int:
    return int(global_seed) ^ int(index)


# ---------------------------------------------------------------- photometric


def apply_hsv_gains(img: np.ndarray, r_h: float, r_s: float, r_v: float, g: HsvGains) -> np.ndarray:
    """Hue shifted modulo 1; saturation and value scaled then clipped to [0, 1]."""
    dh, ks, kv = r_h * g.hsv_h, 1.0 + r_s * g.hsv_s, 1.0 + r_v * g.hsv_v
    if dh == 0.0 and ks == 1.0 and kv == 1.0:
        return img.copy()
    hsv = rgb_to_hsv(np.clip(img, 0.0, 1.0))
    hsv[..., 0] = np.mod(hsv[..., 0] + dh, 1.0)
    hsv[..., 1] = np.clip(hsv[..., 1] * ks, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * kv, 0.0, 1.0)
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0)


def hsv_jitter(img: np.ndarray, g: HsvGains, seed) -> np.ndarray:
    """Random per-image gains r_h, r_s, r_v ~ U[-1, 1]."""
    r_h, r_s, r_v = np.random.default_rng(seed).uniform(-1.0, 1.0, size=3)
    return apply_hsv_gains(img, r_h, r_s, r_v, g)


# ---------------------------------------------------------------- background


def fit_background(bg: np.ndarray, height: int, width: int) -> np.ndarray:
    """Scale ``bg`` to cover ``(height, width)`` (nearest neighbour), then center-crop."""
    bh, bw = bg.shape[:2]
    s = max(height / bh, width / bw)
    nh, nw = max(height, int(np.ceil(bh * s))), max(width, int(np.ceil(bw * s)))
    rows = np.minimum((np.arange(nh) / s).astype(int), bh - 1)
    cols = np.minimum((np.arange(nw) / s).astype(int), bw - 1)
    scaled = bg[rows][:, cols]
    top, left = (nh - height) // 2, (nw - width) // 2
    return scaled[top : top + height, left : left + width]


def background_replace(frame: LabeledFrame, bg: np.ndarray) -> LabeledFrame:
    h, w = frame.image.shape[:2]
    fitted = fit_background(np.asarray(bg, dtype=float), h, w)
    if fitted.shape != frame.image.shape or frame.mask.shape != (h, w):
        raise ShapeError(f"cannot composite {fitted.shape} background onto {frame.image.shape} frame")
    image = np.where(frame.mask[..., None], frame.image, fitted)
    return replace(frame, image=image)


# ---------------------------------------------------------------- geometric


def warp_homography(img: np.ndarray, h: np.ndarray, order: int = 1) -> np.ndarray:
    """Inverse-mapped warp; bilinear (``order=1``) or nearest (``order=0``), black fill."""
    height, width = img.shape[:2]
    hinv = np.linalg.inv(h)
    v, u = np.mgrid[0:height, 0:width].astype(float)
    src = geo.apply_homography(hinv, np.stack([u, v], axis=-1))
    su, sv = src[..., 0], src[..., 1]
    extra = img.shape[2:]
    if order == 0:
        iu, iv = np.rint(su).astype(int), np.rint(sv).astype(int)
        ok = (iu >= 0) & (iu < width) & (iv >= 0) & (iv < height)
        out = np.zeros_like(img)
        out[ok] = img[iv[ok], iu[ok]]
        return out
    u0, v0 = np.floor(su).astype(int), np.floor(sv).astype(int)
    fu, fv = su - u0, sv - v0
    out = np.zeros((height, width) + extra)
    for du, dv, wt in ((0, 0, (1 - fu) * (1 - fv)), (1, 0, fu * (1 - fv)), (0, 1, (1 - fu) * fv), (1, 1, fu * fv)):
        uu, vv = u0 + du, v0 + dv
        ok = (uu >= 0) & (uu < width) & (vv >= 0) & (vv < height)
        w = np.where(ok, wt, 0.0)
        sample = img[np.clip(vv, 0, height - 1), np.clip(uu, 0, width - 1)]
        out += sample * (w.reshape(w.shape + (1,) * len(extra)))
    return out


def keypoint_box(keypoints: np.ndarray) -> np.ndarray:
    lo, hi = keypoints.min(axis=0), keypoints.max(axis=0)
    return np.array([(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, hi[0] - lo[0], hi[1] - lo[1]])


def rotate_augment(frame: LabeledFrame, theta: float, cam: geo.CameraModel) -> LabeledFrame:
    """Rotate the scene by ``theta`` about the optical axis.

    Image and mask are warped by ``K Rz K^-1``; the pose becomes
    ``(Rz R, Rz t)`` (depth unchanged) and keypoints are mapped through the same
    homography.
    """
    if theta == 0.0:
        return replace(frame, image=frame.image.copy(), mask=frame.mask.copy())
    h = geo.homography_principal_rotation(cam, theta)
    rz = geo.rot_z(theta)
    kps = geo.apply_homography(h, frame.keypoints)
    return LabeledFrame(
        image=np.clip(warp_homography(frame.image, h), 0.0, 1.0),
        pose=geo.Pose(rz @ frame.pose.R, rz @ frame.pose.t),
        keypoints=kps,
        visible=frame.visible.copy(),
        box=keypoint_box(kps),
        mask=warp_homography(frame.mask.astype(float), h, order=0) > 0.5,
    )


def sample_theta(rng: np.random.Generator, lo: float = -np.pi, hi: float = np.pi) -> float:
    return float(rng.uniform(lo, hi))


# ---------------------------------------------------------------- synthetic frames


_FACES = [(0, 1, 3, 2), (4, 5, 7, 6), (0, 1, 5, 4), (2, 3, 7, 6), (0, 2, 6, 4), (1, 3, 7, 5)]


def render_frame(model, pose: geo.Pose, cam: geo.CameraModel, seed=0) -> LabeledFrame:
    """Flat-shaded box render of the model's bounding box over a noise background."""
    rng = np.random.default_rng(seed)
    points = getattr(model, "points", model)
    kps = geo.bbox9_keypoints(points, pose, cam)
    corners_cam = pose.apply(geo.bbox_corners(points))
    img = Image.new("RGB", (cam.width, cam.height))
    mask = Image.new("L", (cam.width, cam.height))
    draw, mdraw = ImageDraw.Draw(img), ImageDraw.Draw(mask)
    base = rng.uniform(0.3, 0.9, size=3)
    # painter's order: farthest face first
    order = sorted(_FACES, key=lambda f: -corners_cam[list(f), 2].mean())
    for k, face in enumerate(order):
        poly = [tuple(kps[i]) for i in face]
        shade = 0.6 + 0.4 * k / len(order)
        draw.polygon(poly, fill=tuple(int(255 * c * shade) for c in base))
        mdraw.polygon(poly, fill=255)
    image = np.asarray(img, dtype=float) / 255.0
    m = np.asarray(mask) > 0
    noise = rng.uniform(0.0, 1.0, size=(cam.height // 8 + 1, cam.width // 8 + 1, 3))
    bg = np.repeat(np.repeat(noise, 8, axis=0), 8, axis=1)[: cam.height, : cam.width]
    image = np.where(m[..., None], image, bg)
    return LabeledFrame(image, pose, kps, np.ones(9), keypoint_box(kps), m)


# ---------------------------------------------------------------- image I/O


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=float) / 255.0


def write_image(path, img: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        write_ppm(path, img)
        return
    Image.fromarray(to_uint8(img)).save(path)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, img: np.ndarray) -> None:
    data = to_uint8(img)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ShapeError(f"{path}: only 8-bit binary PPM (P6) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return data.reshape(h, w, 3).astype(float) / 255.0


def list_backgrounds(directory) -> list[Path]:
    exts = {".png", ".jpg", ".jpeg", ".ppm", ".bmp"}
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in exts)
    if not paths:
        raise FileNotFoundError(f"no background images in {directory}")
    return paths
