"""ADD / ADD-S pose metrics, 0.1d accuracy reports and stage-timing tables."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .geometry import Pose
from .ply import read_ply_vertices

# LINEMOD convention; override per model with a sidecar JSON.
DEFAULT_SYMMETRIC = frozenset({"eggbox", "glue"})
MAX_EVAL_POINTS = 10_000


def max_pairwise_distance(points: np.ndarray) -> float:
    """Exact diameter of a point set.

    The farthest pair always lies on the convex hull, so only hull vertices
    are compared; degenerate (flat) sets fall back to all points.
    """
    points = np.asarray(points, dtype=float)
    try:
        cand = points[ConvexHull(points).vertices]
    except (QhullError, ValueError):
        cand = points
    best = 0.0
    for i in range(0, len(cand), 1024):
        d = np.sqrt(((cand[i : i + 1024, None, :] - cand[None, :, :]) ** 2).sum(-1))
        best = max(best, float(d.max()))
    return best


@dataclass
class ObjectModel:
    points: np.ndarray
    diameter: float
    symmetric: bool = False
    name: str = "object"
    eval_stride: int = field(default=1, init=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) < 4:
            raise ValueError(f"{self.name}: need at least 4 points of shape (m, 3)")
        if not self.diameter > 0:
            raise ValueError(f"{self.name}: diameter must be positive")
        self.eval_stride = max(1, math.ceil(len(self.points) / MAX_EVAL_POINTS))

    @property
    def eval_points(self) -> np.ndarray:
        """Points used for metrics; stride-subsampled above 10k points."""
        return self.points[:: self.eval_stride]

    @classmethod
    def from_points(cls, points, name="object", symmetric=False, diameter=None) -> "ObjectModel":
        points = np.asarray(points, dtype=float)
        if diameter is None:
            diameter = max_pairwise_distance(points)
        return cls(points, float(diameter), bool(symmetric), name)


def load_model(path, scale: float = 1.0, symmetric_names=DEFAULT_SYMMETRIC) -> ObjectModel:
    """Read a PLY model plus an optional ``<stem>.json`` sidecar {diameter, symmetric}.

    ``scale`` converts file units to meters (e.g. 0.001 for millimetre meshes);
    a sidecar diameter is taken to be in meters already.
    """
    path = Path(path)
    points = read_ply_vertices(path) * scale
    name = path.stem
    meta = {}
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
    symmetric = meta.get("symmetric", name.lower() in symmetric_names)
    return ObjectModel.from_points(points, name, symmetric, meta.get("diameter"))


def load_models(directory, scale: float = 1.0) -> dict[str, ObjectModel]:
    directory = Path(directory)
    models = {p.stem: load_model(p, scale) for p in sorted(directory.glob("*.ply"))}
    if not models:
        raise FileNotFoundError(f"no .ply models in {directory}")
    return models


# ---------------------------------------------------------------- metrics


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # one fixed evaluation order, shared by every nearest-neighbour path
    dx = a[..., 0] - b[..., 0]
    dy = a[..., 1] - b[..., 1]
    dz = a[..., 2] - b[..., 2]
    return dx * dx + dy * dy + dz * dz


def _pointwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(_sq_dist(a, b))


def add_metric(model: ObjectModel, gt: Pose, pred: Pose) -> float:
    """Mean distance between corresponding model points under the two poses."""
    pts = model.eval_points
    return float(np.mean(_pointwise(gt.apply(pts), pred.apply(pts))))


def _nn_brute(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(len(a))
    chunk = max(1, 1_000_000 // max(len(b), 1))
    for i in range(0, len(a), chunk):
        out[i : i + chunk] = np.sqrt(_sq_dist(a[i : i + chunk, None, :], b[None, :, :]).min(axis=1))
    return out


def _nn_tree(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # the tree only picks the partner; the distance is recomputed with the
    # brute-force arithmetic so both modes agree bit for bit
    _, idx = cKDTree(b).query(a, k=1)
    return _pointwise(a, b[idx])


def adds_metric(model: ObjectModel, gt: Pose, pred: Pose, mode: str = "accelerated") -> float:
    """Mean closest-point distance from gt-posed points into the pred-posed set."""
    pts = model.eval_points
    a, b = gt.apply(pts), pred.apply(pts)
    if mode == "brute":
        return float(np.mean(_nn_brute(a, b)))
    if mode == "accelerated":
        return float(np.mean(_nn_tree(a, b)))
    raise ValueError(f"unknown ADD-S mode {mode!r}")


def pose_error(model: ObjectModel, gt: Pose, pred: Pose) -> float:
    """ADD-S for symmetric objects, ADD otherwise."""
    return adds_metric(model, gt, pred) if model.symmetric else add_metric(model, gt, pred)


# ---------------------------------------------------------------- accuracy report


@dataclass
class EvalRecord:
    object: str
    gt: Pose
    pred: Pose

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRecord":
        return cls(
            d["object"],
            Pose(np.reshape(d["R_gt"], (3, 3)), d["t_gt"]),
            Pose(np.reshape(d["R_pred"], (3, 3)), d["t_pred"]),
        )

    def to_dict(self) -> dict:
        return {
            "object": self.object,
            "R_gt": self.gt.R.ravel().tolist(), "t_gt": self.gt.t.tolist(),
            "R_pred": self.pred.R.ravel().tolist(), "t_pred": self.pred.t.tolist(),
        }


def load_records(path) -> list[EvalRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    records.append(EvalRecord.from_dict(json.loads(line)))
                except (KeyError, ValueError) as e:
                    raise ValueError(f"{path}:{lineno}: bad record ({e})") from e
    return records


@dataclass
class ObjectScore:
    name: str
    n: int
    correct: int

    @property
    def accuracy(self) -> float:
        return 100.0 * self.correct / self.n if self.n else 0.0


@dataclass
class Report:
    objects: list[ObjectScore]
    threshold_factor: float = 0.1
    subsampled: dict = field(default_factory=dict)

    @property
    def average(self) -> float:
        """Unweighted mean over objects."""
        return float(np.mean([o.accuracy for o in self.objects])) if self.objects else 0.0

    @property
    def count(self) -> int:
        return sum(o.n for o in self.objects)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["object", "n", "accuracy_percent"])
        for o in self.objects:
            w.writerow([o.name, o.n, f"{o.accuracy:.2f}"])
        w.writerow(["Average", self.count, f"{self.average:.2f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max([len("Average")] + [len(o.name) for o in self.objects])
        lines = [f"{'Object':<{width}} | {'N':>6} | ADD(-S) {self.threshold_factor:g}d (%)"]
        lines.append("-" * len(lines[0]))
        for o in self.objects:
            lines.append(f"{o.name:<{width}} | {o.n:>6} | {o.accuracy:6.2f}")
        lines.append("-" * len(lines[0]))
        lines.append(f"{'Average':<{width}} | {self.count:>6} | {self.average:6.2f}")
        for name, stride in self.subsampled.items():
            lines.append(f"note: {name} subsampled with stride {stride}")
        return "\n".join(lines)


def accuracy_01d(
    records: Iterable[EvalRecord], models: Mapping[str, ObjectModel], factor: float = 0.1
) -> Report:
    """Per-object fraction of poses whose ADD(-S) is below ``factor * diameter``."""
    counts: dict[str, list[int]] = {}
    for rec in records:
        if rec.object not in models:
            raise LookupError(f"no model for object {rec.object!r}")
        model = models[rec.object]
        ok = pose_error(model, rec.gt, rec.pred) < factor * model.diameter
        c = counts.setdefault(rec.object, [0, 0])
        c[0] += 1
        c[1] += int(ok)
    names = [n for n in models if n in counts]
    return Report(
        [ObjectScore(n, *counts[n]) for n in names],
        factor,
        {n: models[n].eval_stride for n in names if models[n].eval_stride > 1},
    )


# ---------------------------------------------------------------- timing


@dataclass
class TimingReport:
    stages: list[tuple[str, float]]

    @property
    def total(self) -> float:
        return sum(ms for _, ms in self.stages)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["operation", "time_ms"])
        for name, ms in self.stages:
            w.writerow([name, f"{ms:.1f}"])
        w.writerow(["Total", f"{self.total:.1f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max(len("Operation"), *(len(n) for n, _ in self.stages))
        rows = [f"{'Operation':<{width}} | Time (ms)", "-" * (width + 12)]
        rows += [f"{n:<{width}} | {ms:.1f}" for n, ms in self.stages]
        rows += ["-" * (width + 12), f"{'Total':<{width}} | {self.total:.1f}"]
        return "\n".join(rows)


def timing_report(durations: Mapping[str, Sequence[float] | float]) -> TimingReport:
    """Mean milliseconds per stage (in insertion order) and their total."""
    stages = []
    for name, samples in durations.items():
        arr = np.atleast_1d(np.asarray(samples, dtype=float))
        if arr.size == 0 or np.any(arr < 0):
            raise ValueError(f"stage {name!r} needs nonnegative samples")
        stages.append((name, float(arr.mean())))
    return TimingReport(stages)
