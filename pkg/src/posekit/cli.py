"""``posekit`` command line: evaluation, gradient checks, augmentation, synthetic
training experiments, decoding and timing reports.

Exit codes: 0 success, 1 invalid input or configuration, 2 file I/O failure.
Settings resolve as built-in defaults < config file (TOML or JSON) < flags.
Every run writes a JSON manifest next to its output.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import math
import sys
import time
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from . import augment as aug
from . import decode as dec
from . import evalkit
from . import geometry as geo
from . import synthtrain as st
from .diff import write_reports_csv
from .errors import DegenerateMatrix
from .gradcheck import grad_check_all
from .losses import LossWeights

log = logging.getLogger("posekit")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
GRAD_TOL = 1e-5


class ConfigError(ValueError):
    pass


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- defaults

COMMON = {"seed": 0, "cam": None, "out": None, "manifest": None}
LAMBDAS = {"lambda_r": 1.0, "lambda_t": 1.0, "lambda_kp": 0.1, "lambda_bb": 1.0}
SYNTH = {"n_frames": 2000, "noise_px": 0.0, "occlusion": 0.0}
TRAINING = {"epochs": 60, "lr": 1e-2, "batch_size": 16, "schedule": "cosine"}

DEFAULTS = {
    "eval": {"models": None, "records": None, "scale": 1.0, "factor": 0.1, "text": False},
    "gradcheck": {"trials": 100},
    "augment": {
        "frames": None, "count": 4, "bg_dir": None, "model": None, "max_angle": 180.0,
        "hsv_h": 0.015, "hsv_s": 0.7, "hsv_v": 0.4,
    },
    "synth-gen": {**SYNTH, "model": None},
    "train": {**SYNTH, **TRAINING, **LAMBDAS, "data": None, "model": None, "mode": "svd9", "kp_head": True},
    "compare-rot": {**SYNTH, **TRAINING, **LAMBDAS, "model": None, "seeds": 5},
    "ablate-kp": {
        **SYNTH, **TRAINING, **LAMBDAS, "noise_px": 2.0, "occlusion": 0.2,
        "model": None, "seeds": 5, "mode": "svd9", "object_csv": None,
    },
    "decode": {"records": None, "score_threshold": 0.25, "iou_threshold": 0.65},
    "bench": {"timings": None, "stage_sim": False, "records": None, "runs": 10,
              "score_threshold": 0.25, "iou_threshold": 0.65},
}
for _d in DEFAULTS.values():
    for _k, _v in COMMON.items():
        _d.setdefault(_k, _v)

HELP = {
    "eval": "ADD(-S) 0.1d accuracy report from pose records",
    "gradcheck": "analytic vs finite-difference gradient check of every loss",
    "augment": "HSV jitter, background replacement and principal-axis rotation",
    "synth-gen": "generate a synthetic keypoint/pose dataset (JSON lines)",
    "train": "train the toy regressor and write a per-epoch log",
    "compare-rot": "compare rotation parameterizations over several seeds",
    "ablate-kp": "keypoint head on vs off over several seeds",
    "decode": "decode raw head outputs into 6D detections",
    "bench": "stage timing report (canned durations or simulated decode)",
}


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _opt(p, name, cmd, help, **kw):
    dest = name.lstrip("-").replace("-", "_")
    default = DEFAULTS[cmd].get(dest)
    shown = "" if default in (None, False) else f" (default: {default})"
    p.add_argument(name, dest=dest, default=argparse.SUPPRESS, help=help + shown, **kw)


def _add_common(p, cmd):
    _opt(p, "--config", cmd, "TOML or JSON settings file; flags override it")
    _opt(p, "--seed", cmd, "random seed", type=int)
    _opt(p, "--cam", cmd, "camera JSON {fx, fy, cx, cy, dist_min, dist_max[, width, height]}")
    _opt(p, "--out", cmd, "output path")
    _opt(p, "--manifest", cmd, "manifest path (default: next to --out)")


def _add_synth(p, cmd):
    _opt(p, "--n-frames", cmd, "synthetic frames", type=int)
    _opt(p, "--noise-px", cmd, "keypoint noise standard deviation in pixels", type=float)
    _opt(p, "--occlusion", cmd, "per-keypoint occlusion rate", type=float)
    _opt(p, "--model", cmd, "PLY model in meters (default: built-in 10x8x6 cm box)")


def _add_training(p, cmd):
    _opt(p, "--epochs", cmd, "training epochs", type=int)
    _opt(p, "--lr", cmd, "learning rate", type=float)
    _opt(p, "--batch-size", cmd, "mini-batch size", type=int)
    _opt(p, "--schedule", cmd, "learning-rate schedule", choices=["cosine", "constant"])
    for c in "r", "t", "kp", "bb":
        _opt(p, f"--lambda-{c}", cmd, f"weight of the {c} loss term", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="posekit", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"posekit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    ps = {cmd: sub.add_parser(cmd, help=h, description=h) for cmd, h in HELP.items()}
    for cmd, p in ps.items():
        _add_common(p, cmd)

    p = ps["eval"]
    _opt(p, "--models", "eval", "directory of PLY models (+ optional <name>.json sidecars)")
    _opt(p, "--records", "eval", "JSON-lines pose records")
    _opt(p, "--scale", "eval", "model unit to meters, e.g. 0.001 for millimetres", type=float)
    _opt(p, "--factor", "eval", "threshold as a fraction of the diameter", type=float)
    _opt(p, "--text", "eval", "print the pretty table to stdout as well", action="store_true")

    _opt(ps["gradcheck"], "--trials", "gradcheck", "random samples per op", type=int)

    p = ps["augment"]
    _opt(p, "--frames", "augment", "JSON-lines frames {image, mask, pose, keypoints}; synthetic if omitted")
    _opt(p, "--count", "augment", "synthetic frames to render when --frames is omitted", type=int)
    _opt(p, "--bg-dir", "augment", "directory of background images")
    _opt(p, "--model", "augment", "PLY model in meters for synthetic frames")
    _opt(p, "--max-angle", "augment", "rotation drawn from [-a, a] degrees", type=float)
    for c in "h", "s", "v":
        _opt(p, f"--hsv-{c}", "augment", f"maximum {c.upper()} gain", type=float)

    _add_synth(ps["synth-gen"], "synth-gen")

    p = ps["train"]
    _add_synth(p, "train")
    _add_training(p, "train")
    _opt(p, "--data", "train", "dataset from synth-gen (generated from the synth flags if omitted)")
    _opt(p, "--mode", "train", "rotation parameterization", choices=list(st.MODES))
    p.add_argument("--no-kp-head", dest="kp_head", action="store_false", default=argparse.SUPPRESS,
                   help="drop the keypoint head (and its loss term)")

    for cmd in ("compare-rot", "ablate-kp"):
        p = ps[cmd]
        _add_synth(p, cmd)
        _add_training(p, cmd)
        _opt(p, "--seeds", cmd, "number of seeds (0..n-1, offset by --seed)", type=int)
    _opt(ps["ablate-kp"], "--mode", "ablate-kp", "rotation parameterization", choices=list(st.MODES))
    _opt(ps["ablate-kp"], "--object-csv", "ablate-kp", "also write the per-object with/without table")

    p = ps["decode"]
    _opt(p, "--records", "decode", "raw detections: JSON lines, or .bin/.f32 float32 records")
    _opt(p, "--score-threshold", "decode", "minimum confidence", type=float)
    _opt(p, "--iou-threshold", "decode", "NMS IoU threshold", type=float)

    p = ps["bench"]
    _opt(p, "--timings", "bench", "JSON {stage: ms or [ms, ...]} in report order")
    _opt(p, "--stage-sim", "bench", "time parsing, decoding and NMS of --records", action="store_true")
    _opt(p, "--records", "bench", "raw detections for --stage-sim")
    _opt(p, "--runs", "bench", "repetitions for --stage-sim", type=int)
    _opt(p, "--score-threshold", "bench", "minimum confidence", type=float)
    _opt(p, "--iou-threshold", "bench", "NMS IoU threshold", type=float)
    return parser


# ---------------------------------------------------------------- config


def _toml_position(err) -> tuple:
    return getattr(err, "lineno", None), getattr(err, "colno", None)


def config_load(path) -> dict:
    """Parse a TOML or JSON settings file into a flat dict.

    ``[loss]`` (or ``weights``) and per-command sections are flattened by
    :func:`merge_settings`; here the raw mapping is returned. Malformed files
    raise :class:`ConfigError` carrying the line and column.
    """
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        return {}
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    else:
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as e:
            line, col = _toml_position(e)
            raise ConfigError(f"{path}: line {line}, column {col}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    return data


def merge_settings(command: str, config: dict, flags: dict) -> dict:
    """defaults < config (top level, then ``[loss]``, then ``[<command>]``) < flags."""
    defaults = DEFAULTS[command]
    merged = dict(defaults)
    layers = [{k: v for k, v in config.items() if not isinstance(v, dict)}]
    for section in ("loss", "weights", command):
        if isinstance(config.get(section), dict):
            layers.append(config[section])
    others = [k for k, v in config.items() if isinstance(v, dict) and k not in ("loss", "weights") and k not in DEFAULTS]
    if others:
        raise ConfigError(f"unknown config sections {sorted(others)}")
    for layer in layers:
        for key, value in layer.items():
            k = key.replace("-", "_")
            if k not in defaults:
                if layer is layers[0] and any(k in d for d in DEFAULTS.values()):
                    continue  # shared config files may hold settings for other commands
                raise ConfigError(f"unknown setting {key!r} for {command}")
            merged[k] = value
    merged.update(flags)
    return merged


# ---------------------------------------------------------------- manifest


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_hashes(paths) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(q for q in p.iterdir() if q.is_file()):
                out[str(f)] = _sha256(f)
        elif p.exists():
            out[str(p)] = _sha256(p)
    return out


def write_manifest(command: str, settings: dict, inputs, outputs, path=None) -> Path:
    canon = json.dumps(settings, sort_keys=True, default=str)
    manifest = {
        "tool": "posekit",
        "version": __version__,
        "command": command,
        "seed": settings.get("seed"),
        "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
        "settings": json.loads(canon),
        "inputs": _input_hashes(inputs),
        "outputs": [str(o) for o in outputs],
    }
    if path is None:
        out = settings.get("out")
        if out is None:
            path = Path(f"posekit-{command}.manifest.json")
        elif Path(out).is_dir():
            path = Path(out) / "manifest.json"
        else:
            path = Path(str(out) + ".manifest.json")
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------- helpers


def _camera(s) -> geo.CameraModel:
    return geo.CameraModel.load(s["cam"]) if s.get("cam") else geo.DEFAULT_CAMERA


def _emit(text: str, out) -> list:
    if out is None:
        sys.stdout.write(text)
        return []
    Path(out).write_text(text)
    return [out]


def _object_model(s):
    if s.get("model"):
        return evalkit.load_model(s["model"])
    return st.default_object_model()


def _weights(s) -> LossWeights:
    return LossWeights(s["lambda_r"], s["lambda_t"], s["lambda_kp"], s["lambda_bb"])


def _synth_config(s) -> st.SynthConfig:
    return st.SynthConfig(
        cam=_camera(s), model=_object_model(s), n_frames=int(s["n_frames"]),
        noise_px=float(s["noise_px"]), occlusion=float(s["occlusion"]), seed=int(s["seed"]),
    )


def _train_config(s) -> st.TrainConfig:
    return st.TrainConfig(
        epochs=int(s["epochs"]), lr=float(s["lr"]), batch_size=int(s["batch_size"]),
        schedule=s["schedule"], seed=int(s["seed"]),
    )


def _require(s, *keys):
    for k in keys:
        if s.get(k) is None:
            raise UsageError(f"--{k.replace('_', '-')} is required")


# ---------------------------------------------------------------- commands


def cmd_eval(s):
    _require(s, "models", "records")
    models = evalkit.load_models(s["models"], float(s["scale"]))
    records = evalkit.load_records(s["records"])
    report = evalkit.accuracy_01d(records, models, float(s["factor"]))
    outputs = _emit(report.to_csv(), s["out"])
    if s["text"] or s["out"] is not None:
        print(report.to_text(), file=sys.stdout if s["text"] else sys.stderr)
    return [s["models"], s["records"]], outputs, EXIT_OK


def cmd_gradcheck(s):
    reports = grad_check_all(int(s["trials"]), int(s["seed"]))
    buf = io.StringIO()
    write_reports_csv(reports, buf)
    outputs = _emit(buf.getvalue(), s["out"])
    worst = max(r.max_rel_err for r in reports)
    ok = worst < GRAD_TOL
    print(f"gradcheck: max relative error {worst:.3g} ({'ok' if ok else 'FAILED'}, tolerance {GRAD_TOL:g})",
          file=sys.stderr)
    return [], outputs, EXIT_OK if ok else EXIT_INVALID


def _pose_from_dict(d) -> geo.Pose:
    return geo.Pose.from_dict(d)


def _load_frames(path: Path):
    base = path.parent
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                image = aug.read_image(base / d["image"])
                h, w = image.shape[:2]
                mask = (aug.read_image(base / d["mask"])[..., 0] > 0.5) if d.get("mask") else np.ones((h, w), bool)
                kps = np.asarray(d["keypoints"], dtype=float).reshape(9, 2)
                vis = np.asarray(d.get("visible", [1] * 9), dtype=float)
                box = np.asarray(d["box"], dtype=float) if "box" in d else aug.keypoint_box(kps)
                yield aug.LabeledFrame(image, _pose_from_dict(d["pose"]), kps, vis, box, mask)
            except (KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: bad frame ({e})") from e


def _synthetic_frames(s, cam):
    model = _object_model(s)
    for i in range(int(s["count"])):
        rng = np.random.default_rng(aug.frame_seed(int(s["seed"]), i) + 2**32)
        tz = rng.uniform(cam.dist_min, cam.dist_max)
        u = rng.uniform(0.3 * cam.width, 0.7 * cam.width)
        v = rng.uniform(0.3 * cam.height, 0.7 * cam.height)
        pose = geo.Pose(geo.random_rotation(rng), geo.backproject_center(cam, u, v, tz))
        yield aug.render_frame(model, pose, cam, seed=rng.integers(2**32))


def cmd_augment(s):
    _require(s, "out")
    cam = _camera(s)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    gains = aug.HsvGains(float(s["hsv_h"]), float(s["hsv_s"]), float(s["hsv_v"]))
    bgs = aug.list_backgrounds(s["bg_dir"]) if s["bg_dir"] else []
    frames = _load_frames(Path(s["frames"])) if s["frames"] else _synthetic_frames(s, cam)
    amax = math.radians(float(s["max_angle"]))
    labels, outputs = [], []
    for i, frame in enumerate(frames):
        rng = np.random.default_rng(aug.frame_seed(int(s["seed"]), i))
        if bgs:
            frame = aug.background_replace(frame, aug.read_image(bgs[rng.integers(len(bgs))]))
        frame = replace(frame, image=aug.hsv_jitter(frame.image, gains, rng.integers(2**32)))
        theta = aug.sample_theta(rng, -amax, amax)
        frame = aug.rotate_augment(frame, theta, cam)
        img_name, mask_name = f"frame_{i:05d}.png", f"mask_{i:05d}.png"
        aug.write_image(out / img_name, frame.image)
        aug.write_image(out / mask_name, np.repeat(frame.mask[..., None].astype(float), 3, axis=2))
        outputs += [out / img_name, out / mask_name]
        labels.append({
            "image": img_name, "mask": mask_name, "pose": frame.pose.to_dict(),
            "keypoints": frame.keypoints.tolist(), "visible": frame.visible.astype(int).tolist(),
            "box": frame.box.tolist(), "theta": theta,
        })
    (out / "labels.jsonl").write_text("".join(json.dumps(r) + "\n" for r in labels))
    log.info("augmented %d frames into %s", len(labels), out)
    return [p for p in (s["frames"], s["bg_dir"], s["model"]) if p], outputs + [out / "labels.jsonl"], EXIT_OK


def cmd_synth_gen(s):
    data = st.generate_dataset(_synth_config(s))
    outputs = _emit(data.to_jsonl(), s["out"])
    return [p for p in (s["model"],) if p], outputs, EXIT_OK


def cmd_train(s):
    cfg = _synth_config(s)
    if s["data"]:
        data = st.SynthDataset.from_jsonl(Path(s["data"]).read_text())
    else:
        data = st.generate_dataset(cfg)
    net = st.ToyNet(mode=s["mode"], keypoint_head=bool(s["kp_head"]), seed=int(s["seed"]))
    weights = _weights(s)
    if not s["kp_head"]:
        weights = replace(weights, lambda_kp=0.0)
    lg = st.train(net, data, weights, _train_config(s), cfg.cam, cfg.model)
    outputs = _emit(lg.to_csv(), s["out"])
    f = lg.final
    print(f"final: geodesic {f['geodesic_deg']:.3f} deg, translation {f['trans_m']:.4f} m, "
          f"0.1d accuracy {f['acc_01d']:.2f}%, skipped {lg.skipped}, clipped {lg.clipped}", file=sys.stderr)
    return [p for p in (s["data"], s["model"]) if p], outputs, EXIT_OK


def _seeds(s):
    n = int(s["seeds"])
    if n < 3:
        raise ValueError("--seeds must be at least 3")
    return [int(s["seed"]) + i for i in range(n)]


def _summary_text(table, key):
    return "\n".join(f"{k}: {key} {m:.4g} +- {sd:.2g}" for k, (m, sd) in table.summary(key).items())


def cmd_compare_rot(s):
    table = st.compare_representations(_synth_config(s), _train_config(s), _seeds(s), _weights(s))
    outputs = _emit(table.to_csv(), s["out"])
    print(_summary_text(table, "geodesic_deg"), file=sys.stderr)
    return [p for p in (s["model"],) if p], outputs, EXIT_OK


def cmd_ablate_kp(s):
    weights = _weights(s)
    cfg = _synth_config(s)
    table = st.ablate_keypoint_head(cfg, _train_config(s), _seeds(s), weights, s["mode"])
    outputs = _emit(table.to_csv(), s["out"])
    if s["object_csv"]:
        Path(s["object_csv"]).write_text(st.ablation_object_csv(table, cfg.model.name))
        outputs.append(s["object_csv"])
    print(_summary_text(table, "acc_01d"), file=sys.stderr)
    return [p for p in (s["model"],) if p], outputs, EXIT_OK


def cmd_decode(s):
    _require(s, "records")
    cam = _camera(s)
    counter = Counter()
    raws = dec.read_raw(s["records"])
    dets = dec.batch_decode(raws, cam, float(s["score_threshold"]), float(s["iou_threshold"]), counter)
    text = "".join(json.dumps(dec.detection_to_dict(d)) + "\n" for d in dets)
    outputs = _emit(text, s["out"])
    print(", ".join(f"{k} {counter[k]}" for k in ("kept", "suppressed", "below_threshold", "dropped_degenerate")),
          file=sys.stderr)
    return [s["records"]], outputs, EXIT_OK


def stage_sim(path, cam, runs, score_threshold, iou_threshold) -> evalkit.TimingReport:
    """Time parsing + score filtering, per-detection decoding and NMS of a raw file."""
    samples = {"Preprocess": [], "Prediction": [], "Postprocess": []}
    for _ in range(runs):
        t0 = time.perf_counter()
        raws = [r for r in dec.read_raw(path) if dec.sigmoid(r.score) >= score_threshold]
        t1 = time.perf_counter()
        dets = []
        for r in raws:
            try:
                dets.append(dec.decode_one(r, cam))
            except DegenerateMatrix:
                pass
        t2 = time.perf_counter()
        dec.nms(dets, iou_threshold)
        t3 = time.perf_counter()
        for k, a, b in (("Preprocess", t0, t1), ("Prediction", t1, t2), ("Postprocess", t2, t3)):
            samples[k].append(1e3 * (b - a))
    return evalkit.timing_report(samples)


def cmd_bench(s):
    if s["stage_sim"]:
        _require(s, "records")
        if int(s["runs"]) < 1:
            raise ValueError("--runs must be >= 1")
        report = stage_sim(s["records"], _camera(s), int(s["runs"]),
                           float(s["score_threshold"]), float(s["iou_threshold"]))
        inputs = [s["records"]]
    else:
        _require(s, "timings")
        data = json.loads(Path(s["timings"]).read_text())
        if not isinstance(data, dict) or not data:
            raise ValueError(f"{s['timings']}: expected a non-empty object of stage durations")
        report = evalkit.timing_report(data)
        inputs = [s["timings"]]
    outputs = _emit(report.to_csv(), s["out"])
    if s["out"] is not None:
        print(report.to_text(), file=sys.stderr)
    return inputs, outputs, EXIT_OK


COMMANDS = {
    "eval": cmd_eval, "gradcheck": cmd_gradcheck, "augment": cmd_augment, "synth-gen": cmd_synth_gen,
    "train": cmd_train, "compare-rot": cmd_compare_rot, "ablate-kp": cmd_ablate_kp,
    "decode": cmd_decode, "bench": cmd_bench,
}


# ---------------------------------------------------------------- entry point


def run(argv=None) -> int:
    parser = build_parser()
    try:
        ns = vars(parser.parse_args(argv))
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    command = ns.pop("command")
    logging.basicConfig(level=logging.INFO if ns.pop("verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config_path = ns.pop("config", None)
    try:
        config = config_load(config_path) if config_path else {}
        settings = merge_settings(command, config, ns)
        inputs, outputs, code = COMMANDS[command](settings)
        if config_path:
            inputs = [config_path, *inputs]
        write_manifest(command, settings, inputs, outputs, settings.get("manifest"))
        return code
    except UsageError as e:
        print(f"posekit {command}: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"posekit {command}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, LookupError) as e:
        print(f"posekit {command}: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
