"""Train the toy regressor with each rotation head on identical data and report
mean +- sd held-out geodesic error per head.

    python scripts/compare_rotations.py --seeds 5 --out results/rotations.csv
"""
import argparse
import time
from pathlib import Path

from posekit.synthtrain import SynthConfig, TrainConfig, compare_representations


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--n-frames", type=int, default=2000)
    ap.add_argument("--noise-px", type=float, default=0.0)
    ap.add_argument("--occlusion", type=float, default=0.0)
    ap.add_argument("--out", type=Path, default=Path("results/rotations.csv"))
    args = ap.parse_args()

    t0 = time.perf_counter()
    cfg = SynthConfig(n_frames=args.n_frames, noise_px=args.noise_px, occlusion=args.occlusion)
    table = compare_representations(cfg, TrainConfig(epochs=args.epochs), range(args.seeds))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(table.to_csv())
    for mode, (mean, sd) in table.summary("geodesic_deg").items():
        print(f"{mode:6s} {mean:7.3f} +- {sd:.3f} deg")
    print(f"wrote {args.out} in {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
