#!/usr/bin/env python3
"""Trade-off sweep over the dimensionality reduction factor.

For each factor, trains briefly on a synthetic dataset with realistic
feature widths and reports projection parameter count, mean epoch wall time,
and top-K quality, each also as a percentage of the r=1 baseline.
"""

import argparse
import io
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from alignrec.config import RunConfig
from alignrec.data import SynthSpec, synth_generate
from alignrec.model import projection_param_count
from alignrec.train import run_training


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/reduction")
    parser.add_argument("--factors", default="1,4,8,16")
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--visual-dim", type=int, default=512)
    parser.add_argument("--text-dim", type=int, default=384)
    args = parser.parse_args()

    root = Path(args.out)
    factors = [int(f) for f in args.factors.split(",")]
    dataset = synth_generate(
        SynthSpec(users=200, items=150, interactions_per_user=12,
                  visual_dim=args.visual_dim, text_dim=args.text_dim, seed=0),
        root / "data")

    rows = []
    for factor in factors:
        cfg = RunConfig(interactions=dataset["interactions"],
                        visual=dataset["visual"], text=dataset["text"],
                        out=str(root / f"r{factor}"), variant="full",
                        reduction=factor, max_epochs=args.epochs,
                        patience=10_000, seed=0)
        stream = io.StringIO()
        run_training(cfg, stdout=stream)
        lines = [json.loads(l) for l in stream.getvalue().strip().splitlines()]
        epochs = [r["wall_ms"] for r in lines if r["split"] == "validation"]
        rows.append({
            "factor": factor,
            "params": projection_param_count(args.visual_dim, args.text_dim,
                                             factor),
            "epoch_ms": float(np.mean(epochs)),
            "recall@20": lines[-1]["recall@20"],
        })

    base = next(r for r in rows if r["factor"] == 1) if 1 in factors else rows[0]
    print(f"{'r':>4} {'proj params':>12} {'% base':>8} {'epoch ms':>10} "
          f"{'% base':>8} {'R@20':>8}")
    for r in rows:
        print(f"{r['factor']:>4} {r['params']:>12} "
              f"{100 * r['params'] / base['params']:>7.1f}% "
              f"{r['epoch_ms']:>10.0f} "
              f"{100 * r['epoch_ms'] / base['epoch_ms']:>7.1f}% "
              f"{r['recall@20']:>8.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
