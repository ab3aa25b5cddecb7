#!/usr/bin/env python3
"""Label-efficiency sweep: supervised vs. pretext-pretrained fine-tuning
(partial and full) as the retained label fraction shrinks.

Each cell is a full leave-one-subject-out evaluation, optionally averaged
over several seeds.
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from gazeintent import dataio, evaluate, synth, train


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data", help="existing .session directory (default: generate)")
    parser.add_argument("--out", default="sweep_out")
    parser.add_argument("--fractions", nargs="+", type=float,
                        default=[1.0, 0.5, 0.2, 0.1])
    parser.add_argument("--pipelines", nargs="+",
                        default=["supervised", "semi_partial", "semi_full"],
                        choices=("supervised", "semi_partial", "semi_full"))
    parser.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    parser.add_argument("--subjects", type=int, default=8)
    parser.add_argument("--session-len", type=float, default=60.0)
    parser.add_argument("--task", default="text", choices=("all", "text", "webpage"))
    parser.add_argument("--stride", type=int, default=6)
    parser.add_argument("--max-epochs", type=int, default=50)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.data:
        data_dir = Path(args.data)
    else:
        data_dir = out / "data"
        synth.generate_dataset(
            synth.SynthConfig(seed=0, n_subjects=args.subjects,
                              session_len=args.session_len), data_dir)
    sessions = [dataio.parse_session(p) for p in sorted(data_dir.glob("*.session"))]
    if args.task != "all":
        sessions = [s for s in sessions if s.meta.task == args.task]

    base = train.TrainConfig(stride=args.stride, max_epochs=args.max_epochs)
    grid = {}
    for fraction in args.fractions:
        for pipeline in args.pipelines:
            scores = []
            for seed in args.seeds:
                cfg = replace(base, seed=seed, label_fraction=fraction)
                scores.append(
                    evaluate.loso_evaluate(sessions, pipeline, cfg).f1_overall)
            grid[(fraction, pipeline)] = (float(np.mean(scores)),
                                          float(np.std(scores)))
            mu, sd = grid[(fraction, pipeline)]
            print(f"fraction {fraction:4.0%}  {pipeline:<14} "
                  f"macro F1 {mu:6.2f} +/- {sd:.2f}")

    header = "fraction " + "".join(f"{p:>18}" for p in args.pipelines)
    print("\n" + header)
    for fraction in args.fractions:
        row = f"{fraction:7.0%} "
        for pipeline in args.pipelines:
            mu, sd = grid[(fraction, pipeline)]
            row += f"{mu:12.2f}+/-{sd:4.2f}"
        print(row)
    (out / "sweep.json").write_text(json.dumps(
        [{"fraction": f, "pipeline": p, "mean": mu, "std": sd}
         for (f, p), (mu, sd) in grid.items()], indent=1))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
