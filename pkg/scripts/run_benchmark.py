#!/usr/bin/env python3
"""Leave-one-subject-out comparison of the training pipelines.

Generates a seeded synthetic dataset (unless --data points at an existing
one), evaluates each requested pipeline, prints the per-fold tables, and
writes one report JSON per pipeline.
"""

import argparse
import json
from dataclasses import asdict
from pathlib import Path

from gazeintent import dataio, evaluate, synth, train


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data", help="existing .session directory (default: generate)")
    parser.add_argument("--out", default="benchmark_out", help="output directory")
    parser.add_argument("--pipelines", nargs="+", default=list(evaluate.PIPELINES),
                        choices=evaluate.PIPELINES)
    parser.add_argument("--subjects", type=int, default=8)
    parser.add_argument("--session-len", type=float, default=60.0)
    parser.add_argument("--task", default="text", choices=("all", "text", "webpage"))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--stride", type=int, default=6)
    parser.add_argument("--max-epochs", type=int, default=50)
    parser.add_argument("--label-fraction", type=float, default=1.0)
    parser.add_argument("--input-mode", default="gaze_plus_comp")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.data:
        data_dir = Path(args.data)
    else:
        data_dir = out / "data"
        scfg = synth.SynthConfig(seed=args.seed, n_subjects=args.subjects,
                                 session_len=args.session_len)
        synth.generate_dataset(scfg, data_dir)
        print(f"generated {args.subjects}-subject dataset in {data_dir}")

    sessions = [dataio.parse_session(p) for p in sorted(data_dir.glob("*.session"))]
    if args.task != "all":
        sessions = [s for s in sessions if s.meta.task == args.task]

    cfg = train.TrainConfig(seed=args.seed, stride=args.stride,
                            max_epochs=args.max_epochs,
                            label_fraction=args.label_fraction,
                            input_mode=args.input_mode)
    summary = {}
    for pipeline in args.pipelines:
        report = evaluate.loso_evaluate(sessions, pipeline, cfg)
        print(f"\n== {pipeline} ==")
        print(report.table())
        evaluate.write_report(report, out / f"report_{pipeline}.json",
                              extra={"config": asdict(cfg)})
        summary[pipeline] = report.f1_overall

    print("\nmean macro F1 by pipeline:")
    for pipeline, f1 in sorted(summary.items(), key=lambda kv: -kv[1]):
        print(f"  {pipeline:<14} {f1:6.2f}")
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
