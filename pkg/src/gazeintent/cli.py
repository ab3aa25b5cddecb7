"""Single executable for the full pipeline: dataset generation, training
(supervised / pretext / fine-tune), LOSO evaluation, and streaming
inference.

Exit codes: 0 success, 2 usage or config error, 3 data error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

import gazeintent
from gazeintent import dataio, evaluate, model, stream, synth, train
from gazeintent.errors import ConfigError, DataError, GazeIntentError


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_config(path, cls):
    """Instantiate a config dataclass from a JSON file, rejecting unknown keys."""
    doc = json.loads(Path(path).read_text())
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    return cls(**doc)


def _write_manifest(out_dir, command: str, config, inputs: dict, artifacts: list):
    manifest = {
        "tool_version": gazeintent.__version__,
        "command": command,
        "config": asdict(config) if dataclasses.is_dataclass(config) else config,
        "input_checksums": inputs,
        "artifacts": [str(a) for a in artifacts],
    }
    Path(out_dir, "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _load_sessions(data_dir) -> list:
    data_dir = Path(data_dir)
    paths = sorted(data_dir.glob("*.session"))
    if not paths:
        raise DataError(f"no .session files in {data_dir}")
    return paths, [dataio.parse_session(p) for p in paths]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    cfg = _load_config(args.config, synth.SynthConfig) if args.config else synth.SynthConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.subjects is not None:
        cfg = replace(cfg, n_subjects=args.subjects)
    if args.session_len is not None:
        cfg = replace(cfg, session_len=args.session_len)
    paths = synth.generate_dataset(cfg, args.out)
    _write_manifest(args.out, "gen", cfg, {}, paths)
    print(f"wrote {len(paths)} session files to {args.out}")
    return 0


def _train_config_from_args(args) -> train.TrainConfig:
    cfg = _load_config(args.config, train.TrainConfig) if args.config else train.TrainConfig()
    overrides = {}
    for name in ("seed", "stride", "batch_size", "max_epochs", "patience",
                 "label_fraction", "lr", "weight_decay"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    if getattr(args, "input_mode", None):
        overrides["input_mode"] = args.input_mode
    if getattr(args, "freeze", None):
        overrides["freeze"] = args.freeze
    return replace(cfg, **overrides)


def cmd_train(args) -> int:
    cfg = _train_config_from_args(args)
    if args.mode == "finetune" and not getattr(args, "from_ckpt", None):
        raise ConfigError("finetune requires --from CKPT")
    paths, sessions = _load_sessions(args.data)
    if args.task != "all":
        sessions = [s for s in sessions if s.meta.task == args.task]
        if not sessions:
            raise DataError(f"no sessions with task {args.task!r}")
    if args.mode == "pretrain":
        params, stats, history = train.pretrain(sessions, cfg)
    elif args.mode == "finetune":
        params, stats, history = train.finetune(args.from_ckpt, sessions, cfg)
    else:
        params, stats, history = train.supervised_train(sessions, cfg)
    out = Path(args.out)
    checksums = {str(p): _sha256(p) for p in paths}
    train.write_artifacts(out, params, stats, history,
                          cfg, extra_manifest={"mode": args.mode,
                                               "input_checksums": checksums})
    _write_manifest(out, f"train:{args.mode}", cfg, checksums,
                    [out / "checkpoint", out / "history.jsonl"])
    last = history[-1]
    print(f"{args.mode}: {len(history)} epochs, final train_loss "
          f"{last['train_loss']:.4f}, val_loss {last['val_loss']:.4f}")
    print(f"checkpoint written to {out / 'checkpoint'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _train_config_from_args(args)
    paths, sessions = _load_sessions(args.data)
    if args.task != "all":
        sessions = [s for s in sessions if s.meta.task == args.task]
        if not sessions:
            raise DataError(f"no sessions with task {args.task!r}")
    report = evaluate.loso_evaluate(sessions, args.pipeline, cfg)
    checksums = {str(p): _sha256(p) for p in paths}
    cfg_hash = hashlib.sha256(
        json.dumps(asdict(cfg), sort_keys=True).encode()).hexdigest()
    evaluate.write_report(report, args.out,
                          extra={"config": asdict(cfg), "config_hash": cfg_hash,
                                 "input_checksums": checksums})
    print(report.table())
    print(f"report written to {args.out}")
    return 0


def _iter_feed_lines(source):
    if source == "-":
        yield from sys.stdin
    else:
        with open(source) as f:
            yield from f


def _parse_feed_line(line: str) -> dataio.GazeSample:
    fields = line.strip().split(",")
    if len(fields) != 7:
        raise DataError(f"feed line needs 7 fields, got {len(fields)}: {line.strip()!r}")
    vals = [None if f == "" else float(f) for f in fields]
    if vals[0] is None or vals[5] is None or vals[6] is None:
        raise DataError(f"feed line missing t or viewport: {line.strip()!r}")
    return dataio.GazeSample(t=vals[0], lx=vals[1], ly=vals[2],
                             rx=vals[3], ry=vals[4], vx=vals[5], vy=vals[6])


def cmd_infer(args) -> int:
    ckpt = Path(args.ckpt)
    if not (ckpt / "manifest.json").exists():
        raise ConfigError(f"no checkpoint at {ckpt}")
    if args.input != "-" and not Path(args.input).exists():
        raise DataError(f"no such input file: {args.input}")

    if args.input != "-" and args.input.endswith(".session"):
        session = dataio.parse_session(args.input)
        eye = args.eye if args.eye != "auto" else dataio.select_eye(session.gaze)
        magnification = session.meta.magnification
        samples = session.gaze
    else:
        eye = args.eye if args.eye != "auto" else "left"
        magnification = args.magnification
        samples = (_parse_feed_line(line) for line in _iter_feed_lines(args.input)
                   if line.strip())
    engine = stream.StreamingEngine.from_checkpoint(
        ckpt, magnification, eye=eye, stride=args.stride)
    n = 0
    for sample in samples:
        decision = engine.push(sample)
        if decision is not None:
            n += 1
            print(json.dumps({"t": decision.t_end, "label": decision.label,
                              "p_reading": decision.p_reading}))
    print(f"emitted {n} decisions", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gazeintent",
        description="Reading vs. scanning intent from magnified-screen gaze.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a seeded synthetic dataset")
    p.add_argument("--config", help="SynthConfig JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--subjects", type=int, help="override subject count")
    p.add_argument("--session-len", dest="session_len", type=float,
                   help="override session length (seconds)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("--mode", required=True,
                   choices=("supervised", "pretrain", "finetune"))
    p.add_argument("--data", required=True, help="directory of .session files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--from", dest="from_ckpt", help="pretext checkpoint (finetune)")
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--input-mode", dest="input_mode", choices=model.INPUT_MODES,
                   help="input ablation (default gaze_plus_comp)")
    p.add_argument("--freeze", choices=train.FREEZE_MODES,
                   help="finetune freeze mode (default full)")
    p.add_argument("--task", default="all", choices=("all", "text", "webpage"))
    p.add_argument("--seed", type=int)
    p.add_argument("--stride", type=int, help="window stride in samples (default 6)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="default 256")
    p.add_argument("--max-epochs", dest="max_epochs", type=int, help="default 50")
    p.add_argument("--patience", type=int, help="early-stop patience (default 5)")
    p.add_argument("--label-fraction", dest="label_fraction", type=float,
                   help="fraction of training labels kept (default 1.0)")
    p.add_argument("--lr", type=float, help="default 3e-4")
    p.add_argument("--weight-decay", dest="weight_decay", type=float,
                   help="default 0.01")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="leave-one-subject-out evaluation")
    p.add_argument("--pipeline", required=True, choices=evaluate.PIPELINES)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report.json path")
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--task", default="all", choices=("all", "text", "webpage"))
    p.add_argument("--input-mode", dest="input_mode", choices=model.INPUT_MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--label-fraction", dest="label_fraction", type=float)
    p.add_argument("--jobs", type=int, default=1,
                   help="reserved for fold parallelism (currently sequential)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="streaming gaze-only inference")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--input", required=True,
                   help=".session file, CSV feed file, or '-' for stdin")
    p.add_argument("--stride", type=int, default=6, help="emission stride")
    p.add_argument("--eye", default="auto", choices=("auto", "left", "right"))
    p.add_argument("--magnification", type=float, default=1.0,
                   help="lens factor for raw feeds (session files carry their own)")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 0
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except GazeIntentError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
