"""Two-stage training recipe: mouse-velocity pretext pretraining, then
partial or full fine-tuning for intent classification, plus the purely
supervised baseline and the input-ablation configurations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from gazeintent import dataio, model
from gazeintent.errors import ConfigError, DataError
from gazeintent.numerics import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    backward,
    collect_grads,
    mse_loss,
    weighted_cross_entropy,
    zero_grads,
)

FREEZE_MODES = ("full", "partial")
STAGES = ("pretext", "finetune", "supervised")


@dataclass
class TrainConfig:
    lr: float = 3e-4
    weight_decay: float = 0.01
    batch_size: int = 256
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    freeze: str = "full"
    input_mode: str = "gaze_plus_comp"
    stride: int = 6
    label_fraction: float = 1.0
    val_subject_index: int = 0

    def validate(self):
        if self.freeze not in FREEZE_MODES:
            raise ConfigError(f"unknown freeze mode {self.freeze!r}")
        if self.input_mode not in model.INPUT_MODES:
            raise ConfigError(f"unknown input_mode {self.input_mode!r}")
        if not (0.0 < self.label_fraction <= 1.0):
            raise ConfigError("label_fraction must be in (0, 1]")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")


def compute_class_weights(labels) -> np.ndarray:
    """Inverse-frequency weights w_c = N / (2 * N_c); mean 1 under balance."""
    labels = np.asarray(labels)
    counts = np.array([(labels == 0).sum(), (labels == 1).sum()], dtype=np.float64)
    if (counts == 0).any():
        raise DataError("both classes must be present in the training split")
    return labels.size / (2.0 * counts)


# ---------------------------------------------------------------------------
# window assembly


def split_by_subject(sessions):
    by_subject = {}
    for s in sessions:
        by_subject.setdefault(s.meta.subject_id, []).append(s)
    return by_subject


def _pick_val_subject(subjects, index: int) -> str:
    subjects = sorted(subjects)
    if len(subjects) < 2:
        raise DataError("need at least two training subjects to hold one out for validation")
    return subjects[index % len(subjects)]


def collect_windows(sessions, cfg: TrainConfig, mode: str, with_mouse: bool = False):
    windows = []
    for s in sessions:
        windows.extend(dataio.windowize(s, cfg.stride, mode, with_mouse=with_mouse))
    return windows


def _subsample_labels(windows, fraction: float, seed: int):
    if fraction >= 1.0:
        return windows
    rng = np.random.default_rng([seed, 0x1abe1])
    keep = max(2, int(round(fraction * len(windows))))
    idx = np.sort(rng.choice(len(windows), size=keep, replace=False))
    return [windows[i] for i in idx]


def _stack_batch(windows, streams, dtype=np.float32):
    batch = {}
    for key in streams:
        batch[key] = np.stack([getattr(w, key) for w in windows]).astype(dtype)
    return batch


def _classifier_arrays(windows, streams):
    return _stack_batch(windows, streams), np.array([w.label for w in windows])


def _pretext_arrays(windows, streams):
    return _stack_batch(windows, streams), np.stack(
        [w.vel_target for w in windows]).astype(np.float32)


# ---------------------------------------------------------------------------
# generic loop


def _epoch_batches(n: int, batch_size: int, rng) -> list:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _train_loop(params: model.ModelParams, trainable_names, make_loss,
                eval_val, n_train: int, cfg: TrainConfig, stage: str):
    """Adam loop with early stopping on held-out-subject validation loss.
    Returns (best_params, history)."""
    trainable = {k: params.tensors[k] for k in trainable_names}
    state = AdamState.for_params(trainable)
    rng = np.random.default_rng([cfg.seed, STAGES.index(stage)])
    history = []
    best = params.copy()
    best_loss = float("inf")
    best_epoch = -1
    for epoch in range(cfg.max_epochs):
        losses = []
        for idx in _epoch_batches(n_train, cfg.batch_size, rng):
            zero_grads(params.tensors.values())
            with Tape() as tape:
                loss = make_loss(idx)
            backward(loss, tape, params=trainable.values())
            adam_step(trainable, collect_grads(trainable), state,
                      lr=cfg.lr, weight_decay=cfg.weight_decay)
            losses.append(loss.item())
        val = eval_val(params)
        entry = {"stage": stage, "epoch": epoch,
                 "train_loss": float(np.mean(losses)), **val}
        history.append(entry)
        if val["val_loss"] < best_loss:
            best_loss = val["val_loss"]
            best = params.copy()
            best_epoch = epoch
        elif epoch - best_epoch >= cfg.patience:
            break
    return best, history


def _mean_loss_batched(params, batch, make_loss_on, batch_size=512):
    n = len(next(iter(batch.values())) if isinstance(batch, dict) else batch)
    total, count = 0.0, 0
    for i in range(0, n, batch_size):
        sl = slice(i, i + batch_size)
        loss = make_loss_on(sl)
        k = min(batch_size, n - i)
        total += loss.item() * k
        count += k
    return total / max(count, 1)


# ---------------------------------------------------------------------------
# stages


def pretrain(sessions, cfg: TrainConfig):
    """Mouse-velocity pretext pretraining; labels are never read.

    Returns (params_with_velocity_head, stats, history).
    """
    cfg.validate()
    if cfg.input_mode in ("mouse_only", "mouse_gaze_comp"):
        raise ConfigError("the pretext stage predicts mouse velocity from gaze; "
                          "mouse input modes are not allowed")
    by_subject = split_by_subject(sessions)
    val_subject = _pick_val_subject(by_subject, cfg.val_subject_index)
    train_sessions = [s for s in sessions if s.meta.subject_id != val_subject]
    val_sessions = by_subject[val_subject]

    train_w = collect_windows(train_sessions, cfg, "pretext")
    val_w = collect_windows(val_sessions, cfg, "pretext")
    if not train_w:
        raise DataError("no windows with mouse-velocity targets in the training split")
    stats = dataio.compute_stats(train_w, sessions[0].meta)
    train_w = dataio.normalize(train_w, stats)
    val_w = dataio.normalize(val_w, stats)

    mcfg = model.ModelConfig(input_mode=cfg.input_mode)
    params = model.init_params(mcfg, cfg.seed, head_kind=model.VELOCITY_HEAD)
    streams = mcfg.streams
    x_train, v_train = _pretext_arrays(train_w, streams)
    x_val, v_val = _pretext_arrays(val_w, streams)

    def make_loss(idx):
        batch = {k: v[idx] for k, v in x_train.items()}
        return mse_loss(model.forward(params, batch), Tensor(v_train[idx]))

    def eval_val(p):
        loss = _mean_loss_batched(
            p, x_val,
            lambda sl: mse_loss(model.forward(p, {k: v[sl] for k, v in x_val.items()}),
                                Tensor(v_val[sl])))
        return {"val_loss": loss}

    best, history = _train_loop(params, params.learnable_names(), make_loss,
                                eval_val, len(train_w), cfg, "pretext")
    return best, stats, history


def _classifier_stage(params, stats, sessions, cfg: TrainConfig, stage: str,
                      trainable_names, permute_labels: bool = False):
    by_subject = split_by_subject(sessions)
    val_subject = _pick_val_subject(by_subject, cfg.val_subject_index)
    train_sessions = [s for s in sessions if s.meta.subject_id != val_subject]
    val_sessions = by_subject[val_subject]

    mcfg = params.config
    with_mouse = "m" in mcfg.streams
    train_w = collect_windows(train_sessions, cfg, "labeled", with_mouse=with_mouse)
    val_w = collect_windows(val_sessions, cfg, "labeled", with_mouse=with_mouse)
    train_w = _subsample_labels(train_w, cfg.label_fraction, cfg.seed)
    if not train_w or not val_w:
        raise DataError("labeled windows missing in train or validation split")
    if stats is None:
        stats = dataio.compute_stats(train_w, sessions[0].meta)
    train_w = dataio.normalize(train_w, stats)
    val_w = dataio.normalize(val_w, stats)

    streams = mcfg.streams
    x_train, y_train = _classifier_arrays(train_w, streams)
    x_val, y_val = _classifier_arrays(val_w, streams)
    if permute_labels:
        rng = np.random.default_rng([cfg.seed, 0x9e12])
        y_train = y_train[rng.permutation(y_train.size)]
    weights = Tensor(compute_class_weights(y_train))

    def make_loss(idx):
        batch = {k: v[idx] for k, v in x_train.items()}
        return weighted_cross_entropy(model.forward(params, batch), y_train[idx], weights)

    def eval_val(p):
        loss = _mean_loss_batched(
            p, x_val,
            lambda sl: weighted_cross_entropy(
                model.forward(p, {k: v[sl] for k, v in x_val.items()}),
                y_val[sl], weights))
        probs = np.concatenate([
            model.predict_proba(p, {k: v[i:i + 512] for k, v in x_val.items()})
            for i in range(0, len(val_w), 512)])
        acc = float((probs.argmax(axis=1) == y_val).mean())
        return {"val_loss": loss, "val_acc": acc}

    best, history = _train_loop(params, trainable_names, make_loss, eval_val,
                                len(train_w), cfg, stage)
    return best, stats, history


def partial_trainable_names(params: model.ModelParams) -> list:
    """Partial fine-tuning updates the transformer layers and the head;
    encoders, cross-attention and the fusion projection stay frozen."""
    return [k for k in params.learnable_names()
            if k.startswith("tf") or k.startswith("head.")]


def finetune(checkpoint_path, sessions, cfg: TrainConfig):
    """Swap the pretext head for a fresh classifier and fine-tune.

    cfg.freeze selects full (all parameters) or partial (transformer +
    head only) updates. Mouse data is never consumed here.
    """
    cfg.validate()
    params, stats = model.load_for_finetune(checkpoint_path, head_seed=cfg.seed + 1)
    if params.config.input_mode != cfg.input_mode:
        raise ConfigError(f"checkpoint input_mode {params.config.input_mode} "
                          f"!= requested {cfg.input_mode}")
    if "m" in params.config.streams:
        raise ConfigError("fine-tuning consumes gaze streams only")
    trainable = (params.learnable_names() if cfg.freeze == "full"
                 else partial_trainable_names(params))
    return _classifier_stage(params, stats, sessions, cfg, "finetune", trainable)


def supervised_train(sessions, cfg: TrainConfig, permute_labels: bool = False):
    """Weighted-CE training from random init; supports all input ablations."""
    cfg.validate()
    mcfg = model.ModelConfig(input_mode=cfg.input_mode)
    params = model.init_params(mcfg, cfg.seed, head_kind=model.CLASSIFIER_HEAD)
    return _classifier_stage(params, None, sessions, cfg, "supervised",
                             params.learnable_names(), permute_labels=permute_labels)


# ---------------------------------------------------------------------------
# artifacts


def write_artifacts(out_dir, params, stats, history, cfg: TrainConfig,
                    extra_manifest: dict | None = None):
    """Checkpoint directory + history.jsonl + run.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save_checkpoint(params, stats, out_dir / "checkpoint")
    with open(out_dir / "history.jsonl", "w") as f:
        for entry in history:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    manifest = {"config": asdict(cfg), **(extra_manifest or {})}
    (out_dir / "run.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
