"""Seeded simulator of magnified-reading sessions.

Content-space gaze is a fixation/saccade staircase along text lines
(reading) or a sequence of large erratic jumps (scanning). The mouse
drags the viewport to keep gaze in a preferred region; physical gaze is
the content point seen through the magnifier plus tracker noise.
Behavioral defaults are loosely anchored to classical reading
psychophysics and are config-exposed, not dataset claims.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from gazeintent.dataio import (
    GAZE_RATE,
    MOUSE_RATE,
    GazeSample,
    LabelInterval,
    MouseSample,
    Session,
    SessionMeta,
    q9,
    write_session,
)
from gazeintent.errors import ConfigError, DataError


@dataclass
class SynthConfig:
    seed: int = 0
    n_subjects: int = 8
    session_len: float = 60.0        # seconds
    magnification: float = 2.0
    screen_w: float = 1920.0
    screen_h: float = 1080.0
    fixation_ms_mean: float = 220.0  # reading fixation duration
    fixation_ms_std: float = 60.0
    saccade_px_mean: float = 35.0    # content px, rightward reading saccades
    saccade_px_std: float = 10.0
    scan_jump_px: float = 280.0      # scale of scanning jumps
    tracker_noise_px: float = 3.0
    dropout_burst_rate: float = 0.25   # bursts per second per eye
    dropout_burst_len_ms: float = 60.0
    read_seg_s: float = 4.5          # mean reading segment length
    scan_seg_s: float = 1.5          # mean scanning segment length
    line_height_px: float = 30.0
    margin_px: float = 80.0
    columns: int = 1                 # 2 for webpage-style layouts
    viewport_gain: float = 0.08      # per-sample viewport tracking rate
    mouse_gain: float = 0.05         # per-sample cursor smoothing rate

    def validate(self):
        if self.magnification < 1:
            raise ConfigError(f"magnification must be >= 1, got {self.magnification}")
        if self.session_len < 1.0:
            raise ConfigError("session_len too short for a single behavior segment")
        for name in ("fixation_ms_mean", "saccade_px_mean", "scan_jump_px",
                     "read_seg_s", "scan_seg_s", "screen_w", "screen_h"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


def _segments(cfg: SynthConfig, rng) -> list:
    """Alternating reading/scanning segments tiling the session."""
    segs = []
    t = 0.0
    kind = "reading"
    while t < cfg.session_len:
        mean = cfg.read_seg_s if kind == "reading" else cfg.scan_seg_s
        dur = max(0.5, rng.normal(mean, 0.3 * mean))
        end = min(t + dur, cfg.session_len)
        segs.append(LabelInterval(t, end, kind))
        t = end
        kind = "scanning" if kind == "reading" else "reading"
    return segs


def _content_path(cfg: SynthConfig, segs, n, rng) -> np.ndarray:
    """Content-space gaze trajectory, one point per 120 Hz sample."""
    w, h = cfg.screen_w, cfg.screen_h
    col_w = (w - 2 * cfg.margin_px) / cfg.columns
    col = 0

    def line_bounds(column):
        x0 = cfg.margin_px + column * col_w
        return x0 + 5.0, x0 + col_w - 5.0

    x0, x1 = line_bounds(col)
    pos = np.empty((2, n))
    x, y = x0, cfg.margin_px
    kinds = np.empty(n, dtype=object)
    for seg in segs:
        i0 = int(round(seg.start * GAZE_RATE))
        i1 = min(int(round(seg.end * GAZE_RATE)), n)
        kinds[i0:i1] = seg.label

    i = 0
    while i < n:
        reading = kinds[i] == "reading"
        if reading:
            dur_ms = max(50.0, rng.normal(cfg.fixation_ms_mean, cfg.fixation_ms_std))
        else:
            dur_ms = max(30.0, rng.normal(0.5 * cfg.fixation_ms_mean, 0.5 * cfg.fixation_ms_std))
        hold = max(1, int(round(dur_ms / 1000.0 * GAZE_RATE)))
        j = min(i + hold, n)
        pos[0, i:j] = x
        pos[1, i:j] = y
        i = j
        if i >= n:
            break
        if kinds[i] == "reading":
            x += max(5.0, rng.normal(cfg.saccade_px_mean, cfg.saccade_px_std))
            y += rng.normal(0.0, 1.5)
            if x > x1:
                # return sweep to the next line (or next column / page top)
                y += cfg.line_height_px
                if y > h - cfg.margin_px:
                    col = (col + 1) % cfg.columns
                    y = cfg.margin_px
                x0, x1 = line_bounds(col)
                x = x0 + abs(rng.normal(0.0, 5.0))
            y = min(max(y, 0.0), h)
        else:
            ang = rng.uniform(0.0, 2.0 * math.pi)
            mag = abs(rng.normal(cfg.scan_jump_px, 0.3 * cfg.scan_jump_px))
            x = min(max(x + mag * math.cos(ang), 0.0), w)
            y = min(max(y + mag * math.sin(ang), 0.0), h)
    return pos


def generate_session(cfg: SynthConfig, subject_idx: int, task: str = "text") -> Session:
    cfg.validate()
    if task == "webpage" and cfg.columns == 1:
        cfg = replace(cfg, columns=2,
                      read_seg_s=0.6 * cfg.read_seg_s,
                      scan_seg_s=1.5 * cfg.scan_seg_s)
    rng = np.random.default_rng([cfg.seed, subject_idx, 0 if task == "text" else 1])
    n = int(round(cfg.session_len * GAZE_RATE))
    w, h, m = cfg.screen_w, cfg.screen_h, cfg.magnification

    segs = _segments(cfg, rng)
    content = _content_path(cfg, segs, n, rng)

    # viewport follows gaze with a preferred region at the lens center
    vmax = np.array([w * (1 - 1 / m), h * (1 - 1 / m)])
    center = np.array([w / (2 * m), h / (2 * m)])
    viewport = np.empty((2, n))
    v = np.clip(content[:, 0] - center, 0.0, vmax)
    for i in range(n):
        target = np.clip(content[:, i] - center, 0.0, vmax)
        v = v + cfg.viewport_gain * (target - v)
        viewport[:, i] = v

    # physical gaze through the lens; cursor is a smoothed pursuit of it
    phys_clean = np.clip((content - viewport) * m, [[0.0], [0.0]], [[w], [h]])
    mouse_path = np.empty((2, n))
    mp = phys_clean[:, 0].copy()
    for i in range(n):
        mp = mp + cfg.mouse_gain * (phys_clean[:, i] - mp)
        mouse_path[:, i] = mp

    def noisy_eye():
        e = phys_clean + rng.normal(0.0, cfg.tracker_noise_px, size=(2, n))
        return np.clip(e, [[0.0], [0.0]], [[w], [h]])

    left = noisy_eye()
    right = noisy_eye()

    def dropout_mask():
        mask = np.zeros(n, dtype=bool)
        p_start = cfg.dropout_burst_rate / GAZE_RATE
        mean_len = max(1.0, cfg.dropout_burst_len_ms / 1000.0 * GAZE_RATE)
        starts = rng.random(n) < p_start
        for i in np.flatnonzero(starts):
            length = rng.geometric(1.0 / mean_len)
            mask[i:i + length] = True
        return mask

    left_missing = dropout_mask()
    right_missing = dropout_mask()

    meta = SessionMeta(subject_id=f"S{subject_idx:02d}", task=task,
                       magnification=m, screen_w=w, screen_h=h)
    gaze = []
    for i in range(n):
        lx, ly = (None, None) if left_missing[i] else (q9(left[0, i]), q9(left[1, i]))
        rx, ry = (None, None) if right_missing[i] else (q9(right[0, i]), q9(right[1, i]))
        gaze.append(GazeSample(t=q9(i / GAZE_RATE), lx=lx, ly=ly, rx=rx, ry=ry,
                               vx=q9(viewport[0, i]), vy=q9(viewport[1, i])))
    step = GAZE_RATE // MOUSE_RATE
    mouse = [MouseSample(t=q9(i / GAZE_RATE), mx=q9(mouse_path[0, i]), my=q9(mouse_path[1, i]))
             for i in range(0, n, step)]
    labels = [LabelInterval(q9(s.start), q9(s.end), s.label) for s in segs]
    return Session(meta, gaze, mouse, labels)


def generate_dataset(cfg: SynthConfig, out_dir) -> list:
    """One session file per subject x {text, webpage}; returns written paths."""
    cfg.validate()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {out_dir}: {e}") from e
    paths = []
    for subject_idx in range(cfg.n_subjects):
        for task in ("text", "webpage"):
            session = generate_session(cfg, subject_idx, task)
            path = out_dir / f"{session.meta.subject_id}_{task}.session"
            try:
                write_session(session, path)
            except OSError as e:
                raise DataError(f"cannot write {path}: {e}") from e
            paths.append(path)
    return paths
