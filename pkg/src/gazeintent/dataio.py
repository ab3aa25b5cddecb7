"""Session data model, the v1 session container format, and preprocessing
from raw recordings to model-ready 24-step windows.

A session file is UTF-8 text: a `#meta {json}` line, then `#gaze`,
`#mouse` and `#labels` CSV sections. Missing gaze coordinates are empty
fields. Floats are serialized with 9 significant digits.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from gazeintent.errors import ConfigError, DataError

GAZE_RATE = 120
MOUSE_RATE = 10
WINDOW_LEN = 24
WINDOW_SPAN_S = 0.2
MAX_MISSING = WINDOW_LEN // 2  # strictly more than this -> window excluded

LABELS = ("reading", "scanning")
READING, SCANNING = 0, 1


def fmt9(x: float) -> str:
    return f"{x:.9g}"


def q9(x: float) -> float:
    """Quantize to 9 significant digits (the container's serialized precision)."""
    return float(fmt9(x))


@dataclass
class SessionMeta:
    subject_id: str
    task: str  # "text" | "webpage"
    magnification: float
    screen_w: float
    screen_h: float
    gaze_rate: int = GAZE_RATE
    mouse_rate: int = MOUSE_RATE

    def validate(self):
        if self.task not in ("text", "webpage"):
            raise DataError(f"unknown task {self.task!r}")
        if self.magnification < 1:
            raise ConfigError(f"magnification must be >= 1, got {self.magnification}")
        if self.screen_w <= 0 or self.screen_h <= 0:
            raise DataError("screen dimensions must be positive")
        if self.gaze_rate != GAZE_RATE or self.mouse_rate != MOUSE_RATE:
            raise DataError(f"v1 files are fixed at {GAZE_RATE}/{MOUSE_RATE} Hz")


@dataclass
class GazeSample:
    t: float
    lx: float | None
    ly: float | None
    rx: float | None
    ry: float | None
    vx: float
    vy: float


@dataclass
class MouseSample:
    t: float
    mx: float
    my: float


@dataclass
class LabelInterval:
    start: float
    end: float
    label: str


@dataclass
class Session:
    meta: SessionMeta
    gaze: list
    mouse: list
    labels: list


@dataclass
class Window:
    g: np.ndarray            # (2, 24) raw gaze, pixels until normalized
    c: np.ndarray            # (2, 24) compensated gaze
    t_end: float
    subject_id: str
    label: int | None = None
    vel_target: np.ndarray | None = None   # (2,) px/s
    m: np.ndarray | None = None            # (2, 24) mouse position stream


# ---------------------------------------------------------------------------
# container I/O


def write_session(session: Session, path) -> None:
    meta = session.meta
    lines = ["#meta " + json.dumps({
        "subject_id": meta.subject_id, "task": meta.task,
        "magnification": meta.magnification,
        "screen_w": meta.screen_w, "screen_h": meta.screen_h,
        "gaze_rate": meta.gaze_rate, "mouse_rate": meta.mouse_rate,
    }, sort_keys=True)]
    lines.append("#gaze")
    lines.append("t,lx,ly,rx,ry,vx,vy")
    for s in session.gaze:
        coords = ",".join("" if c is None else fmt9(c) for c in (s.lx, s.ly, s.rx, s.ry))
        lines.append(f"{fmt9(s.t)},{coords},{fmt9(s.vx)},{fmt9(s.vy)}")
    lines.append("#mouse")
    lines.append("t,mx,my")
    for s in session.mouse:
        lines.append(f"{fmt9(s.t)},{fmt9(s.mx)},{fmt9(s.my)}")
    lines.append("#labels")
    lines.append("start,end,label")
    for iv in session.labels:
        lines.append(f"{fmt9(iv.start)},{fmt9(iv.end)},{iv.label}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_session(path) -> Session:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read session file {path}: {e}") from e
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#meta "):
        raise DataError(f"{path}:1: expected '#meta {{json}}' header")
    try:
        meta = SessionMeta(**json.loads(lines[0][len("#meta "):]))
    except (TypeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}:1: malformed meta: {e}") from e
    meta.validate()

    section = None
    gaze, mouse, labels = [], [], []
    expect_header = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            section = line.strip()
            if section not in ("#gaze", "#mouse", "#labels"):
                raise DataError(f"{path}:{lineno}: unknown section {section}")
            expect_header = {"#gaze": "t,lx,ly,rx,ry,vx,vy",
                             "#mouse": "t,mx,my",
                             "#labels": "start,end,label"}[section]
            continue
        if expect_header is not None:
            if line != expect_header:
                raise DataError(f"{path}:{lineno}: expected header {expect_header!r}")
            expect_header = None
            continue
        fields = line.split(",")
        try:
            if section == "#gaze":
                if len(fields) != 7:
                    raise ValueError("expected 7 fields")
                t = float(fields[0])
                coords = [None if f == "" else float(f) for f in fields[1:5]]
                gaze.append(GazeSample(t, *coords, vx=float(fields[5]), vy=float(fields[6])))
            elif section == "#mouse":
                if len(fields) != 3:
                    raise ValueError("expected 3 fields")
                mouse.append(MouseSample(float(fields[0]), float(fields[1]), float(fields[2])))
            elif section == "#labels":
                if len(fields) != 3:
                    raise ValueError("expected 3 fields")
                if fields[2] not in LABELS:
                    raise ValueError(f"unknown label {fields[2]!r}")
                labels.append(LabelInterval(float(fields[0]), float(fields[1]), fields[2]))
            else:
                raise ValueError("data row outside any section")
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: {e}") from e

        # per-row validation with line numbers
        if section == "#gaze":
            s = gaze[-1]
            if len(gaze) > 1 and s.t <= gaze[-2].t:
                raise DataError(f"{path}:{lineno}: non-monotonic gaze timestamp {s.t}")
            for c, dim in ((s.lx, meta.screen_w), (s.ly, meta.screen_h),
                           (s.rx, meta.screen_w), (s.ry, meta.screen_h)):
                if c is not None and not (0 <= c <= dim):
                    raise DataError(f"{path}:{lineno}: coordinate {c} out of range [0, {dim}]")
            vmax = meta.screen_w * (1 - 1 / meta.magnification)
            if not (-1e-9 <= s.vx <= vmax + 1e-9):
                raise DataError(f"{path}:{lineno}: viewport x {s.vx} outside [0, {vmax}]")
        elif section == "#mouse":
            if len(mouse) > 1 and mouse[-1].t <= mouse[-2].t:
                raise DataError(f"{path}:{lineno}: non-monotonic mouse timestamp {mouse[-1].t}")
        elif section == "#labels":
            iv = labels[-1]
            if iv.start >= iv.end:
                raise DataError(f"{path}:{lineno}: empty label interval")
            if len(labels) > 1 and iv.start < labels[-2].end:
                raise DataError(f"{path}:{lineno}: overlapping label intervals")
    return Session(meta, gaze, mouse, labels)


# ---------------------------------------------------------------------------
# preprocessing


def select_eye(gaze: list) -> str:
    """Eye with the lower missing ratio over the first ceil(10%) of samples."""
    if not gaze:
        raise DataError("empty session")
    n = math.ceil(0.1 * len(gaze))
    head = gaze[:n]
    left_missing = sum(1 for s in head if s.lx is None or s.ly is None)
    right_missing = sum(1 for s in head if s.rx is None or s.ry is None)
    if left_missing == n and right_missing == n:
        raise DataError("both eyes fully missing in the calibration span")
    return "left" if left_missing <= right_missing else "right"


def eye_series(gaze: list, eye: str):
    """Return (x, y, missing) arrays for one eye; missing where either coord absent."""
    if eye == "left":
        xs = [s.lx for s in gaze]
        ys = [s.ly for s in gaze]
    else:
        xs = [s.rx for s in gaze]
        ys = [s.ry for s in gaze]
    missing = np.array([x is None or y is None for x, y in zip(xs, ys)])
    # a sample with either coordinate absent counts as missing as a whole,
    # so interpolation and the exclusion mask agree
    x = np.array([v if v is not None else np.nan for v in xs], dtype=np.float64)
    y = np.array([v if v is not None else np.nan for v in ys], dtype=np.float64)
    x[missing] = np.nan
    y[missing] = np.nan
    return x, y, missing


def interpolate_missing(values: np.ndarray):
    """Fill NaN gaps: linear between valid neighbors, nearest at the edges.

    Returns (filled, missing_mask); an all-missing series comes back
    unchanged with an all-True mask.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.isnan(values)
    if mask.all():
        return values.copy(), mask
    idx = np.arange(values.size)
    filled = values.copy()
    filled[mask] = np.interp(idx[mask], idx[~mask], values[~mask])
    return filled, mask


def remap_to_screen(px: float, py: float, vx: float, vy: float, meta: SessionMeta):
    """Compensate a physical-screen gaze point back into content coordinates."""
    m = meta.magnification
    if m < 1:
        raise ConfigError(f"magnification must be >= 1, got {m}")
    cx = vx + px / m
    cy = vy + py / m
    cx = min(max(cx, 0.0), meta.screen_w)
    cy = min(max(cy, 0.0), meta.screen_h)
    return cx, cy


def mouse_velocity(mouse: list, t_start: float, t_end: float):
    """Mean cursor velocity (px/s) over [t_start, t_end]; None when the window
    falls outside the mouse record."""
    if not mouse:
        return None
    mt = np.array([s.t for s in mouse])
    if t_start < mt[0] or t_end > mt[-1]:
        return None
    mx = np.array([s.mx for s in mouse])
    my = np.array([s.my for s in mouse])
    x0, x1 = np.interp([t_start, t_end], mt, mx)
    y0, y1 = np.interp([t_start, t_end], mt, my)
    dt = t_end - t_start
    return np.array([(x1 - x0) / dt, (y1 - y0) / dt])


def label_at(labels: list, t: float) -> int | None:
    """Class id of the interval covering t (half-open [start, end)), else None."""
    for iv in labels:
        if iv.start <= t < iv.end:
            return LABELS.index(iv.label)
    return None


def windowize(session: Session, stride: int, mode: str, *,
              eye: str | None = None, with_mouse: bool = False) -> list:
    """Slice a session into 24-step windows.

    mode "labeled": attach the annotation at each window's final time
    point, dropping unannotated windows. mode "pretext": attach the mean
    mouse velocity over the trailing 0.2 s and ignore labels. Windows
    with strictly more than 50% missing source samples are dropped.
    """
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if mode not in ("labeled", "pretext"):
        raise ConfigError(f"unknown windowize mode {mode!r}")
    gaze = session.gaze
    n = len(gaze)
    if n < WINDOW_LEN:
        return []
    eye = eye or select_eye(gaze)
    x, y, missing = eye_series(gaze, eye)
    x, _ = interpolate_missing(x)
    y, _ = interpolate_missing(y)
    t = np.array([s.t for s in gaze])
    vx = np.array([s.vx for s in gaze])
    vy = np.array([s.vy for s in gaze])
    m = session.meta.magnification
    cx = np.clip(vx + x / m, 0.0, session.meta.screen_w)
    cy = np.clip(vy + y / m, 0.0, session.meta.screen_h)

    mouse_t = np.array([s.t for s in session.mouse])
    mouse_x = np.array([s.mx for s in session.mouse])
    mouse_y = np.array([s.my for s in session.mouse])

    windows = []
    for start in range(0, n - WINDOW_LEN + 1, stride):
        end = start + WINDOW_LEN
        if missing[start:end].sum() > MAX_MISSING:
            continue
        t_end = float(t[end - 1])
        w = Window(
            g=np.stack([x[start:end], y[start:end]]),
            c=np.stack([cx[start:end], cy[start:end]]),
            t_end=t_end,
            subject_id=session.meta.subject_id,
        )
        if mode == "labeled":
            label = label_at(session.labels, t_end)
            if label is None:
                continue
            w.label = label
        else:
            vel = mouse_velocity(session.mouse, t_end - WINDOW_SPAN_S, t_end)
            if vel is None:
                continue
            w.vel_target = vel
        if with_mouse:
            if session.mouse and mouse_t[0] <= t[start] and t_end <= mouse_t[-1]:
                w.m = np.stack([np.interp(t[start:end], mouse_t, mouse_x),
                                np.interp(t[start:end], mouse_t, mouse_y)])
            else:
                continue
        windows.append(w)
    return windows


# ---------------------------------------------------------------------------
# normalization


@dataclass
class NormStats:
    """Per-channel mean/std of screen-normalized coordinates, plus velocity stats.

    Keys: "g", "c", optionally "m" -> (mean[2], std[2]); "vel" -> (mean[2], std[2])
    in normalized screen units per second. Also carries the screen dims the
    normalization divides by.
    """
    screen_w: float
    screen_h: float
    channels: dict = field(default_factory=dict)
    vel: tuple | None = None

    def to_json(self) -> dict:
        d = {"screen_w": self.screen_w, "screen_h": self.screen_h,
             "channels": {k: [list(mu), list(sd)] for k, (mu, sd) in self.channels.items()}}
        if self.vel is not None:
            d["vel"] = [list(self.vel[0]), list(self.vel[1])]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "NormStats":
        stats = cls(screen_w=d["screen_w"], screen_h=d["screen_h"])
        for k, (mu, sd) in d["channels"].items():
            stats.channels[k] = (np.array(mu), np.array(sd))
        if d.get("vel") is not None:
            stats.vel = (np.array(d["vel"][0]), np.array(d["vel"][1]))
        return stats


def _safe_std(sd: np.ndarray) -> np.ndarray:
    out = sd.copy()
    zero = out == 0
    if zero.any():
        import logging
        logging.getLogger(__name__).warning("zero std in normalization stats; using 1")
        out[zero] = 1.0
    return out


def compute_stats(windows: list, meta: SessionMeta) -> NormStats:
    """Per-feature normalization statistics; call on training windows only."""
    if not windows:
        raise DataError("cannot compute normalization stats from zero windows")
    dims = np.array([meta.screen_w, meta.screen_h])[:, None]
    stats = NormStats(screen_w=meta.screen_w, screen_h=meta.screen_h)
    for key in ("g", "c", "m"):
        arrays = [getattr(w, key) for w in windows if getattr(w, key) is not None]
        if not arrays:
            continue
        stacked = np.stack(arrays) / dims  # (N, 2, 24)
        mu = stacked.mean(axis=(0, 2))
        sd = _safe_std(stacked.std(axis=(0, 2)))
        stats.channels[key] = (mu, sd)
    vels = [w.vel_target for w in windows if w.vel_target is not None]
    if vels:
        v = np.stack(vels) / dims[:, 0]
        stats.vel = (v.mean(axis=0), _safe_std(v.std(axis=0)))
    return stats


def normalize(windows: list, stats: NormStats) -> list:
    """Standardize window streams (and velocity targets) with training-split stats."""
    dims = np.array([stats.screen_w, stats.screen_h])[:, None]
    out = []
    for w in windows:
        nw = replace(w)
        for key in ("g", "c", "m"):
            arr = getattr(w, key)
            if arr is None or key not in stats.channels:
                continue
            mu, sd = stats.channels[key]
            setattr(nw, key, ((arr / dims) - mu[:, None]) / sd[:, None])
        if w.vel_target is not None and stats.vel is not None:
            mu, sd = stats.vel
            nw.vel_target = ((w.vel_target / dims[:, 0]) - mu) / sd
        out.append(nw)
    return out


# ---------------------------------------------------------------------------
# windows dataset export (binary container, JSON manifest + f32 payload)

_MAGIC = b"GIW1"


def save_windows(windows: list, path) -> None:
    n = len(windows)
    has_label = n > 0 and windows[0].label is not None
    has_vel = n > 0 and windows[0].vel_target is not None
    has_mouse = n > 0 and windows[0].m is not None
    manifest = {
        "count": n,
        "window_len": WINDOW_LEN,
        "has_label": has_label,
        "has_vel": has_vel,
        "has_mouse": has_mouse,
        "subjects": [w.subject_id for w in windows],
        "labels": [int(w.label) for w in windows] if has_label else None,
        "t_end": [w.t_end for w in windows],
    }
    payload = bytearray()
    for w in windows:
        payload += np.asarray(w.g, dtype="<f4").tobytes()
        payload += np.asarray(w.c, dtype="<f4").tobytes()
        if has_mouse:
            payload += np.asarray(w.m, dtype="<f4").tobytes()
        if has_vel:
            payload += np.asarray(w.vel_target, dtype="<f4").tobytes()
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(bytes(payload))


def load_windows(path) -> list:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise DataError(f"{path}: not a windows container")
        (blob_len,) = struct.unpack("<I", f.read(4))
        manifest = json.loads(f.read(blob_len).decode("utf-8"))
        payload = f.read()
    n = manifest["count"]
    per = 2 * WINDOW_LEN * 4 * 2
    if manifest["has_mouse"]:
        per += 2 * WINDOW_LEN * 4
    if manifest["has_vel"]:
        per += 2 * 4
    if len(payload) != n * per:
        raise DataError(f"{path}: payload length {len(payload)} != expected {n * per}")
    windows = []
    off = 0

    def take(count):
        nonlocal off
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=off)
        off += count * 4
        return arr

    for i in range(n):
        g = take(2 * WINDOW_LEN).reshape(2, WINDOW_LEN).astype(np.float64)
        c = take(2 * WINDOW_LEN).reshape(2, WINDOW_LEN).astype(np.float64)
        m = take(2 * WINDOW_LEN).reshape(2, WINDOW_LEN).astype(np.float64) if manifest["has_mouse"] else None
        vel = take(2).astype(np.float64) if manifest["has_vel"] else None
        windows.append(Window(
            g=g, c=c, m=m, vel_target=vel,
            t_end=manifest["t_end"][i],
            subject_id=manifest["subjects"][i],
            label=manifest["labels"][i] if manifest["has_label"] else None,
        ))
    return windows
