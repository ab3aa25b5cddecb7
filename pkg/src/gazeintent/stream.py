"""Gaze-only streaming inference: sliding-window classification over a
live feed, equivalent to batch inference wherever every interior gap's
right neighbor arrives before the emission point.

Interior gaps are backfilled by linear interpolation as soon as the next
valid sample arrives; a gap still open at emission time is nearest-filled
with the last valid value, which can differ from offline interpolation
if the gap later closes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gazeintent import dataio, model
from gazeintent.errors import ConfigError, DataError

W = dataio.WINDOW_LEN


@dataclass
class Decision:
    t_end: float
    label: str
    p_reading: float


class StreamingEngine:
    """Single-producer engine over one gaze feed; consumes no mouse data."""

    def __init__(self, params: model.ModelParams, stats: dataio.NormStats,
                 magnification: float, eye: str = "left", stride: int = 6):
        if params is None or stats is None:
            raise ConfigError("engine requires a loaded checkpoint with normalization stats")
        if params.head_kind != model.CLASSIFIER_HEAD:
            raise ConfigError("streaming inference needs a classifier-head checkpoint")
        if "m" in params.config.streams:
            raise ConfigError("streaming inference is gaze-only")
        if magnification < 1:
            raise ConfigError(f"magnification must be >= 1, got {magnification}")
        if eye not in ("left", "right"):
            raise ConfigError(f"eye must be 'left' or 'right', got {eye!r}")
        if stride < 1:
            raise ConfigError("stride must be >= 1")
        self.params = params
        self.stats = stats
        self.magnification = magnification
        self.eye = eye
        self.stride = stride
        self.reset()

    @classmethod
    def from_checkpoint(cls, path, magnification: float, eye: str = "left",
                        stride: int = 6) -> "StreamingEngine":
        params, stats = model.load_checkpoint(path)
        if stats is None:
            raise DataError(f"checkpoint at {path} carries no normalization stats")
        return cls(params, stats, magnification, eye=eye, stride=stride)

    def reset(self) -> None:
        """Clear buffers and counters; the model and stats are retained."""
        self.count = 0
        self._raw = np.zeros((2, W))
        self._comp = np.zeros((2, W))
        self._view = np.zeros((2, W))
        self._t = np.zeros(W)
        self._missing = np.zeros(W, dtype=bool)  # pre-interpolation mask
        self._last_valid: tuple | None = None    # (global index, x, y)

    def _recompensate(self, slot: int) -> None:
        self._comp[:, slot] = np.clip(
            self._view[:, slot] + self._raw[:, slot] / self.magnification,
            0.0, [self.stats.screen_w, self.stats.screen_h])

    def _backfill_linear(self, left: tuple, right: tuple) -> None:
        """Interpolate a closed interior gap over its in-buffer slots."""
        li, lx, ly = left
        ri, rx, ry = right
        span = ri - li
        for j in range(max(li + 1, self.count - W), ri):
            frac = (j - li) / span
            slot = j % W
            self._raw[0, slot] = lx + frac * (rx - lx)
            self._raw[1, slot] = ly + frac * (ry - ly)
            self._recompensate(slot)

    def _backfill_leading(self, upto: int, x: float, y: float) -> None:
        """Nearest-fill every in-buffer slot before the first valid sample."""
        for j in range(max(0, self.count - W), upto):
            slot = j % W
            self._raw[:, slot] = (x, y)
            self._recompensate(slot)

    def push(self, sample: dataio.GazeSample):
        """Append one sample; returns a Decision at emission points, else None."""
        i = self.count % W
        idx_global = self.count
        self.count += 1
        self._t[i] = sample.t
        self._view[:, i] = (sample.vx, sample.vy)
        if self.eye == "left":
            x, y = sample.lx, sample.ly
        else:
            x, y = sample.rx, sample.ry
        missing = x is None or y is None
        self._missing[i] = missing
        if missing:
            if self._last_valid is not None:
                self._raw[:, i] = self._last_valid[1:]
            else:
                self._raw[:, i] = 0.0
        else:
            self._raw[:, i] = (x, y)
            if self._last_valid is None:
                self._backfill_leading(idx_global, float(x), float(y))
            elif self._last_valid[0] < idx_global - 1:
                self._backfill_linear(self._last_valid, (idx_global, float(x), float(y)))
            self._last_valid = (idx_global, float(x), float(y))
        self._recompensate(i)

        if self.count < W:
            return None
        if (self.count - W) % self.stride != 0:
            return None
        if int(self._missing.sum()) > dataio.MAX_MISSING:
            return None
        return self._emit()

    def has_open_gap(self) -> bool:
        """True when the current window ends in a not-yet-closed gap (the
        case where streaming and offline interpolation may disagree)."""
        if self._last_valid is None:
            return True
        return self._last_valid[0] < self.count - 1

    def _emit(self) -> Decision:
        idx = np.arange(self.count - W, self.count) % W
        w = dataio.Window(g=self._raw[:, idx].copy(), c=self._comp[:, idx].copy(),
                          t_end=float(self._t[idx[-1]]), subject_id="stream")
        w = dataio.normalize([w], self.stats)[0]
        batch = {k: getattr(w, k)[None].astype(np.float32)
                 for k in self.params.config.streams}
        probs = model.predict_proba(self.params, batch)[0]
        label = dataio.LABELS[int(probs.argmax())]
        return Decision(t_end=w.t_end, label=label, p_reading=float(probs[0]))
