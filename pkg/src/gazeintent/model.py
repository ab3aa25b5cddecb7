"""Dual-stream gaze architecture: per-stream 1D CNN encoders, bidirectional
cross-attention fusion, a pre-norm transformer encoder, and a swappable
velocity-regression / intent-classification head. Includes bit-exact
checkpoint serialization.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from gazeintent import dataio
from gazeintent.errors import ConfigError, DataError, ShapeError
from gazeintent.numerics import (
    Tensor,
    concat,
    conv1d,
    layer_norm,
    scaled_dot_attention,
    softmax_lastaxis,
)

VELOCITY_HEAD = "velocity_regressor"
CLASSIFIER_HEAD = "intent_classifier"

SINGLE_STREAM_MODES = ("gaze_only", "comp_only", "mouse_only")
INPUT_MODES = ("gaze_plus_comp", "mouse_gaze_comp") + SINGLE_STREAM_MODES


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    cnn_layers: int = 3
    kernel: int = 3
    transformer_layers: int = 3
    ffn_hidden: int = 256
    window: int = dataio.WINDOW_LEN
    in_channels: int = 2
    input_mode: str = "gaze_plus_comp"

    def validate(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.input_mode not in INPUT_MODES:
            raise ConfigError(f"unknown input_mode {self.input_mode!r}")
        if self.window != dataio.WINDOW_LEN:
            raise ConfigError(f"window length is fixed to {dataio.WINDOW_LEN}")

    @property
    def streams(self) -> tuple:
        return {
            "gaze_plus_comp": ("g", "c"),
            "mouse_gaze_comp": ("g", "c", "m"),
            "gaze_only": ("g",),
            "comp_only": ("c",),
            "mouse_only": ("m",),
        }[self.input_mode]

    @property
    def fusion_in(self) -> int:
        # two cross-attention outputs, plus the raw mouse encoding if present
        return self.d_model * (3 if self.input_mode == "mouse_gaze_comp" else 2)


@dataclass
class ModelParams:
    config: ModelConfig
    head_kind: str
    tensors: dict = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        out = ModelParams(self.config, self.head_kind)
        out.tensors = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad)
                       for k, v in self.tensors.items()}
        return out

    def astype(self, dtype) -> "ModelParams":
        """Dtype-converted copy; float64 is used for gradient checking."""
        out = ModelParams(self.config, self.head_kind)
        out.tensors = {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad)
                       for k, v in self.tensors.items()}
        return out

    def backbone_names(self) -> list:
        return [k for k in self.tensors if not k.startswith("head.") and k != "pos"]

    def learnable_names(self) -> list:
        return [k for k in self.tensors if k != "pos"]

    def checksum(self, names=None) -> str:
        h = hashlib.sha256()
        for k in sorted(names if names is not None else self.tensors):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.tensors[k].data, dtype="<f4").tobytes())
        return h.hexdigest()


def sinusoidal_table(T: int, d: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d)
    table = np.zeros((T, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def _encoder_channels(cfg: ModelConfig):
    chans = [cfg.in_channels] + [cfg.d_model] * cfg.cnn_layers
    return list(zip(chans[:-1], chans[1:]))


def param_count(cfg: ModelConfig) -> int:
    """Closed-form learnable parameter count (positional table excluded)."""
    d, k, f = cfg.d_model, cfg.kernel, cfg.ffn_hidden
    conv_stack = sum(co * ci * k + co for ci, co in _encoder_channels(cfg))
    linear = lambda i, o: i * o + o
    attn = 4 * linear(d, d)
    ln = 2 * d
    total = conv_stack * len(cfg.streams)
    if cfg.input_mode not in SINGLE_STREAM_MODES:
        total += 2 * (attn + ln)                   # two cross-attention blocks
        total += linear(cfg.fusion_in, d)          # fusion projection
    total += cfg.transformer_layers * (attn + 2 * ln + linear(d, f) + linear(f, d))
    total += linear(d, 2)                          # active head
    return total


def init_params(cfg: ModelConfig, seed: int, head_kind: str = CLASSIFIER_HEAD) -> ModelParams:
    """Deterministic initialization: uniform fan-in scaling, zero biases,
    unit layer-norm gains."""
    cfg.validate()
    if head_kind not in (VELOCITY_HEAD, CLASSIFIER_HEAD):
        raise ConfigError(f"unknown head kind {head_kind!r}")
    rng = np.random.default_rng(seed)
    params = ModelParams(cfg, head_kind)
    t = params.tensors

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32),
                      requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape, dtype=np.float32), requires_grad=True)

    def linear(prefix, d_in, d_out):
        t[f"{prefix}.w"] = uniform((d_in, d_out), d_in)
        t[f"{prefix}.b"] = zeros((d_out,))

    def layernorm(prefix, d):
        t[f"{prefix}.g"] = ones((d,))
        t[f"{prefix}.b"] = zeros((d,))

    def attention(prefix, d):
        for name in ("wq", "wk", "wv", "wo"):
            t[f"{prefix}.{name}"] = uniform((d, d), d)
            t[f"{prefix}.{name[1]}b"] = zeros((d,))

    d = cfg.d_model
    for stream in cfg.streams:
        for li, (ci, co) in enumerate(_encoder_channels(cfg)):
            t[f"enc_{stream}.conv{li}.w"] = uniform((co, ci, cfg.kernel), ci * cfg.kernel)
            t[f"enc_{stream}.conv{li}.b"] = zeros((co,))
    if cfg.input_mode not in SINGLE_STREAM_MODES:
        for block in ("cross_gc", "cross_cg"):
            attention(block, d)
            layernorm(f"{block}.ln", d)
        linear("fusion", cfg.fusion_in, d)
    for li in range(cfg.transformer_layers):
        attention(f"tf{li}.attn", d)
        layernorm(f"tf{li}.ln1", d)
        layernorm(f"tf{li}.ln2", d)
        linear(f"tf{li}.ffn1", d, cfg.ffn_hidden)
        linear(f"tf{li}.ffn2", cfg.ffn_hidden, d)
    linear("head", d, 2)
    t["pos"] = Tensor(sinusoidal_table(cfg.window, d).astype(np.float32),
                      requires_grad=False)
    return params


# ---------------------------------------------------------------------------
# forward


def _mha(q_in: Tensor, kv_in: Tensor, t: dict, prefix: str, n_heads: int) -> Tensor:
    B, T, d = q_in.shape
    Tk = kv_in.shape[1]
    dh = d // n_heads

    def heads(x, n):
        return x.reshape(B, n, n_heads, dh).swapaxes(1, 2)  # (B, H, T, dh)

    q = heads(q_in @ t[f"{prefix}.wq"] + t[f"{prefix}.qb"], T)
    k = heads(kv_in @ t[f"{prefix}.wk"] + t[f"{prefix}.kb"], Tk)
    v = heads(kv_in @ t[f"{prefix}.wv"] + t[f"{prefix}.vb"], Tk)
    out = scaled_dot_attention(q, k, v)                     # (B, H, T, dh)
    out = out.swapaxes(1, 2).reshape(B, T, d)
    return out @ t[f"{prefix}.wo"] + t[f"{prefix}.ob"]


def encode_stream(x: Tensor, stream: str, params: ModelParams) -> Tensor:
    """(B, C, T) -> (B, T, d) through the stream's CNN stack."""
    cfg = params.config
    if x.shape[-2:] != (cfg.in_channels, cfg.window):
        raise ShapeError(f"stream input must be (..,{cfg.in_channels},{cfg.window}), got {x.shape}")
    h = x
    for li in range(cfg.cnn_layers):
        h = conv1d(h, params.tensors[f"enc_{stream}.conv{li}.w"],
                   params.tensors[f"enc_{stream}.conv{li}.b"]).relu()
    return h.swapaxes(-1, -2)


def _cross_block(q_in: Tensor, kv_in: Tensor, params: ModelParams, block: str) -> Tensor:
    t = params.tensors
    attn = _mha(q_in, kv_in, t, block, params.config.n_heads)
    return layer_norm(q_in + attn, t[f"{block}.ln.g"], t[f"{block}.ln.b"])


def cross_fuse(hg: Tensor, hc: Tensor, params: ModelParams,
               hm: Tensor | None = None) -> Tensor:
    """Bidirectional cross-attention, concatenation and linear projection,
    with a residual from the mean of the input streams."""
    if hg.shape != hc.shape:
        raise ShapeError(f"stream encodings disagree: {hg.shape} vs {hc.shape}")
    t = params.tensors
    a = _cross_block(hg, hc, params, "cross_gc")   # Q=g, K/V=c
    b = _cross_block(hc, hg, params, "cross_cg")   # Q=c, K/V=g
    parts = [a, b]
    streams = [hg, hc]
    if hm is not None:
        parts.append(hm)
        streams.append(hm)
    fused = concat(parts, axis=-1) @ t["fusion.w"] + t["fusion.b"]
    mean_in = streams[0]
    for s in streams[1:]:
        mean_in = mean_in + s
    return fused + mean_in * (1.0 / len(streams))


def transformer_forward(h: Tensor, params: ModelParams) -> Tensor:
    """Sinusoidal positions added once at entry, then pre-norm self-attention
    + feed-forward layers with residuals."""
    cfg = params.config
    t = params.tensors
    h = h + t["pos"]
    for li in range(cfg.transformer_layers):
        n1 = layer_norm(h, t[f"tf{li}.ln1.g"], t[f"tf{li}.ln1.b"])
        h = h + _mha(n1, n1, t, f"tf{li}.attn", cfg.n_heads)
        n2 = layer_norm(h, t[f"tf{li}.ln2.g"], t[f"tf{li}.ln2.b"])
        ff = (n2 @ t[f"tf{li}.ffn1.w"] + t[f"tf{li}.ffn1.b"]).relu()
        h = h + (ff @ t[f"tf{li}.ffn2.w"] + t[f"tf{li}.ffn2.b"])
    return h


def forward(params: ModelParams, batch: dict, head_kind: str | None = None) -> Tensor:
    """Batch of normalized windows -> (B, 2) head output (logits or velocity)."""
    cfg = params.config
    head_kind = head_kind or params.head_kind
    if head_kind != params.head_kind:
        raise ConfigError(f"model carries head {params.head_kind}, asked for {head_kind}")
    streams = cfg.streams
    dtype = params.tensors["head.w"].dtype
    encoded = {}
    for s in streams:
        if s not in batch:
            raise ConfigError(f"input_mode {cfg.input_mode} needs stream {s!r}")
        x = batch[s] if isinstance(batch[s], Tensor) else Tensor(np.asarray(batch[s], dtype=dtype))
        encoded[s] = encode_stream(x, s, params)
    if cfg.input_mode in SINGLE_STREAM_MODES:
        h = encoded[streams[0]]
    else:
        h = cross_fuse(encoded["g"], encoded["c"], params, hm=encoded.get("m"))
    h = transformer_forward(h, params)
    last = h[:, cfg.window - 1, :]
    return last @ params.tensors["head.w"] + params.tensors["head.b"]


def predict_proba(params: ModelParams, batch: dict) -> np.ndarray:
    """Class probabilities (reading, scanning) without recording a tape."""
    if params.head_kind != CLASSIFIER_HEAD:
        raise ConfigError("predict_proba requires the classifier head")
    logits = forward(params, batch)
    return softmax_lastaxis(logits).data


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, stats, path) -> None:
    """Directory with manifest.json and weights.bin (little-endian f32)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    blob = bytearray()
    for name in sorted(params.tensors):
        data = np.ascontiguousarray(params.tensors[name].data, dtype="<f4")
        raw = data.tobytes()
        entries.append({"name": name, "shape": list(data.shape),
                        "dtype": "float32", "offset": offset, "nbytes": len(raw)})
        blob += raw
        offset += len(raw)
    manifest = {
        "format": "gazeintent-ckpt-v1",
        "config": asdict(params.config),
        "head_kind": params.head_kind,
        "stats": stats.to_json() if stats is not None else None,
        "tensors": entries,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    (path / "weights.bin").write_bytes(bytes(blob))


def load_checkpoint(path):
    """Returns (ModelParams, NormStats | None); bit-exact inverse of save."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        blob = (path / "weights.bin").read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint at {path}: {e}") from e
    cfg = ModelConfig(**manifest["config"])
    params = ModelParams(cfg, manifest["head_kind"])
    total = sum(e["nbytes"] for e in manifest["tensors"])
    if total != len(blob):
        raise DataError(f"{path}: weights.bin length {len(blob)} != manifest total {total}")
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        if count * 4 != e["nbytes"]:
            raise DataError(f"{path}: tensor {e['name']} payload length mismatch")
        data = np.frombuffer(blob, dtype="<f4", count=count,
                             offset=e["offset"]).reshape(e["shape"]).copy()
        params.tensors[e["name"]] = Tensor(data, requires_grad=e["name"] != "pos")
    stats = None
    if manifest["stats"] is not None:
        stats = dataio.NormStats.from_json(manifest["stats"])
    return params, stats


def load_for_finetune(path, head_seed: int):
    """Load a checkpoint keeping the backbone and reinitializing only the
    classifier head. Backbone shapes must match the stored config."""
    params, stats = load_checkpoint(path)
    fresh = init_params(params.config, head_seed, head_kind=CLASSIFIER_HEAD)
    for name in params.backbone_names():
        if name not in fresh.tensors or fresh.tensors[name].shape != params.tensors[name].shape:
            raise DataError(f"checkpoint backbone tensor {name} does not match config")
    for name in ("head.w", "head.b"):
        params.tensors[name] = fresh.tensors[name]
    params.head_kind = CLASSIFIER_HEAD
    return params, stats
