"""AttackNet: graph assembly, parameter/FLOP accounting and checkpoints.

Default graph for a 32x32x3 input::

    phase 1 (16 filters, 32x32)
      conv-bn-lrelu (a1) -> conv-bn-lrelu -> conv-bn -> + a1 -> lrelu -> maxpool -> dropout
    phase 2 (32 filters, 16x16)
      conv-bn-lrelu (a4) -> conv-bn-lrelu -> conv-bn -> + a4 -> lrelu -> maxpool -> dropout
    head
      flatten(2048) -> dense(128) -> tanh -> dropout -> dense(2) -> softmax
"""
from __future__ import annotations

import dataclasses
import io
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import layers as L
from .layers import BatchNormState, ConfigError
from .tensor import Prng, ShapeError

CONV_NAMES = tuple(f"conv{i}" for i in range(1, 7))
BN_NAMES = tuple(f"bn{i}" for i in range(1, 7))
DENSE_NAMES = ("dense1", "dense2")


@dataclass
class ModelConfig:
    input_h: int = 32
    input_w: int = 32
    input_channels: int = 3
    phase1_filters: int = 16
    phase2_filters: int = 32
    double_filters: bool = True
    leaky_alpha: float = 0.1
    dense_width: int = 128
    num_classes: int = 2
    dropout_conv: float = 0.25
    dropout_dense: float = 0.5
    lr: float = 0.001
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    augment: bool = True
    rotation_deg: float = 15.0
    shift_frac: float = 0.1
    shear_deg: float = 10.0
    zoom_lo: float = 0.9
    zoom_hi: float = 1.1

    def validate(self) -> "ModelConfig":
        if self.input_h % 4 or self.input_w % 4 or self.input_h < 4 or self.input_w < 4:
            raise ConfigError(f"input size {self.input_h}x{self.input_w} must be divisible by 4")
        if min(self.input_channels, self.phase1_filters, self.phase2_filters, self.dense_width) < 1:
            raise ConfigError("channel and width counts must be positive")
        if self.double_filters and self.phase2_filters != 2 * self.phase1_filters:
            raise ConfigError(
                f"phase2_filters ({self.phase2_filters}) must double phase1_filters ({self.phase1_filters})"
            )
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        for name in ("leaky_alpha", "dropout_conv", "dropout_dense"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        for name in ("adam_beta1", "adam_beta2", "bn_momentum"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.lr <= 0 or self.adam_eps <= 0 or self.bn_eps <= 0:
            raise ConfigError("lr, adam_eps and bn_eps must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be positive")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if min(self.rotation_deg, self.shift_frac, self.shear_deg) < 0:
            raise ConfigError("augmentation ranges must be non-negative")
        if not 0 < self.zoom_lo <= 1.0 <= self.zoom_hi:
            raise ConfigError("zoom interval must contain 1")
        return self

    @property
    def flatten_dim(self) -> int:
        return self.phase2_filters * (self.input_h // 4) * (self.input_w // 4)

    def to_text(self) -> str:
        return "".join(f"{f.name}={_format_value(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        return cls.from_mapping(parse_key_values(text))

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "ModelConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(kinds)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kwargs = {k: _parse_value(kinds[k], k, v) for k, v in values.items()}
        return cls(**kwargs).validate()


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v)


def _parse_value(kind: str, key: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_key_values(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


class Model:
    """Parameters, BatchNorm statistics and Adam state for one AttackNet instance.

    BatchNorm gamma/beta arrays are shared with ``params`` so in-place optimizer
    updates are seen by the normalization layers.
    """

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.bn = {
            name: BatchNormState(
                gamma=params[f"{name}.gamma"],
                beta=params[f"{name}.beta"],
                running_mean=np.zeros_like(params[f"{name}.gamma"]),
                running_var=np.ones_like(params[f"{name}.gamma"]),
                momentum=config.bn_momentum,
                eps=config.bn_eps,
            )
            for name in BN_NAMES
        }
        self.adam_m = {k: np.zeros_like(v) for k, v in params.items()}
        self.adam_v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0

    # ---------------------------------------------------------------- state

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name in BN_NAMES:
            out[f"{name}.running_mean"] = self.bn[name].running_mean
            out[f"{name}.running_var"] = self.bn[name].running_var
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every persistent array, in checkpoint order."""
        out = dict(self.params)
        out.update({f"adam_m/{k}": v for k, v in self.adam_m.items()})
        out.update({f"adam_v/{k}": v for k, v in self.adam_v.items()})
        out.update(self.buffers())
        return out

    def snapshot(self) -> tuple[int, dict[str, np.ndarray]]:
        return self.step, {k: v.copy() for k, v in self.state_arrays().items()}

    def restore(self, snap: tuple[int, dict[str, np.ndarray]]) -> None:
        step, arrays = snap
        for k, v in self.state_arrays().items():
            v[...] = arrays[k]
        self.step = step

    # ---------------------------------------------------------------- graph

    def forward(self, x: np.ndarray, mode: str = "infer", prng: Prng | None = None):
        """Run the graph; returns ``(probs, cache)``.

        ``cache`` carries everything ``backward`` needs, plus ``logits`` and the
        Grad-CAM tap (``tap``: output of the last phase-2 convolution).
        """
        cfg = self.config
        expected = (cfg.input_channels, cfg.input_h, cfg.input_w)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"expected input [N,{expected[0]},{expected[1]},{expected[2]}], got {x.shape}")
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        p = self.params
        alpha = cfg.leaky_alpha
        cache: dict = {"phases": []}
        h = x
        for phase in range(2):
            i = 3 * phase + 1
            ph = {}
            z, ph["conv_a"] = L.conv2d_forward(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
            z, ph["bn_a"] = L.batchnorm_forward(z, self.bn[f"bn{i}"], mode)
            a1, ph["act_a"] = L.leaky_relu_forward(z, alpha)
            z, ph["conv_b"] = L.conv2d_forward(a1, p[f"conv{i + 1}.w"], p[f"conv{i + 1}.b"])
            z, ph["bn_b"] = L.batchnorm_forward(z, self.bn[f"bn{i + 1}"], mode)
            a2, ph["act_b"] = L.leaky_relu_forward(z, alpha)
            z, ph["conv_c"] = L.conv2d_forward(a2, p[f"conv{i + 2}.w"], p[f"conv{i + 2}.b"])
            if phase == 1:
                cache["tap"] = z
            z, ph["bn_c"] = L.batchnorm_forward(z, self.bn[f"bn{i + 2}"], mode)
            s = L.residual_add(z, a1)
            a, ph["act_out"] = L.leaky_relu_forward(s, alpha)
            a, ph["pool"] = L.maxpool2x2_forward(a)
            h, ph["drop"] = L.dropout_forward(a, cfg.dropout_conv, mode, prng)
            cache["phases"].append(ph)
        cache["flat_shape"] = h.shape
        flat = h.reshape(h.shape[0], -1)
        z, cache["dense1"] = L.dense_forward(flat, p["dense1.w"], p["dense1.b"])
        z, cache["tanh"] = L.tanh_forward(z)
        z, cache["drop_dense"] = L.dropout_forward(z, cfg.dropout_dense, mode, prng)
        logits, cache["dense2"] = L.dense_forward(z, p["dense2.w"], p["dense2.b"])
        cache["logits"] = logits
        return L.softmax(logits), cache

    def backward(self, cache: dict, dlogits: np.ndarray, want_tap: bool = False):
        """Gradients of every parameter given d(loss)/d(logits).

        With ``want_tap`` the gradient at the Grad-CAM tap is returned as well.
        """
        alpha = self.config.leaky_alpha
        grads: dict[str, np.ndarray] = {}
        dz, grads["dense2.w"], grads["dense2.b"] = L.dense_backward(cache["dense2"], dlogits)
        dz = L.dropout_backward(cache["drop_dense"], dz)
        dz = L.tanh_backward(cache["tanh"], dz)
        dflat, grads["dense1.w"], grads["dense1.b"] = L.dense_backward(cache["dense1"], dz)
        dh = dflat.reshape(cache["flat_shape"])
        dtap = None
        for phase in (1, 0):
            i = 3 * phase + 1
            ph = cache["phases"][phase]
            dh = L.dropout_backward(ph["drop"], dh)
            dh = L.maxpool2x2_backward(ph["pool"], dh)
            ds = L.leaky_relu_backward(ph["act_out"], dh, alpha)
            dz, da1_skip = L.residual_add_backward(ds)
            dz, grads[f"bn{i + 2}.gamma"], grads[f"bn{i + 2}.beta"] = L.batchnorm_backward(ph["bn_c"], dz)
            if phase == 1:
                dtap = dz
            da2, grads[f"conv{i + 2}.w"], grads[f"conv{i + 2}.b"] = L.conv2d_backward(ph["conv_c"], dz)
            dz = L.leaky_relu_backward(ph["act_b"], da2, alpha)
            dz, grads[f"bn{i + 1}.gamma"], grads[f"bn{i + 1}.beta"] = L.batchnorm_backward(ph["bn_b"], dz)
            da1, grads[f"conv{i + 1}.w"], grads[f"conv{i + 1}.b"] = L.conv2d_backward(ph["conv_b"], dz)
            da1 = da1 + da1_skip
            dz = L.leaky_relu_backward(ph["act_a"], da1, alpha)
            dz, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = L.batchnorm_backward(ph["bn_a"], dz)
            dh, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = L.conv2d_backward(ph["conv_a"], dz)
        grads = {k: grads[k] for k in self.params}
        if want_tap:
            return grads, dtap
        return grads

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        out = [self.forward(x[i:i + batch_size], "infer")[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Trainable tensors in graph order."""
    shapes: dict[str, tuple[int, ...]] = {}
    chans = [cfg.input_channels] + [cfg.phase1_filters] * 3 + [cfg.phase2_filters] * 3
    for k in range(6):
        cin, cout = chans[k], chans[k + 1]
        shapes[f"conv{k + 1}.w"] = (cout, cin, 3, 3)
        shapes[f"conv{k + 1}.b"] = (cout,)
        shapes[f"bn{k + 1}.gamma"] = (cout,)
        shapes[f"bn{k + 1}.beta"] = (cout,)
    shapes["dense1.w"] = (cfg.flatten_dim, cfg.dense_width)
    shapes["dense1.b"] = (cfg.dense_width,)
    shapes["dense2.w"] = (cfg.dense_width, cfg.num_classes)
    shapes["dense2.b"] = (cfg.num_classes,)
    return shapes


def build_model(cfg: ModelConfig, prng: Prng) -> Model:
    """He-uniform (fan-in) weights, zero biases, gamma=1, beta=0."""
    cfg.validate()
    params: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
            limit = float(np.sqrt(6.0 / fan_in))
            params[name] = prng.uniform(shape, -limit, limit)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype=np.float32)
        else:
            params[name] = np.zeros(shape, dtype=np.float32)
    return Model(dataclasses.replace(cfg), params)


def param_count(m: Model) -> int:
    return int(sum(v.size for v in m.params.values()))


# ------------------------------------------------------------------------- FLOPs

# Headline convention: multiply-adds of conv and dense layers count 2 FLOPs,
# each bias add 1. The remaining elementwise work is tallied separately.
HEADLINE_CATEGORIES = ("conv", "dense")


def flop_breakdown(cfg: ModelConfig) -> dict[str, int]:
    """Single-image inference FLOPs per category.

    conv: 2*9*Cin*Cout*H*W + Cout*H*W; dense: 2*D*M + M; batchnorm (folded
    scale+shift): 2/element; activations (LeakyReLU, tanh): 1/element;
    residual add: 1/element; maxpool: 3/output element; softmax: 4/class.
    """
    h1, w1 = cfg.input_h, cfg.input_w
    h2, w2 = h1 // 2, w1 // 2
    f1, f2 = cfg.phase1_filters, cfg.phase2_filters
    convs = [
        (cfg.input_channels, f1, h1, w1), (f1, f1, h1, w1), (f1, f1, h1, w1),
        (f1, f2, h2, w2), (f2, f2, h2, w2), (f2, f2, h2, w2),
    ]
    out = {
        "conv": sum(2 * 9 * cin * cout * h * w + cout * h * w for cin, cout, h, w in convs),
        "dense": (2 * cfg.flatten_dim * cfg.dense_width + cfg.dense_width)
        + (2 * cfg.dense_width * cfg.num_classes + cfg.num_classes),
        "batchnorm": sum(2 * cout * h * w for _, cout, h, w in convs),
        "activation": 3 * f1 * h1 * w1 + 3 * f2 * h2 * w2 + cfg.dense_width,
        "residual": f1 * h1 * w1 + f2 * h2 * w2,
        "maxpool": 3 * (f1 * h2 * w2 + f2 * (h1 // 4) * (w1 // 4)),
        "softmax": 4 * cfg.num_classes,
    }
    return out


def flop_count(m: Model | ModelConfig) -> int:
    """Headline FLOPs for one image: conv + dense layers (see ``flop_breakdown``)."""
    cfg = m.config if isinstance(m, Model) else m
    b = flop_breakdown(cfg)
    return sum(b[k] for k in HEADLINE_CATEGORIES)


# ------------------------------------------------------------------------- checkpoints

MAGIC = b"ATKN"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


def checkpoint_bytes(m: Model) -> bytes:
    """Layout (little-endian): magic, u32 version, u32 len + config text,
    u64 adam step, u32 record count, then per record: u16 len + name,
    u8 rank, u32 extents, float32 payload."""
    buf = io.BytesIO()
    cfg_text = m.config.to_text().encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(cfg_text)))
    buf.write(cfg_text)
    arrays = m.state_arrays()
    buf.write(struct.pack("<QI", m.step, len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(m: Model, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(m))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_from_bytes(data: bytes) -> Model:
    r = _Reader(data)
    if len(data) < 4 or r.take(4) != MAGIC:
        raise CheckpointFormatError("not an AttackNet checkpoint (bad magic)")
    version, cfg_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    try:
        cfg = ModelConfig.from_text(r.take(cfg_len).decode("utf-8"))
    except (UnicodeDecodeError, ConfigError) as exc:
        raise CheckpointFormatError(f"bad embedded config: {exc}") from None
    step, count = r.unpack("<QI")
    m = build_model(cfg, Prng(0))
    targets = m.state_arrays()
    seen = set()
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8", errors="replace")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        payload = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        if name not in targets or targets[name].shape != tuple(shape):
            raise CheckpointFormatError(f"unexpected record {name!r} with shape {tuple(shape)}")
        targets[name][...] = payload
        seen.add(name)
    missing = set(targets) - seen
    if missing:
        raise CheckpointFormatError(f"checkpoint lacks records: {', '.join(sorted(missing))}")
    if r.pos != len(data):
        raise CheckpointFormatError("trailing bytes after last record")
    m.step = step
    return m


def load_checkpoint(path) -> Model:
    return checkpoint_from_bytes(Path(path).read_bytes())
