"""Full network assembly, initialisation, complexity accounting and inference helpers."""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .blocks import BlockConfig, Scope, receptive_radius, rfmg_forward, rfmg_shapes
from .errors import ConfigError, DimensionError
from .ops import ConvParams
from .tensor import Tensor, backward, no_grad
from .weights import WeightStore

GAMMA_INIT = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 4
    channels: int = 36
    num_rfmg: int = 8
    shuffle_group: int = 4
    kernel_size: int = 31
    distill_channels: int | None = None
    ca_hidden: int | None = None
    channel_shuffle: bool = True
    channel_attention: bool = True
    use_gamma: bool = True
    cross_gate: bool = True
    activation: str = "gelu"
    use_hfdb: bool = True
    use_cgfn: bool = True
    rfmg_residual: str = "nested"
    long_skip: bool = False

    def __post_init__(self):
        if self.distill_channels is None:
            object.__setattr__(self, "distill_channels", self.channels // 2)
        problems = []
        if self.scale not in (2, 3, 4):
            problems.append(f"scale must be 2, 3 or 4 (got {self.scale})")
        if self.num_rfmg < 1:
            problems.append(f"num_rfmg must be >= 1 (got {self.num_rfmg})")
        try:
            BlockConfig(**self._block_fields())
        except ConfigError as exc:
            problems.append(str(exc).removeprefix("invalid block config: "))
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))

    def _block_fields(self) -> dict:
        names = {f.name for f in dataclasses.fields(BlockConfig)}
        return {k: v for k, v in dataclasses.asdict(self).items() if k in names}

    @property
    def block(self) -> BlockConfig:
        return BlockConfig(**self._block_fields())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ModelConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown model config fields: {unknown}")
        return cls(**data)

    def replace(self, **changes) -> ModelConfig:
        return dataclasses.replace(self, **changes)


PRESETS: dict[str, ModelConfig] = {}
for _s in (2, 3, 4):
    PRESETS[f"lkmn-x{_s}"] = ModelConfig(scale=_s, channels=36, num_rfmg=8)
    PRESETS[f"lkmn-l-x{_s}"] = ModelConfig(scale=_s, channels=64, num_rfmg=12)


def preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    c, s = cfg.channels, cfg.scale
    shapes = {"shallow.weight": (c, 3, 3, 3), "shallow.bias": (c,)}
    body = rfmg_shapes(cfg.block)
    for i in range(cfg.num_rfmg):
        shapes.update({f"body.{i}.{k}": v for k, v in body.items()})
    shapes["head.weight"] = (3 * s * s, c, 3, 3)
    shapes["head.bias"] = (3 * s * s,)
    return shapes


def _init_tensor(name: str, shape: tuple[int, ...], seed: int, dtype) -> np.ndarray:
    if name.endswith(".bias"):
        return np.zeros(shape, dtype=dtype)
    if name.endswith("gamma"):
        return np.full(shape, GAMMA_INIT, dtype=dtype)
    # kaiming-uniform over fan-in with a = sqrt(5): bound = 1 / sqrt(fan_in)
    fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / math.sqrt(fan_in)
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class Model:
    config: ModelConfig
    weights: WeightStore

    def __call__(self, lr: Tensor) -> Tensor:
        return forward(self, lr)

    @property
    def scale(self) -> int:
        return self.config.scale


def build(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> tuple[Model, WeightStore]:
    """Create a model with deterministic weights.

    Each tensor draws from its own generator keyed by (seed, name), so two
    configs that share a parameter name also share its initial value.
    """
    tensors = {
        name: Tensor(_init_tensor(name, shape, seed, dtype), requires_grad=True, name=name)
        for name, shape in param_shapes(cfg).items()
    }
    ws = WeightStore(tensors, cfg.to_dict(), seed)
    return Model(cfg, ws), ws


def model_from_weights(ws: WeightStore) -> Model:
    return Model(ModelConfig.from_dict(ws.config), ws)


def forward(model: Model, lr: Tensor) -> Tensor:
    """LR (n, 3, h, w) in [0, 1] -> SR (n, 3, h*scale, w*scale); no clamping."""
    cfg, w = model.config, model.weights
    if lr.ndim != 4 or lr.shape[1] != 3:
        raise DimensionError(f"model input must be (n, 3, h, w), got {lr.shape}")
    feat = ops.conv2d(lr, ConvParams(w["shallow.weight"], w["shallow.bias"], 1, (1, 1)))
    bcfg = cfg.block
    y = feat
    for i in range(cfg.num_rfmg):
        y = rfmg_forward(y, Scope(w, f"body.{i}"), bcfg)
    if cfg.long_skip:
        y = ops.add(y, feat)
    y = ops.conv2d(y, ConvParams(w["head.weight"], w["head.bias"], 1, (1, 1)))
    return ops.pixel_shuffle(y, cfg.scale)


# -- complexity accounting ---------------------------------------------------------


def count_params(cfg: ModelConfig) -> int:
    """Exact number of learnable scalars, biases and scalers included."""
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def param_breakdown(cfg: ModelConfig) -> dict[str, int]:
    out: dict[str, int] = {}
    for name, shape in param_shapes(cfg).items():
        parts = name.split(".")
        key = ".".join(parts[:3]) if parts[0] == "body" else parts[0]
        out[key] = out.get(key, 0) + int(np.prod(shape))
    return out


def count_params_via_graph(cfg: ModelConfig, seed: int = 0, size: int = 8) -> int:
    """Independent count: scalars that receive a gradient from one backward pass."""
    model, ws = build(cfg, seed)
    x = Tensor(np.random.default_rng(seed).random((1, 3, size, size), dtype=np.float32))
    backward(ops.sum_(forward(model, x)))
    return sum(t.size for t in ws.parameters() if t.grad is not None)


def _conv_flops(c_out: int, c_in_per_group: int, kh: int, kw: int, area: float) -> float:
    # one multiply-accumulate per kernel tap plus one add for the bias
    return c_out * area * (c_in_per_group * kh * kw + 1)


def _eplkb_flops(b: BlockConfig, area: float) -> float:
    c, p, k = b.channels, b.partial_channels, b.kernel_size
    f = 0.0
    if b.channel_attention:
        hid = b.attention_hidden
        f += p * area  # pooling
        f += _conv_flops(hid, p, 1, 1, 1) + hid  # down + relu
        f += _conv_flops(p, hid, 1, 1, 1) + p  # up + sigmoid
        f += p * area  # rescale
    f += 2 * _conv_flops(p, 1, 1, k, area)
    f += _conv_flops(c, c, 1, 1, area)
    return f


def _act_flops(b: BlockConfig, area: float) -> float:
    return 0.0 if b.activation == "none" else b.channels * area


def _hfab_flops(b: BlockConfig, area: float) -> float:
    c = b.channels
    return _conv_flops(c, 1, 3, 3, area) + _eplkb_flops(b, area) + _conv_flops(c, 2 * c, 1, 1, area) + _act_flops(b, area)


def _hfdb_flops(b: BlockConfig, area: float) -> float:
    c, d = b.channels, b.distill_channels
    f = 3 * (_hfab_flops(b, area) + _conv_flops(d, c, 1, 1, area))
    return f + _conv_flops(c, 3 * d + c, 1, 1, area) + _act_flops(b, area)


def _cgfn_flops(b: BlockConfig, area: float) -> float:
    c = b.channels
    f = _eplkb_flops(b, area) + _conv_flops(c, 1, 3, 3, area)
    f += 2 * c * area  # discrepancies
    if b.use_gamma:
        f += 2 * c * area
    f += 2 * c * area  # gating products
    return f + _conv_flops(c, 2 * c, 1, 1, area)


def flop_breakdown(cfg: ModelConfig, out_h: int = 720, out_w: int = 1280) -> dict[str, int]:
    """FLOPs (1 MAC = 1 FLOP, elementwise ops 1 each) per top-level stage for one output image.

    Everything before the pixel shuffle runs at LR resolution, whose area is
    taken as out_h * out_w / scale^2 (fractional when the output is not
    divisible by the scale).
    """
    b = cfg.block
    c, s = cfg.channels, cfg.scale
    area = out_h * out_w / (s * s)
    residual = 0.0
    if b.rfmg_residual == "nested":
        residual = c * area * (int(b.use_hfdb) + int(b.use_cgfn))
    elif b.rfmg_residual == "outer":
        residual = c * area
    out = {"shallow": round(_conv_flops(c, 3, 3, 3, area))}
    for i in range(cfg.num_rfmg):
        if b.use_hfdb:
            out[f"body.{i}.hfdb"] = round(_hfdb_flops(b, area))
        if b.use_cgfn:
            out[f"body.{i}.cgfn"] = round(_cgfn_flops(b, area))
        if residual:
            out[f"body.{i}.residual"] = round(residual)
    if cfg.long_skip:
        out["long_skip"] = round(c * area)
    out["head"] = round(_conv_flops(3 * s * s, c, 3, 3, area))
    return out


def count_flops(cfg: ModelConfig, out_h: int = 720, out_w: int = 1280) -> int:
    return sum(flop_breakdown(cfg, out_h, out_w).values())


def receptive_field_radius(cfg: ModelConfig) -> int:
    """Per-side reach of one output LR position, ignoring attention pooling."""
    return 1 + cfg.num_rfmg * receptive_radius(cfg.block) + 1


# -- inference helpers -------------------------------------------------------------

Predictor = Callable[[Tensor], Tensor]


def _as_input(lr) -> Tensor:
    t = lr if isinstance(lr, Tensor) else Tensor(np.asarray(lr, dtype=np.float32))
    if t.ndim != 4:
        raise DimensionError(f"expected an NCHW tensor, got shape {t.shape}")
    return t


def self_ensemble_forward(model: Predictor, lr) -> Tensor:
    """Average of predictions over the 8 flips/rotations of the input, each mapped back."""
    x = _as_input(lr).data
    acc = None
    with no_grad():
        for flip in (False, True):
            xf = x[..., ::-1] if flip else x
            for k in range(4):
                inp = np.ascontiguousarray(np.rot90(xf, k, axes=(2, 3)))
                pred = model(Tensor(inp)).data
                pred = np.rot90(pred, -k, axes=(2, 3))
                if flip:
                    pred = pred[..., ::-1]
                acc = pred.astype(np.float64) if acc is None else acc + pred
    return Tensor((acc / 8.0).astype(x.dtype))


def tile_forward(model: Predictor, lr, tile: int, overlap: int = 32, scale: int | None = None) -> Tensor:
    """Run ``model`` on ``tile``-sized cores, each padded with ``overlap`` LR pixels of context.

    Only the core of each tile's output is kept. The result equals the whole
    image forward wherever the context covers the network's receptive field;
    global pooling in channel attention makes it an approximation otherwise.
    """
    if tile < 8:
        raise ConfigError(f"tile must be at least 8 LR pixels, got {tile}")
    if overlap < 0:
        raise ConfigError(f"overlap must be non-negative, got {overlap}")
    x = _as_input(lr)
    n, c, h, w = x.shape
    if scale is None:
        scale = getattr(model, "scale", None)
    out = None
    with no_grad():
        for y0 in range(0, h, tile):
            for x0 in range(0, w, tile):
                y1, x1 = min(y0 + tile, h), min(x0 + tile, w)
                ya, xa = max(0, y0 - overlap), max(0, x0 - overlap)
                yb, xb = min(h, y1 + overlap), min(w, x1 + overlap)
                patch = Tensor(np.ascontiguousarray(x.data[:, :, ya:yb, xa:xb]))
                pred = model(patch).data
                if scale is None:
                    scale = pred.shape[2] // patch.shape[2]
                if out is None:
                    out = np.zeros((n, pred.shape[1], h * scale, w * scale), dtype=pred.dtype)
                oy, ox = (y0 - ya) * scale, (x0 - xa) * scale
                out[:, :, y0 * scale : y1 * scale, x0 * scale : x1 * scale] = pred[
                    :, :, oy : oy + (y1 - y0) * scale, ox : ox + (x1 - x0) * scale
                ]
    return Tensor(out)
