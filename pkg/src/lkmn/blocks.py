"""LKMN building blocks as pure functions of (input, weights, config).

Each block comes as a pair: ``*_shapes(cfg)`` lists the learnable tensors it
needs (local name -> shape) and ``*_forward(x, weights, cfg)`` evaluates it,
reading those tensors from any mapping keyed by the same local names.
Nested blocks use dotted prefixes, e.g. ``hfab1.eplkb.strip_h.weight``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping

from . import ops
from .errors import ConfigError, DimensionError
from .ops import ConvParams
from .tensor import Tensor

Shapes = dict[str, tuple[int, ...]]

RFMG_RESIDUAL_MODES = ("nested", "outer", "none")


@dataclass(frozen=True)
class BlockConfig:
    """Hyperparameters shared by every block inside one network.

    The boolean switches are the ablation axes: channel shuffle and channel
    attention in the partial large-kernel block, the learnable scaler and the
    cross-gate wiring in the gated feed-forward block.
    """

    channels: int = 36
    shuffle_group: int = 4
    kernel_size: int = 31
    distill_channels: int = 18
    ca_hidden: int | None = None
    channel_shuffle: bool = True
    channel_attention: bool = True
    use_gamma: bool = True
    cross_gate: bool = True
    activation: str = "gelu"
    use_hfdb: bool = True
    use_cgfn: bool = True
    rfmg_residual: str = "nested"

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ConfigError("invalid block config: " + "; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        c, g, k, d = self.channels, self.shuffle_group, self.kernel_size, self.distill_channels
        if c < 1:
            out.append(f"channels must be >= 1 (got {c})")
        if g < 1 or (c >= 1 and c % g):
            out.append(f"channels {c} must be divisible by shuffle_group {g}")
        if k < 1 or k % 2 == 0:
            out.append(f"kernel_size must be a positive odd integer (got {k})")
        if not 0 < d <= max(c, 0):
            out.append(f"distill_channels must satisfy 0 < D <= channels (got {d})")
        if self.ca_hidden is not None and self.ca_hidden < 1:
            out.append(f"ca_hidden must be >= 1 (got {self.ca_hidden})")
        if self.activation not in ("gelu", "relu", "none"):
            out.append(f"activation must be gelu, relu or none (got {self.activation!r})")
        if self.rfmg_residual not in RFMG_RESIDUAL_MODES:
            out.append(f"rfmg_residual must be one of {RFMG_RESIDUAL_MODES} (got {self.rfmg_residual!r})")
        if not (self.use_hfdb or self.use_cgfn):
            out.append("at least one of use_hfdb/use_cgfn must be enabled")
        return out

    @property
    def partial_channels(self) -> int:
        """Channels routed through attention and strip convolutions; g == 1 means all of them."""
        return self.channels // self.shuffle_group

    @property
    def attention_hidden(self) -> int:
        if self.ca_hidden is not None:
            return self.ca_hidden
        return max(4, math.ceil(self.partial_channels / 4))


class Scope(Mapping):
    """Read-only view of ``weights`` restricted to keys under ``prefix.``."""

    def __init__(self, weights: Mapping[str, Tensor], prefix: str):
        self._weights = weights
        self._prefix = prefix + "." if prefix else ""

    def __getitem__(self, key: str) -> Tensor:
        try:
            return self._weights[self._prefix + key]
        except KeyError:
            raise KeyError(f"missing weight {self._prefix + key!r}") from None

    def __iter__(self) -> Iterator[str]:
        n = len(self._prefix)
        return (k[n:] for k in self._weights if k.startswith(self._prefix))

    def __len__(self) -> int:
        return sum(1 for _ in self)

    def __contains__(self, key) -> bool:
        return (self._prefix + key) in self._weights


def _conv_shapes(name: str, c_out: int, c_in_per_group: int, kh: int, kw: int) -> Shapes:
    return {f"{name}.weight": (c_out, c_in_per_group, kh, kw), f"{name}.bias": (c_out,)}


def _prefixed(prefix: str, shapes: Shapes) -> Shapes:
    return {f"{prefix}.{k}": v for k, v in shapes.items()}


def _conv(x: Tensor, w: Mapping[str, Tensor], name: str, padding=(0, 0), groups: int = 1) -> Tensor:
    return ops.conv2d(x, ConvParams(w[f"{name}.weight"], w.get(f"{name}.bias"), 1, padding, groups))


def _check_channels(x: Tensor, cfg: BlockConfig, block: str) -> None:
    if x.ndim != 4 or x.shape[1] != cfg.channels:
        raise DimensionError(f"{block}: expected {cfg.channels} input channels, got shape {x.shape}")


# -- EPLKB ----------------------------------------------------------------------


def eplkb_shapes(cfg: BlockConfig) -> Shapes:
    p, k, c = cfg.partial_channels, cfg.kernel_size, cfg.channels
    shapes: Shapes = {}
    if cfg.channel_attention:
        hid = cfg.attention_hidden
        shapes |= _conv_shapes("ca.down", hid, p, 1, 1)
        shapes |= _conv_shapes("ca.up", p, hid, 1, 1)
    shapes |= _conv_shapes("strip_h", p, 1, 1, k)
    shapes |= _conv_shapes("strip_v", p, 1, k, 1)
    shapes |= _conv_shapes("fuse", c, c, 1, 1)
    return shapes


def channel_attention(x: Tensor, w: Mapping[str, Tensor]) -> Tensor:
    """Squeeze-excite gate: pool, bottleneck, relu, expand, sigmoid, rescale."""
    s = ops.global_avg_pool(x)
    s = ops.relu(_conv(s, w, "ca.down"))
    s = ops.sigmoid(_conv(s, w, "ca.up"))
    return ops.mul(x, s)


def eplkb_forward(x: Tensor, weights: Mapping[str, Tensor], cfg: BlockConfig, trace: dict | None = None) -> Tensor:
    """Shuffle, split off C/g channels, attend + strip-convolve them, concat, 1x1 fuse."""
    _check_channels(x, cfg, "EPLKB")
    g, p, k = cfg.shuffle_group, cfg.partial_channels, cfg.kernel_size
    h = ops.channel_shuffle(x, g) if cfg.channel_shuffle else x
    if g > 1:
        part, rest = ops.channel_split(h, p)
    else:
        part, rest = h, None
    if cfg.channel_attention:
        part = channel_attention(part, weights)
    part = _conv(part, weights, "strip_h", padding=(0, (k - 1) // 2), groups=p)
    part = _conv(part, weights, "strip_v", padding=((k - 1) // 2, 0), groups=p)
    merged = part if rest is None else ops.concat_channels([part, rest])
    if trace is not None:
        trace["shuffled"] = h
        trace["pre_fuse"] = merged
    return _conv(merged, weights, "fuse")


# -- HFAB / HFDB -------------------------------------------------------------------


def hfab_shapes(cfg: BlockConfig) -> Shapes:
    c = cfg.channels
    return (
        _conv_shapes("dw", c, 1, 3, 3)
        | _prefixed("eplkb", eplkb_shapes(cfg))
        | _conv_shapes("fuse", c, 2 * c, 1, 1)
    )


def hfab_forward(x: Tensor, weights: Mapping[str, Tensor], cfg: BlockConfig) -> Tensor:
    _check_channels(x, cfg, "HFAB")
    local = _conv(x, weights, "dw", padding=(1, 1), groups=cfg.channels)
    wide = eplkb_forward(x, Scope(weights, "eplkb"), cfg)
    fused = _conv(ops.concat_channels([local, wide]), weights, "fuse")
    return ops.activation(fused, cfg.activation)


def hfdb_shapes(cfg: BlockConfig) -> Shapes:
    c, d = cfg.channels, cfg.distill_channels
    shapes: Shapes = {}
    for i in (1, 2, 3):
        shapes |= _prefixed(f"hfab{i}", hfab_shapes(cfg))
        shapes |= _conv_shapes(f"distill{i}", d, c, 1, 1)
    shapes |= _conv_shapes("fuse", c, 3 * d + c, 1, 1)
    return shapes


def hfdb_forward(x: Tensor, weights: Mapping[str, Tensor], cfg: BlockConfig, trace: dict | None = None) -> Tensor:
    """Three HFAB stages on the main branch with a 1x1 distillation tap before each."""
    _check_channels(x, cfg, "HFDB")
    taps = []
    main = x
    for i in (1, 2, 3):
        taps.append(_conv(main, weights, f"distill{i}"))
        main = hfab_forward(main, Scope(weights, f"hfab{i}"), cfg)
    merged = ops.concat_channels([*taps, main])
    if trace is not None:
        trace["pre_fuse"] = merged
    return ops.activation(_conv(merged, weights, "fuse"), cfg.activation)


# -- CGFN ----------------------------------------------------------------------------


def cgfn_shapes(cfg: BlockConfig) -> Shapes:
    c = cfg.channels
    shapes = _prefixed("eplkb", eplkb_shapes(cfg)) | _conv_shapes("dw", c, 1, 3, 3)
    if cfg.use_gamma:
        shapes["gamma"] = (c,)
    return shapes | _conv_shapes("fuse", c, 2 * c, 1, 1)


def cgfn_forward(x: Tensor, weights: Mapping[str, Tensor], cfg: BlockConfig) -> Tensor:
    """Gate each branch by the scaled discrepancy of the other, then 1x1 fuse."""
    _check_channels(x, cfg, "CGFN")
    wide = eplkb_forward(x, Scope(weights, "eplkb"), cfg)
    local = _conv(x, weights, "dw", padding=(1, 1), groups=cfg.channels)
    wide_sub = ops.sub(x, wide)
    local_sub = ops.sub(x, local)
    if cfg.use_gamma:
        gamma = weights["gamma"]
        if gamma.shape != (cfg.channels,):
            raise ConfigError(f"gamma has shape {gamma.shape}, expected ({cfg.channels},)")
        wide_sub = ops.scale_channels(wide_sub, gamma)
        local_sub = ops.scale_channels(local_sub, gamma)
    if cfg.cross_gate:
        wide_out, local_out = ops.mul(wide, local_sub), ops.mul(local, wide_sub)
    else:
        wide_out, local_out = ops.mul(wide, wide_sub), ops.mul(local, local_sub)
    return _conv(ops.concat_channels([wide_out, local_out]), weights, "fuse")


# -- RFMG ------------------------------------------------------------------------------


def rfmg_shapes(cfg: BlockConfig) -> Shapes:
    shapes: Shapes = {}
    if cfg.use_hfdb:
        shapes |= _prefixed("hfdb", hfdb_shapes(cfg))
    if cfg.use_cgfn:
        shapes |= _prefixed("cgfn", cgfn_shapes(cfg))
    return shapes


def rfmg_forward(x: Tensor, weights: Mapping[str, Tensor], cfg: BlockConfig) -> Tensor:
    _check_channels(x, cfg, "RFMG")

    def hfdb(t):
        return hfdb_forward(t, Scope(weights, "hfdb"), cfg) if cfg.use_hfdb else None

    def cgfn(t):
        return cgfn_forward(t, Scope(weights, "cgfn"), cfg) if cfg.use_cgfn else None

    mode = cfg.rfmg_residual
    if mode == "nested":
        y = x
        if cfg.use_hfdb:
            y = ops.add(y, hfdb(y))
        if cfg.use_cgfn:
            y = ops.add(y, cgfn(y))
        return y
    body = x
    if cfg.use_hfdb:
        body = hfdb(body)
    if cfg.use_cgfn:
        body = cgfn(body)
    return ops.add(x, body) if mode == "outer" else body


def receptive_radius(cfg: BlockConfig) -> int:
    """Spatial reach (pixels, per side) of one RFMG, ignoring the global pooling in attention."""
    wide = max(1, (cfg.kernel_size - 1) // 2)
    r = 0
    if cfg.use_hfdb:
        r += 3 * wide
    if cfg.use_cgfn:
        r += wide
    return r
