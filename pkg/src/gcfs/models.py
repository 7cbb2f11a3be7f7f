"""Mini GCResNet (deblurring) and GCEDSR (super-resolution).

Weights live in a flat ``{name: Tensor}`` dict whose layout is fixed by
:func:`param_shapes`; forward functions are pure functions of
``(x, cfg, params, agg)``.

GCResNet::

    head conv -> [ResBlocks -> stride-2 conv]x2 -> ResBlocks -> GC stack
      -> ResBlocks -> [sub-pixel x2 (+ encoder skip) -> ResBlocks]x2 -> tail conv (+ input)

GCEDSR::

    head conv -> ResBlocks -> GC stack -> ResBlocks -> conv (+ head) -> sub-pixel tail -> out conv
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from . import tensor as T
from .gcfeat import GCStackConfig, build_aggregator, gc_param_shapes, gc_stack_forward
from .tensor import Tensor
from .wsgraph import Aggregator

__all__ = [
    "ModelConfig",
    "ParamSpec",
    "param_shapes",
    "param_count",
    "describe",
    "model_aggregator",
    "forward",
    "gcresnet_forward",
    "gcedsr_forward",
    "level_counts",
]

_LEVELS = 3


@dataclass
class ModelConfig:
    task: str = "deblur"
    channels: int = 32
    img_channels: int = 3
    enc_blocks: int = 3
    dec_blocks: int = 3
    sr_blocks: int = 8
    gc: GCStackConfig = field(default_factory=GCStackConfig)
    scale: int = 2
    global_skip: bool = True

    def __post_init__(self):
        if isinstance(self.gc, dict):
            self.gc = GCStackConfig(**self.gc)
        if self.task not in ("deblur", "sr"):
            raise ValueError(f"task must be 'deblur' or 'sr', got {self.task!r}")
        if self.channels < 1 or self.img_channels not in (1, 3):
            raise ValueError("channels must be positive and img_channels 1 or 3")
        if self.task == "sr" and self.scale not in (1, 2, 4, 8):
            raise ValueError(f"scale must be one of 1, 2, 4, 8, got {self.scale}")
        if self.gc.lift_project or self.gc.blocks:
            if self.gc.degree >= self.channels:
                raise ValueError(f"graph degree {self.gc.degree} must be below the node count {self.channels}")

    @property
    def factor(self) -> int:
        """Spatial divisibility the network requires of its input."""
        return 4 if self.task == "deblur" else 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        gc = d.pop("gc", {})
        return cls(gc=GCStackConfig(**gc), **d)


@dataclass(frozen=True)
class ParamSpec:
    shape: tuple
    fan_in: int
    fan_out: int
    kind: str  # "conv", "bias" or "gc"
    stage: str

    @property
    def size(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n


def level_counts(total: int, levels: int = _LEVELS) -> list[int]:
    """Split ``total`` blocks over ``levels`` levels, remainder going to the first."""
    return [total // levels + (1 if i < total % levels else 0) for i in range(levels)]


def _conv(specs: dict, name: str, cin: int, cout: int, stage: str, k: int = 3) -> None:
    specs[f"{name}.w"] = ParamSpec((cout, cin, k, k), cin * k * k, cout * k * k, "conv", stage)
    specs[f"{name}.b"] = ParamSpec((cout,), cin * k * k, cout * k * k, "bias", stage)


def _resblock(specs: dict, name: str, c: int, stage: str) -> None:
    _conv(specs, f"{name}.conv1", c, c, stage)
    _conv(specs, f"{name}.conv2", c, c, stage)


def _gc(specs: dict, cfg: ModelConfig) -> None:
    for name, shape in gc_param_shapes(cfg.gc).items():
        specs[name] = ParamSpec(shape, shape[0], shape[1], "gc", "gc")


def _upsample_stages(scale: int) -> int:
    return {1: 0, 2: 1, 4: 2, 8: 3}[scale]


def param_shapes(cfg: ModelConfig) -> dict[str, ParamSpec]:
    c, ci = cfg.channels, cfg.img_channels
    specs: dict[str, ParamSpec] = {}
    if cfg.task == "deblur":
        enc = level_counts(cfg.enc_blocks)
        dec = level_counts(cfg.dec_blocks)[::-1]  # deepest level first
        _conv(specs, "head", ci, c, "head")
        for lvl in range(_LEVELS):
            for i in range(enc[lvl]):
                _resblock(specs, f"enc{lvl}.rb{i}", c, "enc")
            if lvl < _LEVELS - 1:
                _conv(specs, f"down{lvl}", c, c, "enc")
        _gc(specs, cfg)
        for lvl in reversed(range(_LEVELS)):
            if lvl < _LEVELS - 1:
                _conv(specs, f"up{lvl}", c, 4 * c, "dec")
            for i in range(dec[lvl]):
                _resblock(specs, f"dec{lvl}.rb{i}", c, "dec")
        _conv(specs, "tail", c, ci, "tail")
    else:
        first = cfg.sr_blocks // 2
        _conv(specs, "head", ci, c, "head")
        for i in range(first):
            _resblock(specs, f"body0.rb{i}", c, "body")
        _gc(specs, cfg)
        for i in range(cfg.sr_blocks - first):
            _resblock(specs, f"body1.rb{i}", c, "body")
        _conv(specs, "body_end", c, c, "body")
        for s in range(_upsample_stages(cfg.scale)):
            _conv(specs, f"upsample{s}", c, 4 * c, "tail")
        _conv(specs, "out", c, ci, "tail")
    return specs


def param_count(cfg: ModelConfig) -> int:
    return sum(spec.size for spec in param_shapes(cfg).values())


def describe(cfg: ModelConfig) -> str:
    specs = param_shapes(cfg)
    title = "GCResNet (deblur)" if cfg.task == "deblur" else f"GCEDSR (x{cfg.scale} super-resolution)"
    lines = [
        title,
        f"channels={cfg.channels} graph: degree={cfg.gc.degree} rho={cfg.gc.rho} "
        f"seed={cfg.gc.graph_seed} F={cfg.gc.width} resgcn_blocks={cfg.gc.blocks}",
        f"{'stage':<6} {'parameter':<22} {'shape':<18} {'params':>8}",
    ]
    for name, spec in specs.items():
        label = name
        if name.startswith("upsample"):
            label = f"{name} (sub-pixel x2)"
        lines.append(f"{spec.stage:<6} {label:<22} {'x'.join(map(str, spec.shape)):<18} {spec.size:>8}")
    if cfg.task == "sr":
        lines.append(f"tail   sub-pixel upsampler scale x{cfg.scale}")
    if cfg.gc.is_identity:
        lines.append("gc     (identity: no graph convolution)")
    lines.append(f"total {param_count(cfg)}")
    return "\n".join(lines) + "\n"


_AGG_CACHE: dict = {}


def model_aggregator(cfg: ModelConfig) -> Aggregator | None:
    """Aggregator for the model's graph, built once per graph configuration."""
    if cfg.gc.is_identity:
        return None
    key = (cfg.channels, cfg.gc.degree, float(cfg.gc.rho), cfg.gc.graph_seed)
    if key not in _AGG_CACHE:
        _AGG_CACHE[key] = build_aggregator(cfg.gc, cfg.channels)
    return _AGG_CACHE[key]


def _conv_apply(x: Tensor, p: dict, name: str, stride: int = 1) -> Tensor:
    return T.conv2d(x, p[f"{name}.w"], p[f"{name}.b"], stride=stride, padding=1)


def _resblock_apply(x: Tensor, p: dict, name: str) -> Tensor:
    h = T.relu(_conv_apply(x, p, f"{name}.conv1"))
    return T.add(_conv_apply(h, p, f"{name}.conv2"), x)


def gcresnet_forward(x: Tensor, cfg: ModelConfig, params: dict, agg: Aggregator | None) -> Tensor:
    b, ci, h, w = x.shape
    if h % 4 or w % 4:
        raise ValueError(f"GCResNet input height/width must be divisible by 4, got {h}x{w}")
    if ci != cfg.img_channels:
        raise ValueError(f"expected {cfg.img_channels} image channels, got {ci}")
    enc = level_counts(cfg.enc_blocks)
    dec = level_counts(cfg.dec_blocks)[::-1]

    f = _conv_apply(x, params, "head")
    skips = []
    for lvl in range(_LEVELS):
        for i in range(enc[lvl]):
            f = _resblock_apply(f, params, f"enc{lvl}.rb{i}")
        if lvl < _LEVELS - 1:
            skips.append(f)
            f = T.relu(_conv_apply(f, params, f"down{lvl}", stride=2))

    f = gc_stack_forward(f, cfg.gc, params, agg)

    for lvl in reversed(range(_LEVELS)):
        if lvl < _LEVELS - 1:
            f = T.subpixel_upsample(_conv_apply(f, params, f"up{lvl}"), 2)
            f = T.add(f, skips[lvl])
        for i in range(dec[lvl]):
            f = _resblock_apply(f, params, f"dec{lvl}.rb{i}")
    out = _conv_apply(f, params, "tail")
    if cfg.global_skip:
        out = T.add(out, x)
    return out


def gcedsr_forward(x: Tensor, cfg: ModelConfig, params: dict, agg: Aggregator | None) -> Tensor:
    if x.shape[1] != cfg.img_channels:
        raise ValueError(f"expected {cfg.img_channels} image channels, got {x.shape[1]}")
    first = cfg.sr_blocks // 2
    head = _conv_apply(x, params, "head")
    f = head
    for i in range(first):
        f = _resblock_apply(f, params, f"body0.rb{i}")
    f = gc_stack_forward(f, cfg.gc, params, agg)
    for i in range(cfg.sr_blocks - first):
        f = _resblock_apply(f, params, f"body1.rb{i}")
    f = T.add(_conv_apply(f, params, "body_end"), head)
    for s in range(_upsample_stages(cfg.scale)):
        f = T.subpixel_upsample(_conv_apply(f, params, f"upsample{s}"), 2)
    return _conv_apply(f, params, "out")


def forward(x: Tensor, cfg: ModelConfig, params: dict, agg: Aggregator | None = None) -> Tensor:
    if agg is None:
        agg = model_aggregator(cfg)
    if cfg.task == "deblur":
        return gcresnet_forward(x, cfg, params, agg)
    return gcedsr_forward(x, cfg, params, agg)
