"""Hierarchical encoder: conv stages 1-2, sparse-attention transformer stages 3-4.

Resolutions relative to the input: stage 1 at 1/4, stage 2 at 1/8, stage 3
at 1/16, stage 4 at 1/32. Conv stages keep ``[B, C, H, W]``; transformer
stages work on channels-last token grids ``[B, H, W, C]``. The outputs of the
last block of every distinct sparsity rate in stages 3 and 4 are tapped into
a :class:`FeaturePyramid`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .attention import AttentionParams, sparse_attention_layer
from .config import Config, ConfigError
from .schedule import SparsityPlan, StageConfig, build_plan
from .tensor import Tensor

LN_EPS = 1e-6
# fixed input standardisation; centring matters, the sensor trace is a few
# hundredths on top of a ~0.5 scene level and would otherwise sit in GELU's
# linear range
PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


@dataclass
class FeaturePyramid:
    """Tapped maps, channels-last. ``stage3`` maps are ``[B, H/16, W/16, C3]``,
    ``stage4`` maps ``[B, H/32, W/32, C4]``."""

    stage3: list
    stage4: list
    height: int
    width: int

    @property
    def maps(self) -> list:
        return list(self.stage3) + list(self.stage4)


def stage_plans(cfg: Config) -> tuple:
    s3 = StageConfig(cfg.depths[2], cfg.channels[2], cfg.exponents[0], 16, cfg.uniform_rate)
    s4 = StageConfig(cfg.depths[3], cfg.channels[3], cfg.exponents[1], 32, cfg.uniform_rate)
    return build_plan(s3), build_plan(s4)


def validate_input(cfg: Config, h: int, w: int) -> None:
    if h % 32 or w % 32:
        raise ConfigError(f"input extents {h}x{w} must be divisible by 32")
    p3, p4 = stage_plans(cfg)
    for plan, grid, stage in ((p3, (h // 16, w // 16), 3), (p4, (h // 32, w // 32), 4)):
        for r in sorted(set(plan.rates)):
            if grid[0] % r or grid[1] % r:
                raise ConfigError(f"stage {stage} token grid {grid[0]}x{grid[1]} "
                                  f"not divisible by sparsity rate {r} (input {h}x{w})")


# -- parameters ----------------------------------------------------------------------

def _conv(rng, o, c, k=3):
    std = np.sqrt(2.0 / (c * k * k))
    return (Tensor(rng.normal(0.0, std, (o, c, k, k)), requires_grad=True),
            Tensor(np.zeros(o), requires_grad=True))


def _norm(c):
    return Tensor(np.ones(c), requires_grad=True), Tensor(np.zeros(c), requires_grad=True)


def _lin(rng, i, o, std=0.02):
    return (Tensor(rng.normal(0.0, std, (i, o)), requires_grad=True),
            Tensor(np.zeros(o), requires_grad=True))


def init_params(cfg: Config, rng: np.random.Generator) -> dict:
    c1, c2, c3, c4 = cfg.channels
    p = {}

    def put(prefix, names, tensors):
        for n, t in zip(names, tensors):
            p[f"{prefix}.{n}"] = t

    put("stem.conv0", ("w", "b"), _conv(rng, c1 // 2, 3))
    put("stem.norm0", ("g", "b"), _norm(c1 // 2))
    put("stem.conv1", ("w", "b"), _conv(rng, c1, c1 // 2))
    put("stem.norm1", ("g", "b"), _norm(c1))
    prev = c1
    for s, (c, depth) in enumerate(zip(cfg.channels, cfg.depths), start=1):
        if s > 1:
            put(f"stage{s}.down", ("w", "b"), _conv(rng, c, prev))
            put(f"stage{s}.down_norm", ("g", "b"), _norm(c))
        for i in range(depth):
            pre = f"stage{s}.block{i}"
            if s <= 2:
                put(pre + ".conv", ("w", "b"), _conv(rng, c, c))
                put(pre + ".norm", ("g", "b"), _norm(c))
            else:
                hidden = c * cfg.mlp_ratio
                put(pre + ".ln1", ("g", "b"), _norm(c))
                attn = AttentionParams.init(c, c // cfg.head_dim, rng)
                put(pre + ".attn", ("wq", "wk", "wv", "wo"), (attn.wq, attn.wk, attn.wv, attn.wo))
                put(pre + ".ln2", ("g", "b"), _norm(c))
                put(pre + ".mlp1", ("w", "b"), _lin(rng, c, hidden))
                put(pre + ".mlp2", ("w", "b"), _lin(rng, hidden, c))
        prev = c
    return p


# -- forward -----------------------------------------------------------------------

def _channel_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    """LayerNorm over the channel axis of ``[B, C, H, W]``."""
    return ops.layer_norm(x.permute(0, 2, 3, 1), g, b, LN_EPS).permute(0, 3, 1, 2)


def _conv_norm(x, p, conv, norm, stride):
    y = ops.conv2d(x, p[conv + ".w"], p[conv + ".b"], stride=stride, pad=1)
    return _channel_norm(y, p[norm + ".g"], p[norm + ".b"])


def conv_block(x: Tensor, p: dict, pre: str) -> Tensor:
    return x + ops.gelu(_conv_norm(x, p, pre + ".conv", pre + ".norm", 1))


def transformer_block(x: Tensor, p: dict, pre: str, rate: int, heads: int) -> Tensor:
    """Pre-norm block on ``[B, H, W, C]``: attention then MLP, both residual."""
    attn = AttentionParams(p[pre + ".attn.wq"], p[pre + ".attn.wk"], p[pre + ".attn.wv"],
                           p[pre + ".attn.wo"], heads)
    h = ops.layer_norm(x, p[pre + ".ln1.g"], p[pre + ".ln1.b"], LN_EPS)
    x = x + sparse_attention_layer(h, rate, attn)
    h = ops.layer_norm(x, p[pre + ".ln2.g"], p[pre + ".ln2.b"], LN_EPS)
    h = ops.gelu(ops.linear(h, p[pre + ".mlp1.w"], p[pre + ".mlp1.b"]))
    return x + ops.linear(h, p[pre + ".mlp2.w"], p[pre + ".mlp2.b"])


def _transformer_stage(x, p, s, plan: SparsityPlan, heads):
    taps = []
    for i, rate in enumerate(plan.rates):
        x = transformer_block(x, p, f"stage{s}.block{i}", rate, heads)
        if i in plan.tap_indices:
            taps.append(x)
    return x, taps


def forward_backbone(images: Tensor, p: dict, cfg: Config) -> FeaturePyramid:
    """``images [B, 3, H, W]`` -> tapped multi-scale features."""
    if images.ndim != 4 or images.shape[1] != 3:
        raise ValueError(f"expected images of shape [B, 3, H, W], got {images.shape}")
    h, w = images.shape[2:]
    validate_input(cfg, h, w)
    plan3, plan4 = stage_plans(cfg)

    x = (images - PIXEL_MEAN) * (1.0 / PIXEL_STD)
    x = ops.gelu(_conv_norm(x, p, "stem.conv0", "stem.norm0", 2))
    x = _conv_norm(x, p, "stem.conv1", "stem.norm1", 2)
    for i in range(cfg.depths[0]):
        x = conv_block(x, p, f"stage1.block{i}")
    x = _conv_norm(x, p, "stage2.down", "stage2.down_norm", 2)
    for i in range(cfg.depths[1]):
        x = conv_block(x, p, f"stage2.block{i}")

    x = _conv_norm(x, p, "stage3.down", "stage3.down_norm", 2).permute(0, 2, 3, 1)
    x, taps3 = _transformer_stage(x, p, 3, plan3, cfg.channels[2] // cfg.head_dim)
    x = _conv_norm(x.permute(0, 3, 1, 2), p, "stage4.down", "stage4.down_norm", 2)
    x = x.permute(0, 2, 3, 1)
    _, taps4 = _transformer_stage(x, p, 4, plan4, cfg.channels[3] // cfg.head_dim)
    return FeaturePyramid(taps3, taps4, h, w)
