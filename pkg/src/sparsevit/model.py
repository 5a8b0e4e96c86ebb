"""Backbone plus LFF head behind one object."""

from __future__ import annotations

import numpy as np

from . import backbone, lff, ops
from .config import Config, substream
from .tensor import Tensor, no_grad


class SparseViT:
    def __init__(self, cfg: Config, params: dict | None = None, seed: int | None = None):
        self.cfg = cfg
        self.plan3, self.plan4 = backbone.stage_plans(cfg)
        if params is None:
            rng = substream(cfg.seed if seed is None else seed, "init")
            params = backbone.init_params(cfg, rng)
            params.update(lff.init_params(len(self.plan3.tap_indices), len(self.plan4.tap_indices),
                                          cfg.channels[2], cfg.channels[3], cfg.fuse_dim, rng))
        self.params = params

    @property
    def n_maps(self) -> int:
        return len(self.plan3.tap_indices) + len(self.plan4.tap_indices)

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def features(self, images) -> backbone.FeaturePyramid:
        x = images if isinstance(images, Tensor) else Tensor(images)
        return backbone.forward_backbone(x, self.params, self.cfg)

    def forward(self, images) -> Tensor:
        """``[B, 3, H, W]`` images -> ``[B, H, W]`` logits."""
        return lff.forward(self.features(images), self.params)

    __call__ = forward

    def loss(self, images, masks) -> Tensor:
        return ops.bce_with_logits(self.forward(images), np.asarray(masks, dtype=np.float64))

    def predict_logits(self, image: np.ndarray) -> np.ndarray:
        """Single ``[3, H, W]`` image -> ``[H, W]`` logits, no graph."""
        with no_grad():
            return self.forward(image[None]).data[0]

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None
