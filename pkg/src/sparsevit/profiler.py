"""Analytic parameter and FLOP accounting; never allocates activations.

Conventions (also written into every CSV header):

* a multiply-add counts as 2 FLOPs; a bias add as 1 FLOP per output element
* attention per block: ``8*N*C^2`` for the q/k/v/o projections plus
  ``4*N^2*C / s^2`` for scores and weighted sum (``s^2`` groups of ``N/s^2``)
* softmax: ``SOFTMAX_FLOPS`` per score entry, layer norm ``NORM_FLOPS`` per
  element, GELU ``GELU_FLOPS`` per element, residual add 1 per element,
  bilinear upsample ``BILINEAR_FLOPS`` per output element, input
  standardisation 2 per pixel value
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .backbone import stage_plans, validate_input
from .config import Config

SOFTMAX_FLOPS = 5
NORM_FLOPS = 5
GELU_FLOPS = 8
BILINEAR_FLOPS = 8

HEADER = (
    "# FLOPs convention: multiply-add = 2 FLOPs, bias add = 1 per output\n"
    "# attention = 8*N*C^2 + 4*N^2*C/s^2 (projections + scores/weighted sum)\n"
    f"# softmax = {SOFTMAX_FLOPS}/score, layer norm = {NORM_FLOPS}/element, "
    f"gelu = {GELU_FLOPS}/element, residual = 1/element, bilinear = {BILINEAR_FLOPS}/output\n"
)


def attention_flops(tokens: int, channels: int, heads: int, s: int) -> int:
    """Projection plus group-restricted score/weighted-sum FLOPs of one attention layer."""
    if heads < 1 or channels % heads:
        raise ValueError(f"heads={heads} must divide channels={channels}")
    if s < 1 or tokens % (s * s):
        raise ValueError(f"s^2={s * s} must divide token count {tokens}")
    return 8 * tokens * channels ** 2 + 4 * tokens ** 2 * channels // (s * s)


def attention_quadratic_flops(tokens: int, channels: int, s: int) -> int:
    return 4 * tokens ** 2 * channels // (s * s)


@dataclass(frozen=True)
class LayerCost:
    name: str
    params: int
    flops: int
    macs: int = 0  # multiply-adds issued through matmul/conv (subset of flops)


@dataclass
class CostReport:
    layers: list = field(default_factory=list)
    input_size: tuple = (0, 0)
    attention: str = "sparse"

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def total_flops(self) -> int:
        return sum(l.flops for l in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)

    def add(self, name, params, flops, macs=0):
        self.layers.append(LayerCost(name, int(params), int(flops), int(macs)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(HEADER)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "params", "flops"])
        for l in self.layers:
            w.writerow([l.name, l.params, l.flops])
        w.writerow(["TOTAL", self.total_params, self.total_flops])
        return buf.getvalue()


def _conv(r: CostReport, name, cin, cout, ho, wo, k=3):
    n = ho * wo
    macs = n * cout * cin * k * k
    r.add(name, cout * cin * k * k + cout, 2 * macs + n * cout, macs)


def _norm(r, name, c, n):
    r.add(name, 2 * c, NORM_FLOPS * n * c)


def _linear(r, name, cin, cout, n, bias=True):
    macs = n * cin * cout
    r.add(name, cin * cout + (cout if bias else 0), 2 * macs + (n * cout if bias else 0), macs)


def model_cost(cfg: Config, height: int | None = None, width: int | None = None,
               attention: str = "sparse") -> CostReport:
    """Per-layer costs for one image. ``attention="global"`` sets every rate to 1
    while keeping the tap structure, so sparse/global differ only in attention."""
    if attention not in ("sparse", "global"):
        raise ValueError(f"attention must be 'sparse' or 'global', got {attention!r}")
    h = height or cfg.input_size
    w = width or cfg.input_size
    validate_input(cfg, h, w)
    plan3, plan4 = stage_plans(cfg)
    c1, c2, c3, c4 = cfg.channels
    r = CostReport(input_size=(h, w), attention=attention)

    r.add("stem.standardise", 0, 2 * 3 * h * w)
    ho, wo = h // 2, w // 2
    _conv(r, "stem.conv0", 3, c1 // 2, ho, wo)
    _norm(r, "stem.norm0", c1 // 2, ho * wo)
    r.add("stem.gelu0", 0, GELU_FLOPS * ho * wo * c1 // 2)
    ho, wo = h // 4, w // 4
    _conv(r, "stem.conv1", c1 // 2, c1, ho, wo)
    _norm(r, "stem.norm1", c1, ho * wo)
    for s, c, prev, div in ((1, c1, None, 4), (2, c2, c1, 8)):
        ho, wo = h // div, w // div
        if prev is not None:
            _conv(r, f"stage{s}.down", prev, c, ho, wo)
            _norm(r, f"stage{s}.down_norm", c, ho * wo)
        for i in range(cfg.depths[s - 1]):
            pre = f"stage{s}.block{i}"
            _conv(r, pre + ".conv", c, c, ho, wo)
            _norm(r, pre + ".norm", c, ho * wo)
            r.add(pre + ".gelu+residual", 0, (GELU_FLOPS + 1) * ho * wo * c)

    for s, c, prev, div, plan in ((3, c3, c2, 16, plan3), (4, c4, c3, 32, plan4)):
        ho, wo = h // div, w // div
        n = ho * wo
        heads = c // cfg.head_dim
        hidden = c * cfg.mlp_ratio
        _conv(r, f"stage{s}.down", prev, c, ho, wo)
        _norm(r, f"stage{s}.down_norm", c, n)
        for i, rate in enumerate(plan.rates):
            rate = 1 if attention == "global" else rate
            pre = f"stage{s}.block{i}"
            _norm(r, pre + ".ln1", c, n)
            r.add(pre + f".attn(s={rate})", 4 * c * c, attention_flops(n, c, heads, rate),
                  attention_flops(n, c, heads, rate) // 2)
            r.add(pre + ".softmax", 0, SOFTMAX_FLOPS * heads * n * n // (rate * rate))
            _norm(r, pre + ".ln2", c, n)
            _linear(r, pre + ".mlp1", c, hidden, n)
            r.add(pre + ".gelu", 0, GELU_FLOPS * n * hidden)
            _linear(r, pre + ".mlp2", hidden, c, n)
            r.add(pre + ".residual", 0, 2 * n * c)

    # LFF head
    n3 = (h // 16) * (w // 16)
    f = cfg.fuse_dim
    for i in range(len(plan3.tap_indices)):
        _linear(r, f"lff.proj{i}", c3, f, n3)
    for i in range(len(plan4.tap_indices)):
        r.add(f"lff.upsample{i}", 0, BILINEAR_FLOPS * n3 * f)
    n_maps = len(plan3.tap_indices) + len(plan4.tap_indices)
    r.add("lff.gamma+sum", n_maps * f, (2 * n_maps - 1) * n3 * f)
    _linear(r, "lff.head", f, 1, n3)
    r.add("lff.upsample_out", 0, BILINEAR_FLOPS * h * w)
    return r


@dataclass
class ABReport:
    sparse: CostReport
    dense: CostReport

    @property
    def ratio(self) -> float:
        return self.sparse.total_flops / self.dense.total_flops

    def to_csv(self) -> str:
        body = self.sparse.to_csv()
        return (body + f"TOTAL_GLOBAL,{self.dense.total_params},{self.dense.total_flops}\n"
                f"RATIO_SPARSE_OVER_GLOBAL,,{self.ratio!r}\n")


def ab_compare(cfg: Config, height: int | None = None, width: int | None = None) -> ABReport:
    return ABReport(model_cost(cfg, height, width, "sparse"),
                    model_cost(cfg, height, width, "global"))
