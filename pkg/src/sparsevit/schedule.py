"""Per-block sparsity rates for a transformer stage and the tap points they induce."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class StageConfig:
    depth: int
    channels: int
    max_exponent: int
    downsample: int = 16
    uniform_rate: int = 0  # >0 replaces the schedule with one fixed rate

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"stage depth must be >= 1, got {self.depth}")
        if self.max_exponent < 0:
            raise ValueError(f"max_exponent must be >= 0, got {self.max_exponent}")
        if not self.uniform_rate and self.depth < self.max_exponent + 1:
            raise ValueError(f"depth {self.depth} too small for rates 2^{self.max_exponent}..2^0")


@dataclass(frozen=True)
class SparsityPlan:
    rates: tuple
    tap_indices: tuple

    @property
    def max_rate(self) -> int:
        return max(self.rates)


def sparsity_schedule(depth: int, max_exponent: int, i: int) -> int:
    """Rate of block ``i``: ``2 ** (E - floor(i * (E + 1) / depth))``.

    At (20, 3) this gives 8,8,8,8,8,4,...,1 and at (7, 1) it gives 2,2,2,2,1,1,1.
    """
    if not 0 <= i < depth:
        raise IndexError(f"block index {i} outside stage of depth {depth}")
    return 2 ** (max_exponent - (i * (max_exponent + 1)) // depth)


def build_plan(cfg: StageConfig) -> SparsityPlan:
    if cfg.uniform_rate:
        rates = (int(cfg.uniform_rate),) * cfg.depth
    else:
        rates = tuple(sparsity_schedule(cfg.depth, cfg.max_exponent, i) for i in range(cfg.depth))
    taps = tuple(i for i in range(cfg.depth) if i == cfg.depth - 1 or rates[i + 1] != rates[i])
    return SparsityPlan(rates, taps)
