"""Adam with cosine-annealed learning rate, train state and checkpoints."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensorio
from .config import Config, substream
from .model import SparseViT


class TrainingAborted(RuntimeError):
    pass


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float) -> float:
    """``lr_max`` at step 0, ``lr_min`` at step ``total_steps - 1``."""
    if total_steps <= 1:
        return lr_max
    t = min(max(step, 0), total_steps - 1) / (total_steps - 1)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t))


@dataclass
class TrainState:
    model: SparseViT
    total_steps: int
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, t in self.model.params.items():
            self.m.setdefault(name, np.zeros_like(t.data))
            self.v.setdefault(name, np.zeros_like(t.data))
            if self.m[name].shape != t.shape or self.v[name].shape != t.shape:
                raise ValueError(f"optimizer moment shape mismatch for {name}")

    @property
    def cfg(self) -> Config:
        return self.model.cfg

    def lr(self, step: int | None = None) -> float:
        return cosine_lr(self.step if step is None else step, self.total_steps,
                         self.cfg.lr, self.cfg.lr_min)


def adam_update(state: TrainState, lr: float) -> None:
    cfg = state.cfg
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.adam_eps
    t = state.step + 1
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in state.model.params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def train_step(state: TrainState, images: np.ndarray, masks: np.ndarray) -> float:
    """One Adam step on BCE-with-logits; returns the pre-update loss."""
    if len(images) == 0:
        raise ValueError("empty batch")
    masks = np.asarray(masks)
    if not np.isin(masks, (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    lr = state.lr()
    state.model.zero_grad()
    try:
        loss = state.model.loss(images, masks)
    except FloatingPointError as exc:
        raise TrainingAborted(f"non-finite forward at step {state.step}, lr {lr:.3e}: {exc}") from exc
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingAborted(f"NaN loss at step {state.step}, lr {lr:.3e}, loss {value}")
    loss.backward()
    adam_update(state, lr)
    state.step += 1
    return value


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return substream(seed, f"order/{epoch}").permutation(n)


# -- checkpoints --------------------------------------------------------------------------

def save_checkpoint(state: TrainState, directory) -> str:
    os.makedirs(directory, exist_ok=True)
    lines = [f"config_hash = {state.cfg.model_hash()}", f"step = {state.step}",
             f"total_steps = {state.total_steps}"]
    for name, p in state.model.params.items():
        for kind, arr in (("param", p.data), ("m", state.m[name]), ("v", state.v[name])):
            fname = f"{kind}.{name}.sten"
            tensorio.save(os.path.join(directory, fname), arr)
            lines.append(f"{kind} {name} = {fname}")
    with open(os.path.join(directory, "config.txt"), "w") as fh:
        fh.write(state.cfg.to_text())
    tensorio.atomic_write_bytes(os.path.join(directory, "manifest.txt"),
                                ("\n".join(lines) + "\n").encode())
    return directory


def read_manifest(directory) -> dict:
    out = {"param": {}, "m": {}, "v": {}}
    with open(os.path.join(directory, "manifest.txt")) as fh:
        for line in fh:
            key, _, value = line.strip().partition(" = ")
            parts = key.split(" ")
            if len(parts) == 2:
                out[parts[0]][parts[1]] = value
            else:
                out[key] = value
    return out


def load_checkpoint(directory, cfg: Config, allow_mismatch: bool = False) -> TrainState:
    from .tensor import Tensor

    man = read_manifest(directory)
    if man["config_hash"] != cfg.model_hash() and not allow_mismatch:
        raise ValueError(f"checkpoint config hash {man['config_hash']} does not match "
                         f"config {cfg.model_hash()}")
    params = {name: Tensor(tensorio.load(os.path.join(directory, f)), requires_grad=True)
              for name, f in man["param"].items()}
    m = {name: tensorio.load(os.path.join(directory, f)) for name, f in man["m"].items()}
    v = {name: tensorio.load(os.path.join(directory, f)) for name, f in man["v"].items()}
    state = TrainState(SparseViT(cfg, params=params), int(man["total_steps"]),
                       int(man["step"]), m, v)
    return state
