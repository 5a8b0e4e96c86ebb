"""Procedural splice forgeries that differ from the host only in camera fingerprint.

One clean scene is rendered per sample. The host fingerprint (sensor noise
plus a 2x2 periodic demosaic-like pattern) is stamped outside the spliced
region and the donor fingerprint inside it, so the semantic content is
continuous across the seam and only the non-semantic statistics change.
With identical host and donor fingerprints (the "hard negative" variant)
the two regions are drawn from the same distribution.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .config import Config

TEXTURES = ("gradient", "noise", "checker")
SHAPES = ("rectangle", "ellipse")
MAX_ATTEMPTS = 10
SPLIT_OFFSETS = {"train": 0, "val": 1_000_000, "test": 2_000_000, "test_hard": 3_000_000}


class DegenerateRegionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Fingerprint:
    sigma: float        # sensor noise std
    amplitude: float    # periodic pattern amplitude
    phase: int          # which 2x2 site carries the red sample (0..3)


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    size: int
    texture: str
    host: Fingerprint
    donor: Fingerprint
    shape: str
    area_range: tuple = (0.02, 0.4)

    def __post_init__(self):
        for fp in (self.host, self.donor):
            if fp.sigma < 0 or fp.amplitude < 0:
                raise ValueError("fingerprint sigma and amplitude must be >= 0")
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown region shape {self.shape!r}")
        lo, hi = self.area_range
        if not 0 <= lo <= hi < 1:
            raise ValueError(f"bad area range {self.area_range}")

    @property
    def hard_negative(self) -> bool:
        return self.host == self.donor

    def digest(self) -> str:
        return hashlib.sha256(repr(sorted(asdict(self).items())).encode()).hexdigest()[:16]


@dataclass
class Sample:
    image: np.ndarray   # [3, H, W] in [0, 1], multiples of 1/255
    mask: np.ndarray    # [H, W] uint8 in {0, 1}
    provenance: str


def make_spec(seed: int, cfg: Config, hard_negative: bool = False) -> SceneSpec:
    rng = np.random.default_rng([cfg.seed, seed, 0])
    host = Fingerprint(float(rng.uniform(*cfg.host_sigma)), float(rng.uniform(*cfg.host_pattern)),
                       int(rng.integers(4)))
    # donor drawn either way so the hard variant is the same scene minus the seam
    donor = Fingerprint(float(rng.uniform(*cfg.donor_sigma)), float(rng.uniform(*cfg.donor_pattern)),
                        int((host.phase + rng.integers(1, 4)) % 4))
    spec = SceneSpec(seed=seed, size=cfg.input_size, texture=TEXTURES[rng.integers(3)],
                     host=host, donor=donor, shape=SHAPES[rng.integers(2)],
                     area_range=(cfg.area_min, cfg.area_max))
    return hard_negative_of(spec) if hard_negative else spec


# -- rendering ------------------------------------------------------------------------

def _colour(rng):
    return rng.uniform(0.15, 0.85, size=3)


def render_texture(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    if kind == "gradient":
        theta = rng.uniform(0, 2 * np.pi)
        t = np.cos(theta) * xx + np.sin(theta) * yy
        t = (t - t.min()) / (np.ptp(t) + 1e-12)
        a, b = _colour(rng), _colour(rng)
        img = a[:, None, None] * (1 - t) + b[:, None, None] * t
    elif kind == "noise":
        freq = np.fft.fftfreq(size)
        radius2 = freq[:, None] ** 2 + freq[None, :] ** 2
        cutoff = rng.uniform(0.01, 0.04)
        lowpass = np.exp(-radius2 / (2 * cutoff ** 2))
        img = np.empty((3, size, size))
        for c in range(3):
            field = np.real(np.fft.ifft2(np.fft.fft2(rng.normal(size=(size, size))) * lowpass))
            field = (field - field.mean()) / (field.std() + 1e-12)
            img[c] = 0.5 + 0.12 * field
    else:
        cell = int(rng.integers(16, 65))
        board = ((np.arange(size)[:, None] // cell + np.arange(size)[None, :] // cell) % 2)
        a, b = _colour(rng), _colour(rng)
        img = np.where(board[None] == 0, a[:, None, None], b[:, None, None])
    return np.clip(img, 0.05, 0.95)


def fingerprint_layer(fp: Fingerprint, size: int, rng: np.random.Generator) -> np.ndarray:
    """Additive sensor trace: periodic 2x2 colour pattern plus white noise."""
    sites = np.arange(4).reshape(2, 2)
    layer = np.empty((3, size, size))
    # red on the phase site, blue diagonally opposite, green on the other two
    red = fp.phase
    blue = 3 - fp.phase
    for c, on in enumerate(((red,), tuple(s for s in range(4) if s not in (red, blue)), (blue,))):
        tile = np.where(np.isin(sites, on), fp.amplitude, -fp.amplitude)
        layer[c] = np.tile(tile, (size // 2, size // 2))
    return layer + rng.normal(0.0, fp.sigma, (3, size, size)) if fp.sigma > 0 else layer


def region_mask(shape: str, size: int, area: float, rng: np.random.Generator) -> np.ndarray:
    aspect = rng.uniform(0.5, 2.0)
    pixels = area * size * size
    if shape == "rectangle":
        hh = math.sqrt(pixels * aspect) / 2
        hw = math.sqrt(pixels / aspect) / 2
    else:
        hh = math.sqrt(pixels * aspect / math.pi)
        hw = math.sqrt(pixels / (aspect * math.pi))
    hh, hw = min(hh, size / 2 - 1), min(hw, size / 2 - 1)
    cy = rng.uniform(hh, size - hh)
    cx = rng.uniform(hw, size - hw)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    if shape == "rectangle":
        m = (np.abs(yy - cy) < hh) & (np.abs(xx - cx) < hw)
    else:
        m = ((yy - cy) / max(hh, 1e-9)) ** 2 + ((xx - cx) / max(hw, 1e-9)) ** 2 < 1.0
    return m.astype(np.uint8)


def generate(spec: SceneSpec) -> Sample:
    """Render a spliced sample; deterministic in ``spec``."""
    size = spec.size
    lo, hi = spec.area_range
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([spec.seed, attempt, 1])
        area = rng.uniform(lo, hi)
        mask = region_mask(spec.shape, size, area, rng)
        frac = mask.mean()
        if mask.any() and lo <= frac <= hi:
            break
    else:
        raise DegenerateRegionError(
            f"no valid region after {MAX_ATTEMPTS} attempts (seed {spec.seed}, area {spec.area_range})")
    clean = render_texture(spec.texture, size, rng)
    host = clean + fingerprint_layer(spec.host, size, rng)
    donor = clean + fingerprint_layer(spec.donor, size, rng)
    img = np.where(mask[None].astype(bool), donor, host)
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return Sample(img, mask, spec.digest())


def hard_negative_of(spec: SceneSpec) -> SceneSpec:
    return replace(spec, donor=spec.host)


def split_seeds(split: str, n: int) -> range:
    base = SPLIT_OFFSETS[split]
    return range(base, base + n)


# -- discriminability oracle -------------------------------------------------------------

def box_blur3(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    h, w = img.shape[1:]
    return sum(p[:, i:i + h, j:j + w] for i in range(3) for j in range(3)) / 9.0


def residual_effect_size(sample: Sample, patch: int = 8) -> float:
    """Cohen's d of patch-wise noise-residual variance, inside vs outside the mask."""
    res = (sample.image - box_blur3(sample.image)).mean(axis=0)
    h, w = res.shape
    inside, outside = [], []
    for y in range(0, h - patch + 1, patch):
        for x in range(0, w - patch + 1, patch):
            m = sample.mask[y:y + patch, x:x + patch]
            v = res[y:y + patch, x:x + patch].var()
            if m.all():
                inside.append(v)
            elif not m.any():
                outside.append(v)
    a, b = np.asarray(inside), np.asarray(outside)
    pooled = math.sqrt(((len(a) - 1) * a.var(ddof=1) + (len(b) - 1) * b.var(ddof=1))
                       / (len(a) + len(b) - 2))
    return float((a.mean() - b.mean()) / pooled)
