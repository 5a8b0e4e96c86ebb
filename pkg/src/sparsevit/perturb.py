"""Image degradations for robustness sweeps: JPEG-like quantisation, blur, noise.

Images are ``[3, H, W]`` float arrays in ``[0, 1]``.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dctn, idctn

# ITU-T T.81 Annex K luminance table
LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

_RGB2YCC = np.array([[0.299, 0.587, 0.114],
                     [-0.168736, -0.331264, 0.5],
                     [0.5, -0.418688, -0.081312]])
_YCC2RGB = np.linalg.inv(_RGB2YCC)


def quant_table(quality: int) -> np.ndarray:
    """IJG quality scaling of the luminance table."""
    if not 10 <= quality <= 100:
        raise ValueError(f"JPEG quality must be in [10, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((LUMA_TABLE * scale + 50.0) / 100.0), 1.0, 255.0)


def jpeg_like(image: np.ndarray, quality: int) -> np.ndarray:
    """8x8 blockwise DCT quantisation in YCbCr (no chroma subsampling, no entropy coding)."""
    table = quant_table(quality)
    _, h, w = image.shape
    ph, pw = -h % 8, -w % 8
    x = np.pad(image * 255.0, ((0, 0), (0, ph), (0, pw)), mode="edge")
    ycc = np.einsum("ij,jhw->ihw", _RGB2YCC, x)
    ycc[1:] += 128.0
    c, hh, ww = ycc.shape
    blocks = (ycc - 128.0).reshape(c, hh // 8, 8, ww // 8, 8)
    coef = dctn(blocks, axes=(2, 4), norm="ortho")
    q = table[None, None, :, None, :]
    coef = np.round(coef / q) * q
    rec = idctn(coef, axes=(2, 4), norm="ortho").reshape(c, hh, ww) + 128.0
    rec[1:] -= 128.0
    rgb = np.einsum("ij,jhw->ihw", _YCC2RGB, rec)[:, :h, :w]
    return np.clip(rgb / 255.0, 0.0, 1.0)


def gaussian_kernel(k: int, sigma: float) -> np.ndarray:
    if k < 1 or k % 2 == 0:
        raise ValueError(f"blur kernel size must be odd, got {k}")
    if sigma <= 0:
        out = np.zeros(k)
        out[k // 2] = 1.0
        return out
    x = np.arange(k) - k // 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def gaussian_blur(image: np.ndarray, k: int, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding."""
    g = gaussian_kernel(k, sigma)
    r = k // 2
    _, h, w = image.shape
    p = np.pad(image, ((0, 0), (r, r), (0, 0)), mode="reflect")
    tmp = sum(g[i] * p[:, i:i + h, :] for i in range(k))
    p = np.pad(tmp, ((0, 0), (0, 0), (r, r)), mode="reflect")
    return sum(g[i] * p[:, :, i:i + w] for i in range(k))


def gaussian_noise(image: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add N(0, sigma^2) noise and clip to [0, 1]; deterministic in ``seed``."""
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return image.copy()
    rng = np.random.default_rng(seed)
    return np.clip(image + rng.normal(0.0, sigma, image.shape), 0.0, 1.0)
