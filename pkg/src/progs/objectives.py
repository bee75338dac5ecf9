"""Training objectives and analysis quantities evaluated on supplied data."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d
from scipy.special import logsumexp

SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5


@dataclass(frozen=True)
class LossWeights:
    lambda_ssim: float = 0.2
    lambda_vol: float = 0.01
    lambda_nce: float = 0.005
    lambda_e: float = 0.001

    def __post_init__(self):
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise ValueError("lambda_ssim must lie in [0, 1]")
        if not 5e-4 <= self.lambda_e <= 4e-3:
            raise ValueError("lambda_e must lie in [5e-4, 4e-3]")


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _as_image(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"expected an (H, W) or (H, W, C) image, got shape {a.shape}")
    return a


def _blur(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    return correlate1d(correlate1d(a, w, axis=0, mode="reflect"), w, axis=1, mode="reflect")


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    x, y = _as_image(a), _as_image(b)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    w = _gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _blur(x, w), _blur(y, w)
    vx = _blur(x * x, w) - mx * mx
    vy = _blur(y * y, w) - my * my
    cov = _blur(x * y, w) - mx * my
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def l1(a, b) -> float:
    return float(np.mean(np.abs(_as_image(a) - _as_image(b))))


def psnr(a, b, data_range: float = 1.0) -> float:
    mse = float(np.mean((_as_image(a) - _as_image(b)) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(data_range ** 2 / mse)


def image_loss(rendered, target, lambda_ssim: float = 0.2) -> float:
    return (1 - lambda_ssim) * l1(rendered, target) + lambda_ssim * (1 - ssim(rendered, target))


def c2f_loss(pairs, lambda_ssim: float = 0.2) -> float:
    """Coarse-to-fine loss: mean over levels of the weighted L1 / D-SSIM image loss.

    ``pairs`` holds one ``(rendered, ground_truth)`` tuple per level of detail.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("c2f_loss needs at least one image pair")
    return sum(image_loss(r, g, lambda_ssim) for r, g in pairs) / len(pairs)


def info_nce(anchor, positive, negatives, temperature: float = 0.03,
             include_positive: bool = False, normalize: bool = False) -> float:
    """Contrastive loss between an anchor's attributes and its parent's.

    By default the denominator runs over the negatives only, so the loss is
    unbounded below.  ``include_positive`` gives the usual InfoNCE form and
    ``normalize`` compares L2-normalized vectors.
    """
    a = np.asarray(anchor, dtype=np.float64)
    p = np.asarray(positive, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.float64).reshape(-1, a.size)
    if len(neg) == 0:
        raise ValueError("info_nce needs at least one negative")
    if normalize:
        a, p = a / np.linalg.norm(a), p / np.linalg.norm(p)
        neg = neg / np.linalg.norm(neg, axis=1, keepdims=True)
    pos_logit = a @ p / temperature
    logits = neg @ a / temperature
    if include_positive:
        logits = np.append(logits, pos_logit)
    return float(logsumexp(logits) - pos_logit)


def volume_loss(scales) -> float:
    """Sum over Gaussians of the product of their three scale components."""
    s = np.asarray(scales, dtype=np.float64).reshape(-1, 3)
    return float(np.prod(s, axis=1).sum())


def total_loss(c2f: float, vol: float, nce: float, rate: float, w: LossWeights) -> float:
    return c2f + w.lambda_vol * vol + w.lambda_nce * nce + w.lambda_e * rate


def _bin_indices(v: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros(len(v), dtype=np.int64)
    idx = np.floor((v - lo) / (hi - lo) * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def _entropy(counts: np.ndarray, n: int) -> float:
    # sorted so the sum is independent of how the counts were laid out
    c = np.sort(counts[counts > 0]).astype(np.float64)
    return math.log(n) - float(np.sum(c * np.log(c))) / n


def mi_estimate(x, y, bins: int = 16) -> float:
    """Plug-in mutual information (nats) from equal-width histograms.

    Multi-dimensional inputs are paired column by column and the per-column
    estimates averaged.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x = x.reshape(len(x), -1)
    y = y.reshape(len(y), -1)
    if x.shape != y.shape:
        raise ValueError(f"x and y must have matching shapes, got {x.shape} and {y.shape}")
    n = len(x)
    if n == 0:
        raise ValueError("mi_estimate needs samples")
    total = 0.0
    for d in range(x.shape[1]):
        ix, iy = _bin_indices(x[:, d], bins), _bin_indices(y[:, d], bins)
        hx = _entropy(np.bincount(ix, minlength=bins), n)
        hy = _entropy(np.bincount(iy, minlength=bins), n)
        hxy = _entropy(np.bincount(ix * bins + iy, minlength=bins * bins), n)
        total += max(hx + hy - hxy, 0.0)
    return total / x.shape[1]
