"""
Correlation statistics for IQA evaluation and the PSNR / SSIM baselines.

Correlations of a constant vector are reported as 0 together with a
``DegenerateInputWarning`` instead of NaN, so evaluation loops never break
on a pathological batch.  PLCC is the raw Pearson coefficient; no logistic
remapping is applied beforehand.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError


class DegenerateInputWarning(UserWarning):
    """Statistic undefined for the input (constant vector, identical images)."""


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ContractError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ContractError("correlation needs at least two samples")
    return x, y


def plcc(x, y) -> float:
    """Pearson linear correlation coefficient."""
    x, y = _pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        warnings.warn("PLCC of a constant vector is undefined; reporting 0", DegenerateInputWarning, stacklevel=2)
        return 0.0
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def rankdata(x) -> np.ndarray:
    """1-based fractional ranks; tied values share their average rank."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(x.size, dtype=np.float64)
    start = 0
    while start < x.size:
        stop = start + 1
        while stop < x.size and sorted_x[stop] == sorted_x[start]:
            stop += 1
        ranks[order[start:stop]] = (start + stop + 1) / 2.0
        start = stop
    return ranks


def srcc(x, y) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    x, y = _pair(x, y)
    return plcc(rankdata(x), rankdata(y))


def krcc(x, y) -> float:
    """Kendall tau-b over all N(N-1)/2 pairs."""
    x, y = _pair(x, y)
    iu = np.triu_indices(x.size, k=1)
    sx = np.sign(x[:, None] - x[None, :])[iu].astype(np.int64)
    sy = np.sign(y[:, None] - y[None, :])[iu].astype(np.int64)
    n0 = x.size * (x.size - 1) // 2
    ties_x = int(np.count_nonzero(sx == 0))
    ties_y = int(np.count_nonzero(sy == 0))
    denom = (n0 - ties_x) * (n0 - ties_y)
    if denom == 0:
        warnings.warn("KRCC with an all-tied vector is undefined; reporting 0", DegenerateInputWarning, stacklevel=2)
        return 0.0
    return int(np.sum(sx * sy)) / math.sqrt(denom)


@dataclass(frozen=True)
class MetricReport:
    plcc: float
    srcc: float
    krcc: float
    main_score: float
    n: int
    degenerate: bool = False

    def as_row(self) -> dict:
        return {"plcc": self.plcc, "srcc": self.srcc, "krcc": self.krcc,
                "main_score": self.main_score, "n": self.n}


def main_score(plcc_value: float, srcc_value: float) -> float:
    """Model-selection criterion: PLCC + SRCC."""
    return plcc_value + srcc_value


def report(predictions, mos) -> MetricReport:
    """PLCC, SRCC, KRCC and the main score PLCC + SRCC."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateInputWarning)
        p, s, k = plcc(predictions, mos), srcc(predictions, mos), krcc(predictions, mos)
    degenerate = any(issubclass(w.category, DegenerateInputWarning) for w in caught)
    for w in caught:
        warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    return MetricReport(p, s, k, main_score(p, s), int(np.asarray(mos).size), degenerate)


# ---------------------------------------------------------------------------
# classical full-reference baselines
# ---------------------------------------------------------------------------

PSNR_CAP = 100.0


def psnr(ref, dist, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over all channels.

    Identical images give ``PSNR_CAP`` (100 dB) and a ``DegenerateInputWarning``.
    """
    ref = np.asarray(ref, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if ref.shape != dist.shape:
        raise ContractError(f"image shapes differ: {ref.shape} vs {dist.shape}")
    mse = float(np.mean((ref - dist) ** 2))
    if mse == 0.0:
        warnings.warn("identical images; PSNR capped", DegenerateInputWarning, stacklevel=2)
        return PSNR_CAP
    return 10.0 * math.log10(max_val ** 2 / mse)


def to_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 3:
        return img @ np.array([0.299, 0.587, 0.114])
    if img.ndim == 2:
        return img
    raise ContractError(f"expected [H, W] or [H, W, 3] image, got {img.shape}")


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = np.apply_along_axis(np.convolve, 0, img, g, mode="valid")
    return np.apply_along_axis(np.convolve, 1, rows, g, mode="valid")


def ssim(ref, dist, data_range: float = 1.0) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), mean over the valid map."""
    x, y = to_gray(ref), to_gray(dist)
    if x.shape != y.shape:
        raise ContractError(f"image shapes differ: {x.shape} vs {y.shape}")
    if min(x.shape) < 11:
        raise ContractError(f"SSIM needs images of at least 11x11, got {x.shape}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    g = gaussian_window()
    mu_x, mu_y = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x * mu_x
    syy = _filter_valid(y * y, g) - mu_y * mu_y
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))
