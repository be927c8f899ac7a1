"""Frame-quality metrics (PSNR / SSIM) and per-segment evaluation reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 * log10(peak^2 / MSE); identical inputs return the 100 dB cap."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    mse = np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / mse)))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter2d(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable convolution with nearest-edge padding."""
    r = kernel.size // 2
    padded = np.pad(img, r, mode="edge")
    tmp = np.apply_along_axis(lambda row: np.convolve(row, kernel, mode="valid"), 1, padded)
    return np.apply_along_axis(lambda col: np.convolve(col, kernel, mode="valid"), 0, tmp)[:, :]


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Single-scale structural similarity, 11x11 Gaussian window, sigma = 1.5.

    Frames are (C, H, W) or (H, W); the result is averaged over pixels and
    channels.
    """
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if min(a.shape[1], a.shape[2]) < SSIM_WINDOW:
        raise ValueError(f"frame smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    vals = []
    for ch in range(a.shape[0]):
        x, y = a[ch], b[ch]
        mu_x = _filter2d(x, kernel)
        mu_y = _filter2d(y, kernel)
        sigma_x = _filter2d(x * x, kernel) - mu_x**2
        sigma_y = _filter2d(y * y, kernel) - mu_y**2
        sigma_xy = _filter2d(x * y, kernel) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (sigma_x + sigma_y + c2)
        r = SSIM_WINDOW // 2  # drop the filter-support border before averaging
        vals.append(np.mean((num / den)[r:-r, r:-r]))
    return float(np.mean(vals))


@dataclass
class MetricReport:
    psnr_mean: float
    ssim_mean: float
    per_segment: dict = field(default_factory=dict)  # {interp, ego, both} -> {psnr, ssim, frames}

    def to_dict(self) -> dict:
        return {
            "psnr_mean": self.psnr_mean,
            "ssim_mean": self.ssim_mean,
            "per_segment": self.per_segment,
        }


def segment_report(
    pred_interp: np.ndarray,
    pred_ego: np.ndarray,
    gt_interp: np.ndarray,
    gt_ego: np.ndarray,
    peak: float = 1.0,
) -> MetricReport:
    """Per-segment metric aggregation over stacked frames (N, C, H, W).

    The "both" entry is the frame-count-weighted aggregate of interp and ego.
    """
    stats = {}
    for name, pred, gt in (("interp", pred_interp, gt_interp), ("ego", pred_ego, gt_ego)):
        if pred.shape != gt.shape:
            raise ShapeError(f"{name}: prediction/ground-truth shape mismatch")
        p = [psnr(pf, gf, peak) for pf, gf in zip(pred, gt)]
        s = [ssim(pf, gf, peak) for pf, gf in zip(pred, gt)]
        stats[name] = {"psnr": float(np.mean(p)), "ssim": float(np.mean(s)), "frames": len(p)}
    n_i, n_e = stats["interp"]["frames"], stats["ego"]["frames"]
    stats["both"] = {
        "psnr": (stats["interp"]["psnr"] * n_i + stats["ego"]["psnr"] * n_e) / (n_i + n_e),
        "ssim": (stats["interp"]["ssim"] * n_i + stats["ego"]["ssim"] * n_e) / (n_i + n_e),
        "frames": n_i + n_e,
    }
    return MetricReport(psnr_mean=stats["both"]["psnr"], ssim_mean=stats["both"]["ssim"], per_segment=stats)
