"""Matte quality metrics: SAD / MSE / MAD, gradient error, connectivity error.

All functions return raw (unscaled) values; presentation scaling such as
SAD/1000 belongs to the reporting layer.  Metrics accept a boolean region
mask restricting the evaluation to e.g. a trimap's unknown band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import MetricError

GRAD_SIGMA = 1.4
CONN_STEP = 0.1
CONN_THETA = 0.15


@dataclass
class MetricReport:
    sad: float
    mse: float
    mad: float
    grad: float
    conn: float
    region: str  # "unknown" or "whole"

    def as_dict(self) -> dict[str, float]:
        return {"sad": self.sad, "mse": self.mse, "mad": self.mad,
                "grad": self.grad, "conn": self.conn}


def _check_pair(pred: np.ndarray, gt: np.ndarray, region_mask: np.ndarray) -> None:
    if pred.shape != gt.shape or pred.shape != region_mask.shape:
        raise MetricError(
            f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {region_mask.shape}"
        )
    if not region_mask.any():
        raise MetricError("empty evaluation region")


def pixel_metrics(pred: np.ndarray, gt: np.ndarray,
                  region_mask: np.ndarray) -> tuple[float, float, float]:
    """(SAD, MSE, MAD) over the region: sum |d|, mean d^2, mean |d|."""
    _check_pair(pred, gt, region_mask)
    diff = (pred.astype(np.float64) - gt.astype(np.float64))[region_mask]
    return float(np.abs(diff).sum()), float((diff ** 2).mean()), float(np.abs(diff).mean())


def _gaussian_derivative_kernels(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    dg = -x / sigma ** 2 * g
    # separable 2D filters: smooth along one axis, differentiate along the other
    kx = np.outer(g, dg)
    ky = np.outer(dg, g)
    return kx, ky


def gradient_magnitude(a: np.ndarray, sigma: float = GRAD_SIGMA) -> np.ndarray:
    kx, ky = _gaussian_derivative_kernels(sigma)
    gx = ndimage.convolve(a.astype(np.float64), kx, mode="reflect")
    gy = ndimage.convolve(a.astype(np.float64), ky, mode="reflect")
    return np.sqrt(gx ** 2 + gy ** 2)


def grad_metric(pred: np.ndarray, gt: np.ndarray, region_mask: np.ndarray,
                sigma: float = GRAD_SIGMA) -> float:
    """Sum over the region of squared gradient-magnitude differences."""
    if sigma <= 0:
        raise MetricError(f"sigma must be > 0, got {sigma}")
    _check_pair(pred, gt, region_mask)
    diff = gradient_magnitude(pred, sigma) - gradient_magnitude(gt, sigma)
    return float((diff[region_mask] ** 2).sum())


def _largest_component(mask: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(mask)
    if n == 0:
        return np.zeros_like(mask)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == sizes.argmax()


def connectivity_map(pred: np.ndarray, gt: np.ndarray, step: float) -> np.ndarray:
    """Per-pixel highest threshold at which the pixel is still part of the
    largest region connected in both maps."""
    lmap = np.full(pred.shape, -1.0)
    n_steps = int(round(1.0 / step))
    for i in range(1, n_steps + 1):
        t = i * step
        joint = (pred >= t) & (gt >= t)
        omega = _largest_component(joint) if joint.any() else np.zeros_like(joint)
        dropped = (lmap == -1.0) & ~omega
        lmap[dropped] = t - step
    lmap[lmap == -1.0] = 1.0
    return lmap


def conn_metric(pred: np.ndarray, gt: np.ndarray, region_mask: np.ndarray,
                step: float = CONN_STEP, theta: float = CONN_THETA) -> float:
    """Connectivity degradation: sum |phi(pred) - phi(gt)| over the region,
    where phi discounts pixels by how far they sit above their connectivity
    level (only when the gap exceeds theta)."""
    if not (0 < step < 1):
        raise MetricError(f"step must be in (0, 1), got {step}")
    _check_pair(pred, gt, region_mask)
    pred = pred.astype(np.float64)
    gt = gt.astype(np.float64)
    lmap = connectivity_map(pred, gt, step)
    d_pred = pred - lmap
    d_gt = gt - lmap
    phi_pred = 1.0 - d_pred * (d_pred >= theta)
    phi_gt = 1.0 - d_gt * (d_gt >= theta)
    return float(np.abs(phi_pred - phi_gt)[region_mask].sum())


def evaluate_pair(pred: np.ndarray, gt: np.ndarray,
                  trimap: np.ndarray | None = None,
                  region: str = "whole") -> MetricReport:
    """All five metrics for one matte pair, optionally unknown-band only."""
    if region == "unknown":
        if trimap is None:
            raise MetricError("region='unknown' requires a trimap")
        mask = trimap == 1
    elif region == "whole":
        mask = np.ones(pred.shape, dtype=bool)
    else:
        raise MetricError(f"region must be 'unknown' or 'whole', got {region!r}")
    sad, mse, mad = pixel_metrics(pred, gt, mask)
    return MetricReport(
        sad=sad,
        mse=mse,
        mad=mad,
        grad=grad_metric(pred, gt, mask),
        conn=conn_metric(pred, gt, mask),
        region=region,
    )


def mean_report(reports: list[MetricReport]) -> MetricReport:
    if not reports:
        raise MetricError("no reports to average")
    return MetricReport(
        sad=float(np.mean([r.sad for r in reports])),
        mse=float(np.mean([r.mse for r in reports])),
        mad=float(np.mean([r.mad for r in reports])),
        grad=float(np.mean([r.grad for r in reports])),
        conn=float(np.mean([r.conn for r in reports])),
        region=reports[0].region,
    )
