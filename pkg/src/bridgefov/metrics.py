"""Image-quality metrics in HU: RMSE, PSNR, SSIM, with optional region masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DATA_RANGE_HU = 3000.0   # the [-1000, 2000] HU model window


@dataclass(frozen=True)
class MetricReport:
    method: str
    region: str              # full | inside_fov | outside_fov
    rmse_hu: float
    psnr_db: float
    ssim: float
    n_pixels: int
    seed: int = 0

    CSV_HEADER = "method,region,rmse_hu,psnr_db,ssim,n_pixels,seed"

    def csv_row(self) -> str:
        psnr = "inf" if np.isinf(self.psnr_db) else f"{self.psnr_db:.6g}"
        return (f"{self.method},{self.region},{self.rmse_hu:.6g},{psnr},"
                f"{self.ssim:.6g},{self.n_pixels},{self.seed}")


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError("images must share a grid")


def rmse(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Root-mean-square difference over the masked pixels (HU)."""
    _check_pair(a, b)
    d = a - b
    if mask is not None:
        if mask.shape != a.shape:
            raise ValueError("mask must share the image grid")
        if not mask.any():
            raise ValueError("mask selects no pixels")
        d = d[mask]
    return float(np.sqrt(np.mean(d.astype(float) ** 2)))


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = DATA_RANGE_HU,
         mask: np.ndarray | None = None) -> float:
    """20 log10(range / rmse); identical images yield +inf."""
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    e = rmse(a, b, mask)
    if e == 0.0:
        return float("inf")
    return float(20.0 * np.log10(data_range / e))


def _box_sums(x: np.ndarray, w: int) -> np.ndarray:
    """Sums over all w-by-w windows fully inside the image (valid region)."""
    c = np.cumsum(np.cumsum(x, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    return c[w:, w:] - c[:-w, w:] - c[w:, :-w] + c[:-w, :-w]


def ssim(a: np.ndarray, b: np.ndarray, window: int = 7, k1: float = 0.01,
         k2: float = 0.03, data_range: float = DATA_RANGE_HU) -> float:
    """Mean local SSIM with a uniform window, aggregated over the valid region.

    Local statistics use population (1/N) normalization. C1 = (k1*range)^2,
    C2 = (k2*range)^2.
    """
    _check_pair(a, b)
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 3")
    if window > min(a.shape):
        raise ValueError("window larger than the image")
    a = a.astype(float)
    b = b.astype(float)
    n = window * window
    mu_a = _box_sums(a, window) / n
    mu_b = _box_sums(b, window) / n
    var_a = _box_sums(a * a, window) / n - mu_a**2
    var_b = _box_sums(b * b, window) / n - mu_b**2
    cov = _box_sums(a * b, window) / n - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(np.mean(s))


def report(method: str, recon: np.ndarray, truth: np.ndarray, region: str,
           mask: np.ndarray | None = None, seed: int = 0) -> MetricReport:
    """Bundle the three metrics for one reconstruction/region.

    SSIM is windowed and therefore always computed on the full grid; the
    mask only restricts RMSE/PSNR.
    """
    return MetricReport(
        method=method,
        region=region,
        rmse_hu=rmse(recon, truth, mask),
        psnr_db=psnr(recon, truth, mask=mask),
        ssim=ssim(recon, truth),
        n_pixels=int(mask.sum()) if mask is not None else recon.size,
        seed=seed,
    )
