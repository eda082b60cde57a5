"""Classical reconstruction: ramp-filtered backprojection and water-cylinder
sinogram completion for truncated acquisitions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .phantom import Image, grid_coords, mu_to_hu
from .projector import ScanGeometry, Sinogram, backproject


class UnsupportedInputError(ValueError):
    """Input is structurally valid but outside what the method supports."""


@dataclass(frozen=True)
class WceParams:
    mu_water: float = 0.02       # mm^-1
    slope_window: int = 3        # channels for the one-sided boundary derivative
    transition_blend: int = 3    # channels of cosine taper past the seam

    def __post_init__(self):
        if self.mu_water <= 0:
            raise ValueError("mu_water must be positive")
        if self.slope_window < 2:
            raise ValueError("slope_window must be at least 2 channels")
        if self.transition_blend < 0:
            raise ValueError("transition_blend must be non-negative")


def fov_mask(geom: ScanGeometry) -> np.ndarray:
    """Boolean (H, W) mask of pixel centers within the scan FOV disk."""
    x, y = grid_coords(geom.grid_width, geom.grid_height, geom.grid_spacing)
    return np.hypot(x, y) <= geom.fov_radius


def ramp_kernel(n_channels: int, channel_spacing: float) -> np.ndarray:
    """Band-limited spatial-domain ramp, indices -(n-1)..(n-1).

    h[0] = 1/(4 d^2); h[n] = -1/(pi n d)^2 for odd n; 0 for even n != 0.
    """
    n = np.arange(-(n_channels - 1), n_channels)
    h = np.zeros(n.shape)
    h[n == 0] = 1.0 / (4.0 * channel_spacing**2)
    odd = n % 2 != 0
    h[odd] = -1.0 / (np.pi * n[odd] * channel_spacing) ** 2
    return h


def ramp_filter(sino: Sinogram) -> Sinogram:
    """Convolve each projection row with the ramp kernel (zero-padded, linear)."""
    nc = sino.geometry.n_channels
    h = ramp_kernel(nc, sino.geometry.channel_spacing)
    out = np.empty_like(sino.values)
    lo = nc - 1
    for i in range(sino.values.shape[0]):
        out[i] = np.convolve(sino.values[i], h)[lo:lo + nc]
    return replace(sino, values=out)


def fbp(sino: Sinogram, geom: ScanGeometry, mu_water: float = 0.02) -> Image:
    """Filtered backprojection; returns the reconstruction in HU.

    The backprojector is the quadrature adjoint of the ray-driven forward
    model, whose per-ray weights integrate a bilinear pixel footprint
    (area grid_spacing^2) and land on a detector sampled every
    channel_spacing. The (channel_spacing/grid_spacing)^2 factor removes
    that discretization gain; it is 1 when the two spacings coincide.
    """
    if sino.values.shape != (geom.n_angles, geom.n_channels):
        raise ValueError("sinogram shape does not match geometry")
    scale = (np.pi / geom.n_angles) * (geom.channel_spacing / geom.grid_spacing) ** 2
    mu = backproject(ramp_filter(sino), geom)
    return Image(values=mu_to_hu(scale * mu.values, mu_water), spacing=mu.spacing)


def _fit_cylinder(p_edge: float, slope: float, mu_water: float):
    """Radius and center offset of a water cylinder matching value and slope.

    For a cylinder of radius R centered at offset c from the edge position,
    p(s) = 2 mu sqrt(R^2 - (s-c)^2), so the edge distance d = s_edge - c
    satisfies d = -p * p' / (4 mu^2) and R^2 = d^2 + (p / 2 mu)^2.
    ``slope`` is the outward derivative (positive = growing away from the
    measured region); growth is clamped to a tangent cylinder (d = 0).
    """
    if p_edge <= 0.0:
        return 0.0, 0.0
    d = max(0.0, -p_edge * slope / (4.0 * mu_water**2))
    r = float(np.sqrt(d * d + (p_edge / (2.0 * mu_water)) ** 2))
    return r, d


def _edge_slope(row, edge, direction, window, ds):
    """Outward derivative at the boundary channel from a one-sided stencil.

    window >= 3 uses the second-order three-point formula (stride spans the
    window) to avoid the curvature bias of a plain difference, which matters
    because cylinder projections bend sharply near their rim.
    """
    if window < 2:
        return 0.0
    if window >= 3:
        stride = (window - 1) // 2
        p0 = row[edge]
        p1 = row[edge - direction * stride]
        p2 = row[edge - direction * 2 * stride]
        return (3.0 * p0 - 4.0 * p1 + p2) / (2.0 * stride * ds)
    return (row[edge] - row[edge - direction]) / ds


def _extrapolate_edge(row, s, edge, direction, params: WceParams, max_window: int):
    """Fill channels outward from ``edge`` along ``direction`` (+1 right, -1 left)."""
    ds = abs(s[1] - s[0])
    w = min(params.slope_window, max_window)
    p_edge = row[edge]
    slope_out = _edge_slope(row, edge, direction, w, ds)
    radius, d = _fit_cylinder(p_edge, slope_out, params.mu_water)

    fill = np.arange(edge + direction, -1 if direction < 0 else len(s), direction)
    if fill.size == 0:
        return
    # distance past the cylinder edge position, in the outward sense
    dist = np.abs(s[fill] - s[edge]) + d
    under = radius * radius - dist * dist
    model = np.where(under > 0.0, 2.0 * params.mu_water * np.sqrt(np.maximum(under, 0.0)), 0.0)

    b = min(params.transition_blend, fill.size)
    if b > 0:
        # cosine taper between the first-order continuation at the seam and
        # the cylinder model; the effective slope matches the (possibly
        # clamped) model so the blend only smooths second-order detail
        eff_slope = 0.0 if p_edge <= 0 or radius == 0.0 else -4.0 * params.mu_water**2 * d / p_edge
        t = np.arange(1, b + 1)
        wgt = 0.5 * (1.0 + np.cos(np.pi * t / (b + 1)))
        linear = p_edge + eff_slope * t * ds
        model[:b] = wgt * np.maximum(linear, 0.0) + (1.0 - wgt) * model[:b]
    row[fill] = model


def wce_extrapolate(sino: Sinogram, params: WceParams) -> Sinogram:
    """Complete truncated channels with a fitted water-cylinder projection.

    Each row keeps its measured interval untouched; beyond each truncation
    edge a cylinder is fitted to the boundary value and slope and its
    analytic projection fills the missing channels. The output is marked
    fully measured so downstream consumers treat it as complete data.
    """
    measured = sino.measured
    if measured.all():
        return sino
    idx = np.flatnonzero(measured)
    if idx.size == 0:
        raise UnsupportedInputError("no measured channels to extrapolate from")
    if not np.all(np.diff(idx) == 1):
        raise UnsupportedInputError("measured region must be a contiguous channel interval")

    s = sino.geometry.channel_positions
    left, right = idx[0], idx[-1]
    out = sino.values.copy()
    for i in range(out.shape[0]):
        row = out[i]
        if right < len(s) - 1:
            _extrapolate_edge(row, s, right, +1, params, idx.size)
        if left > 0:
            _extrapolate_edge(row, s, left, -1, params, idx.size)
    return Sinogram(values=out, geometry=sino.geometry,
                    measured=np.ones(sino.geometry.n_channels, dtype=bool))


def reconstruct_wce(sino: Sinogram, geom: ScanGeometry, params: WceParams) -> Image:
    """FBP of the water-cylinder-completed sinogram: the bridge input image."""
    return fbp(wce_extrapolate(sino, params), geom, mu_water=params.mu_water)
