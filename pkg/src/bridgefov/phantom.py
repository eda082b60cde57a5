"""Random ellipse phantoms and rasterization to Hounsfield-unit images.

The anatomy stand-in is a large "body" ellipse that deliberately extends
beyond the scan field of view, a handful of interior ellipses (air pockets,
soft tissue, bone-like inserts) and an optional high-density bed slab below
the body.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AIR_HU = -1000.0


@dataclass(frozen=True)
class Ellipse:
    """Axis-aligned-then-rotated ellipse adding ``delta_hu`` inside its area."""

    center_x: float          # mm
    center_y: float          # mm
    semi_axis_a: float       # mm
    semi_axis_b: float       # mm
    rotation: float          # radians
    delta_hu: float

    def __post_init__(self):
        if self.semi_axis_a <= 0 or self.semi_axis_b <= 0:
            raise ValueError("ellipse semi-axes must be positive")

    def contains(self, x, y):
        """Membership test; accepts scalars or numpy arrays (mm)."""
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        dx = x - self.center_x
        dy = y - self.center_y
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return (u / self.semi_axis_a) ** 2 + (v / self.semi_axis_b) ** 2 <= 1.0

    def boundary_points(self, n=32):
        """n points on the ellipse boundary, in mm."""
        t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        u = self.semi_axis_a * np.cos(t)
        v = self.semi_axis_b * np.sin(t)
        return self.center_x + c * u - s * v, self.center_y + s * u + c * v


@dataclass(frozen=True)
class BedSlab:
    """Rectangular patient-bed stand-in below the body."""

    center_y: float          # mm
    half_width: float        # mm
    thickness: float         # mm
    delta_hu: float

    def contains(self, x, y):
        return (np.abs(x) <= self.half_width) & (np.abs(y - self.center_y) <= self.thickness / 2.0)


@dataclass(frozen=True)
class Phantom:
    ellipses: tuple[Ellipse, ...]
    bed: BedSlab | None = None


@dataclass(frozen=True)
class Image:
    """2D image with isotropic pixel spacing; values in HU unless noted."""

    values: np.ndarray       # (height, width), row-major
    spacing: float           # mm per pixel

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("image values must be 2D")
        if self.spacing <= 0:
            raise ValueError("pixel spacing must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("image values must be finite")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def pixel_coords(self):
        return grid_coords(self.width, self.height, self.spacing)


def grid_coords(width: int, height: int, spacing: float):
    """Physical (x, y) coordinates of pixel centers, each (H, W) in mm.

    The grid is centered on the isocenter; x grows with column index,
    y grows upward (i.e. decreases with row index).
    """
    x = (np.arange(width) - (width - 1) / 2.0) * spacing
    y = ((height - 1) / 2.0 - np.arange(height)) * spacing
    return (
        np.broadcast_to(x[None, :], (height, width)),
        np.broadcast_to(y[:, None], (height, width)),
    )


@dataclass(frozen=True)
class PhantomConfig:
    """Sampling ranges for random phantoms (all lengths in mm)."""

    fov_radius: float = 40.0
    body_axis_long: tuple[float, float] = (48.0, 60.0)
    body_axis_short: tuple[float, float] = (42.0, 56.0)
    body_center_jitter: float = 3.0
    body_hu: tuple[float, float] = (960.0, 1060.0)     # delta over air; ~water-like tissue
    n_interior: tuple[int, int] = (2, 8)
    interior_axis: tuple[float, float] = (3.0, 16.0)
    interior_hu: tuple[float, float] = (-1000.0, 1500.0)
    bed_enabled: bool = True
    bed_half_width: tuple[float, float] = (45.0, 58.0)
    bed_thickness: tuple[float, float] = (5.0, 9.0)
    bed_gap: tuple[float, float] = (2.0, 5.0)
    bed_hu: float = 1200.0

    def validate(self):
        if self.body_axis_long[1] - self.body_center_jitter <= self.fov_radius:
            raise ValueError("body axis range cannot guarantee extent beyond the FOV radius")
        for lo, hi in (self.body_axis_long, self.body_axis_short, self.interior_axis):
            if not (0 < lo <= hi):
                raise ValueError("axis ranges must be positive and ordered")
        if self.n_interior[0] < 0 or self.n_interior[0] > self.n_interior[1]:
            raise ValueError("interior ellipse count range must be ordered and non-negative")


def hu_to_mu(hu, mu_water: float = 0.02):
    """HU -> linear attenuation (mm^-1), water at mu_water, air at 0."""
    if mu_water <= 0:
        raise ValueError("mu_water must be positive")
    return mu_water * (1.0 + np.asarray(hu, dtype=float) / 1000.0)


def mu_to_hu(mu, mu_water: float = 0.02):
    """Inverse of :func:`hu_to_mu`."""
    if mu_water <= 0:
        raise ValueError("mu_water must be positive")
    return 1000.0 * (np.asarray(mu, dtype=float) / mu_water - 1.0)


def rasterize(phantom: Phantom, width: int, height: int, spacing: float) -> Image:
    """Rasterize by pixel-center inclusion: HU = air + sum of covering shapes.

    No anti-aliasing; a pixel belongs to a shape iff its center does.
    """
    if width < 8 or height < 8:
        raise ValueError("grid must be at least 8x8 pixels")
    if spacing <= 0:
        raise ValueError("pixel spacing must be positive")

    out = np.full((height, width), AIR_HU)
    x, y = grid_coords(width, height, spacing)
    for e in phantom.ellipses:
        out += np.where(e.contains(x, y), e.delta_hu, 0.0)
    if phantom.bed is not None:
        out += np.where(phantom.bed.contains(x, y), phantom.bed.delta_hu, 0.0)
    return Image(values=out, spacing=spacing)


def ellipse_inside(inner: Ellipse, body: Ellipse, n_boundary: int = 32) -> bool:
    """True if every sampled boundary point of ``inner`` lies inside ``body``."""
    bx, by = inner.boundary_points(n_boundary)
    return bool(np.all(body.contains(bx, by)))


def sample_phantom(seed: int, cfg: PhantomConfig) -> Phantom:
    """Draw a random phantom; reproducible for a fixed seed.

    The body's long semi-axis is drawn so that even with center jitter its
    extent from the isocenter exceeds ``cfg.fov_radius``. Interior ellipses
    are rejection-sampled until fully contained in the body.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)

    # Lower bound clipped to the FOV radius so every body pierces the FOV
    # even when the configured range dips below it.
    a_lo = max(cfg.body_axis_long[0], cfg.fov_radius + 0.5)
    a = rng.uniform(a_lo, max(cfg.body_axis_long[1], a_lo))
    b = rng.uniform(*cfg.body_axis_short)
    jitter = max(0.0, min(cfg.body_center_jitter, (a - cfg.fov_radius) / np.sqrt(2.0) * 0.98))
    cx = rng.uniform(-jitter, jitter)
    cy = rng.uniform(-jitter, jitter)
    body = Ellipse(cx, cy, a, b, rotation=0.0, delta_hu=rng.uniform(*cfg.body_hu))

    ellipses = [body]
    n_inner = int(rng.integers(cfg.n_interior[0], cfg.n_interior[1] + 1))
    for _ in range(n_inner):
        for _attempt in range(200):
            ax = rng.uniform(*cfg.interior_axis)
            bx = rng.uniform(*cfg.interior_axis)
            margin = max(ax, bx)
            ex = body.center_x + rng.uniform(-(a - margin), a - margin)
            ey = body.center_y + rng.uniform(-(b - margin), b - margin)
            rot = rng.uniform(0.0, np.pi)
            hu = rng.uniform(*cfg.interior_hu)
            cand = Ellipse(ex, ey, ax, bx, rot, hu)
            if ellipse_inside(cand, body):
                ellipses.append(cand)
                break

    bed = None
    if cfg.bed_enabled:
        gap = rng.uniform(*cfg.bed_gap)
        thickness = rng.uniform(*cfg.bed_thickness)
        bed = BedSlab(
            center_y=body.center_y - b - gap - thickness / 2.0,
            half_width=rng.uniform(*cfg.bed_half_width),
            thickness=thickness,
            delta_hu=cfg.bed_hu,
        )
    return Phantom(ellipses=tuple(ellipses), bed=bed)


def body_extent(phantom: Phantom) -> float:
    """Max distance of the body (first) ellipse boundary from the isocenter."""
    bx, by = phantom.ellipses[0].boundary_points(720)
    return float(np.max(np.hypot(bx, by)))
