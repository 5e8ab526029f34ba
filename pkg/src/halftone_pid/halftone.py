"""Synthetic CMYK halftone prints and their simulated photographs.

A :class:`VirtualPrinter` bundles one AM screen per ink plus the camera
conditions under which its output is photographed. Samples carry the exact
screened CMYK planes used to compose their RGB image.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

CHANNELS = ("C", "M", "Y", "K")
DEFAULT_ANGLES = {"C": 15.0, "M": 75.0, "Y": 0.0, "K": 45.0}
LATTICE_PHASE = np.array([0.37, 0.21]).reshape(2, 1, 1)


@dataclass(frozen=True)
class ScreenConfig:
    angle: float
    frequency: float  # dot-cell pitch in pixels
    dot_gain: float = 0.0

    def __post_init__(self):
        if not self.frequency >= 2:
            raise ValueError(f"screen pitch must be >= 2 pixels, got {self.frequency}")
        if not -0.2 <= self.dot_gain <= 0.2:
            raise ValueError(f"dot gain must lie in [-0.2, 0.2], got {self.dot_gain}")
        object.__setattr__(self, "angle", float(self.angle) % 180.0)


@dataclass(frozen=True)
class VirtualPrinter:
    id: int
    screens: tuple[ScreenConfig, ScreenConfig, ScreenConfig, ScreenConfig]
    blur_sigma: float = 0.0
    noise_sigma: float = 0.0
    illumination_slope: float = 0.0
    geometric_jitter: float = 0.0

    def __post_init__(self):
        if len(self.screens) != 4:
            raise ValueError("a printer needs exactly four screens (C, M, Y, K)")
        object.__setattr__(self, "screens", tuple(self.screens))

    def signature(self) -> tuple:
        return tuple((s.angle, s.frequency) for s in self.screens) + (self.geometric_jitter,)

    def with_camera(self, blur_sigma=None, noise_sigma=None, illumination_slope=None) -> "VirtualPrinter":
        changes = {}
        if blur_sigma is not None:
            changes["blur_sigma"] = blur_sigma
        if noise_sigma is not None:
            changes["noise_sigma"] = noise_sigma
        if illumination_slope is not None:
            changes["illumination_slope"] = illumination_slope
        return replace(self, **changes)


@dataclass
class SyntheticSample:
    rgb: np.ndarray  # (1, 3, H, W)
    cmyk: np.ndarray  # (1, 4, H, W)
    printer_id: int
    seed: tuple[int, int] = (0, 0)
    clean_rgb: np.ndarray | None = field(default=None, repr=False)


def check_identifiable(printers) -> None:
    seen = {}
    for p in printers:
        sig = p.signature()
        if sig in seen:
            raise ValueError(f"printers {seen[sig]} and {p.id} share a screen signature")
        seen[sig] = p.id


def make_printers(
    n: int,
    blur_sigma: float = 0.8,
    noise_sigma: float = 0.02,
    illumination_slope: float = 0.05,
    base_pitch: float = 3.0,
    pitch_step: float = 0.5,
    angle_step: float = 6.0,
) -> list[VirtualPrinter]:
    """A catalogue of ``n`` printers with distinct screen angles, pitches and jitter."""
    printers = []
    for p in range(n):
        pitch = base_pitch + pitch_step * p
        gain = 0.05 * ((p % 3) - 1)
        screens = tuple(
            ScreenConfig(DEFAULT_ANGLES[ch] + angle_step * p, pitch, gain) for ch in CHANNELS
        )
        printers.append(
            VirtualPrinter(
                p, screens, blur_sigma, noise_sigma, illumination_slope,
                geometric_jitter=0.1 + 0.15 * (p % 3),
            )
        )
    check_identifiable(printers)
    return printers


# -- screening --------------------------------------------------------------

def _disc_square_area(d: np.ndarray) -> np.ndarray:
    """Area of a radius-``d`` disc centred in the unit square, clipped to the square."""
    d = np.asarray(d, np.float64)
    area = np.pi * d * d
    edge = (d > 0.5) & (d < np.sqrt(0.5))
    de = d[edge]
    # subtract the four circular segments outside the square
    seg = de * de * np.arccos(0.5 / de) - 0.5 * np.sqrt(de * de - 0.25)
    area[edge] = np.pi * de * de - 4 * seg
    area[d >= np.sqrt(0.5)] = 1.0
    return area


def screen_plane(coverage: np.ndarray, screen: ScreenConfig, seed: int, jitter: float = 0.0) -> np.ndarray:
    """Clustered-dot screening of a 2-D coverage map; returns a binary float32 plane.

    Each pixel belongs to the lattice cell containing its centre and is inked
    when the disc area needed to reach it from the (jittered) dot centre is
    below the local coverage. That threshold is the exact area fraction of the
    cell, so a flat coverage ``c`` inks about ``c`` of the pixels.
    """
    cov = np.asarray(coverage, np.float64)
    h, w = cov.shape
    # off-centre lattice origin: keeps pixel centres from sitting symmetrically
    # about dot centres, which would tie their thresholds on integer pitches
    yy, xx = np.mgrid[0:h, 0:w] + LATTICE_PHASE
    a = np.deg2rad(screen.angle)
    u = (xx * np.cos(a) + yy * np.sin(a)) / screen.frequency
    v = (-xx * np.sin(a) + yy * np.cos(a)) / screen.frequency
    iu, iv = np.floor(u).astype(np.int64), np.floor(v).astype(np.int64)
    if jitter > 0:
        # translate each cell's patch of the lattice by its own random offset
        rng = np.random.default_rng(seed)
        u0, v0 = iu.min(), iv.min()
        shape = (iu.max() - u0 + 1, iv.max() - v0 + 1, 2)
        offsets = np.clip(rng.normal(0.0, jitter / screen.frequency, shape), -0.25, 0.25)
        u = u - offsets[iu - u0, iv - v0, 0]
        v = v - offsets[iu - u0, iv - v0, 1]
        iu, iv = np.floor(u), np.floor(v)
    fu, fv = u - iu - 0.5, v - iv - 0.5
    d = np.hypot(fu, fv) / (1.0 + screen.dot_gain)
    plane = _disc_square_area(d) < cov
    plane |= cov >= 1.0
    return plane.astype(np.float32)


def halftone_channel(coverage: np.ndarray, screen: ScreenConfig, seed: int, jitter: float = 0.0) -> np.ndarray:
    """Screen a (1, 1, H, W) coverage tensor into a (1, 1, H, W) ink plane."""
    coverage = np.asarray(coverage)
    if coverage.ndim != 4 or coverage.shape[:2] != (1, 1):
        raise ValueError(f"expected a (1, 1, H, W) coverage tensor, got {coverage.shape}")
    return screen_plane(coverage[0, 0], screen, seed, jitter)[None, None]


# -- colour ----------------------------------------------------------------------

def cmyk_to_rgb(cmyk: np.ndarray) -> np.ndarray:
    """Subtractive mixing: R=(1-C)(1-K), G=(1-M)(1-K), B=(1-Y)(1-K)."""
    cmyk = np.asarray(cmyk)
    k = 1 - cmyk[:, 3:4]
    rgb = (1 - cmyk[:, :3]) * k
    return np.clip(rgb, 0, 1).astype(np.float32)


def naive_profile_decompose(rgb: np.ndarray) -> np.ndarray:
    """Textbook RGB -> CMYK separation used as the colour-profile baseline."""
    rgb = np.asarray(rgb, np.float64)
    cmy = 1 - rgb
    k = cmy.min(axis=1, keepdims=True)
    denom = 1 - k
    safe = np.where(denom > 0, denom, 1.0)
    out = np.where(denom > 0, (cmy - k) / safe, 0.0)
    return np.concatenate([out, k], axis=1).astype(np.float32)


# -- camera ------------------------------------------------------------------------

def camera_degrade(rgb: np.ndarray, printer: VirtualPrinter, seed: int) -> np.ndarray:
    """Blur, then an additive left-to-right illumination ramp, then sensor noise."""
    out = np.asarray(rgb, np.float64)
    if printer.blur_sigma > 0:
        out = ndimage.gaussian_filter(out, sigma=(0, 0, printer.blur_sigma, printer.blur_sigma), mode="reflect")
    if printer.illumination_slope != 0:
        w = out.shape[-1]
        ramp = ((np.arange(w) + 0.5) / w - 0.5) * printer.illumination_slope
        out = out + ramp
    if printer.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, printer.noise_sigma, out.shape)
    return np.clip(out, 0, 1).astype(np.float32)


# -- content -------------------------------------------------------------------------

def coverage_fields(height: int, width: int, seed: int, cell: float = 16.0) -> np.ndarray:
    """Smooth random CMYK coverage maps (1, 4, H, W) from bicubic value noise."""
    rng = np.random.default_rng(seed)
    gh, gw = int(np.ceil(height / cell)) + 4, int(np.ceil(width / cell)) + 4
    yy, xx = np.mgrid[0:height, 0:width]
    coords = np.stack([yy / cell + 1.5, xx / cell + 1.5])
    fields = []
    for ch in CHANNELS:
        hi = 0.5 if ch == "K" else 1.0
        grid = rng.uniform(0.0, hi, (gh, gw))
        fields.append(ndimage.map_coordinates(grid, coords, order=3, mode="nearest"))
    return np.clip(np.stack(fields)[None], 0, 1).astype(np.float32)


def render(printer: VirtualPrinter, height: int, width: int, content_seed: int, noise_seed: int) -> SyntheticSample:
    coverage = coverage_fields(height, width, content_seed)
    planes = [
        screen_plane(coverage[0, c], printer.screens[c], noise_seed * 4 + c, printer.geometric_jitter)
        for c in range(4)
    ]
    cmyk = np.stack(planes)[None]
    clean = cmyk_to_rgb(cmyk)
    rgb = camera_degrade(clean, printer, noise_seed)
    return SyntheticSample(rgb, cmyk, printer.id, (content_seed, noise_seed), clean)


def generate_sample(printer: VirtualPrinter, content_seed: int, noise_seed: int, size: int = 64) -> SyntheticSample:
    return render(printer, size, size, content_seed, noise_seed)
