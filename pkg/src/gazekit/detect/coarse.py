"""Coarse pupil localization with a center-surround box feature.

The pupil region is seeded at the position maximizing the difference between
the mean intensity of a surrounding ring and the mean intensity of an inner
square, evaluated over an integral image at several radius scales.  The
search runs on a block-averaged copy of the frame; the kernel outer box is
3x the radius, so the smallest usable frame is 3x the minimum coarse radius.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DetectorParams, GrayFrame

# search resolution: block-average so the short frame side is ~this many cells
_TARGET_CELLS = 120
_RADIUS_STEPS = 5
# region half-side as a multiple of the estimated pupil radius; the margin
# keeps the pupil boundary inside the crop without flooding it with sclera
_REGION_SCALE = 1.6


@dataclass(frozen=True)
class CoarseRegion:
    """Axis-aligned square crop believed to contain the pupil."""

    x0: int
    y0: int
    size: int
    center: tuple[float, float]
    radius: float
    response: float

    def crop(self, pixels: np.ndarray) -> np.ndarray:
        return pixels[self.y0 : self.y0 + self.size, self.x0 : self.x0 + self.size]


def integral_image(img: np.ndarray) -> np.ndarray:
    """Summed-area table with a zero top row/left column."""
    ii = np.zeros((img.shape[0] + 1, img.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(img, axis=0, dtype=np.float64), axis=1, out=ii[1:, 1:])
    return ii


def box_sums(ii: np.ndarray, half: int) -> np.ndarray:
    """Sum over the (2*half+1)^2 box centered at every valid pixel."""
    size = 2 * half + 1
    h = ii.shape[0] - size
    w = ii.shape[1] - size
    return (
        ii[size : size + h, size : size + w]
        - ii[size : size + h, 0:w]
        - ii[0:h, size : size + w]
        + ii[0:h, 0:w]
    )


def center_surround_response(img: np.ndarray, radius: int) -> np.ndarray:
    """Mean(surround ring) - mean(inner box) at every valid center.

    The inner box spans +-radius, the outer box +-floor(1.5*radius).  The
    returned map covers centers at least floor(1.5*radius) from the border.
    """
    half_in = int(radius)
    half_out = int(1.5 * radius)
    ii = integral_image(img)
    outer = box_sums(ii, half_out)
    inner = box_sums(ii, half_in)
    pad = half_out - half_in
    inner = inner[pad : pad + outer.shape[0], pad : pad + outer.shape[1]]
    area_in = (2 * half_in + 1) ** 2
    area_out = (2 * half_out + 1) ** 2
    ring = (outer - inner) / float(area_out - area_in)
    return ring - inner / float(area_in)


def coarse_pupil_region(frame, params: DetectorParams) -> CoarseRegion:
    """Locate the square most likely to contain the dark pupil."""
    pixels = frame.pixels if isinstance(frame, GrayFrame) else np.asarray(frame)
    h, w = pixels.shape
    r_min, r_max = params.coarse_radius_range
    if min(h, w) < 3 * r_min:
        raise ValueError("frame too small")

    block = max(1, min(h, w) // _TARGET_CELLS)
    if block > 1:
        hc, wc = (h // block) * block, (w // block) * block
        img = pixels[:hc, :wc].astype(np.float64)
        img = img.reshape(hc // block, block, wc // block, block).mean(axis=(1, 3))
    else:
        img = pixels.astype(np.float64)

    radii = np.unique(
        np.clip(
            np.round(np.geomspace(r_min / block, r_max / block, _RADIUS_STEPS)).astype(int),
            2,
            max(2, int(min(img.shape) // 3)),
        )
    )
    # edge-pad so kernels can center on pupils near the frame border
    pad = int(1.5 * radii.max()) + 1
    ii = integral_image(np.pad(img, pad, mode="edge"))
    hc, wc = img.shape
    best = None
    for r in radii:
        half_in = int(r)
        half_out = int(1.5 * r)
        outer = box_sums(ii, half_out)
        inner = box_sums(ii, half_in)
        o0, i0 = pad - half_out, pad - half_in
        outer = outer[o0 : o0 + hc, o0 : o0 + wc]
        inner = inner[i0 : i0 + hc, i0 : i0 + wc]
        area_in = (2 * half_in + 1) ** 2
        area_out = (2 * half_out + 1) ** 2
        resp = (outer - inner) / float(area_out - area_in) - inner / float(area_in)
        idx = int(np.argmax(resp))
        ry, rx = divmod(idx, resp.shape[1])
        value = float(resp[ry, rx])
        if best is None or value > best[0]:
            best = (value, ry, rx, int(r))
    if best is None:
        raise ValueError("frame too small")

    value, cy_c, cx_c, r_c = best
    cx = (cx_c + 0.5) * block
    cy = (cy_c + 0.5) * block
    radius = _dark_mass_radius(pixels, (cx, cy), params)

    half = int(round(_REGION_SCALE * radius))
    size = min(2 * half, w, h)
    x0 = int(np.clip(round(cx) - size // 2, 0, w - size))
    y0 = int(np.clip(round(cy) - size // 2, 0, h - size))
    return CoarseRegion(x0=x0, y0=y0, size=size, center=(cx, cy), radius=radius, response=value)


def _dark_mass_radius(pixels: np.ndarray, center, params: DetectorParams) -> float:
    """Pupil radius estimate from the dark-pixel area around the seed center.

    The center-surround response alone picks a scale anywhere between the
    pupil and the surrounding dark structure, so the crop size comes from
    counting pixels at or below the dark threshold in a probe window.  The
    window grows with the estimate: an oversized first probe would bury the
    pupil's histogram spike under iris and sclera pixels.
    """
    from .edges import dark_threshold

    h, w = pixels.shape
    r_min, r_max = params.pupil_radius_range
    radius = float(r_min)
    for _ in range(4):
        probe = int(round(1.8 * radius))
        x0 = int(np.clip(center[0] - probe, 0, w - 1))
        x1 = int(np.clip(center[0] + probe, 1, w))
        y0 = int(np.clip(center[1] - probe, 0, h - 1))
        y1 = int(np.clip(center[1] + probe, 1, h))
        window = pixels[y0:y1, x0:x1]
        dark = dark_threshold(window, params.histogram_offset)
        updated = float(np.clip(np.sqrt((window <= dark).sum() / np.pi), r_min, r_max))
        if abs(updated - radius) < 2.0:
            return updated
        radius = updated
    return radius
