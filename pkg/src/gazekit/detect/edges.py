"""Edge detection and intensity-based edge filtering.

Canny thresholds are auto-derived as (0.66, 1.33) x the median intensity of
the region.  "Dark" is the intensity of the lowest spike in the region's
histogram plus a user offset; edges survive only where their 5x5
neighborhood touches dark pixels and contains no saturated (reflection)
pixels.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

CANNY_LOW_FACTOR = 0.66
CANNY_HIGH_FACTOR = 1.33
HIST_BIN_WIDTH = 4
SPIKE_MIN_FRACTION = 0.01
NEIGHBORHOOD = 5

_EIGHT = np.ones((3, 3), dtype=bool)


def canny_edges(region: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Canny edge mask: Gaussian smooth, Sobel, non-max suppression, hysteresis."""
    region = np.asarray(region)
    if region.size == 0:
        raise ValueError("empty region")
    img = region.astype(np.float64)
    smoothed = ndimage.gaussian_filter(img, sigma, mode="nearest")
    gx = ndimage.sobel(smoothed, axis=1, mode="nearest")
    gy = ndimage.sobel(smoothed, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)

    median = float(np.median(region))
    low = CANNY_LOW_FACTOR * median
    high = CANNY_HIGH_FACTOR * median

    keep = _non_max_suppress(mag, gx, gy)
    strong = keep & (mag >= high) & (mag > 0)
    weak = keep & (mag >= low) & (mag > 0)
    if not strong.any():
        return np.zeros_like(strong)

    labels, _ = ndimage.label(weak, structure=_EIGHT)
    strong_ids = np.unique(labels[strong])
    return weak & np.isin(labels, strong_ids[strong_ids > 0])


def _non_max_suppress(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that are maximal along the gradient direction.

    Directions quantize to 4 sectors; ties along the positive direction are
    kept and along the negative direction dropped, so an ideal symmetric
    step yields a single-pixel-wide edge.
    """
    angle = np.mod(np.arctan2(gy, gx), np.pi)
    sector = np.round(angle / (np.pi / 4.0)).astype(int) % 4
    offsets = {0: (1, 0), 1: (1, 1), 2: (0, 1), 3: (-1, 1)}

    padded = np.pad(mag, 1, mode="constant")
    keep = np.zeros(mag.shape, dtype=bool)
    for s, (dx, dy) in offsets.items():
        plus = padded[1 + dy : 1 + dy + mag.shape[0], 1 + dx : 1 + dx + mag.shape[1]]
        minus = padded[1 - dy : 1 - dy + mag.shape[0], 1 - dx : 1 - dx + mag.shape[1]]
        sel = sector == s
        keep |= sel & (mag >= plus) & (mag > minus)
    return keep


def dark_threshold(region: np.ndarray, offset: int) -> int:
    """Intensity of the lowest histogram spike plus the user offset.

    A spike is a local-maximum histogram bin (bin width 4) holding at least
    1% of the region's pixels; the reported intensity is the most common
    intensity inside that bin.
    """
    region = np.asarray(region)
    if region.size == 0:
        raise ValueError("empty region")
    if offset < 0:
        raise ValueError("offset must be >= 0")
    hist = np.bincount(region.ravel(), minlength=256)
    bins = hist.reshape(256 // HIST_BIN_WIDTH, HIST_BIN_WIDTH).sum(axis=1)
    padded = np.concatenate(([-1], bins, [-1]))
    local_max = (bins >= padded[:-2]) & (bins >= padded[2:])
    spikes = np.where(local_max & (bins >= SPIKE_MIN_FRACTION * region.size))[0]
    if spikes.size == 0:
        spikes = np.array([int(np.argmax(bins))])
    lowest = int(spikes[0])
    start = lowest * HIST_BIN_WIDTH
    mode = start + int(np.argmax(hist[start : start + HIST_BIN_WIDTH]))
    return mode + int(offset)


def filter_edges(
    edges: np.ndarray, region: np.ndarray, dark: int, saturation: int = 250
) -> np.ndarray:
    """Keep edges near dark pixels and away from specular reflections."""
    edges = np.asarray(edges, dtype=bool)
    region = np.asarray(region)
    if edges.shape != region.shape:
        raise ValueError("edge map and region dimensions disagree")
    size = (NEIGHBORHOOD, NEIGHBORHOOD)
    near_dark = ndimage.maximum_filter((region <= dark).view(np.uint8), size=size) > 0
    near_sat = ndimage.maximum_filter((region >= saturation).view(np.uint8), size=size) > 0
    return edges & near_dark & ~near_sat
