"""Shared domain types and coordinate conventions.

Coordinate conventions used throughout the package:

* Pixel origin is the top-left corner of the frame, x grows right, y grows
  down.  A pixel at array index ``[row, col]`` covers the unit square
  ``[col, col+1) x [row, row+1)`` and its center sits at the continuous
  position ``(col + 0.5, row + 0.5)``.
* Normalized coordinates are plain division by the frame dimensions, so the
  full frame maps onto ``[0, 1]^2`` with (0, 0) at the top-left corner.
* Angular conversion uses the linear pixels-per-degree approximation derived
  from the camera's diagonal field of view (not a pinhole arctangent model).
* All timestamps are 64-bit floating point seconds in a monotonic domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EYE_STREAM = "eye"
SCENE_STREAM = "scene"


@dataclass(frozen=True)
class GrayFrame:
    """Single grayscale camera frame with timestamp provenance."""

    pixels: np.ndarray  # uint8, shape (height, width), row-major
    timestamp: float
    stream_id: str = EYE_STREAM

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] <= 0 or px.shape[1] <= 0:
            raise ValueError("frame pixels must be a non-empty 2-D array")
        if px.dtype != np.uint8:
            raise ValueError("frame pixels must be uint8")
        if self.stream_id not in (EYE_STREAM, SCENE_STREAM):
            raise ValueError(f"unknown stream_id {self.stream_id!r}")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class Ellipse:
    """Pupil contour model in pixel space: center, semi-axes, orientation.

    ``theta`` is the angle of the semi-major axis in radians, normalized to
    [0, pi).  Invariant: a >= b > 0.
    """

    center: tuple[float, float]
    a: float
    b: float
    theta: float

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise ValueError(f"ellipse axes must satisfy a >= b > 0, got a={self.a}, b={self.b}")
        th = self.theta % math.pi
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def points(self, n: int = 128) -> np.ndarray:
        """Sample n points along the contour, uniformly in parametric angle."""
        t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        ct, st = math.cos(self.theta), math.sin(self.theta)
        x = self.a * np.cos(t)
        y = self.b * np.sin(t)
        return np.column_stack(
            (self.center[0] + x * ct - y * st, self.center[1] + x * st + y * ct)
        )


@dataclass(frozen=True)
class PupilDatum:
    """Detection result for one eye frame."""

    ellipse: Ellipse
    norm_pos: tuple[float, float]
    confidence: float
    timestamp: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class GazeDatum:
    """Pupil position mapped into normalized scene coordinates."""

    norm_pos: tuple[float, float]
    base: PupilDatum
    timestamp: float

    def __post_init__(self):
        if self.timestamp != self.base.timestamp:
            raise ValueError("gaze timestamp must equal the base pupil timestamp")

    @property
    def confidence(self) -> float:
        return self.base.confidence


@dataclass(frozen=True)
class CameraIntrinsics:
    """Camera geometry needed for the pixel <-> visual angle conversion."""

    width: int
    height: int
    fov_diagonal: float  # degrees

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("camera dimensions must be positive")
        if self.fov_diagonal <= 0:
            raise ValueError("diagonal field of view must be positive")

    @property
    def px_per_degree(self) -> float:
        return px_per_degree(self)


@dataclass(frozen=True)
class DetectorParams:
    """Tuning knobs for the dark-pupil detector.

    Ranges are (min, max) in pixels at the native eye frame resolution.
    ``histogram_offset`` is the user-set offset above the lowest intensity
    spike that defines "dark"; ``reflection_saturation`` is the intensity at
    or above which a pixel counts as a specular reflection.
    """

    coarse_radius_range: tuple[float, float] = (20.0, 120.0)
    canny_auto_sigma: float = 1.0
    histogram_offset: int = 11
    reflection_saturation: int = 250
    curvature_split_angle: float = 60.0  # degrees
    pupil_radius_range: tuple[float, float] = (20.0, 120.0)
    confidence_threshold: float = 0.6
    max_support_combinations: int = 1000
    roi: tuple[int, int, int, int] | None = None  # optional (x0, y0, w, h) crop

    def __post_init__(self):
        for name in ("coarse_radius_range", "pupil_radius_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must have min < max, got ({lo}, {hi})")
        if not (0.0 < self.confidence_threshold < 1.0):
            raise ValueError("confidence_threshold must be in (0, 1)")
        if self.histogram_offset < 0:
            raise ValueError("histogram_offset must be >= 0")
        if self.max_support_combinations < 1:
            raise ValueError("max_support_combinations must be >= 1")


def norm_from_pixel(p, width: int, height: int) -> tuple[float, float]:
    """Normalize a pixel position by the frame dimensions.

    Values outside [0, 1] are permitted (off-frame extrapolation) and left to
    the caller to flag.
    """
    if width <= 0 or height <= 0:
        raise ValueError("frame dimensions must be positive")
    return (p[0] / width, p[1] / height)


def pixel_from_norm(p, width: int, height: int) -> tuple[float, float]:
    """Inverse of norm_from_pixel."""
    if width <= 0 or height <= 0:
        raise ValueError("frame dimensions must be positive")
    return (p[0] * width, p[1] * height)


def px_per_degree(intr: CameraIntrinsics) -> float:
    """Pixels per degree of visual angle from the diagonal field of view."""
    if intr.fov_diagonal <= 0:
        raise ValueError("diagonal field of view must be positive")
    return math.hypot(intr.width, intr.height) / intr.fov_diagonal


def angular_distance(p, q, intr: CameraIntrinsics) -> float:
    """Angular distance in degrees between two scene points given in pixels."""
    return math.hypot(p[0] - q[0], p[1] - q[1]) / px_per_degree(intr)
