"""Planar reference surfaces: fiducial markers and homographic gaze remap.

Markers are 7x7-cell square fiducials (64 ids) detected through the shared
edge/contour stages; their quads are refined to subpixel corners by
intensity-profile edge crossings.  Homographies use the normalized DLT over
all available correspondences.

Convention: a surface homography maps scene *pixel* coordinates to surface
coordinates scaled by the scene frame size, so surface-normalized output is
obtained by dividing by the frame dimensions again.  ``surface_homography``
builds matrices with that convention; ``map_gaze_to_surface`` applies it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import GazeDatum, GrayFrame
from .synth import MARKER_CELLS, decode_payload

MIN_QUAD_SIDE = 8.0  # px
CELL_CONTRAST_MIN = 40.0


@dataclass(frozen=True)
class Marker:
    """One detected fiducial: id in 0..63 plus ordered corners.

    Corners run clockwise (in image coordinates, y down) starting at the
    physical top-left corner of the marker payload.
    """

    id: int
    corners: np.ndarray  # (4, 2) float

    def __post_init__(self):
        if not (0 <= self.id < 64):
            raise ValueError("marker id must be in 0..63")
        c = np.asarray(self.corners, dtype=np.float64)
        if c.shape != (4, 2):
            raise ValueError("marker needs exactly 4 corners")
        object.__setattr__(self, "corners", c)

    @property
    def center(self) -> tuple[float, float]:
        return (float(self.corners[:, 0].mean()), float(self.corners[:, 1].mean()))


@dataclass(frozen=True)
class SurfaceDefinition:
    """Named planar surface: marker id -> corner positions in surface space."""

    name: str
    layout: dict[int, np.ndarray]  # id -> (4, 2) corners in [0,1]^2

    def __post_init__(self):
        if not self.layout:
            raise ValueError("surface needs at least one marker")
        clean = {}
        for mid, quad in self.layout.items():
            q = np.asarray(quad, dtype=np.float64)
            if q.shape != (4, 2):
                raise ValueError(f"marker {mid}: corners must be (4, 2)")
            clean[int(mid)] = q
        object.__setattr__(self, "layout", clean)

    def to_json(self) -> dict:
        return {"name": self.name, "markers": {str(k): v.tolist() for k, v in self.layout.items()}}

    @classmethod
    def from_json(cls, d: dict) -> "SurfaceDefinition":
        return cls(name=d["name"], layout={int(k): np.asarray(v) for k, v in d["markers"].items()})

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    @classmethod
    def load(cls, path) -> "SurfaceDefinition":
        with open(path) as f:
            return cls.from_json(json.load(f))


@dataclass(frozen=True)
class Homography:
    """3x3 projective map, normalized so H[2,2] == 1 when nonzero."""

    matrix: np.ndarray
    rms_error: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if abs(np.linalg.det(m)) < 1e-12:
            raise ValueError("homography must be invertible")
        if m[2, 2] != 0:
            m = m / m[2, 2]
        object.__setattr__(self, "matrix", m)

    def apply(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        homo = np.column_stack((pts, np.ones(len(pts))))
        mapped = homo @ self.matrix.T
        w = mapped[:, 2]
        if (np.abs(w) < 1e-12).any():
            raise ValueError("degenerate projection")
        return mapped[:, :2] / w[:, None]

    def inverse(self) -> "Homography":
        return Homography(matrix=np.linalg.inv(self.matrix))


def estimate_homography(src, dst) -> Homography:
    """Normalized DLT from >= 4 point correspondences (least squares)."""
    src = np.atleast_2d(np.asarray(src, dtype=np.float64))
    dst = np.atleast_2d(np.asarray(dst, dtype=np.float64))
    if src.shape != dst.shape or src.shape[0] < 4 or src.shape[1] != 2:
        raise ValueError("need at least 4 point correspondences")

    ts, src_n = _hartley_normalize(src)
    td, dst_n = _hartley_normalize(dst)
    rows = []
    for (x, y), (u, v) in zip(src_n, dst_n):
        rows.append([x, y, 1, 0, 0, 0, -x * u, -y * u, -u])
        rows.append([0, 0, 0, x, y, 1, -x * v, -y * v, -v])
    a = np.asarray(rows)
    _, s, vt = np.linalg.svd(a)
    # a unique solution needs rank 8: guard the second-smallest singular value
    if s[0] <= 0 or s[-2] / s[0] < 1e-10:
        raise ValueError("degenerate configuration")
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ h @ ts
    result = Homography(matrix=h)
    rms = float(np.sqrt(((result.apply(src) - dst) ** 2).sum(axis=1).mean()))
    return Homography(matrix=result.matrix, rms_error=rms)


def _hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = pts.mean(axis=0)
    d = np.sqrt(((pts - mean) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    t = np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1]])
    return t, (pts - mean) * s


def surface_homography(
    markers, definition: SurfaceDefinition, frame_size: tuple[int, int]
) -> Homography:
    """Homography from scene pixels to frame-size-scaled surface coordinates.

    Uses all corners of every detected marker present in the definition.
    """
    w, h = frame_size
    src, dst = [], []
    for m in markers:
        quad = definition.layout.get(m.id)
        if quad is None:
            continue
        src.extend(m.corners)
        dst.extend(quad * np.array([w, h]))
    if len(src) < 4:
        raise ValueError("not enough marker correspondences for this surface")
    return estimate_homography(np.asarray(src), np.asarray(dst))


def map_gaze_to_surface(
    gaze: GazeDatum, homography: Homography, frame_size: tuple[int, int]
) -> tuple[tuple[float, float], bool]:
    """Map a gaze datum into surface-normalized coordinates.

    Applies the homography to the gaze point in scene pixels, renormalizes
    by the frame size, and flags whether the point landed on the surface.
    """
    w, h = frame_size
    px = (gaze.norm_pos[0] * w, gaze.norm_pos[1] * h)
    mapped = homography.apply([px])[0]
    sx, sy = mapped[0] / w, mapped[1] / h
    on_surface = bool(0.0 <= sx <= 1.0 and 0.0 <= sy <= 1.0)
    return ((float(sx), float(sy)), on_surface)


# --- fiducial detection -----------------------------------------------------


def detect_markers(frame: GrayFrame) -> list[Marker]:
    """Detect square fiducials: closed quad contours decoded on a 7x7 grid."""
    from .detect import canny_edges, extract_contours

    pixels = frame.pixels
    edges = canny_edges(pixels, 1.0)
    markers: list[Marker] = []
    seen: set[tuple[int, int, int]] = set()
    for contour in extract_contours(edges):
        if len(contour) < 4 * MIN_QUAD_SIDE:
            continue
        if np.hypot(*(contour[0] - contour[-1])) > 2.5:
            continue
        quad = _approx_quad(contour)
        if quad is None:
            continue
        quad = _refine_quad(pixels, quad)
        if quad is None:
            continue
        decoded = _decode_quad(pixels, quad)
        if decoded is None:
            continue
        mid, corners = decoded
        cx, cy = corners[:, 0].mean(), corners[:, 1].mean()
        key = (mid, int(cx // 8), int(cy // 8))
        if key in seen:
            continue
        seen.add(key)
        markers.append(Marker(id=mid, corners=corners))
    return markers


def _approx_quad(contour: np.ndarray) -> np.ndarray | None:
    """Reduce a closed contour to 4 corners with Douglas-Peucker."""
    start = int(np.argmax(((contour - contour.mean(axis=0)) ** 2).sum(axis=1)))
    rolled = np.roll(contour, -start, axis=0)
    far = int(np.argmax(((rolled - rolled[0]) ** 2).sum(axis=1)))
    eps = max(2.0, 0.02 * len(contour))
    keep1 = _rdp(rolled[: far + 1], eps)
    keep2 = _rdp(np.vstack((rolled[far:], rolled[:1])), eps)
    corners = np.vstack((keep1[:-1], keep2[:-1]))
    if len(corners) != 4:
        return None
    sides = np.hypot(*(np.diff(np.vstack((corners, corners[:1])), axis=0).T))
    if sides.min() < MIN_QUAD_SIDE:
        return None
    if not _is_convex(corners):
        return None
    # enforce clockwise order in y-down image coordinates
    area = _shoelace(corners)
    if area < 0:
        corners = corners[::-1]
    return corners


def _rdp(points: np.ndarray, eps: float) -> np.ndarray:
    if len(points) <= 2:
        return points
    a, b = points[0], points[-1]
    ab = b - a
    norm = np.hypot(*ab)
    rel = points - a
    if norm == 0:
        d = np.hypot(rel[:, 0], rel[:, 1])
    else:
        d = np.abs(ab[0] * rel[:, 1] - ab[1] * rel[:, 0]) / norm
    i = int(np.argmax(d))
    if d[i] <= eps:
        return np.vstack((a, b))
    left = _rdp(points[: i + 1], eps)
    right = _rdp(points[i:], eps)
    return np.vstack((left[:-1], right))


def _is_convex(corners: np.ndarray) -> bool:
    signs = []
    for k in range(4):
        a = corners[(k + 1) % 4] - corners[k]
        b = corners[(k + 2) % 4] - corners[(k + 1) % 4]
        signs.append(np.sign(a[0] * b[1] - a[1] * b[0]))
    return all(s == signs[0] and s != 0 for s in signs)


def _shoelace(corners: np.ndarray) -> float:
    x, y = corners[:, 0], corners[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _sample_bilinear(pixels: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Sample at continuous positions (pixel centers at half-integers)."""
    h, w = pixels.shape
    x = np.clip(pts[:, 0] - 0.5, 0.0, w - 1.001)
    y = np.clip(pts[:, 1] - 0.5, 0.0, h - 1.001)
    x0 = x.astype(int)
    y0 = y.astype(int)
    fx = x - x0
    fy = y - y0
    p = pixels.astype(np.float64)
    return (
        p[y0, x0] * (1 - fx) * (1 - fy)
        + p[y0, np.minimum(x0 + 1, w - 1)] * fx * (1 - fy)
        + p[np.minimum(y0 + 1, h - 1), x0] * (1 - fx) * fy
        + p[np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)] * fx * fy
    )


def _refine_quad(pixels: np.ndarray, quad: np.ndarray) -> np.ndarray | None:
    """Subpixel corners: fit each border line to intensity-profile crossings."""
    h, w = pixels.shape
    centroid = quad.mean(axis=0)
    lines = []
    for k in range(4):
        a, b = quad[k], quad[(k + 1) % 4]
        direction = b - a
        length = np.hypot(*direction)
        direction = direction / length
        normal = np.array([-direction[1], direction[0]])
        mid = (a + b) / 2.0
        if np.dot(normal, mid - centroid) < 0:
            normal = -normal  # outward
        stations = a + np.outer(np.linspace(0.15, 0.85, 12), b - a)
        offsets = np.linspace(-2.5, 2.5, 11)
        crossings = []
        for s in stations:
            ray = s + np.outer(offsets, normal)
            if (ray < 1).any() or (ray[:, 0] > w - 1).any() or (ray[:, 1] > h - 1).any():
                continue
            prof = _sample_bilinear(pixels, ray)
            level = (prof[:2].mean() + prof[-2:].mean()) / 2.0
            above = prof >= level
            idx = np.nonzero(above[1:] != above[:-1])[0]
            if idx.size == 0:
                continue
            i = idx[0]
            frac = (level - prof[i]) / (prof[i + 1] - prof[i])
            crossings.append(s + (offsets[i] + frac * (offsets[i + 1] - offsets[i])) * normal)
        if len(crossings) < 4:
            return None
        lines.append(_tls_line(np.asarray(crossings)))
    corners = []
    for k in range(4):
        p = _line_intersection(lines[k - 1], lines[k])
        if p is None:
            return None
        corners.append(p)
    # corner k is the intersection of sides (k-1, k): same order as input quad
    return np.asarray(corners)


def _tls_line(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Total-least-squares line: (point on line, unit direction)."""
    mean = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - mean)
    return mean, vt[0]


def _line_intersection(l1, l2) -> np.ndarray | None:
    p1, d1 = l1
    p2, d2 = l2
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(denom) < 1e-12:
        return None
    t = ((p2[0] - p1[0]) * d2[1] - (p2[1] - p1[1]) * d2[0]) / denom
    return p1 + t * d1


def _decode_quad(pixels: np.ndarray, quad: np.ndarray) -> tuple[int, np.ndarray] | None:
    """Sample the 7x7 cell grid under a rectifying homography and decode."""
    src = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    try:
        h = estimate_homography(src, quad)
    except ValueError:
        return None
    n = MARKER_CELLS
    centers_u = [((c + 0.5) / n, (r + 0.5) / n) for r in range(n) for c in range(n)]
    samples = _sample_bilinear(pixels, h.apply(np.asarray(centers_u))).reshape(n, n)
    lo, hi = samples.min(), samples.max()
    if hi - lo < CELL_CONTRAST_MIN:
        return None
    bits = (samples > (lo + hi) / 2.0).astype(np.uint8)
    if bits[0, :].any() or bits[-1, :].any() or bits[:, 0].any() or bits[:, -1].any():
        return None  # border must be solid black
    payload = bits[1:-1, 1:-1]
    for rot in range(4):
        mid = decode_payload(np.rot90(payload, -rot))
        if mid is not None:
            # payload rotated by -rot matches canonical: corner 0 of the
            # canonical marker sits rot steps back along the quad
            corners = np.roll(quad, rot, axis=0)
            return mid, corners
    return None
