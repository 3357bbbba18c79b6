"""Pupil-to-scene gaze mapping.

The transfer function is a pair of bivariate polynomials over the full
total-degree monomial basis (default degree 2), fit by least squares over
calibration pairs.  Calibration pairs come from a screen-marker session:
marker detections paired with the temporally nearest pupil datum, gated by
dwell time and pupil confidence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import GazeDatum, GrayFrame, PupilDatum
from .timing import DEFAULT_MAX_GAP, pair_by_time

DWELL_SETTLE = 0.3  # seconds to discard after marker motion onset
MIN_PAIR_CONFIDENCE = 0.6


@dataclass(frozen=True)
class CalibrationPair:
    """One (pupil position, known target position) sample."""

    pupil: tuple[float, float]
    target: tuple[float, float]
    timestamp: float

    def __post_init__(self):
        values = (*self.pupil, *self.target, self.timestamp)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("calibration pair coordinates must be finite")


def monomial_exponents(degree: int) -> list[tuple[int, int]]:
    """(i, j) exponent pairs of the basis [1, x, y, x^2, xy, y^2, ...]."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    return [(i, t - i) for t in range(degree + 1) for i in range(t, -1, -1)]


def design_matrix(points: np.ndarray, degree: int) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    cols = [pts[:, 0] ** i * pts[:, 1] ** j for i, j in monomial_exponents(degree)]
    return np.column_stack(cols)


@dataclass(frozen=True)
class CalibrationModel:
    """Two bivariate polynomials mapping pupil space to scene space."""

    degree: int
    coeffs_x: np.ndarray
    coeffs_y: np.ndarray
    rms_residual: float

    def __post_init__(self):
        n_terms = len(monomial_exponents(self.degree))
        cx = np.asarray(self.coeffs_x, dtype=np.float64)
        cy = np.asarray(self.coeffs_y, dtype=np.float64)
        if cx.shape != (n_terms,) or cy.shape != (n_terms,):
            raise ValueError(f"degree {self.degree} needs {n_terms} coefficients per axis")
        object.__setattr__(self, "coeffs_x", cx)
        object.__setattr__(self, "coeffs_y", cy)

    def evaluate(self, p) -> tuple[float, float]:
        row = design_matrix(np.asarray(p, dtype=np.float64).reshape(1, 2), self.degree)[0]
        return (float(row @ self.coeffs_x), float(row @ self.coeffs_y))

    def lipschitz_bound(self) -> float:
        """Upper bound L with |f(p) - f(q)| <= L |p - q| on the unit square."""
        exps = monomial_exponents(self.degree)
        gx = gy = 0.0
        for (i, j), cx, cy in zip(exps, self.coeffs_x, self.coeffs_y):
            gx += math.hypot(cx, cy) * i
            gy += math.hypot(cx, cy) * j
        return math.hypot(gx, gy)

    def to_json(self) -> dict:
        return {
            "degree": self.degree,
            "coeffs_x": self.coeffs_x.tolist(),
            "coeffs_y": self.coeffs_y.tolist(),
            "rms_residual": self.rms_residual,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CalibrationModel":
        return cls(
            degree=int(d["degree"]),
            coeffs_x=np.asarray(d["coeffs_x"], dtype=np.float64),
            coeffs_y=np.asarray(d["coeffs_y"], dtype=np.float64),
            rms_residual=float(d["rms_residual"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    @classmethod
    def load(cls, path) -> "CalibrationModel":
        with open(path) as f:
            return cls.from_json(json.load(f))


def calibrate(pairs, degree: int = 2) -> CalibrationModel:
    """Least-squares fit of the scene coordinates over the pupil coordinates.

    Solved with an orthogonal decomposition (SVD-backed lstsq); the
    normal-equations route is avoided because near-collinear 9-point grids
    are ill-conditioned.
    """
    pairs = list(pairs)
    n_terms = len(monomial_exponents(degree))
    if len(pairs) < n_terms:
        raise ValueError(
            f"underdetermined: degree {degree} needs at least {n_terms} pairs, got {len(pairs)}"
        )
    pupil = np.array([p.pupil for p in pairs], dtype=np.float64)
    target = np.array([p.target for p in pairs], dtype=np.float64)
    a = design_matrix(pupil, degree)
    if np.linalg.matrix_rank(a) < n_terms:
        raise ValueError("degenerate calibration geometry")
    sol, _, _, _ = np.linalg.lstsq(a, target, rcond=None)
    pred = a @ sol
    rms = float(np.sqrt(((pred - target) ** 2).sum(axis=1).mean()))
    return CalibrationModel(degree=degree, coeffs_x=sol[:, 0], coeffs_y=sol[:, 1], rms_residual=rms)


def map_gaze(p: PupilDatum, model: CalibrationModel) -> GazeDatum:
    """Evaluate the transfer polynomials at a pupil position."""
    return GazeDatum(norm_pos=model.evaluate(p.norm_pos), base=p, timestamp=p.timestamp)


@dataclass(frozen=True)
class MarkerObservation:
    """A detected calibration-marker position in the scene stream."""

    timestamp: float
    pos: tuple[float, float]  # scene-normalized
    site: int
    since_onset: float  # seconds since the marker jumped to this site


def screen_marker_session(
    pupils,
    markers,
    n_sites: int = 9,
    settle: float = DWELL_SETTLE,
    min_confidence: float = MIN_PAIR_CONFIDENCE,
    max_gap: float = DEFAULT_MAX_GAP,
) -> list[CalibrationPair]:
    """Correlate marker detections with pupil data into calibration pairs.

    Marker samples within ``settle`` of motion onset are dropped, as are
    pairs whose pupil confidence is below ``min_confidence``.  Raises if any
    site ends up without usable pairs.
    """
    pupils = list(pupils)
    kept = [m for m in markers if m.since_onset >= settle]
    pupil_ts = [p.timestamp for p in pupils]
    marker_ts = [m.timestamp for m in kept]
    pairs = []
    used_sites = set()
    for ip, im in pair_by_time(pupil_ts, marker_ts, max_gap):
        p = pupils[ip]
        m = kept[im]
        if p.confidence < min_confidence:
            continue
        pairs.append(CalibrationPair(pupil=p.norm_pos, target=m.pos, timestamp=m.timestamp))
        used_sites.add(m.site)
    missing = sorted(set(range(n_sites)) - used_sites)
    if missing:
        raise ValueError(f"no usable calibration pairs for sites {missing}")
    return pairs


@dataclass(frozen=True)
class ConcentricMarker:
    center: tuple[float, float]
    kind: str  # "collect" or "stop"


def detect_concentric_marker(frame: GrayFrame) -> ConcentricMarker | None:
    """Find a concentric ring marker; polarity of the core selects the kind.

    Ring edges are fit as ellipses and grouped by shared center; the center
    is the support-weighted mean of the group, subpixel.  Returns None when
    no concentric group exists.
    """
    from .detect import canny_edges, extract_contours, fit_ellipse

    edges = canny_edges(frame.pixels, 1.0)
    fits = []
    for contour in extract_contours(edges):
        if len(contour) < 24:
            continue
        if np.hypot(*(contour[0] - contour[-1])) > 2.5:
            continue  # open arc: not a full ring
        try:
            e = fit_ellipse(contour)
        except ValueError:
            continue
        if e.b / e.a < 0.4 or e.a < 4:
            continue
        fits.append((e, len(contour)))
    if not fits:
        return None

    # group fits by center proximity
    groups: list[list[tuple]] = []
    for e, n in sorted(fits, key=lambda f: -f[0].a):
        for g in groups:
            ref = g[0][0]
            tol = max(3.0, 0.2 * ref.a)
            if math.hypot(e.center[0] - ref.center[0], e.center[1] - ref.center[1]) <= tol:
                g.append((e, n))
                break
        else:
            groups.append([(e, n)])
    groups = [g for g in groups if len(g) >= 2 and g[0][0].a / g[-1][0].a >= 1.3]
    if not groups:
        return None
    best = max(groups, key=lambda g: (len(g), g[0][0].a))

    weights = np.array([n for _, n in best], dtype=np.float64)
    centers = np.array([e.center for e, _ in best])
    cx, cy = (centers * weights[:, None]).sum(axis=0) / weights.sum()
    radius = best[0][0].a

    core = _mean_disk_intensity(frame.pixels, (cx, cy), 0.15 * radius)
    ring = _mean_disk_intensity(frame.pixels, (cx, cy), 0.9 * radius, 0.7 * radius)
    mid = _mean_disk_intensity(frame.pixels, (cx, cy), 0.5 * radius, 0.36 * radius)
    kind = "collect" if core < (ring + mid) / 2.0 else "stop"
    return ConcentricMarker(center=(float(cx), float(cy)), kind=kind)


def _mean_disk_intensity(pixels, center, r_outer, r_inner: float = 0.0) -> float:
    h, w = pixels.shape
    x0 = int(np.clip(center[0] - r_outer - 1, 0, w - 1))
    x1 = int(np.clip(center[0] + r_outer + 2, 1, w))
    y0 = int(np.clip(center[1] - r_outer - 1, 0, h - 1))
    y1 = int(np.clip(center[1] + r_outer + 2, 1, h))
    ys, xs = np.mgrid[y0:y1, x0:x1]
    rho = np.hypot(xs + 0.5 - center[0], ys + 0.5 - center[1])
    mask = (rho <= r_outer) & (rho >= r_inner)
    if not mask.any():
        return float("nan")
    return float(pixels[y0:y1, x0:x1][mask].mean())
