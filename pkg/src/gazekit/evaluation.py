"""Spatial accuracy/precision metrics and the detection-rate benchmark.

Accuracy is the mean angular offset between gaze and target; precision is
the RMS angular distance between successive gaze samples within fixation
windows, pooled across windows.  Pairs beyond the 5-degree outlier limit
are discarded as human error (no fixation, blink) before either statistic.
Detector quality is scored by the Hausdorff distance between detected and
ground-truth ellipses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import CameraIntrinsics, Ellipse, angular_distance, pixel_from_norm
from .gazemap import (
    DWELL_SETTLE,
    MIN_PAIR_CONFIDENCE,
    calibrate,
    map_gaze,
    screen_marker_session,
)
from .timing import DEFAULT_MAX_GAP, pair_by_time

OUTLIER_LIMIT_DEG = 5.0
HAUSDORFF_BASE_SAMPLES = 128
HAUSDORFF_MAX_SAMPLES = 4096
HAUSDORFF_REL_TOL = 0.005


@dataclass(frozen=True)
class SiteStats:
    site: int
    n_pairs: int
    mean_offset_deg: float
    precision_deg: float | None


@dataclass(frozen=True)
class AccuracyReport:
    """COGAIN-style spatial accuracy and precision of one session."""

    accuracy_deg: float
    precision_deg: float
    n_used: int
    n_discarded: int
    per_site: tuple[SiteStats, ...]
    calibration_rms: float

    def to_json(self) -> dict:
        return {
            "accuracy_deg": self.accuracy_deg,
            "precision_deg": self.precision_deg,
            "n_used": self.n_used,
            "n_discarded": self.n_discarded,
            "calibration_rms": self.calibration_rms,
            "per_site": [
                {
                    "site": s.site,
                    "n_pairs": s.n_pairs,
                    "mean_offset_deg": s.mean_offset_deg,
                    "precision_deg": s.precision_deg,
                }
                for s in self.per_site
            ],
        }

    def table(self) -> str:
        lines = [
            f"accuracy:  {self.accuracy_deg:.4f} deg",
            f"precision: {self.precision_deg:.4f} deg",
            f"pairs:     {self.n_used} used, {self.n_discarded} discarded (> {OUTLIER_LIMIT_DEG:g} deg)",
            f"calibration rms: {self.calibration_rms:.2e}",
            "site   n   offset(deg)  precision(deg)",
        ]
        for s in self.per_site:
            prec = f"{s.precision_deg:.4f}" if s.precision_deg is not None else "   -  "
            lines.append(f"{s.site:>4} {s.n_pairs:>4}   {s.mean_offset_deg:9.4f}   {prec}")
        return "\n".join(lines)


def filter_outliers(pairs_with_distance, limit: float = OUTLIER_LIMIT_DEG):
    """Partition (pair, distance) items: strictly more than ``limit`` is out."""
    kept, discarded = [], []
    for item in pairs_with_distance:
        (discarded if item[-1] > limit else kept).append(item)
    return kept, discarded


def accuracy(offsets_deg) -> float:
    """Mean angular offset in degrees over kept gaze/target pairs."""
    offsets = np.asarray(list(offsets_deg), dtype=np.float64)
    if offsets.size == 0:
        raise ValueError("accuracy needs at least one kept pair")
    return float(offsets.mean())


def precision(windows, intr: CameraIntrinsics) -> float:
    """Pooled RMS of successive-sample angular distances within fixations.

    ``windows`` holds per-fixation arrays of gaze points in scene pixels;
    windows shorter than 2 samples are skipped.
    """
    sq = []
    for win in windows:
        pts = np.atleast_2d(np.asarray(win, dtype=np.float64))
        if len(pts) < 2:
            continue
        deg = np.hypot(*np.diff(pts, axis=0).T) / intr.px_per_degree
        sq.extend(deg**2)
    if not sq:
        raise ValueError("precision needs at least one window with 2+ samples")
    return float(math.sqrt(np.mean(sq)))


def ellipse_hausdorff(e1: Ellipse, e2: Ellipse) -> float:
    """Symmetric Hausdorff distance between two ellipse contours.

    Approximated by dense parametric sampling, doubling the sample count
    until the value settles within 0.5%.
    """
    n = HAUSDORFF_BASE_SAMPLES
    prev = None
    while True:
        d = _sampled_hausdorff(e1, e2, n)
        if prev is not None and abs(d - prev) <= HAUSDORFF_REL_TOL * max(d, 1e-9):
            return d
        prev = d
        n *= 2
        if n > HAUSDORFF_MAX_SAMPLES:
            return prev


def _sampled_hausdorff(e1: Ellipse, e2: Ellipse, n: int) -> float:
    p1 = e1.points(n)
    p2 = e2.points(n)
    d = cdist(p1, p2)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


@dataclass(frozen=True)
class DetectionRateCurve:
    """Fraction of frames detected within each Hausdorff threshold."""

    thresholds: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(v) for v in self.thresholds)
        r = tuple(float(v) for v in self.rates)
        if any(b < a for a, b in zip(t, t[1:])):
            raise ValueError("thresholds must be ascending")
        if any(b < a - 1e-12 for a, b in zip(r, r[1:])):
            raise ValueError("rates must be non-decreasing")
        if any(not 0 <= v <= 1 for v in r):
            raise ValueError("rates must be fractions")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "rates", r)

    def rate_at(self, threshold: float) -> float:
        return self.rates[self.thresholds.index(threshold)]

    def to_csv(self) -> str:
        lines = ["threshold,rate"]
        lines += [f"{t:g},{r:.6f}" for t, r in zip(self.thresholds, self.rates)]
        return "\n".join(lines) + "\n"


def detection_rate_curve(results, thresholds) -> DetectionRateCurve:
    """Score (detected ellipse | None, truth ellipse) pairs at each threshold.

    A missing detection counts as failure at every threshold.
    """
    results = list(results)
    if not results:
        raise ValueError("need at least one result")
    thresholds = sorted(float(t) for t in thresholds)
    errors = []
    for detected, truth in results:
        errors.append(math.inf if detected is None else ellipse_hausdorff(detected, truth))
    errors = np.asarray(errors)
    rates = tuple(float((errors <= t).mean()) for t in thresholds)
    return DetectionRateCurve(thresholds=tuple(thresholds), rates=rates)


# --- full synthetic accuracy session -----------------------------------------


def run_accuracy_session(rig, protocol=None, degree: int = 2) -> AccuracyReport:
    """Simulate the full protocol on a rig and score it."""
    from .synth import simulate_session

    session = simulate_session(rig, protocol)
    return evaluate_session(session, degree=degree)


def evaluate_session(session, degree: int = 2) -> AccuracyReport:
    """Calibrate on the session's 9 sites, then score the test phase."""
    pairs = screen_marker_session(
        session.pupils, session.cal_markers, n_sites=len(session.protocol.cal_sites())
    )
    model = calibrate(pairs, degree=degree)

    sw, sh = session.rig.scene_size
    intr = CameraIntrinsics(width=sw, height=sh, fov_diagonal=session.rig.scene_fov_deg)

    markers = [m for m in session.test_markers if m.since_onset >= DWELL_SETTLE]
    pupil_ts = [p.timestamp for p in session.pupils]
    marker_ts = [m.timestamp for m in markers]

    scored = []  # (site, gaze_px, target_px, distance_deg)
    for ip, im in pair_by_time(pupil_ts, marker_ts, DEFAULT_MAX_GAP):
        p = session.pupils[ip]
        m = markers[im]
        if p.confidence < MIN_PAIR_CONFIDENCE:
            continue
        gaze = map_gaze(p, model)
        g_px = pixel_from_norm(gaze.norm_pos, sw, sh)
        t_px = pixel_from_norm(m.pos, sw, sh)
        scored.append((m.site, g_px, t_px, angular_distance(g_px, t_px, intr)))

    kept, discarded = filter_outliers(scored)
    if not kept:
        raise ValueError("no usable gaze/target pairs after outlier filtering")

    offsets = [item[3] for item in kept]
    sites = sorted({item[0] for item in kept})
    windows = {site: [item[1] for item in kept if item[0] == site] for site in sites}
    prec = precision(list(windows.values()), intr)

    per_site = []
    for site in sites:
        site_offsets = [item[3] for item in kept if item[0] == site]
        try:
            site_prec = precision([windows[site]], intr)
        except ValueError:
            site_prec = None
        per_site.append(
            SiteStats(
                site=site,
                n_pairs=len(site_offsets),
                mean_offset_deg=float(np.mean(site_offsets)),
                precision_deg=site_prec,
            )
        )

    return AccuracyReport(
        accuracy_deg=accuracy(offsets),
        precision_deg=prec,
        n_used=len(kept),
        n_discarded=len(discarded),
        per_site=tuple(per_site),
        calibration_rms=model.rms_residual,
    )
