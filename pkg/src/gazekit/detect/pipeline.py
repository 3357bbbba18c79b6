"""Full dark-pupil detection pipeline.

Stage order per frame: coarse region seed -> Canny edges -> dark threshold
-> reflection/dark filtering -> contour extraction -> curvature splitting ->
ellipse fitting -> combinatorial support search.  The winning candidate is
reported only when its confidence (supporting edge length over ellipse
circumference) clears the configured threshold.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from ..core import DetectorParams, Ellipse, GrayFrame, PupilDatum, norm_from_pixel
from .coarse import CoarseRegion, coarse_pupil_region
from .contours import extract_contours, split_contours
from .edges import canny_edges, dark_threshold, filter_edges
from .fitting import circumference, ellipse_distances, fit_ellipse, fit_residual_rms

# seed and merged fits must stay below this RMS contour distance (px)
SEED_RESIDUAL_MAX = 1.5
# a contour supports a candidate when this fraction of its points is in band
SUPPORT_BAND_PX = 2.0
SUPPORT_MIN_FRACTION = 0.8
BEAM_WIDTH = 10
# cap on points used per least-squares fit; support length uses full contours
MAX_FIT_POINTS = 400


@dataclass(frozen=True)
class CandidateFit:
    """One candidate pupil ellipse with its supporting contours."""

    ellipse: Ellipse
    support: tuple[int, ...]
    support_length: float
    fit_residual: float
    confidence: float


def contour_length(points: np.ndarray) -> float:
    """Polyline length of an ordered contour."""
    if len(points) < 2:
        return 0.0
    return float(np.hypot(*(np.diff(points, axis=0).T)).sum())


def _subsample(points: np.ndarray, cap: int = MAX_FIT_POINTS) -> np.ndarray:
    if len(points) <= cap:
        return points
    stride = int(np.ceil(len(points) / cap))
    return points[::stride]


def _make_candidate(
    indices: tuple[int, ...], contours, lengths, params: DetectorParams
) -> CandidateFit | None:
    pts = np.concatenate([contours[i] for i in indices])
    try:
        ellipse = fit_ellipse(_subsample(pts))
    except ValueError:
        return None
    r_min, r_max = params.pupil_radius_range
    if not (r_min <= ellipse.a <= r_max):
        return None
    residual = fit_residual_rms(ellipse, _subsample(pts))
    if residual > SEED_RESIDUAL_MAX:
        return None
    support_length = sum(lengths[i] for i in indices)
    confidence = min(1.0, support_length / circumference(ellipse))
    return CandidateFit(
        ellipse=ellipse,
        support=indices,
        support_length=support_length,
        fit_residual=residual,
        confidence=confidence,
    )


def _rank(c: CandidateFit):
    return (-c.confidence, c.fit_residual, c.support)


MIN_PIECE_POINTS = 10
MAX_PIECE_DEPTH = 3


def _refine_pieces(contour: np.ndarray, depth: int = MAX_PIECE_DEPTH) -> list[np.ndarray]:
    """Best-effort split of a contour that does not fit any ellipse well.

    Curvature splitting misses shallow junctions (e.g. a pupil arc running
    into an eyelid edge), so a long contour whose solo fit residual is out
    of bounds is cut at its maximum-turn point and the halves retried.
    """
    from .contours import turn_angles

    if depth <= 0 or len(contour) < 2 * MIN_PIECE_POINTS:
        return [contour]
    try:
        ellipse = fit_ellipse(_subsample(contour))
        if fit_residual_rms(ellipse, _subsample(contour)) <= SEED_RESIDUAL_MAX:
            return [contour]
    except ValueError:
        pass
    angles = turn_angles(contour)
    if angles.size == 0:
        return [contour]
    cut = 4 + int(np.argmax(angles))  # chord span offset of turn_angles
    if cut < MIN_PIECE_POINTS or len(contour) - cut - 1 < MIN_PIECE_POINTS:
        cut = len(contour) // 2
    left = contour[:cut]
    right = contour[cut + 1 :]
    return _refine_pieces(left, depth - 1) + _refine_pieces(right, depth - 1)


def combinatorial_search(sub_contours, params: DetectorParams) -> CandidateFit | None:
    """Search contour combinations for the best-supported pupil ellipse.

    Seeds come from solo contour fits with in-range major radius and low
    residual; over-long contours that fit nothing are first cut at their
    maximum-turn points.  A beam search then merges in contours whose
    points hug the candidate ellipse, refitting after each merge.  The
    number of refits is capped by params.max_support_combinations.
    """
    contours = []
    for c in sub_contours:
        contours.extend(_refine_pieces(np.asarray(c, dtype=np.float64)))
    lengths = [contour_length(c) for c in contours]
    eligible = [i for i, c in enumerate(contours) if len(c) >= 5]

    budget = params.max_support_combinations
    fits = 0
    candidates: list[CandidateFit] = []
    for i in eligible:
        if fits >= budget:
            break
        fits += 1
        cand = _make_candidate((i,), contours, lengths, params)
        if cand is not None:
            candidates.append(cand)
    if not candidates:
        return None

    beam = sorted(candidates, key=_rank)[:BEAM_WIDTH]
    best = beam[0]
    seen = {c.support for c in beam}
    while fits < budget:
        grew = False
        for cand in list(beam):
            for j in eligible:
                if j in cand.support:
                    continue
                support = tuple(sorted(cand.support + (j,)))
                if support in seen:
                    continue
                seen.add(support)
                band = ellipse_distances(cand.ellipse, _subsample(contours[j], 100))
                if (band <= SUPPORT_BAND_PX).mean() < SUPPORT_MIN_FRACTION:
                    continue
                if fits >= budget:
                    break
                fits += 1
                merged = _make_candidate(support, contours, lengths, params)
                if merged is not None:
                    beam.append(merged)
                    grew = True
            if fits >= budget:
                break
        beam = sorted(beam, key=_rank)[:BEAM_WIDTH]
        if beam[0].confidence > best.confidence:
            best = beam[0]
        if not grew:
            break
    return best


def detect(
    frame: GrayFrame, params: DetectorParams | None = None, debug_dir=None
) -> PupilDatum | None:
    """Run the full detection pipeline on one eye frame.

    Returns None when no candidate reaches params.confidence_threshold.
    """
    params = params or DetectorParams()
    pixels = frame.pixels
    ox = oy = 0
    if params.roi is not None:
        rx, ry, rw, rh = params.roi
        pixels = pixels[ry : ry + rh, rx : rx + rw]
        ox, oy = rx, ry

    region = coarse_pupil_region(pixels, params)
    crop = region.crop(pixels)
    edges = canny_edges(crop, params.canny_auto_sigma)
    dark = dark_threshold(crop, params.histogram_offset)
    filtered = filter_edges(edges, crop, dark, params.reflection_saturation)
    contours = extract_contours(filtered)
    subs = split_contours(contours, params.curvature_split_angle)
    best = combinatorial_search(subs, params)

    if debug_dir is not None:
        _dump_stages(debug_dir, frame, region, crop, edges, dark, filtered, subs, best)

    if best is None or best.confidence < params.confidence_threshold:
        return None
    dx, dy = region.x0 + ox, region.y0 + oy
    e = best.ellipse
    ellipse = Ellipse(
        center=(e.center[0] + dx, e.center[1] + dy), a=e.a, b=e.b, theta=e.theta
    )
    return PupilDatum(
        ellipse=ellipse,
        norm_pos=norm_from_pixel(ellipse.center, frame.width, frame.height),
        confidence=best.confidence,
        timestamp=frame.timestamp,
    )


def _dump_stages(debug_dir, frame, region: CoarseRegion, crop, edges, dark, filtered, subs, best):
    """Write per-stage images and a candidate record for one frame."""
    from ..pgm import write_pgm

    os.makedirs(debug_dir, exist_ok=True)
    tag = f"{frame.timestamp:.6f}".replace(".", "_")
    write_pgm(os.path.join(debug_dir, f"{tag}_1_region.pgm"), crop)
    write_pgm(os.path.join(debug_dir, f"{tag}_2_edges.pgm"), edges.astype(np.uint8) * 255)
    write_pgm(
        os.path.join(debug_dir, f"{tag}_3_dark.pgm"), (crop <= dark).astype(np.uint8) * 255
    )
    write_pgm(
        os.path.join(debug_dir, f"{tag}_4_filtered.pgm"), filtered.astype(np.uint8) * 255
    )
    record = {
        "region": {"x0": region.x0, "y0": region.y0, "size": region.size},
        "dark_threshold": int(dark),
        "n_sub_contours": len(subs),
        "best": None
        if best is None
        else {
            "center": [best.ellipse.center[0] + region.x0, best.ellipse.center[1] + region.y0],
            "a": best.ellipse.a,
            "b": best.ellipse.b,
            "theta": best.ellipse.theta,
            "confidence": best.confidence,
            "residual": best.fit_residual,
            "support": list(best.support),
        },
    }
    with open(os.path.join(debug_dir, f"{tag}_candidates.json"), "w") as f:
        json.dump(record, f, indent=2)
