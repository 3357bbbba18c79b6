"""Dark-pupil detection pipeline."""

from .coarse import CoarseRegion, center_surround_response, coarse_pupil_region
from .contours import extract_contours, split_contours, turn_angles
from .edges import canny_edges, dark_threshold, filter_edges
from .fitting import (
    circumference,
    ellipse_distances,
    fit_ellipse,
    fit_residual_rms,
)
from .pipeline import CandidateFit, combinatorial_search, contour_length, detect

__all__ = [
    "CandidateFit",
    "CoarseRegion",
    "canny_edges",
    "center_surround_response",
    "circumference",
    "coarse_pupil_region",
    "combinatorial_search",
    "contour_length",
    "dark_threshold",
    "detect",
    "ellipse_distances",
    "extract_contours",
    "filter_edges",
    "fit_ellipse",
    "fit_residual_rms",
    "split_contours",
    "turn_angles",
]
