"""gazekit: head-mounted eye tracking pipeline.

Dark-pupil detection, polynomial gaze calibration, fiducial surface
remapping, stream timing, recording/streaming, and evaluation, runnable
end-to-end on synthetic or recorded data.
"""

from .core import (
    CameraIntrinsics,
    DetectorParams,
    Ellipse,
    GazeDatum,
    GrayFrame,
    PupilDatum,
    angular_distance,
    norm_from_pixel,
    px_per_degree,
)
from .detect import detect
from .gazemap import CalibrationModel, CalibrationPair, calibrate, map_gaze

__all__ = [
    "CalibrationModel",
    "CalibrationPair",
    "CameraIntrinsics",
    "DetectorParams",
    "Ellipse",
    "GazeDatum",
    "GrayFrame",
    "PupilDatum",
    "angular_distance",
    "calibrate",
    "detect",
    "map_gaze",
    "norm_from_pixel",
    "px_per_degree",
]

__version__ = "0.1.0"
