"""Pipeline configuration: one JSON document, every field defaulted.

Layout::

    {
      "detector": { ... DetectorParams fields ... },
      "eye_camera":   {"width": 640,  "height": 480, "fov_diagonal": 60.0},
      "scene_camera": {"width": 1280, "height": 720, "fov_diagonal": 90.0},
      "calibration_degree": 2,
      "paths": {"recording_dir": "recording", "dataset_dir": "dataset"}
    }

Any subset may be given; missing fields keep their defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .core import CameraIntrinsics, DetectorParams

DEFAULT_EYE_CAMERA = CameraIntrinsics(width=640, height=480, fov_diagonal=60.0)
DEFAULT_SCENE_CAMERA = CameraIntrinsics(width=1280, height=720, fov_diagonal=90.0)


@dataclass(frozen=True)
class PipelineConfig:
    detector: DetectorParams = field(default_factory=DetectorParams)
    eye_camera: CameraIntrinsics = DEFAULT_EYE_CAMERA
    scene_camera: CameraIntrinsics = DEFAULT_SCENE_CAMERA
    calibration_degree: int = 2
    paths: dict = field(default_factory=lambda: {"recording_dir": "recording", "dataset_dir": "dataset"})

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        det = d["detector"]
        for key in ("coarse_radius_range", "pupil_radius_range"):
            det[key] = list(det[key])
        if det["roi"] is not None:
            det["roi"] = list(det["roi"])
        return d


def load_config(path=None) -> PipelineConfig:
    """Read a config file; None or missing fields fall back to defaults."""
    if path is None:
        return PipelineConfig()
    with open(path) as f:
        raw = json.load(f)
    return config_from_json(raw)


def config_from_json(raw: dict) -> PipelineConfig:
    kw = {}
    det = dict(raw.get("detector", {}))
    for key in ("coarse_radius_range", "pupil_radius_range"):
        if key in det:
            det[key] = tuple(det[key])
    if det.get("roi") is not None and "roi" in det:
        det["roi"] = tuple(det["roi"])
    kw["detector"] = DetectorParams(**det)
    if "eye_camera" in raw:
        kw["eye_camera"] = CameraIntrinsics(**raw["eye_camera"])
    if "scene_camera" in raw:
        kw["scene_camera"] = CameraIntrinsics(**raw["scene_camera"])
    if "calibration_degree" in raw:
        kw["calibration_degree"] = int(raw["calibration_degree"])
    if "paths" in raw:
        kw["paths"] = dict(raw["paths"])
    return PipelineConfig(**kw)


def save_config(config: PipelineConfig, path) -> None:
    with open(path, "w") as f:
        json.dump(config.to_json(), f, indent=2)
