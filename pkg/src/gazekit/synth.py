"""Synthetic ground-truth data generation.

Renders eye frames (dark pupil on iris/sclera with glints, eyelid occlusion
and pixel noise), scene frames (concentric calibration markers, fiducial
surfaces), benchmark datasets, and simulated calibration/accuracy sessions.
Everything is a pure function of (rig, t): re-rendering with the same seed
is bit-identical.

Rendering uses 2x2 supersampled coverage so sub-pixel ground truth is
meaningful.  The intensity palette keeps the pupil and iris modes well
separated so the histogram-spike dark threshold has something to find.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .core import Ellipse, GrayFrame, EYE_STREAM, SCENE_STREAM
from .pgm import write_pgm
from .timing import ClockModel, hardware_clock, stamp

PUPIL_LEVEL = 20.0
IRIS_LEVEL_IN = 95.0
IRIS_LEVEL_OUT = 135.0
SCLERA_LEVEL = 200.0
LID_LEVEL = 180.0
GLINT_LEVEL = 255.0

SCENE_BG = 190.0
CARD_LEVEL = 245.0
RING_LEVEL = 30.0

_SS_OFFSETS = ((0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75))


@dataclass(frozen=True)
class EyeSceneRig:
    """Configuration of the synthetic eye/scene world.

    Render knobs (pixel_noise_sd, glint_count, occlusion_fraction) shape eye
    images; data-level knobs (pupil_noise_px, sample_jitter_px, drift,
    blinks) shape simulated session streams.  pupil_noise_px is a
    per-fixation pupil-center bias (headset slip / fixation error);
    sample_jitter_px is the per-sample jitter that drives precision.
    """

    seed: int = 0
    eye_size: tuple[int, int] = (640, 480)
    scene_size: tuple[int, int] = (1280, 720)
    eye_fps: float = 30.0
    scene_fps: float = 30.0
    scene_fov_deg: float = 90.0

    pupil_axes: tuple[float, float] = (40.0, 34.0)
    pupil_theta: float = 0.4
    sweep_amplitude: tuple[float, float] = (110.0, 70.0)
    sweep_freq: tuple[float, float] = (0.11, 0.07)

    pixel_noise_sd: float = 0.0
    glint_count: int = 0
    glint_radius: tuple[float, float] = (2.0, 4.5)
    occlusion_fraction: float = 0.0

    pupil_noise_px: float = 0.0
    sample_jitter_px: float = 0.0
    drift_px_per_s: float = 0.0
    marker_noise_px: float = 0.0
    blink_rate_hz: float = 0.0
    blink_duration: tuple[float, float] = (0.1, 0.3)

    eye_clock: ClockModel = field(default_factory=hardware_clock)
    scene_clock: ClockModel = field(default_factory=hardware_clock)
    truth_coeffs: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def __post_init__(self):
        if not (0.0 <= self.occlusion_fraction < 1.0):
            raise ValueError("occlusion_fraction must be in [0, 1)")

    def truth_map(self) -> "TruthMap":
        return TruthMap.for_rig(self)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["eye_clock"] = self.eye_clock.to_json()
        d["scene_clock"] = self.scene_clock.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "EyeSceneRig":
        kw = dict(d)
        kw["eye_clock"] = ClockModel.from_json(kw["eye_clock"])
        kw["scene_clock"] = ClockModel.from_json(kw["scene_clock"])
        for key in (
            "eye_size",
            "scene_size",
            "pupil_axes",
            "sweep_amplitude",
            "sweep_freq",
            "glint_radius",
            "blink_duration",
        ):
            kw[key] = tuple(kw[key])
        if kw.get("truth_coeffs") is not None:
            kw["truth_coeffs"] = (tuple(kw["truth_coeffs"][0]), tuple(kw["truth_coeffs"][1]))
        return cls(**kw)


class TruthMap:
    """Ground-truth degree-2 pupil->scene transfer map, Newton-invertible."""

    def __init__(self, coeffs_x, coeffs_y):
        self.coeffs_x = np.asarray(coeffs_x, dtype=np.float64)
        self.coeffs_y = np.asarray(coeffs_y, dtype=np.float64)
        if self.coeffs_x.shape != (6,) or self.coeffs_y.shape != (6,):
            raise ValueError("truth map uses the 6-term degree-2 basis")

    @classmethod
    def for_rig(cls, rig: EyeSceneRig) -> "TruthMap":
        if rig.truth_coeffs is not None:
            return cls(*rig.truth_coeffs)
        rng = np.random.default_rng([rig.seed, 0x7A9])
        # near-identity with mild quadratic terms: invertible on [0,1]^2
        cx = np.array([0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
        cy = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        cx += rng.uniform(-1, 1, 6) * np.array([0.05, 0.08, 0.05, 0.04, 0.04, 0.04])
        cy += rng.uniform(-1, 1, 6) * np.array([0.05, 0.05, 0.08, 0.04, 0.04, 0.04])
        return cls(cx, cy)

    @staticmethod
    def _basis(p) -> np.ndarray:
        x, y = p[0], p[1]
        return np.array([1.0, x, y, x * x, x * y, y * y])

    def forward(self, p) -> tuple[float, float]:
        b = self._basis(p)
        return (float(self.coeffs_x @ b), float(self.coeffs_y @ b))

    def _jacobian(self, p) -> np.ndarray:
        x, y = p[0], p[1]
        db_dx = np.array([0.0, 1.0, 0.0, 2 * x, y, 0.0])
        db_dy = np.array([0.0, 0.0, 1.0, 0.0, x, 2 * y])
        return np.array(
            [
                [self.coeffs_x @ db_dx, self.coeffs_x @ db_dy],
                [self.coeffs_y @ db_dx, self.coeffs_y @ db_dy],
            ]
        )

    def invert(self, target, tol: float = 1e-13, max_iter: int = 25) -> tuple[float, float]:
        """Solve forward(p) == target by Newton iteration."""
        t = np.asarray(target, dtype=np.float64)
        p = t.copy()  # near-identity map: target is a good start
        for _ in range(max_iter):
            f = np.array(self.forward(p)) - t
            if float(np.abs(f).max()) < tol:
                break
            p = p - np.linalg.solve(self._jacobian(p), f)
        return (float(p[0]), float(p[1]))


def _supersample(width, height, shade, rng=None, noise_sd: float = 0.0) -> np.ndarray:
    """Average ``shade(X, Y)`` over a 2x2 sample grid per pixel."""
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)
    acc = np.zeros((height, width), dtype=np.float64)
    for ox, oy in _SS_OFFSETS:
        X, Y = np.meshgrid(cols + ox, rows + oy)
        acc += shade(X, Y)
    img = acc / len(_SS_OFFSETS)
    if noise_sd > 0.0:
        img = img + rng.normal(0.0, noise_sd, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _pupil_trajectory(rig: EyeSceneRig, t: float) -> tuple[float, float]:
    w, h = rig.eye_size
    ax, ay = rig.sweep_amplitude
    fx, fy = rig.sweep_freq
    return (
        w / 2.0 + ax * math.sin(2 * math.pi * fx * t + 0.9),
        h / 2.0 + ay * math.sin(2 * math.pi * fy * t + 2.1),
    )


def occlusion_line(ellipse: Ellipse, fraction: float) -> float:
    """y level of an eyelid that hides ``fraction`` of the contour from above."""
    ys = ellipse.points(1024)[:, 1]
    return float(np.quantile(ys, fraction))


def render_eye_frame(
    rig: EyeSceneRig, t: float, ellipse: Ellipse | None = None
) -> tuple[GrayFrame, dict]:
    """Render one eye frame; returns the frame and its ground-truth record.

    Supersampled shading runs only inside the iris bounding box; outside it
    the image is flat sclera (or eyelid), which keeps rendering fast.
    """
    w, h = rig.eye_size
    index = int(round(t * rig.eye_fps))
    rng = np.random.default_rng([rig.seed, 0xE7E, index])
    if ellipse is None:
        cx, cy = _pupil_trajectory(rig, t)
        ellipse = Ellipse(center=(cx, cy), a=rig.pupil_axes[0], b=rig.pupil_axes[1],
                          theta=rig.pupil_theta)
    cx, cy = ellipse.center

    y_lid = occlusion_line(ellipse, rig.occlusion_fraction) if rig.occlusion_fraction > 0 else None

    glints = []
    for _ in range(rig.glint_count):
        ang = rng.uniform(0, 2 * math.pi)
        rad = rng.uniform(0.3, 0.9) * ellipse.a
        gr = rng.uniform(*rig.glint_radius)
        gx = cx + rad * math.cos(ang)
        gy = cy + rad * math.sin(ang)
        glints.append((gx, gy, gr))

    iris_r = 2.6 * ellipse.a
    ct, st = math.cos(ellipse.theta), math.sin(ellipse.theta)

    img = np.full((h, w), SCLERA_LEVEL, dtype=np.float64)
    if y_lid is not None:
        # outside the iris box the lid sits on flat sclera: mix per row
        rows = np.arange(h, dtype=np.float64)
        cover = sum((rows + oy < y_lid) for _, oy in _SS_OFFSETS[:2]) / 2.0
        img += cover[:, None] * (LID_LEVEL - SCLERA_LEVEL)

    x0 = max(0, int(cx - iris_r) - 2)
    x1 = min(w, int(cx + iris_r) + 3)
    y0 = max(0, int(cy - iris_r) - 2)
    y1 = min(h, int(cy + iris_r) + 3)
    if x1 > x0 and y1 > y0:
        cols = np.arange(x0, x1, dtype=np.float64)
        rows = np.arange(y0, y1, dtype=np.float64)
        acc = np.zeros((y1 - y0, x1 - x0), dtype=np.float64)
        for ox, oy in _SS_OFFSETS:
            X, Y = np.meshgrid(cols + ox, rows + oy)
            dx, dy = X - cx, Y - cy
            rho = np.hypot(dx, dy)
            val = np.full(X.shape, SCLERA_LEVEL)
            iris = rho <= iris_r
            val[iris] = IRIS_LEVEL_IN + (IRIS_LEVEL_OUT - IRIS_LEVEL_IN) * (rho[iris] / iris_r)
            u = ct * dx + st * dy
            v = -st * dx + ct * dy
            val[(u / ellipse.a) ** 2 + (v / ellipse.b) ** 2 <= 1.0] = PUPIL_LEVEL
            for gx, gy, gr in glints:
                val[(X - gx) ** 2 + (Y - gy) ** 2 <= gr * gr] = GLINT_LEVEL
            if y_lid is not None:
                val[Y < y_lid] = LID_LEVEL
            acc += val
        img[y0:y1, x0:x1] = acc / len(_SS_OFFSETS)

    if rig.pixel_noise_sd > 0.0:
        img = img + rng.normal(0.0, rig.pixel_noise_sd, img.shape)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    frame = GrayFrame(pixels=pixels, timestamp=float(t), stream_id=EYE_STREAM)
    boundary_y = ellipse.points(1024)[:, 1]
    visible = 1.0 if y_lid is None else float((boundary_y >= y_lid).mean())
    truth = {
        "ellipse": ellipse,
        "y_lid": y_lid,
        "visible_fraction": visible,
        "glints": glints,
    }
    return frame, truth


# --- scene rendering -------------------------------------------------------

CONCENTRIC_RADII = (1.0, 0.62, 0.3)  # ring boundary radii as fractions of R


def render_scene_frame(
    rig: EyeSceneRig,
    t: float,
    marker_center=None,
    marker_radius: float = 40.0,
    marker_kind: str = "collect",
    surface_quads=None,
) -> tuple[GrayFrame, dict]:
    """Render one scene frame with an optional concentric marker and fiducials.

    ``marker_center`` is in scene pixels; ``surface_quads`` is a list of
    (marker_id, quad corners TL,TR,BR,BL in scene pixels).
    """
    w, h = rig.scene_size
    index = int(round(t * rig.scene_fps))
    rng = np.random.default_rng([rig.seed, 0x5CE, index])

    quads = []
    for mid, quad in surface_quads or []:
        grid = marker_cell_grid(mid)
        quads.append((np.asarray(quad, dtype=np.float64), grid))

    def shade(X, Y):
        val = np.full(X.shape, SCENE_BG)
        for quad, grid in quads:
            _shade_fiducial(val, X, Y, quad, grid)
        if marker_center is not None:
            _shade_concentric(val, X, Y, marker_center, marker_radius, marker_kind)
        return val

    pixels = _supersample(w, h, shade, rng, rig.pixel_noise_sd)
    frame = GrayFrame(pixels=pixels, timestamp=float(t), stream_id=SCENE_STREAM)
    truth = {"marker_center": marker_center, "marker_kind": marker_kind}
    return frame, truth


def _shade_concentric(val, X, Y, center, radius, kind):
    rho = np.hypot(X - center[0], Y - center[1])
    val[rho <= 1.35 * radius] = CARD_LEVEL
    r_out, r_mid, r_core = (f * radius for f in CONCENTRIC_RADII)
    val[(rho <= r_out) & (rho > r_mid)] = RING_LEVEL
    core = CARD_LEVEL if kind == "stop" else RING_LEVEL
    val[rho <= r_core] = core


# --- fiducial marker family ------------------------------------------------
#
# 7x7 cells: solid black 1-cell border around a 5x5 payload.  Payload corner
# (0,0) is white and the other three corners black, which resolves rotation;
# 6 data bits + 1 even-parity bit live at fixed cells; the remaining cells
# carry a fixed checkerboard that the decoder validates.  Exactly 64 ids.

MARKER_CELLS = 7
_DATA_CELLS = ((0, 1), (0, 2), (0, 3), (1, 0), (2, 0), (3, 0))
_PARITY_CELL = (2, 2)
_CORNERS = {(0, 0): 1, (0, 4): 0, (4, 0): 0, (4, 4): 0}


def marker_payload(marker_id: int) -> np.ndarray:
    """5x5 payload cell values (1 = white) for a marker id in 0..63."""
    if not (0 <= marker_id < 64):
        raise ValueError("marker id must be in 0..63")
    cells = np.zeros((5, 5), dtype=np.uint8)
    for (r, c), v in _CORNERS.items():
        cells[r, c] = v
    bits = [(marker_id >> k) & 1 for k in range(6)]
    for (r, c), b in zip(_DATA_CELLS, bits):
        cells[r, c] = b
    cells[_PARITY_CELL] = sum(bits) % 2
    for r in range(5):
        for c in range(5):
            if (r, c) not in _CORNERS and (r, c) not in _DATA_CELLS and (r, c) != _PARITY_CELL:
                cells[r, c] = (r + c) % 2
    return cells


def decode_payload(cells: np.ndarray) -> int | None:
    """Inverse of marker_payload for an already-oriented 5x5 bit grid."""
    for (r, c), v in _CORNERS.items():
        if cells[r, c] != v:
            return None
    bits = [int(cells[r, c]) for r, c in _DATA_CELLS]
    if cells[_PARITY_CELL] != sum(bits) % 2:
        return None
    for r in range(5):
        for c in range(5):
            if (r, c) not in _CORNERS and (r, c) not in _DATA_CELLS and (r, c) != _PARITY_CELL:
                if cells[r, c] != (r + c) % 2:
                    return None
    return sum(b << k for k, b in enumerate(bits))


def marker_cell_grid(marker_id: int) -> np.ndarray:
    """Full 7x7 cell values including the black border."""
    grid = np.zeros((MARKER_CELLS, MARKER_CELLS), dtype=np.uint8)
    grid[1:6, 1:6] = marker_payload(marker_id)
    return grid


def _unit_square_homography(quad: np.ndarray) -> np.ndarray:
    """Exact homography mapping the unit square corners to quad TL,TR,BR,BL."""
    src = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    a = []
    for (u, v), (x, y) in zip(src, quad):
        a.append([u, v, 1, 0, 0, 0, -u * x, -v * x, -x])
        a.append([0, 0, 0, u, v, 1, -u * y, -v * y, -y])
    _, _, vt = np.linalg.svd(np.asarray(a))
    return vt[-1].reshape(3, 3)


def _shade_fiducial(val, X, Y, quad, grid):
    h_inv = np.linalg.inv(_unit_square_homography(quad))
    pad = 0.35  # white quiet zone in cell units
    xmin, xmax = quad[:, 0].min(), quad[:, 0].max()
    ymin, ymax = quad[:, 1].min(), quad[:, 1].max()
    margin = pad * max(xmax - xmin, ymax - ymin) / MARKER_CELLS + 2
    box = (X >= xmin - margin) & (X <= xmax + margin) & (Y >= ymin - margin) & (Y <= ymax + margin)
    if not box.any():
        return
    xs, ys = X[box], Y[box]
    den = h_inv[2, 0] * xs + h_inv[2, 1] * ys + h_inv[2, 2]
    u = (h_inv[0, 0] * xs + h_inv[0, 1] * ys + h_inv[0, 2]) / den
    v = (h_inv[1, 0] * xs + h_inv[1, 1] * ys + h_inv[1, 2]) / den
    out = val[box]
    quiet = pad / MARKER_CELLS
    inside_card = (u >= -quiet) & (u <= 1 + quiet) & (v >= -quiet) & (v <= 1 + quiet)
    out[inside_card] = CARD_LEVEL
    inside = (u >= 0) & (u < 1) & (v >= 0) & (v < 1)
    cc = np.clip((u[inside] * MARKER_CELLS).astype(int), 0, MARKER_CELLS - 1)
    rr = np.clip((v[inside] * MARKER_CELLS).astype(int), 0, MARKER_CELLS - 1)
    out[inside] = np.where(grid[rr, cc] > 0, 235.0, 25.0)
    val[box] = out


# --- benchmark dataset ------------------------------------------------------

BENCHMARK_TIERS = ("clean", "noisy", "occluded")

_TIER_SETTINGS = {
    "clean": {"pixel_noise_sd": 0.0, "glint_count": 0, "occlusion": (0.0, 0.0)},
    "noisy": {"pixel_noise_sd": 6.0, "glint_count": 2, "occlusion": (0.0, 0.0)},
    "occluded": {"pixel_noise_sd": 8.0, "glint_count": 2, "occlusion": (0.10, 0.35)},
}

TRUTH_HEADER = "frame,tier,cx,cy,a,b,theta,visible_fraction"


def benchmark_frame(rig: EyeSceneRig, index: int) -> tuple[GrayFrame, Ellipse, str, float]:
    """Render benchmark frame ``index``; tiers cycle clean/noisy/occluded.

    Returns (frame, truth ellipse, tier, visible contour fraction).
    """
    tier = BENCHMARK_TIERS[index % len(BENCHMARK_TIERS)]
    cfg = _TIER_SETTINGS[tier]
    rng = np.random.default_rng([rig.seed, 0xBEC, index])
    w, h = rig.eye_size
    a = rng.uniform(28.0, 60.0)
    b = a * rng.uniform(0.7, 1.0)
    margin = 2.8 * a
    center = (
        rng.uniform(margin, w - margin),
        rng.uniform(margin, h - margin),
    )
    ellipse = Ellipse(center=center, a=a, b=b, theta=rng.uniform(0.0, math.pi))
    occ_lo, occ_hi = cfg["occlusion"]
    frame_rig = dataclasses.replace(
        rig,
        pixel_noise_sd=cfg["pixel_noise_sd"],
        glint_count=cfg["glint_count"],
        occlusion_fraction=rng.uniform(occ_lo, occ_hi) if occ_hi > 0 else 0.0,
    )
    frame, truth = render_eye_frame(frame_rig, index / rig.eye_fps, ellipse=ellipse)
    return frame, ellipse, tier, truth["visible_fraction"]


def generate_benchmark(rig: EyeSceneRig, n: int, out_dir) -> dict:
    """Write an n-frame tiered benchmark: frames/, truth.csv, rig.json."""
    if n < 1:
        raise ValueError("need at least one frame")
    frames_dir = os.path.join(out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    rows = []
    for i in range(n):
        frame, ellipse, tier, visible = benchmark_frame(rig, i)
        write_pgm(os.path.join(frames_dir, f"{i:06d}.pgm"), frame.pixels)
        rows.append(
            f"{i},{tier},{ellipse.center[0]:.6f},{ellipse.center[1]:.6f},"
            f"{ellipse.a:.6f},{ellipse.b:.6f},{ellipse.theta:.8f},{visible:.4f}"
        )
    with open(os.path.join(out_dir, "truth.csv"), "w", newline="") as f:
        f.write(TRUTH_HEADER + "\n")
        f.write("\n".join(rows) + "\n")
    manifest = {"n_frames": n, "tiers": list(BENCHMARK_TIERS), "rig": rig.to_json()}
    with open(os.path.join(out_dir, "rig.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest


def load_benchmark(dataset_dir):
    """Yield (index, tier, GrayFrame, truth Ellipse) from a dataset directory."""
    from .pgm import read_pgm

    with open(os.path.join(dataset_dir, "rig.json")) as f:
        manifest = json.load(f)
    rig = EyeSceneRig.from_json(manifest["rig"])
    with open(os.path.join(dataset_dir, "truth.csv")) as f:
        header = f.readline().strip()
        if header != TRUTH_HEADER:
            raise ValueError(f"unexpected truth.csv header {header!r}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            i = int(parts[0])
            tier = parts[1]
            cx, cy, a, b, theta = (float(v) for v in parts[2:7])
            pixels = read_pgm(os.path.join(dataset_dir, "frames", f"{i:06d}.pgm"))
            frame = GrayFrame(pixels=pixels, timestamp=i / rig.eye_fps, stream_id=EYE_STREAM)
            yield i, tier, frame, Ellipse(center=(cx, cy), a=a, b=b, theta=theta)


# --- session simulation -----------------------------------------------------


@dataclass(frozen=True)
class SessionProtocol:
    """Timing script of the calibration-plus-accuracy-test procedure.

    Nine calibration sites on a 3x3 grid; the test phase visits 10 random
    sites and then revisits the 9 calibration sites.  The subject's eye
    lands on a new target a fixed saccade lag after marker onset.
    """

    cal_grid: tuple[float, float, float] = (0.2, 0.5, 0.8)
    cal_dwell: float = 1.0
    test_random_sites: int = 10
    test_dwell: float = 1.5
    phase_gap: float = 0.5
    saccade_lag: float = 0.08

    def cal_sites(self) -> list[tuple[float, float]]:
        return [(x, y) for y in self.cal_grid for x in self.cal_grid]


@dataclass(frozen=True)
class ScheduleEntry:
    phase: str  # "calibrate" | "test"
    site: int
    onset: float
    dwell: float
    pos: tuple[float, float]  # scene-normalized target


@dataclass
class SessionData:
    """Simulated timestamped streams of one recording session."""

    rig: EyeSceneRig
    protocol: SessionProtocol
    pupils: list  # list[PupilDatum]
    cal_markers: list  # list[MarkerObservation]
    test_markers: list  # list[MarkerObservation]
    schedule: list[ScheduleEntry]


def build_schedule(rig: EyeSceneRig, protocol: SessionProtocol) -> list[ScheduleEntry]:
    rng = np.random.default_rng([rig.seed, 0x5E5])
    entries = []
    t = 0.0
    for k, pos in enumerate(protocol.cal_sites()):
        entries.append(ScheduleEntry("calibrate", k, t, protocol.cal_dwell, pos))
        t += protocol.cal_dwell
    t += protocol.phase_gap
    test_sites = [
        (float(rng.uniform(0.25, 0.75)), float(rng.uniform(0.25, 0.75)))
        for _ in range(protocol.test_random_sites)
    ]
    test_sites.extend(protocol.cal_sites())
    for k, pos in enumerate(test_sites):
        entries.append(ScheduleEntry("test", k, t, protocol.test_dwell, pos))
        t += protocol.test_dwell
    return entries


def _entry_at(schedule: list[ScheduleEntry], t: float) -> ScheduleEntry | None:
    current = None
    for e in schedule:
        if t >= e.onset:
            current = e
        else:
            break
    if current is not None and t < current.onset + current.dwell:
        return current
    return None


def _blink_intervals(rig: EyeSceneRig, duration: float) -> list[tuple[float, float]]:
    if rig.blink_rate_hz <= 0:
        return []
    rng = np.random.default_rng([rig.seed, 0xB11])
    out = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rig.blink_rate_hz)
        if t >= duration:
            return out
        d = rng.uniform(*rig.blink_duration)
        out.append((t, min(t + d, duration)))


def simulate_session(rig: EyeSceneRig, protocol: SessionProtocol | None = None) -> SessionData:
    """Simulate the 9-point calibration plus accuracy-test protocol.

    Produces timestamped pupil and scene-marker streams; pupil positions
    follow the ground-truth transfer map inverted at each target, with the
    rig's bias / jitter / drift / blink noise applied.
    """
    from .core import PupilDatum  # local to avoid cycle at import time

    protocol = protocol or SessionProtocol()
    schedule = build_schedule(rig, protocol)
    tmap = rig.truth_map()
    duration = schedule[-1].onset + schedule[-1].dwell
    ew, eh = rig.eye_size
    rng = np.random.default_rng([rig.seed, 0x5A5])

    # fixation bias per schedule entry (headset slip / fixation error)
    biases = {}
    for e in schedule:
        biases[(e.phase, e.site)] = rng.normal(0.0, rig.pupil_noise_px, 2) if rig.pupil_noise_px > 0 else np.zeros(2)
    drift_dir = rng.normal(0.0, 1.0, 2)
    drift_dir /= np.hypot(*drift_dir) or 1.0
    blinks = _blink_intervals(rig, duration)
    stamp_rng = np.random.default_rng([rig.seed, 0x57A])

    pupils = []
    n_eye = int(duration * rig.eye_fps)
    nominal_a, nominal_b = rig.pupil_axes
    for i in range(n_eye):
        t = i / rig.eye_fps
        entry = _entry_at(schedule, max(0.0, t - protocol.saccade_lag))
        if entry is None:
            continue
        p = np.array(tmap.invert(entry.pos))
        noise_px = biases[(entry.phase, entry.site)].copy()
        if rig.sample_jitter_px > 0:
            noise_px += rng.normal(0.0, rig.sample_jitter_px, 2)
        noise_px += drift_dir * rig.drift_px_per_s * t
        p += noise_px / np.array([ew, eh])
        conf = 1.0
        for b0, b1 in blinks:
            if b0 <= t < b1:
                conf = 0.0
                break
        ts = stamp(t, rig.eye_clock, stamp_rng)
        pupils.append(
            PupilDatum(
                ellipse=Ellipse(center=(p[0] * ew, p[1] * eh), a=nominal_a, b=nominal_b, theta=0.0),
                norm_pos=(float(p[0]), float(p[1])),
                confidence=conf,
                timestamp=ts,
            )
        )

    from .gazemap import MarkerObservation

    cal_markers = []
    test_markers = []
    n_scene = int(duration * rig.scene_fps)
    scene_phase = 0.007  # free-running offset between the two cameras
    for j in range(n_scene):
        t = j / rig.scene_fps + scene_phase
        entry = _entry_at(schedule, t)
        if entry is None:
            continue
        pos = np.array(entry.pos)
        if rig.marker_noise_px > 0:
            pos = pos + rng.normal(0.0, rig.marker_noise_px, 2) / np.array(rig.scene_size)
        obs = MarkerObservation(
            timestamp=stamp(t, rig.scene_clock, stamp_rng),
            pos=(float(pos[0]), float(pos[1])),
            site=entry.site,
            since_onset=t - entry.onset,
        )
        (cal_markers if entry.phase == "calibrate" else test_markers).append(obs)

    return SessionData(
        rig=rig,
        protocol=protocol,
        pupils=pupils,
        cal_markers=cal_markers,
        test_markers=test_markers,
        schedule=schedule,
    )


def save_session(session: SessionData, out_dir) -> None:
    """Persist a session as pupil.csv, markers.csv, rig.json, protocol.json."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "pupil.csv"), "w", newline="") as f:
        f.write("timestamp,x,y,confidence\n")
        for p in session.pupils:
            f.write(f"{p.timestamp:.9f},{p.norm_pos[0]:.9f},{p.norm_pos[1]:.9f},{p.confidence:.6g}\n")
    with open(os.path.join(out_dir, "markers.csv"), "w", newline="") as f:
        f.write("phase,timestamp,x,y,site,since_onset\n")
        for phase, markers in (("calibrate", session.cal_markers), ("test", session.test_markers)):
            for m in markers:
                f.write(
                    f"{phase},{m.timestamp:.9f},{m.pos[0]:.9f},{m.pos[1]:.9f},{m.site},{m.since_onset:.9f}\n"
                )
    with open(os.path.join(out_dir, "rig.json"), "w") as f:
        json.dump(session.rig.to_json(), f, indent=2)
    with open(os.path.join(out_dir, "protocol.json"), "w") as f:
        json.dump(dataclasses.asdict(session.protocol), f, indent=2)


def load_session(session_dir) -> SessionData:
    from .core import PupilDatum
    from .gazemap import MarkerObservation

    with open(os.path.join(session_dir, "rig.json")) as f:
        rig = EyeSceneRig.from_json(json.load(f))
    with open(os.path.join(session_dir, "protocol.json")) as f:
        d = json.load(f)
        d["cal_grid"] = tuple(d["cal_grid"])
        protocol = SessionProtocol(**d)
    nominal_a, nominal_b = rig.pupil_axes
    ew, eh = rig.eye_size
    pupils = []
    with open(os.path.join(session_dir, "pupil.csv")) as f:
        f.readline()
        for line in f:
            ts, x, y, conf = line.strip().split(",")
            x, y = float(x), float(y)
            pupils.append(
                PupilDatum(
                    ellipse=Ellipse(center=(x * ew, y * eh), a=nominal_a, b=nominal_b, theta=0.0),
                    norm_pos=(x, y),
                    confidence=float(conf),
                    timestamp=float(ts),
                )
            )
    cal_markers, test_markers = [], []
    with open(os.path.join(session_dir, "markers.csv")) as f:
        f.readline()
        for line in f:
            phase, ts, x, y, site, since = line.strip().split(",")
            obs = MarkerObservation(
                timestamp=float(ts),
                pos=(float(x), float(y)),
                site=int(site),
                since_onset=float(since),
            )
            (cal_markers if phase == "calibrate" else test_markers).append(obs)
    return SessionData(
        rig=rig,
        protocol=protocol,
        pupils=pupils,
        cal_markers=cal_markers,
        test_markers=test_markers,
        schedule=build_schedule(rig, protocol),
    )
