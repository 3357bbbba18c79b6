"""Edge chaining into contours and curvature-continuity splitting."""

from __future__ import annotations

import math

import numpy as np

# 8-neighborhood in (dx, dy) scan order used for deterministic tie-breaks
_N8 = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))
_N8_UNIT = tuple((dx / math.hypot(dx, dy), dy / math.hypot(dx, dy)) for dx, dy in _N8)

# turn angles are measured between chords spanning this many chain steps
CHORD_STEPS = 4


def extract_contours(edges: np.ndarray) -> list[np.ndarray]:
    """Chain edge pixels into ordered 8-connected contours.

    Every non-isolated edge pixel lands in exactly one contour; isolated
    single pixels are dropped.  Points are pixel centers (col+0.5, row+0.5)
    as float arrays of shape (n, 2).
    """
    edges = np.asarray(edges, dtype=bool)
    h, w = edges.shape
    ys, xs = np.nonzero(edges)
    if ys.size == 0:
        return []

    visited = np.zeros_like(edges)
    degree = np.zeros(edges.shape, dtype=np.int8)
    padded = np.pad(edges, 1)
    for dx, dy in _N8:
        degree += padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]

    def walk(sy: int, sx: int) -> list[tuple[int, int]]:
        chain = [(sx, sy)]
        visited[sy, sx] = True
        cx, cy = sx, sy
        prev = None
        while True:
            best = None
            best_score = -2.0
            for k, (dx, dy) in enumerate(_N8):
                nx, ny = cx + dx, cy + dy
                if 0 <= nx < w and 0 <= ny < h and edges[ny, nx] and not visited[ny, nx]:
                    if prev is None:
                        best = (nx, ny, k)
                        break
                    ux, uy = _N8_UNIT[k]
                    score = prev[0] * ux + prev[1] * uy
                    if score > best_score:
                        best_score = score
                        best = (nx, ny, k)
            if best is None:
                return chain
            nx, ny, k = best
            visited[ny, nx] = True
            chain.append((nx, ny))
            prev = _N8_UNIT[k]
            cx, cy = nx, ny

    chains: list[list[tuple[int, int]]] = []
    order = np.lexsort((xs, ys))
    endpoints = [(ys[i], xs[i]) for i in order if degree[ys[i], xs[i]] == 1]
    for sy, sx in endpoints:
        if not visited[sy, sx]:
            chains.append(walk(sy, sx))
    for i in order:  # remaining pixels belong to loops or junction remnants
        sy, sx = ys[i], xs[i]
        if not visited[sy, sx]:
            chains.append(walk(sy, sx))

    out = []
    for chain in chains:
        if len(chain) >= 2:
            out.append(np.asarray(chain, dtype=np.float64) + 0.5)
    return out


def turn_angles(points: np.ndarray, steps: int = CHORD_STEPS) -> np.ndarray:
    """Absolute turn angle (radians) between successive chords at each point.

    Defined for interior indices [steps, n-steps); zero-length output for
    short contours.
    """
    n = len(points)
    if n < 2 * steps + 1:
        return np.empty(0)
    v1 = points[steps:-steps] - points[: -2 * steps]
    v2 = points[2 * steps :] - points[steps:-steps]
    cross = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    dot = (v1 * v2).sum(axis=1)
    return np.abs(np.arctan2(cross, dot))


def split_contours(contours, max_turn_deg: float = 60.0) -> list[np.ndarray]:
    """Split contours at curvature discontinuities.

    Recursively removes the worst-turning point until no interior point
    turns by more than the threshold between successive chords.
    """
    limit = math.radians(max_turn_deg)
    out: list[np.ndarray] = []
    stack = [np.asarray(c, dtype=np.float64) for c in reversed(list(contours))]
    while stack:
        pts = stack.pop()
        if len(pts) < 2:
            continue
        angles = turn_angles(pts)
        if angles.size == 0 or angles.max() <= limit:
            out.append(pts)
            continue
        cut = CHORD_STEPS + int(np.argmax(angles))
        stack.append(pts[cut + 1 :])
        stack.append(pts[:cut])
    return out
