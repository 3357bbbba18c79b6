"""Ellipse fitting and ellipse geometry.

The fit is the direct least-squares conic fit constrained to produce an
ellipse, in the numerically stable split-matrix formulation, with an
isotropic pre-normalization of the input points for conditioning.
"""

from __future__ import annotations

import math

import numpy as np

from ..core import Ellipse

# minimum point count for the conic system to be determined
MIN_FIT_POINTS = 5


def fit_ellipse(points) -> Ellipse:
    """Fit an ellipse to 2-D points by direct least squares.

    Raises ValueError("underdetermined") for fewer than 5 points or for
    degenerate configurations (collinear points, non-elliptical solutions).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < MIN_FIT_POINTS:
        raise ValueError("underdetermined")

    # normalize for conditioning: center at the mean, scale to unit RMS radius
    mean = pts.mean(axis=0)
    shifted = pts - mean
    scale = math.sqrt((shifted**2).sum(axis=1).mean())
    if not (scale > 0 and np.isfinite(scale)):
        raise ValueError("underdetermined")
    x = shifted[:, 0] / scale
    y = shifted[:, 1] / scale

    d1 = np.column_stack((x * x, x * y, y * y))
    d2 = np.column_stack((x, y, np.ones_like(x)))
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError:
        raise ValueError("underdetermined") from None
    m = s1 + s2 @ t
    # apply the inverse ellipse-constraint matrix [[0,0,2],[0,-1,0],[2,0,0]]^-1
    m = np.array([m[2] / 2.0, -m[1], m[0] / 2.0])

    eigval, eigvec = np.linalg.eig(m)
    # the ellipse solution is the eigenvector with 4ac - b^2 > 0
    vec = np.real(eigvec)
    cond = 4.0 * vec[0] * vec[2] - vec[1] ** 2
    valid = np.where((np.abs(np.imag(eigval)) < 1e-9) & (cond > 0))[0]
    if valid.size == 0:
        raise ValueError("underdetermined")
    a1 = vec[:, valid[0]]
    conic_norm = np.concatenate((a1, t @ a1))

    # undo the normalization: Q = N^T Q' N with N mapping original -> normalized
    q = _conic_matrix(conic_norm)
    n = np.array(
        [
            [1.0 / scale, 0.0, -mean[0] / scale],
            [0.0, 1.0 / scale, -mean[1] / scale],
            [0.0, 0.0, 1.0],
        ]
    )
    q = n.T @ q @ n
    conic = np.array([q[0, 0], 2 * q[0, 1], q[1, 1], 2 * q[0, 2], 2 * q[1, 2], q[2, 2]])
    return ellipse_from_conic(conic)


def _conic_matrix(c) -> np.ndarray:
    a, b, cc, d, e, f = c
    return np.array(
        [
            [a, b / 2.0, d / 2.0],
            [b / 2.0, cc, e / 2.0],
            [d / 2.0, e / 2.0, f],
        ]
    )


def ellipse_from_conic(conic) -> Ellipse:
    """Convert conic coefficients [a,b,c,d,e,f] to geometric parameters."""
    q = _conic_matrix(conic)
    a33 = q[:2, :2]
    det33 = np.linalg.det(a33)
    if det33 <= 0:
        raise ValueError("underdetermined")
    center = np.linalg.solve(a33, -q[:2, 2])
    mu = -np.linalg.det(q) / det33
    lam, vec = np.linalg.eigh(a33)  # ascending eigenvalues
    if mu <= 0:
        # conic signs flipped: the same point set satisfies -Q
        lam, mu = -lam[::-1], -mu
        vec = vec[:, ::-1]
    if lam[0] <= 0 or not np.isfinite(mu):
        raise ValueError("underdetermined")
    major = math.sqrt(mu / lam[0])
    minor = math.sqrt(mu / lam[1])
    theta = math.atan2(vec[1, 0], vec[0, 0])
    return Ellipse(center=(float(center[0]), float(center[1])), a=major, b=minor, theta=theta)


def circumference(e: Ellipse) -> float:
    """Ellipse perimeter by the second Ramanujan approximation."""
    if not (e.a >= e.b > 0):
        raise ValueError("ellipse axes must be positive")
    h = ((e.a - e.b) / (e.a + e.b)) ** 2
    return math.pi * (e.a + e.b) * (1.0 + 3.0 * h / (10.0 + math.sqrt(4.0 - 3.0 * h)))


def ellipse_distances(e: Ellipse, points) -> np.ndarray:
    """Approximate shortest distance from each point to the ellipse contour.

    Starts from the classic scaled-angle parameter estimate and refines with
    a few Newton steps on the squared-distance objective; exact for circles
    and accurate to well under 0.01 px for the aspect ratios the detector
    accepts.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    ct, st = math.cos(e.theta), math.sin(e.theta)
    dx = pts[:, 0] - e.center[0]
    dy = pts[:, 1] - e.center[1]
    ux = ct * dx + st * dy
    uy = -st * dx + ct * dy

    t = np.arctan2(e.a * uy, e.b * ux)
    a2_b2 = e.b**2 - e.a**2
    for _ in range(4):
        s, c = np.sin(t), np.cos(t)
        g1 = a2_b2 * s * c + e.a * ux * s - e.b * uy * c
        g2 = a2_b2 * (c * c - s * s) + e.a * ux * c + e.b * uy * s
        step = np.where(np.abs(g2) > 1e-12, g1 / np.where(g2 == 0, 1.0, g2), 0.0)
        t = t - np.clip(step, -0.5, 0.5)
    s, c = np.sin(t), np.cos(t)
    return np.hypot(e.a * c - ux, e.b * s - uy)


def fit_residual_rms(e: Ellipse, points) -> float:
    """RMS of per-point contour distances."""
    d = ellipse_distances(e, points)
    return float(np.sqrt((d**2).mean()))
