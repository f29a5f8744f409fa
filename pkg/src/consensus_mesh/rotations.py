"""Axis-angle rotations with closed-form Jacobians."""

import math

import numpy as np

# Below this angle the closed-form sin/cos ratios cancel catastrophically,
# so value and Jacobian switch to second-order series.
SMALL_ANGLE = 1e-4

_EYE3 = np.eye(3)
# Skew generators d[w]_x / dw_c, c = 0, 1, 2.
_GEN = np.array(
    [
        [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
        [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    ]
)


def skew(w):
    """Cross-product matrix [w]_x."""
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def _sin_cos_ratios(u):
    """a = sin(t)/t and b = (1-cos(t))/t^2 as functions of u = t^2."""
    if u < SMALL_ANGLE * SMALL_ANGLE:
        a = 1.0 - u / 6.0 + u * u / 120.0
        b = 0.5 - u / 24.0 + u * u / 720.0
    else:
        t = math.sqrt(u)
        a = math.sin(t) / t
        b = (1.0 - math.cos(t)) / u
    return a, b


def rodrigues(omega):
    """Rotation matrix for an axis-angle 3-vector (total function)."""
    omega = np.asarray(omega, dtype=float)
    u = float(omega @ omega)
    a, b = _sin_cos_ratios(u)
    wx = skew(omega)
    return _EYE3 + a * wx + b * (wx @ wx)


def rodrigues_with_jacobian(omega):
    """Rotation matrix and its derivative w.r.t. the axis-angle input.

    Returns (R, dR) with dR of shape (3, 3, 3) where dR[:, :, c] is the
    derivative of R w.r.t. omega[c]. Smooth everywhere, including omega = 0.
    """
    omega = np.asarray(omega, dtype=float)
    u = float(omega @ omega)
    a, b = _sin_cos_ratios(u)
    if u < SMALL_ANGLE * SMALL_ANGLE:
        da = -1.0 / 6.0 + u / 60.0  # d a / d u
        db = -1.0 / 24.0 + u / 360.0  # d b / d u
    else:
        t = math.sqrt(u)
        da = (math.cos(t) - a) / (2.0 * u)
        db = (0.5 * a - b) / u
    wx = skew(omega)
    wx2 = wx @ wx
    R = _EYE3 + a * wx + b * wx2
    dR = np.empty((3, 3, 3))
    for c in range(3):
        g = _GEN[c]
        du = 2.0 * omega[c]
        dR[:, :, c] = (da * du) * wx + a * g + (db * du) * wx2 + b * (g @ wx + wx @ g)
    return R, dR


def canonicalize_axis_angle(theta):
    """Wrap per-joint axis-angle blocks so every rotation angle is <= pi.

    theta is a flat (3J,) vector; equivalent rotations with angle > pi are
    re-expressed by flipping the axis and reducing the angle modulo 2*pi.
    """
    theta = np.asarray(theta, dtype=float).copy()
    blocks = theta.reshape(-1, 3)
    for w in blocks:
        angle = float(np.linalg.norm(w))
        if angle <= math.pi or angle == 0.0:
            continue
        wrapped = math.fmod(angle, 2.0 * math.pi)
        if wrapped > math.pi:
            wrapped -= 2.0 * math.pi
        w *= wrapped / angle
    return blocks.reshape(-1)
