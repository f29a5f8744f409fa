"""Weak-perspective camera.

The camera looks along +Z, so smaller depth means closer. Image coordinates
have their origin at the image center, x right, y down, and 1 unit equals
half the image height, which keeps parameters resolution independent.
"""

from dataclasses import dataclass

import numpy as np

from .rotations import rodrigues, rodrigues_with_jacobian


@dataclass
class CameraParams:
    """Global rotation (axis-angle), 2D translation (image units), scale."""

    rot: np.ndarray
    t: np.ndarray
    s: float

    def __post_init__(self):
        self.rot = np.asarray(self.rot, dtype=float).reshape(3)
        self.t = np.asarray(self.t, dtype=float).reshape(2)
        self.s = float(self.s)
        if not (self.s > 0 and np.isfinite(self.s)):
            raise ValueError("camera scale must be positive and finite")

    def to_dict(self):
        return {"rot": self.rot.tolist(), "t": self.t.tolist(), "s": self.s}

    @classmethod
    def from_dict(cls, d):
        return cls(rot=d["rot"], t=d["t"], s=d["s"])


def project(cam, V):
    """Project (K, 3) world points; returns (v, Z, P).

    v = s * (RV)_{xy} + t are image coordinates, Z = (RV)_z are camera-space
    depths, P = RV the full camera-space points.
    """
    v, Z, P, _ = project_with_aux(cam, V)
    return v, Z, P


def project_with_aux(cam, V):
    V = np.asarray(V, dtype=float)
    R, dR = rodrigues_with_jacobian(cam.rot)
    P = V @ R.T
    v = cam.s * P[:, :2] + cam.t
    Z = P[:, 2]
    aux = (V, R, dR, P, cam.s)
    return v, Z, P, aux


def project_vjp(aux, grad_v=None, grad_Z=None):
    """Adjoint of project: gradients of (v, Z) back to (V, rot, t, s)."""
    V, R, dR, P, s = aux
    gP = np.zeros_like(P)
    grad_t = np.zeros(2)
    grad_s = 0.0
    if grad_v is not None:
        gP[:, :2] += s * grad_v
        grad_t = grad_v.sum(axis=0)
        grad_s = float(np.sum(grad_v * P[:, :2]))
    if grad_Z is not None:
        gP[:, 2] += grad_Z
    grad_V = gP @ R
    grad_rot = np.einsum("ka,abc,kb->c", gP, dR, V)
    return grad_V, grad_rot, grad_t, grad_s


def camera_normals(cam, n_world):
    """Per-vertex camera-facing score N = -(R n)_z; positive faces the camera."""
    N, _ = camera_normals_with_aux(cam, n_world)
    return N


def camera_normals_with_aux(cam, n_world):
    n_world = np.asarray(n_world, dtype=float)
    R, dR = rodrigues_with_jacobian(cam.rot)
    N = -(n_world @ R[2])
    return N, (n_world, R, dR)


def camera_normals_vjp(aux, grad_N):
    n_world, R, dR = aux
    grad_nw = -np.outer(grad_N, R[2])
    grad_rot = -np.einsum("k,bc,kb->c", grad_N, dR[2], n_world)
    return grad_nw, grad_rot


def look_at_front():
    """Camera preset that shows an upright, front-facing body.

    The body template is modeled head toward +y with the face toward -z;
    rotating pi about z maps +y to image-up while the -z side still faces
    the +Z-looking camera.
    """
    return np.array([0.0, 0.0, np.pi])


def apply_rotation(rot, X):
    """Rotate points by the camera rotation only (no projection)."""
    return np.asarray(X, dtype=float) @ rodrigues(rot).T
