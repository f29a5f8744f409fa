"""Linear pose prior: a frozen PCA decoder over plausible poses.

The fitter drives a 32-dimensional latent phi in (-1, 1) through an affine
decoder theta = mu + A (c * phi), where A holds orthonormal principal
directions of a MoCap pose set (axis-angle space) and c scales each latent
unit to 2.5 standard deviations. Keeping the decoder affine makes the pose
manifold a bounded slab around the mean pose.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData

LATENT_DIM = 32
SCALE_SIGMAS = 2.5
MIN_POSES = 64


@dataclass
class PosePrior:
    mean: np.ndarray  # (3J,)
    basis: np.ndarray  # (3J, 32), orthonormal columns (zero-padded past rank)
    scale: np.ndarray  # (32,) nonnegative

    @property
    def pose_dim(self):
        return self.mean.shape[0]

    def decode(self, phi):
        phi = np.asarray(phi, dtype=float)
        return self.mean + self.basis @ (self.scale * phi)

    def decode_vjp(self, grad_theta):
        return self.scale * (self.basis.T @ grad_theta)

    def encode(self, theta):
        """Latent whose decode is the projection of theta onto the pose slab."""
        coeff = self.basis.T @ (np.asarray(theta, dtype=float) - self.mean)
        phi = np.zeros(LATENT_DIM)
        live = self.scale > 0
        phi[live] = coeff[live] / self.scale[live]
        return np.clip(phi, -1.0, 1.0)


def fit_prior(poses):
    """PCA a (M, 3J) pose set into a PosePrior; requires M >= 64 samples."""
    poses = np.asarray(poses, dtype=float)
    if poses.ndim != 2:
        raise ValueError("poses must be (M, 3J)")
    M, dim = poses.shape
    if M < MIN_POSES:
        raise InsufficientData(f"need at least {MIN_POSES} poses, got {M}")
    if dim < LATENT_DIM:
        raise InsufficientData(f"pose dimension {dim} smaller than latent {LATENT_DIM}")
    mean = poses.mean(axis=0)
    centered = poses - mean
    _, sing, vt = np.linalg.svd(centered, full_matrices=False)
    n_comp = min(LATENT_DIM, vt.shape[0])
    basis = np.zeros((dim, LATENT_DIM))
    basis[:, :n_comp] = vt[:n_comp].T
    std = np.zeros(LATENT_DIM)
    std[:n_comp] = sing[:n_comp] / np.sqrt(M - 1)
    return PosePrior(mean=mean, basis=basis, scale=SCALE_SIGMAS * std)


def save_mocap_json(poses, path):
    with open(path, "w") as fh:
        json.dump(np.asarray(poses, dtype=float).tolist(), fh)
        fh.write("\n")


def load_mocap_json(path):
    with open(path) as fh:
        data = json.load(fh)
    poses = np.asarray(data, dtype=float)
    if poses.ndim != 2:
        raise ValueError(f"{path}: expected a JSON array of pose vectors")
    return poses
