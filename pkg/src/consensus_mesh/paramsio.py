"""Pose/shape/camera parameter JSON files.

Single-image schema: {"theta": [3J], "beta": [10], "camera": {"rot": [3],
"t": [2], "s": float}} with an optional "phi" latent and optional "losses"
metadata. All numbers are written at full double precision.
"""

import json

import numpy as np

from .camera import CameraParams
from .errors import ModelFormatError


def save_params_json(path, theta, beta, camera, phi=None, losses=None):
    doc = {
        "theta": np.asarray(theta, dtype=float).tolist(),
        "beta": np.asarray(beta, dtype=float).tolist(),
        "camera": camera.to_dict(),
    }
    if phi is not None:
        doc["phi"] = np.asarray(phi, dtype=float).tolist()
    if losses is not None:
        doc["losses"] = {k: float(v) for k, v in losses.items()}
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_params_json(path):
    """Returns dict with theta, beta, CameraParams, and optional phi."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    try:
        out = {
            "theta": np.asarray(doc["theta"], dtype=float),
            "beta": np.asarray(doc["beta"], dtype=float),
            "camera": CameraParams.from_dict(doc["camera"]),
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
    if "phi" in doc:
        out["phi"] = np.asarray(doc["phi"], dtype=float)
    return out


def save_skeleton_json(path, joints):
    with open(path, "w") as fh:
        json.dump({"joints": np.asarray(joints, dtype=float).tolist()}, fh)
        fh.write("\n")


def load_skeleton_json(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    try:
        joints = np.asarray(doc["joints"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
    if joints.ndim != 2 or joints.shape[1] != 3:
        raise ModelFormatError(f"{path}: joints must be (J, 3)")
    return joints
