"""Pose and segmentation evaluation: MPJPE, PA-MPJPE, accuracy/F1."""

import numpy as np

from .errors import DegenerateConfiguration, ResolutionMismatch


def mpjpe(pred, gt):
    """Mean per-joint position error after root (joint 0) translation alignment."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    p = pred - pred[0]
    g = gt - gt[0]
    return float(np.mean(np.linalg.norm(p - g, axis=1)))


def procrustes_align(pred, gt):
    """Best-fit similarity transform (scale, rotation, translation).

    Returns (scale, R, t, aligned) minimizing ||s R pred + t - gt||_F over
    similarity transforms, with R a proper rotation.
    """
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.shape[0] < 3:
        raise DegenerateConfiguration("need matching point sets with >= 3 points")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    Pc = pred - mu_p
    Gc = gt - mu_g
    for X in (Pc, Gc):
        sv = np.linalg.svd(X, compute_uv=False)
        if sv[1] <= 1e-12 * max(sv[0], 1e-300):
            raise DegenerateConfiguration("points are (nearly) collinear")
    H = Pc.T @ Gc
    U, S, Vt = np.linalg.svd(H)
    V = Vt.T
    d = np.sign(np.linalg.det(V @ U.T))
    D = np.diag([1.0, 1.0, d])
    R = V @ D @ U.T
    denom = float(np.sum(Pc * Pc))
    scale = float(np.trace(np.diag(S) @ D)) / denom
    t = mu_g - scale * (R @ mu_p)
    aligned = scale * pred @ R.T + t
    return scale, R, t, aligned


def pa_mpjpe(pred, gt):
    """Mean joint distance after Procrustes alignment of pred onto gt."""
    _, _, _, aligned = procrustes_align(pred, gt)
    gt = np.asarray(gt, dtype=float)
    return float(np.mean(np.linalg.norm(aligned - gt, axis=1)))


def seg_metrics(pred_labels, gt_labels, n_parts):
    """Pixel accuracy and per-class / macro F1 for label maps 0..n_parts.

    Classes absent from both maps score F1 = 1; absent from exactly one
    score 0. Macro F1 averages classes 0..n_parts (background included).
    """
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise ResolutionMismatch(f"label map shapes differ: {pred.shape} vs {gt.shape}")
    accuracy = float(np.mean(pred == gt))
    per_class = []
    for cls in range(n_parts + 1):
        p = pred == cls
        g = gt == cls
        tp = float(np.sum(p & g))
        fp = float(np.sum(p & ~g))
        fn = float(np.sum(~p & g))
        if not p.any() and not g.any():
            per_class.append(1.0)
        elif not p.any() or not g.any():
            per_class.append(0.0)
        else:
            per_class.append(2.0 * tp / (2.0 * tp + fp + fn))
    return {
        "accuracy": accuracy,
        "macro_f1": float(np.mean(per_class)),
        "per_class_f1": per_class,
    }
