"""Consensus and regularization losses.

Every norm-style loss is realized as a mean of squared element differences,
which keeps magnitudes comparable across vertex counts and feature widths;
the two shape losses use mean absolute difference. Each function returns its
value together with the gradients the fitter needs.
"""

import numpy as np

from .errors import NoCommonParts, ResolutionMismatch


def loss_color_consistency(mesh_a, mesh_b, W_a, W_b, lam=1.0):
    """Full and co-visible vertex color consistency between two images.

    Returns (total, components, grads). The total is L_C + lam * L_Ct where
    L_C compares final (symmetry-propagated) colors and L_Ct compares
    intermediate colors masked by the co-visibility W_a * W_b.
    """
    Ca, Cb = mesh_a.colors, mesh_b.colors
    n = Ca.size
    dC = Ca - Cb
    L_C = float(np.sum(dC * dC) / n)
    g = 2.0 / n * dC
    grad_C_a, grad_C_b = g, -g

    m = np.asarray(W_a, dtype=float) * np.asarray(W_b, dtype=float)
    dCt = mesh_a.c_tilde - mesh_b.c_tilde
    wd = m[:, None] * dCt
    L_Ct = float(np.sum(wd * wd) / n)
    gt = 2.0 / n * (m * m)[:, None] * dCt
    grad_ct_a = lam * gt
    grad_ct_b = -lam * gt
    gw_common = 2.0 / n * m * np.sum(dCt * dCt, axis=1)
    grad_W_a = lam * gw_common * W_b
    grad_W_b = lam * gw_common * W_a

    total = L_C + lam * L_Ct
    grads = {
        "C_a": grad_C_a,
        "C_b": grad_C_b,
        "ct_a": grad_ct_a,
        "ct_b": grad_ct_b,
        "W_a": grad_W_a,
        "W_b": grad_W_b,
    }
    return total, {"full": L_C, "covisible": L_Ct}, grads


def loss_part_prototype(proto_a, proto_b):
    """Mean squared prototype difference over parts observed in both images."""
    both = proto_a.observed & proto_b.observed
    if not both.any():
        raise NoCommonParts("no part is observed in both images")
    diff = proto_a.features - proto_b.features
    d = diff.shape[1]
    per_part = np.sum(diff * diff, axis=1) / d
    value = float(per_part[both].mean())
    g = np.zeros_like(diff)
    g[both] = 2.0 / (d * both.sum()) * diff[both]
    return value, {"F_a": g, "F_b": -g}


def loss_shape_consistency(beta_a, beta_b):
    """Mean absolute difference of shape coefficients (subgradient 0 at ties)."""
    beta_a = np.asarray(beta_a, dtype=float)
    beta_b = np.asarray(beta_b, dtype=float)
    d = beta_a - beta_b
    value = float(np.mean(np.abs(d)))
    g = np.sign(d) / d.size
    return value, {"beta_a": g, "beta_b": -g}


def loss_mean_shape(beta):
    """Pull toward the mean shape: mean |beta|."""
    beta = np.asarray(beta, dtype=float)
    value = float(np.mean(np.abs(beta)))
    return value, np.sign(beta) / beta.size


def loss_silhouette(soft_mask, gt_mask):
    """Mean squared per-pixel difference between soft and target coverage."""
    a = soft_mask.data
    b = gt_mask.data
    if a.shape != b.shape:
        raise ResolutionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    value = float(np.mean(d * d))
    return value, 2.0 / d.size * d


def loss_vertex_consistency(V_a, V_b):
    """Optional supervision: mean squared difference of canonical vertices."""
    d = np.asarray(V_a, dtype=float) - np.asarray(V_b, dtype=float)
    value = float(np.sum(d * d) / d.size)
    g = 2.0 / d.size * d
    return value, {"V_a": g, "V_b": -g}


def loss_pose3d_consistency(Y_a, Y_b):
    """Optional supervision: mean squared difference of 3D joint positions."""
    d = np.asarray(Y_a, dtype=float) - np.asarray(Y_b, dtype=float)
    value = float(np.sum(d * d) / d.size)
    g = 2.0 / d.size * d
    return value, {"Y_a": g, "Y_b": -g}


def loss_keypoints2d(y, y_gt):
    """Optional supervision: mean squared 2D landmark error."""
    d = np.asarray(y, dtype=float) - np.asarray(y_gt, dtype=float)
    value = float(np.sum(d * d) / d.size)
    return value, 2.0 / d.size * d
