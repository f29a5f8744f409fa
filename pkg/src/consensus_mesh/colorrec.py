"""Visibility-aware vertex color recovery with symmetry propagation.

The chain: soft per-vertex visibility from depth agreement and camera-facing
angle, color picking from the image at the projected coordinates, then
propagation of reliable colors through reflection groups so every vertex ends
up colored. The same machinery pools feature maps into per-part prototypes.

Vertex color arrays are laid out (K, 3); group colors (G, 3).
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .images import FeatureMap
from .raster import sample_bilinear_with_grad

DEFAULT_ALPHA = 50.0
DEFAULT_GAMMA = 20.0
DEFAULT_FALLBACK = (0.5, 0.5, 0.5)
# Minimum visibility mass for a symmetry group or body part to count as seen.
EPS_VIS = 1e-3
# Regularizer in the group-color ratio.
RATIO_EPS = 1e-6
# Smoothing of |.| in the depth difference, for differentiability at 0.
ABS_EPS_SQ = 1e-12


@dataclass
class VisibilityWeights:
    W: np.ndarray  # (K,) in [0, 1]
    D: np.ndarray  # (K,) smoothed depth differences
    alpha: float
    gamma: float


@dataclass
class ColoredMesh:
    c_tilde: np.ndarray  # (K, 3) intermediate colors (negative = unassigned)
    group_colors: np.ndarray  # (G, 3)
    colors: np.ndarray  # (K, 3) final, group-constant colors
    observed: np.ndarray  # (G,) bool


@dataclass
class PartPrototypes:
    features: np.ndarray  # (L, D)
    weight_sums: np.ndarray  # (L,)
    observed: np.ndarray  # (L,) bool


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def visibility(depth_map, v, Z, N, alpha=DEFAULT_ALPHA, gamma=DEFAULT_GAMMA):
    """Soft visibility W = exp(-alpha * D) * sigmoid(gamma * N) per vertex.

    D is the (smoothed) absolute difference between the depth map sampled at
    the projected coordinate and the vertex's own camera-space depth. The
    depth map is treated as constant under differentiation.
    """
    w, _ = visibility_with_aux(depth_map, v, Z, N, alpha, gamma)
    return w


def visibility_with_aux(depth_map, v, Z, N, alpha=DEFAULT_ALPHA, gamma=DEFAULT_GAMMA):
    if alpha <= 0 or gamma <= 0:
        raise ValueError("alpha and gamma must be positive")
    Z = np.asarray(Z, dtype=float)
    N = np.asarray(N, dtype=float)
    zhat, dz_dv = sample_bilinear_with_grad(depth_map, v)
    diff = zhat - Z
    D = np.sqrt(diff * diff + ABS_EPS_SQ)
    E = np.exp(-alpha * D)
    S = _sigmoid(gamma * N)
    W = E * S
    weights = VisibilityWeights(W=W, D=D, alpha=alpha, gamma=gamma)
    aux = (diff, D, E, S, W, dz_dv, alpha, gamma)
    return weights, aux


def visibility_vjp(aux, grad_W):
    """Gradients of a scalar loss w.r.t. (v, Z, N) given d(loss)/dW."""
    diff, D, E, S, W, dz_dv, alpha, gamma = aux
    gD = grad_W * (-alpha * W)
    gdiff = gD * diff / D
    grad_v = gdiff[:, None] * dz_dv
    grad_Z = -gdiff
    grad_N = grad_W * gamma * E * S * (1.0 - S)
    return grad_v, grad_Z, grad_N


def pick_colors(image, v, W):
    """Intermediate colors C~ = I(v) * (2W - 1), negative when invisible."""
    ct, _ = pick_colors_with_aux(image, v, W)
    return ct


def pick_colors_with_aux(image, v, W):
    W = np.asarray(W, dtype=float)
    samples, dsamp_dv = sample_bilinear_with_grad(image, v)  # (K, 3), (K, 3, 2)
    scale = 2.0 * W - 1.0
    c_tilde = samples * scale[:, None]
    return c_tilde, (samples, dsamp_dv, scale)


def pick_colors_vjp(aux, grad_ct):
    samples, dsamp_dv, scale = aux
    g_samples = grad_ct * scale[:, None]
    grad_v = np.einsum("kc,kcd->kd", g_samples, dsamp_dv)
    grad_W = 2.0 * np.sum(grad_ct * samples, axis=1)
    return grad_v, grad_W


def propagate_symmetry(c_tilde, W, symmetry, fallback=DEFAULT_FALLBACK):
    """Pool reliable colors per reflection group and broadcast them back.

    Group color = sum of positive intermediate colors over the group divided
    by the summed positive visibility mass; groups with visibility mass below
    EPS_VIS are unobserved and carry the fallback color with zero gradient.
    """
    mesh, _ = propagate_symmetry_with_aux(c_tilde, W, symmetry, fallback)
    return mesh


def propagate_symmetry_with_aux(c_tilde, W, symmetry, fallback=DEFAULT_FALLBACK):
    c_tilde = np.asarray(c_tilde, dtype=float)
    W = np.asarray(W, dtype=float)
    K = c_tilde.shape[0]
    G = len(symmetry)
    owner = symmetry.group_of_vertex

    relu_ct = np.maximum(c_tilde, 0.0)
    mass = np.maximum(2.0 * W - 1.0, 0.0)
    num = np.zeros((G, 3))
    np.add.at(num, owner, relu_ct)
    den = np.zeros(G)
    np.add.at(den, owner, mass)

    observed = den >= EPS_VIS
    group_colors = np.tile(np.asarray(fallback, dtype=float), (G, 1))
    group_colors[observed] = num[observed] / (den[observed, None] + RATIO_EPS)
    colors = group_colors[owner]
    mesh = ColoredMesh(
        c_tilde=c_tilde, group_colors=group_colors, colors=colors, observed=observed
    )
    aux = (owner, c_tilde, W, num, den, observed, group_colors, K, G)
    return mesh, aux


def propagate_symmetry_vjp(aux, grad_colors=None, grad_group=None):
    """Gradients w.r.t. (c_tilde, W) given gradients on final/group colors."""
    owner, c_tilde, W, num, den, observed, group_colors, K, G = aux
    gG = np.zeros((G, 3))
    if grad_colors is not None:
        np.add.at(gG, owner, grad_colors)
    if grad_group is not None:
        gG = gG + grad_group
    gG[~observed] = 0.0

    inv = np.zeros(G)
    inv[observed] = 1.0 / (den[observed] + RATIO_EPS)
    g_num = gG * inv[:, None]
    g_den = -np.sum(gG * group_colors, axis=1) * inv

    grad_ct = g_num[owner] * (c_tilde > 0.0)
    grad_W = 2.0 * g_den[owner] * (2.0 * W - 1.0 > 0.0)
    return grad_ct, grad_W


def part_prototypes(feature_map, v, W, parts):
    """Visibility-weighted mean feature per body part."""
    proto, _ = part_prototypes_with_aux(feature_map, v, W, parts)
    return proto


def part_prototypes_with_aux(feature_map, v, W, parts):
    W = np.asarray(W, dtype=float)
    samples, dsamp_dv = sample_bilinear_with_grad(feature_map, v)  # (K, D)
    L = len(parts)
    D = samples.shape[1]
    owner = parts.part_of_vertex
    wsum = np.zeros(L)
    np.add.at(wsum, owner, W)
    fsum = np.zeros((L, D))
    np.add.at(fsum, owner, W[:, None] * samples)
    observed = wsum >= EPS_VIS
    features = np.zeros((L, D))
    features[observed] = fsum[observed] / wsum[observed, None]
    proto = PartPrototypes(features=features, weight_sums=wsum, observed=observed)
    aux = (owner, samples, dsamp_dv, W, wsum, features, observed)
    return proto, aux


def part_prototypes_vjp(aux, grad_features):
    owner, samples, dsamp_dv, W, wsum, features, observed = aux
    gF = np.where(observed[:, None], grad_features, 0.0)
    inv = np.zeros_like(wsum)
    inv[observed] = 1.0 / wsum[observed]
    gF_k = gF[owner] * inv[owner, None]  # (K, D)
    grad_W = np.sum(gF_k * (samples - features[owner]), axis=1)
    g_samples = gF_k * W[:, None]
    grad_v = np.einsum("kc,kcd->kd", g_samples, dsamp_dv)
    return grad_v, grad_W


def builtin_features(image):
    """Generic 9-channel appearance features at half input resolution.

    Channels: mean-pooled RGB, the same blurred with a 2 px Gaussian, and the
    per-channel spatial gradient magnitude. Deterministic; no learned weights.
    """
    data = np.asarray(image.data, dtype=float)
    H2, W2 = data.shape[0] // 2, data.shape[1] // 2
    if H2 < 1 or W2 < 1:
        raise ValueError("image too small for feature extraction")
    pooled = data[: 2 * H2, : 2 * W2].reshape(H2, 2, W2, 2, 3).mean(axis=(1, 3))
    feats = np.empty((H2, W2, 9))
    feats[:, :, 0:3] = pooled
    for c in range(3):
        feats[:, :, 3 + c] = gaussian_filter(pooled[:, :, c], sigma=2.0, mode="nearest")
        gy, gx = np.gradient(pooled[:, :, c])
        feats[:, :, 6 + c] = np.hypot(gx, gy)
    return FeatureMap(width=W2, height=H2, data=feats)
