"""Well-conditioned scenes for finite-difference gradient audits.

The fitting objective is only piecewise smooth: bilinear sampling has slope
kinks at every pixel grid line (large ones wherever a sampled map has cliffs,
such as the depth map's far-plane sentinel at silhouettes), visibility has
relu kinks at W = 1/2, and group observability switches at the visibility-
mass threshold. Central differences at a fixed step are meaningful only when
the probed interval stays on one smooth piece, so audit configurations are
built to be smooth by construction and screened for residual margins:

- geometry is a two-layer planar rig: a front sheet that fills the whole
  frame (its rasterized depth map is globally affine, and bilinear
  interpolation reproduces affine maps exactly, so depth sampling has no
  kinks anywhere), plus a parallel, fully occluded back layer whose constant
  depth offset keeps the depth-agreement pathway active;
- the kinematic tree articulates the sheet strictly in-plane (children
  rotate about the sheet normal; the root node rotates the whole rig), so
  every reachable pose keeps both layers planar;
- images are exact affine color fields, kink-free under bilinear sampling;
- candidate seeds are screened: no far-plane pixel, every vertex visibility
  clear of the W = 1/2 kink, group/part masses clear of the observability
  threshold, shape coefficients clear of the |.| kinks, and no vertex within
  clamping distance of the image frame edge.

Screening is a precondition on the test point (general position), not a
filter on check outcomes. The part-prototype term is weighted to zero here;
its gradients are validated separately on smooth module-level cases.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .bodymodel import BodyModel, PartTable, SymmetryGroups, skin
from .camera import look_at_front
from .colorrec import EPS_VIS
from .fitter import FitProblem, ImageVars, LossWeights, _forward_image
from .images import ImageRGB
from .poseprior import LATENT_DIM, fit_prior

GUARD_W = 0.02  # min distance of 2W-1 from its relu kink
GUARD_MASS = 0.02  # min distance of group/part visibility mass from eps_vis
GUARD_BETA = 2e-3  # min magnitude of shape-difference entries
GUARD_EDGE_PX = 0.01  # min pixel distance of any vertex to the clamp boundary
# (about twice the largest vertex motion an h=1e-4 parameter step can cause)
CHECK_ALPHA = 10.0
CHECK_GAMMA = 10.0
N_JOINTS = 15
_PARENTS = np.array([-1, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1])


def _grid(n, half):
    """n symmetric offsets avoiding 0, closed under sign flip."""
    return (2.0 * np.arange(n) + 1.0 - n) / n * half


def scene_model(front_n=(16, 18), back_n=(4, 4), front_z=0.1, back_z=0.4):
    """Two-layer planar rig as a valid BodyModel.

    Front sheet: (nx, ny) grid at z=front_z spanning +-1.3 units; back layer:
    coarse grid at z=back_z spanning +-0.8, so its vertices project inside
    the frame and keep a clean parallel-plane depth offset. Node 1 carries
    the whole rig; nodes 2..15 blend in-plane articulation of front discs.
    """
    fx = _grid(front_n[0], 1.3)
    fy = _grid(front_n[1], 1.3)
    bx = _grid(back_n[0], 0.8)
    by = _grid(back_n[1], 0.8)

    verts = []
    faces = []
    groups = []

    def add_layer(xs, ys, z):
        base = len(verts)
        nx, ny = len(xs), len(ys)
        for j, y in enumerate(ys):
            for i, x in enumerate(xs):
                verts.append((x, y, z))
        for j in range(ny - 1):
            for i in range(nx - 1):
                a = base + j * nx + i
                b = a + 1
                c = a + nx
                d = c + 1
                faces.append((a, b, d))
                faces.append((a, d, c))
        for j in range(ny):
            for i in range(nx // 2):
                groups.append([base + j * nx + i, base + j * nx + (nx - 1 - i)])
        return base, nx, ny

    f_base, fnx, fny = add_layer(fx, fy, front_z)
    b_base, bnx, bny = add_layer(bx, by, back_z)
    verts = np.asarray(verts, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    K = len(verts)

    # Fix winding so normals face the camera (-z).
    tri = verts[faces]
    nrm = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = nrm[:, 2] > 0
    faces[flip] = faces[flip][:, [0, 2, 1]]

    front = np.arange(f_base, f_base + fnx * fny)
    back = np.arange(b_base, b_base + bnx * bny)
    x, y = verts[:, 0], verts[:, 1]
    part_sets = [
        front[(x[front] >= 0) & (y[front] >= 0)],
        front[(x[front] < 0) & (y[front] >= 0)],
        front[(x[front] >= 0) & (y[front] < 0)],
        front[(x[front] < 0) & (y[front] < 0)],
        back[x[back] >= 0],
        back[x[back] < 0],
    ]
    part_names = ["front_ne", "front_nw", "front_se", "front_sw", "back_right", "back_left"]
    parts = PartTable.from_lists(part_names, [p.tolist() for p in part_sets], K)
    symmetry = SymmetryGroups.from_lists(groups, K)

    # Joints: rig root at the center, the rest spread over the front sheet.
    centers = [(0.0, 0.0), (0.0, 0.0)]
    for j in range(2, N_JOINTS + 1):
        ang = 2.0 * np.pi * (j - 2) / (N_JOINTS - 1)
        r = 0.7 if (j % 2 == 0) else 1.1
        centers.append((r * np.cos(ang), r * np.sin(ang)))
    joint_regressor = np.zeros((N_JOINTS + 1, K))
    for j, (cx, cy) in enumerate(centers):
        d2 = (x[front] - cx) ** 2 + (y[front] - cy) ** 2
        nearest = front[np.argsort(d2)[:4]]
        joint_regressor[j, nearest] = 0.25
    pose_regressor = joint_regressor[1:].copy()

    # Skin weights: local discs around each child joint, remainder on node 1.
    weights = np.zeros((K, N_JOINTS + 1))
    for j in range(2, N_JOINTS + 1):
        cx, cy = centers[j]
        d2 = (x[front] - cx) ** 2 + (y[front] - cy) ** 2
        weights[front, j] = 0.7 * np.exp(-d2 / 0.16)
    total_child = weights.sum(axis=1)
    scale = np.minimum(1.0, 0.9 / np.maximum(total_child, 1e-12))
    weights *= scale[:, None]
    weights[:, 1] = 1.0 - weights.sum(axis=1)

    # In-plane shape fields (d_z = 0) keep every shaped rest pose planar.
    zero = np.zeros(K)
    fields = [
        np.stack([x * 0.05, zero, zero], axis=1),
        np.stack([zero, y * 0.05, zero], axis=1),
        np.stack([x * 0.04, y * 0.04, zero], axis=1),
        np.stack([x * np.exp(-(y**2)) * 0.05, zero, zero], axis=1),
        np.stack([zero, y * np.exp(-(x**2)) * 0.05, zero], axis=1),
        np.stack([x * y * y * 0.03, zero, zero], axis=1),
        np.stack([zero, y * x * x * 0.03, zero], axis=1),
        np.stack([x * np.cos(y) * 0.03, zero, zero], axis=1),
        np.stack([zero, np.sin(y) * 0.04, zero], axis=1),
        np.stack([x * 0.02, -y * 0.03, zero], axis=1),
    ]
    shape_basis = np.stack(fields, axis=2)

    model = BodyModel(
        template=verts,
        shape_basis=shape_basis,
        faces=faces,
        parents=_PARENTS.copy(),
        joint_regressor_rest=joint_regressor,
        skin_weights=weights,
        pose_regressor=pose_regressor,
        symmetry=symmetry,
        parts=parts,
        joint_names=["base", "rig"] + [f"patch_{j}" for j in range(2, N_JOINTS + 1)],
    )
    return model.validate()


def scene_mocap(n=200, seed=0):
    """Smooth pose set: shallow rig tilt, free in-plane spin and articulation.

    Tilts (root x/y) stay small so the depth plane remains nearly
    perpendicular to the camera: front-sheet vertices overhanging the frame
    then keep their visibility far from the W = 1/2 kink.
    """
    rng = np.random.default_rng(seed)
    raw = gaussian_filter1d(rng.standard_normal((n, 3 * N_JOINTS)), sigma=4.0, axis=0, mode="wrap")
    raw /= np.maximum(raw.std(axis=0), 1e-9)
    poses = np.zeros((n, 3 * N_JOINTS))
    poses[:, 0:2] = raw[:, 0:2] * 0.04  # root tilt
    poses[:, 2] = raw[:, 2] * 0.45  # root in-plane spin
    for j in range(2, N_JOINTS + 1):
        q = 3 * (j - 1)
        poses[:, q + 2] = raw[:, q + 2] * 0.15  # local z = sheet normal
    return poses


def scene_prior(seed=0):
    return fit_prior(scene_mocap(200, seed))


def affine_image(rng, resolution):
    """Exact affine color field; bilinear sampling of it has no kinks."""
    xs = (np.arange(resolution) + 0.5 - resolution / 2.0) / (resolution / 2.0)
    gx, gy = np.meshgrid(xs, xs)
    data = np.empty((resolution, resolution, 3))
    for c in range(3):
        a, b = rng.uniform(-0.12, 0.12, 2)
        c0 = rng.uniform(0.4, 0.6)
        data[:, :, c] = c0 + a * gx + b * gy
    return ImageRGB.from_array(data)


def check_weights():
    return LossWeights(w_cc=1.0, lam=1.0, w_p=0.0, w_beta=0.1, w_sil=1.0, w_mean=1.0)


def _in_general_position(problem, vars_, which, resolution):
    """True when one image's forward state clears every non-smoothness guard."""
    st = _forward_image(problem, vars_, which, resolution, with_jac=False)
    depth = st["depth"]
    if np.any(depth.data >= depth.z_far):
        return False  # far-plane sentinel visible: depth cliffs unbounded
    # The depth map must be globally affine (bilinear-kink free): its second
    # differences vanish identically for a single covering plane.
    d2x = depth.data[:, 2:] - 2.0 * depth.data[:, 1:-1] + depth.data[:, :-2]
    d2y = depth.data[2:, :] - 2.0 * depth.data[1:-1, :] + depth.data[:-2, :]
    if max(np.abs(d2x).max(), np.abs(d2y).max()) > 1e-9:
        return False
    W = st["W"].W
    if np.min(np.abs(2.0 * W - 1.0)) < GUARD_W:
        return False
    # Depth mismatches must be either numerically zero (self-consistent
    # samples; the smoothed |.| is flat there) or clear of the notch that an
    # h-step could cross.
    D = st["W"].D
    if np.any((D > 1.01e-6) & (D < 5e-4)):
        return False
    mass = np.maximum(2.0 * W - 1.0, 0.0)
    den = np.zeros(len(problem.model.symmetry))
    np.add.at(den, problem.model.symmetry.group_of_vertex, mass)
    if np.any((den > 0.0) & (den < EPS_VIS + GUARD_MASS)):
        return False
    wsum = np.zeros(len(problem.model.parts))
    np.add.at(wsum, problem.model.parts.part_of_vertex, W)
    if np.any((wsum > 0.5 * EPS_VIS) & (wsum < EPS_VIS + GUARD_MASS)):
        return False
    # No vertex may sit within clamping distance of the frame boundary.
    from .raster import to_pixel

    p = to_pixel(st["v"], resolution, resolution)
    for c, limit in ((0, resolution - 1.0), (1, resolution - 1.0)):
        d_lo = np.abs(p[:, c] - 0.0)
        d_hi = np.abs(p[:, c] - limit)
        if min(d_lo.min(), d_hi.min()) < GUARD_EDGE_PX:
            return False
    return True


@dataclass
class GradcheckConfig:
    seed: int
    problem: FitProblem
    vars_a: ImageVars
    vars_b: ImageVars


def make_config(model, prior, seed, resolution, alpha=CHECK_ALPHA, gamma=CHECK_GAMMA):
    """One candidate configuration, or None if it fails the position screen."""
    rng = np.random.default_rng(seed)
    problem = FitProblem(
        model=model,
        prior=prior,
        image_a=affine_image(rng, resolution),
        image_b=affine_image(rng, resolution),
        weights=check_weights(),
        alpha=alpha,
        gamma=gamma,
    )
    out = []
    for _ in range(2):
        phi = rng.uniform(-0.6, 0.6, LATENT_DIM)
        mag = rng.uniform(0.05, 0.4, 10)
        beta = mag * rng.choice([-1.0, 1.0], 10)
        jitter = np.array([rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02), rng.uniform(-0.4, 0.4)])
        iv = ImageVars.zeros(rot=look_at_front() + jitter)
        iv.rho = np.arctanh(np.clip(phi, -0.99, 0.99))
        iv.beta = beta
        iv.t = rng.uniform(-0.02, 0.02, 2)
        iv.log_s = float(np.log(rng.uniform(0.92, 1.0)))
        out.append(iv)
    vars_a, vars_b = out
    if np.min(np.abs(vars_a.beta - vars_b.beta)) < GUARD_BETA:
        return None
    for vars_, which in ((vars_a, "a"), (vars_b, "b")):
        if not _in_general_position(problem, vars_, which, resolution):
            return None
    return GradcheckConfig(seed=seed, problem=problem, vars_a=vars_a, vars_b=vars_b)


def make_configs(n_configs, base_seed, resolution, alpha=CHECK_ALPHA, gamma=CHECK_GAMMA, max_tries=200):
    """n_configs screened configurations over a shared planar rig."""
    model = scene_model()
    prior = scene_prior(seed=base_seed)
    configs = []
    skipped = []
    seed = base_seed
    while len(configs) < n_configs and len(skipped) < max_tries:
        cfg = make_config(model, prior, seed, resolution, alpha, gamma)
        if cfg is None:
            skipped.append(seed)
        else:
            configs.append(cfg)
        seed += 1
    if len(configs) < n_configs:
        raise RuntimeError(
            f"could not find {n_configs} general-position configurations "
            f"(skipped {len(skipped)})"
        )
    return configs, skipped
