"""Procedural capsule-limb humanoid used as a test and demo asset.

The generator emits a ~K_target vertex mesh built from open tubes (torso,
arms, legs) and a sphere band (head), with left/right and front/back mirror
vertices placed exactly: ring angles avoid the mirror planes and mirrored
coordinates are produced by sign flips, so the symmetry table is exact by
construction. Everything is deterministic per seed.

Skeleton (J = 15 articulated nodes; node 0 is a fixed base at the origin):
theta[0:3] drives the pelvis node, whose subtree is the entire body, so it
acts as the whole-body root rotation.
"""

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .bodymodel import BodyModel, PartTable, SymmetryGroups

JOINT_NAMES = [
    "base",
    "pelvis",
    "chest",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_hip",
    "r_knee",
    "r_ankle",
]
PARENTS = np.array([-1, 0, 1, 2, 2, 4, 5, 2, 7, 8, 1, 10, 11, 1, 13, 14])
PART_NAMES = ["head", "torso", "left_arm", "right_arm", "left_leg", "right_leg"]
NUM_JOINTS = 15


def _angle_grid(n):
    """n angles placed off the mirror planes, closed under both reflections."""
    return (2.0 * np.arange(n) + 1.0 - n) * np.pi / n


def _map_neg(i, n):
    return (n - 1 - i) % n


def _map_pim(i, n):
    return (3 * n // 2 - 1 - i) % n


def _stations(lo, hi, count, required):
    """count values spanning [lo, hi], snapping the nearest one onto each

    required value so anchor rings sit exactly at joint positions."""
    xs = np.linspace(lo, hi, count)
    for r in required:
        xs[np.argmin(np.abs(xs - r))] = r
    return xs


class _Builder:
    def __init__(self):
        self.verts = []
        self.faces = []
        self.piece_of_vertex = []

    def add_ring(self, points, piece):
        start = len(self.verts)
        self.verts.extend(points)
        self.piece_of_vertex.extend([piece] * len(points))
        return np.arange(start, start + len(points))

    def add_strip(self, ring_a, ring_b):
        n = len(ring_a)
        for i in range(n):
            j = (i + 1) % n
            self.faces.append((ring_a[i], ring_a[j], ring_b[j]))
            self.faces.append((ring_a[i], ring_b[j], ring_b[i]))


def _tube_y(builder, piece, x0, stations, radii, n):
    ang = _angle_grid(n)
    sin, cos = np.sin(ang), np.cos(ang)
    rings = []
    for y, r in zip(stations, radii):
        pts = np.stack([x0 + r * sin, np.full(n, y), r * cos], axis=1)
        rings.append(builder.add_ring(pts, piece))
    for a, b in zip(rings[:-1], rings[1:]):
        builder.add_strip(a, b)
    return rings


def _tube_x(builder, piece, y0, stations, radii, n):
    ang = _angle_grid(n)
    sin, cos = np.sin(ang), np.cos(ang)
    rings = []
    for x, r in zip(stations, radii):
        pts = np.stack([np.full(n, x), y0 + r * sin, r * cos], axis=1)
        rings.append(builder.add_ring(pts, piece))
    for a, b in zip(rings[:-1], rings[1:]):
        builder.add_strip(a, b)
    return rings


def _interp_profile(stations, knots, values):
    return np.interp(stations, knots, values)


def _fix_winding(verts, faces, piece_of_vertex, axis_ref):
    """Flip triangles whose normal points inward; reference is piece-specific."""
    fixed = []
    for f in faces:
        tri = verts[list(f)]
        centroid = tri.mean(axis=0)
        normal = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        ref = centroid - axis_ref(piece_of_vertex[f[0]], centroid)
        if normal @ ref < 0:
            fixed.append((f[0], f[2], f[1]))
        else:
            fixed.append(f)
    return np.asarray(fixed, dtype=np.int64)


def synth_model(seed=0, k_target=600, joints=NUM_JOINTS):
    """Deterministic procedural humanoid BodyModel (~k_target vertices).

    joints must be 15: the skeleton topology is fixed; only mesh density and
    mild proportion jitter vary with the arguments.
    """
    if k_target < 100:
        raise ValueError("k_target must be >= 100")
    if joints != NUM_JOINTS:
        raise ValueError("the procedural humanoid has a fixed 15-joint skeleton")
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=24)

    # Proportions (model units; body height ~ 1.7). Jitter is applied to the
    # shared design table so mirror symmetry survives exactly.
    chest_y = 0.30
    top_y = 0.47
    head_c = 0.58
    head_anchor = 0.55
    head_r = 0.115 * (1 + 0.05 * u[0])
    shoulder_x = 0.13 * (1 + 0.05 * u[1])
    elbow_x = 0.35 * (1 + 0.04 * u[2])
    wrist_x = 0.57 * (1 + 0.04 * u[3])
    hand_x = wrist_x + 0.035
    arm_y = 0.44
    hip_x = 0.09 * (1 + 0.05 * u[4])
    hip_y = -0.05
    knee_y = -0.47 * (1 + 0.03 * u[5])
    ankle_y = -0.88 * (1 + 0.03 * u[6])
    foot_y = ankle_y - 0.055

    torso_r = np.array([0.150, 0.162, 0.165, 0.142, 0.120]) * (1 + 0.06 * u[7])
    torso_knots = np.array([0.0, 0.12, chest_y, arm_y, top_y])
    arm_r = np.array([0.055, 0.046, 0.038, 0.033]) * (1 + 0.07 * u[8])
    arm_knots = np.array([shoulder_x, elbow_x, wrist_x, hand_x])
    leg_r = np.array([0.075, 0.060, 0.046, 0.042]) * (1 + 0.07 * u[9])
    leg_knots = np.array([hip_y, knee_y, ankle_y, foot_y])

    density = k_target / 600.0
    n_torso_rings = max(3, round(10 * density))
    n_head_rings = max(2, round(7 * density))
    n_arm_rings = max(2, round(7 * density))
    n_leg_rings = max(3, round(10 * density))
    NT, NH, NA, NL = 16, 12, 8, 12  # ring angle counts (multiples of 4)

    b = _Builder()

    torso_st = _stations(0.0, top_y, n_torso_rings, [0.0, chest_y])
    torso_rings = _tube_y(b, "torso", 0.0, torso_st, _interp_profile(torso_st, torso_knots, torso_r), NT)

    head_lo = head_c - head_r * 0.80
    head_hi = head_c + head_r * 0.90
    head_st = _stations(head_lo, head_hi, n_head_rings, [head_anchor])
    head_prof = np.sqrt(np.maximum(head_r**2 - (head_st - head_c) ** 2, 1e-6))
    head_rings = _tube_y(b, "head", 0.0, head_st, head_prof, NH)

    arm_st = _stations(shoulder_x, hand_x, n_arm_rings, [shoulder_x, elbow_x, wrist_x])
    arm_prof = _interp_profile(arm_st, arm_knots, arm_r)
    larm_rings = _tube_x(b, "left_arm", arm_y, arm_st, arm_prof, NA)
    rarm_rings = _tube_x(b, "right_arm", arm_y, -arm_st, arm_prof, NA)

    leg_st = _stations(foot_y, hip_y, n_leg_rings, [hip_y, knee_y, ankle_y])
    leg_prof = _interp_profile(leg_st, leg_knots[::-1], leg_r[::-1])
    lleg_rings = _tube_y(b, "left_leg", hip_x, leg_st, leg_prof, NL)
    rleg_rings = _tube_y(b, "right_leg", -hip_x, leg_st, leg_prof, NL)

    verts = np.asarray(b.verts, dtype=float)
    piece = np.asarray(b.piece_of_vertex)

    def axis_ref(piece_name, centroid):
        if piece_name == "torso":
            return np.array([0.0, centroid[1], 0.0])
        if piece_name == "head":
            return np.array([0.0, head_c, 0.0])
        if piece_name in ("left_arm", "right_arm"):
            return np.array([centroid[0], arm_y, 0.0])
        x0 = hip_x if piece_name == "left_leg" else -hip_x
        return np.array([x0, centroid[1], 0.0])

    faces = _fix_winding(verts, b.faces, piece, axis_ref)

    # Symmetry groups from integer angle-index orbits.
    groups = []
    for rings in torso_rings:
        seen = set()
        for i in range(NT):
            if i in seen:
                continue
            orbit = {i, _map_neg(i, NT), _map_pim(i, NT), _map_neg(_map_pim(i, NT), NT)}
            seen |= orbit
            groups.append([int(rings[j]) for j in sorted(orbit)])
    for rings in head_rings:
        seen = set()
        for i in range(NH):
            if i in seen:
                continue
            orbit = {i, _map_neg(i, NH)}
            seen |= orbit
            groups.append([int(rings[j]) for j in sorted(orbit)])
    for lr, rr in zip(larm_rings, rarm_rings):
        seen = set()
        for i in range(NA):
            if i in seen:
                continue
            pair = {i, _map_pim(i, NA)}
            seen |= pair
            groups.append(sorted(int(lr[j]) for j in pair) + sorted(int(rr[j]) for j in pair))
    for lr, rr in zip(lleg_rings, rleg_rings):
        seen = set()
        for i in range(NL):
            if i in seen:
                continue
            pair = sorted({i, _map_pim(i, NL)})
            mirrored = sorted({_map_neg(i, NL), _map_neg(_map_pim(i, NL), NL)})
            seen |= set(pair)
            groups.append([int(lr[j]) for j in pair] + [int(rr[j]) for j in mirrored])
    symmetry = SymmetryGroups.from_lists(groups, len(verts))

    part_lists = {name: [] for name in PART_NAMES}
    for k, pc in enumerate(piece):
        part_lists[pc].append(k)
    parts = PartTable.from_lists(PART_NAMES, [part_lists[n] for n in PART_NAMES], len(verts))

    # Anchor rings: uniform weights over a ring centered on each joint, so the
    # regressors reproduce the designed joint positions exactly at rest.
    def ring_weights(ring_ids):
        row = np.zeros(len(verts))
        row[ring_ids] = 1.0 / len(ring_ids)
        return row

    def ring_at(rings, stations, target):
        return rings[int(np.argmin(np.abs(stations - target)))]

    anchor = {
        0: ring_at(torso_rings, torso_st, 0.0),
        1: ring_at(torso_rings, torso_st, 0.0),
        2: ring_at(torso_rings, torso_st, chest_y),
        3: ring_at(head_rings, head_st, head_anchor),
        4: ring_at(larm_rings, arm_st, shoulder_x),
        5: ring_at(larm_rings, arm_st, elbow_x),
        6: ring_at(larm_rings, arm_st, wrist_x),
        7: ring_at(rarm_rings, -arm_st, -shoulder_x),
        8: ring_at(rarm_rings, -arm_st, -elbow_x),
        9: ring_at(rarm_rings, -arm_st, -wrist_x),
        10: ring_at(lleg_rings, leg_st, hip_y),
        11: ring_at(lleg_rings, leg_st, knee_y),
        12: ring_at(lleg_rings, leg_st, ankle_y),
        13: ring_at(rleg_rings, leg_st, hip_y),
        14: ring_at(rleg_rings, leg_st, knee_y),
        15: ring_at(rleg_rings, leg_st, ankle_y),
    }
    joint_regressor_rest = np.stack([ring_weights(anchor[j]) for j in range(NUM_JOINTS + 1)])
    pose_regressor = joint_regressor_rest[1:].copy()

    # Skin weights: blend between the two nearest joints along each piece.
    K = len(verts)
    weights = np.zeros((K, NUM_JOINTS + 1))
    x, y = verts[:, 0], verts[:, 1]

    def seg_blend(coord, lo, hi):
        return np.clip((coord - lo) / (hi - lo), 0.0, 1.0)

    sel = piece == "torso"
    t = seg_blend(y[sel], 0.0, chest_y)
    weights[sel, 1] = 1.0 - t
    weights[sel, 2] = t
    sel = piece == "head"
    weights[sel, 3] = 1.0
    for pc, (js, je, jw) in (("left_arm", (4, 5, 6)), ("right_arm", (7, 8, 9))):
        sel = piece == pc
        ax = np.abs(x[sel])
        t1 = seg_blend(ax, shoulder_x, elbow_x)
        t2 = seg_blend(ax, elbow_x, wrist_x)
        upper = ax <= elbow_x
        weights[np.where(sel)[0][upper], js] = 1.0 - t1[upper]
        weights[np.where(sel)[0][upper], je] = t1[upper]
        weights[np.where(sel)[0][~upper], je] = 1.0 - t2[~upper]
        weights[np.where(sel)[0][~upper], jw] = t2[~upper]
    for pc, (js, je, jw) in (("left_leg", (10, 11, 12)), ("right_leg", (13, 14, 15))):
        sel = piece == pc
        yy = y[sel]
        t1 = seg_blend(-yy, -hip_y, -knee_y)
        t2 = seg_blend(-yy, -knee_y, -ankle_y)
        upper = yy >= knee_y
        weights[np.where(sel)[0][upper], js] = 1.0 - t1[upper]
        weights[np.where(sel)[0][upper], je] = t1[upper]
        weights[np.where(sel)[0][~upper], je] = 1.0 - t2[~upper]
        weights[np.where(sel)[0][~upper], jw] = t2[~upper]

    shape_basis = _shape_basis(verts, head_c, rng)

    model = BodyModel(
        template=verts,
        shape_basis=shape_basis,
        faces=faces,
        parents=PARENTS.copy(),
        joint_regressor_rest=joint_regressor_rest,
        skin_weights=weights,
        pose_regressor=pose_regressor,
        symmetry=symmetry,
        parts=parts,
        joint_names=list(JOINT_NAMES),
    )
    return model.validate()


def _shape_basis(verts, head_c, rng):
    """10 smooth displacement fields, each exactly mirror-equivariant."""
    x, y, z = verts[:, 0], verts[:, 1], verts[:, 2]
    zero = np.zeros_like(x)

    def bump(t, c, w):
        return np.exp(-(((t - c) / w) ** 2))

    def sig(t):
        return 1.0 / (1.0 + np.exp(-t))

    head_d = np.linalg.norm(verts - np.array([0.0, head_c, 0.0]), axis=1)
    fields = [
        np.stack([zero, y * 0.060, zero], axis=1),
        np.stack([x, zero, z], axis=1) * 0.050,
        np.stack([x, zero, z], axis=1) * (bump(y, 0.22, 0.18) * 0.080)[:, None],
        np.stack([zero, -0.080 * sig((-0.05 - y) / 0.04), zero], axis=1),
        np.stack([x * 0.120 * sig((np.abs(x) - 0.11) / 0.03) * bump(y, 0.44, 0.10), zero, zero], axis=1),
        (verts - np.array([0.0, head_c, 0.0])) * (bump(head_d, 0.0, 0.13) * 0.300)[:, None],
        np.stack([x * 0.100 * bump(y, 0.44, 0.06), zero, zero], axis=1),
        np.stack([x * 0.100 * bump(y, -0.08, 0.07), zero, zero], axis=1),
        np.stack([zero, zero, z * 0.100 * bump(y, 0.32, 0.08)], axis=1),
        np.stack([x - 0.09 * np.tanh(x / 0.03), zero, z], axis=1)
        * (bump(y, -0.45, 0.25) * 0.100)[:, None],
    ]
    scales = 1.0 + 0.15 * rng.uniform(-1.0, 1.0, size=10)
    return np.stack([f * s for f, s in zip(fields, scales)], axis=2)


def synthetic_mocap(model, n=200, seed=0):
    """Smooth plausible pose set (n, 3J) for prior fitting and tests.

    Gaussian noise trajectories are low-pass filtered along the sample axis
    and scaled per joint to rough articulation ranges, so consecutive poses
    resemble frames of slow motion.
    """
    amp_by_joint = {
        "pelvis": (0.15, 0.30, 0.12),
        "chest": (0.18, 0.18, 0.10),
        "head": (0.30, 0.40, 0.15),
        "l_shoulder": (0.25, 0.80, 0.60),
        "l_elbow": (0.15, 1.00, 0.35),
        "l_wrist": (0.20, 0.30, 0.25),
        "r_shoulder": (0.25, 0.80, 0.60),
        "r_elbow": (0.15, 1.00, 0.35),
        "r_wrist": (0.20, 0.30, 0.25),
        "l_hip": (0.70, 0.25, 0.30),
        "l_knee": (1.10, 0.12, 0.10),
        "l_ankle": (0.35, 0.15, 0.12),
        "r_hip": (0.70, 0.25, 0.30),
        "r_knee": (1.10, 0.12, 0.10),
        "r_ankle": (0.35, 0.15, 0.12),
    }
    J = model.joint_count
    names = model.joint_names[1:] if model.joint_names else [""] * J
    amps = np.concatenate(
        [np.asarray(amp_by_joint.get(nm, (0.3, 0.3, 0.3))) for nm in names]
    )
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n, 3 * J))
    smooth = gaussian_filter1d(raw, sigma=4.0, axis=0, mode="wrap")
    std = smooth.std(axis=0)
    std[std == 0] = 1.0
    poses = smooth / std * (amps / 2.0)
    return np.clip(poses, -1.4, 1.4)
