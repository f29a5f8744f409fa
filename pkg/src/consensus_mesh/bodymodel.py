"""Parametric triangulated body mesh.

Shape is a 10-coefficient linear blendshape basis on the template; pose is a
parent-relative axis-angle kinematic chain applied through linear blend
skinning. The tree has J+1 nodes (node 0 is a fixed base frame); theta holds
3 values for each of the J articulated nodes 1..J, so theta[0:3] drives node
1, which acts as the whole-body root articulation.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFace, ModelFormatError
from .rotations import rodrigues_with_jacobian

MODEL_FORMAT_VERSION = 1
NUM_SHAPE_COEFFS = 10


@dataclass
class SymmetryGroups:
    """Reflection groups of 2 or 4 vertices that share one color.

    groups: list of index arrays (each of length 2 or 4) partitioning
    {0..K-1}. group_of_vertex maps a vertex id to its group id.
    """

    groups: list
    group_of_vertex: np.ndarray

    @classmethod
    def from_lists(cls, lists, vertex_count):
        groups = [np.asarray(g, dtype=np.int64) for g in lists]
        owner = np.full(vertex_count, -1, dtype=np.int64)
        for gid, g in enumerate(groups):
            if len(g) not in (2, 4):
                raise ModelFormatError(f"symmetry group {gid} has size {len(g)}")
            for k in g:
                if k < 0 or k >= vertex_count:
                    raise ModelFormatError(f"symmetry group {gid} indexes vertex {k}")
                if owner[k] != -1:
                    raise ModelFormatError(f"vertex {k} appears in two symmetry groups")
                owner[k] = gid
        if np.any(owner < 0):
            missing = int(np.sum(owner < 0))
            raise ModelFormatError(f"{missing} vertices belong to no symmetry group")
        return cls(groups=groups, group_of_vertex=owner)

    def __len__(self):
        return len(self.groups)

    def dense(self):
        """Multi-hot (G, K) encoding of group membership."""
        S = np.zeros((len(self.groups), self.group_of_vertex.shape[0]))
        for gid, g in enumerate(self.groups):
            S[gid, g] = 1.0
        return S


@dataclass
class PartTable:
    """Named disjoint vertex sets covering the whole mesh."""

    names: list
    vertex_sets: list
    part_of_vertex: np.ndarray

    @classmethod
    def from_lists(cls, names, lists, vertex_count):
        if len(names) != len(lists):
            raise ModelFormatError("part names and vertex sets differ in length")
        sets = [np.asarray(ix, dtype=np.int64) for ix in lists]
        owner = np.full(vertex_count, -1, dtype=np.int64)
        for pid, ix in enumerate(sets):
            for k in ix:
                if k < 0 or k >= vertex_count:
                    raise ModelFormatError(f"part {names[pid]!r} indexes vertex {k}")
                if owner[k] != -1:
                    raise ModelFormatError(f"vertex {k} appears in two parts")
                owner[k] = pid
        if np.any(owner < 0):
            raise ModelFormatError("parts do not cover every vertex")
        return cls(names=list(names), vertex_sets=sets, part_of_vertex=owner)

    def __len__(self):
        return len(self.names)

    def index_of(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None


@dataclass
class BodyModel:
    """Immutable body mesh asset; all operations on it are pure functions."""

    template: np.ndarray  # (K, 3)
    shape_basis: np.ndarray  # (K, 3, 10)
    faces: np.ndarray  # (F, 3) int
    parents: np.ndarray  # (J+1,) int, parents[0] == -1
    joint_regressor_rest: np.ndarray  # (J+1, K)
    skin_weights: np.ndarray  # (K, J+1)
    pose_regressor: np.ndarray  # (J, K)
    symmetry: SymmetryGroups
    parts: PartTable
    joint_names: list = field(default_factory=list)

    @property
    def vertex_count(self):
        return self.template.shape[0]

    @property
    def joint_count(self):
        """J: number of articulated joints (tree has J+1 nodes)."""
        return self.parents.shape[0] - 1

    @property
    def face_count(self):
        return self.faces.shape[0]

    def validate(self):
        """Check structural invariants; raises ModelFormatError on violation."""
        K = self.vertex_count
        n_nodes = self.parents.shape[0]
        if self.template.shape != (K, 3):
            raise ModelFormatError("template must be (K, 3)")
        if self.shape_basis.shape != (K, 3, NUM_SHAPE_COEFFS):
            raise ModelFormatError("shape_basis must be (K, 3, 10)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ModelFormatError("faces must be (F, 3)")
        if self.faces.min() < 0 or self.faces.max() >= K:
            raise ModelFormatError("face indices out of range")
        if self.parents[0] != -1:
            raise ModelFormatError("parents[0] must be -1 (base node)")
        for j in range(1, n_nodes):
            if not 0 <= self.parents[j] < j:
                raise ModelFormatError("parents must be topologically ordered")
        if self.joint_regressor_rest.shape != (n_nodes, K):
            raise ModelFormatError("joint_regressor_rest must be (J+1, K)")
        if self.skin_weights.shape != (K, n_nodes):
            raise ModelFormatError("skin_weights must be (K, J+1)")
        if self.skin_weights.min() < 0:
            raise ModelFormatError("skin_weights must be nonnegative")
        row_sums = self.skin_weights.sum(axis=1)
        if np.max(np.abs(row_sums - 1.0)) > 1e-6:
            raise ModelFormatError("skin_weights rows must sum to 1 within 1e-6")
        if self.pose_regressor.shape != (n_nodes - 1, K):
            raise ModelFormatError("pose_regressor must be (J, K)")
        if self.symmetry.group_of_vertex.shape[0] != K:
            raise ModelFormatError("symmetry table does not cover the mesh")
        if self.parts.part_of_vertex.shape[0] != K:
            raise ModelFormatError("part table does not cover the mesh")
        used = np.zeros(K, dtype=bool)
        used[self.faces.reshape(-1)] = True
        if not used.all():
            raise ModelFormatError("some vertices belong to no face")
        return self


def shaped_vertices(model, beta):
    """Template displaced by the linear shape basis."""
    beta = np.asarray(beta, dtype=float)
    return model.template + model.shape_basis @ beta


def rest_joints(model, beta):
    """Rest-pose node positions (J+1, 3) for a given shape."""
    return model.joint_regressor_rest @ shaped_vertices(model, beta)


def _chain_transforms(model, theta, rest):
    """Local rotations plus world (rotation, origin) per node."""
    n = model.parents.shape[0]
    theta = np.asarray(theta, dtype=float).reshape(n - 1, 3)
    R_local = np.empty((n, 3, 3))
    dR_local = np.empty((n, 3, 3, 3))
    R_local[0] = np.eye(3)
    dR_local[0] = 0.0
    for j in range(1, n):
        R_local[j], dR_local[j] = rodrigues_with_jacobian(theta[j - 1])
    Gr = np.empty((n, 3, 3))
    g = np.empty((n, 3))
    Gr[0] = R_local[0]
    g[0] = rest[0]
    for j in range(1, n):
        p = model.parents[j]
        Gr[j] = Gr[p] @ R_local[j]
        g[j] = Gr[p] @ (rest[j] - rest[p]) + g[p]
    return R_local, dR_local, Gr, g


def _blend(model, shaped, Gr, g, rest):
    w = model.skin_weights
    M = np.einsum("kj,jab->kab", w, Gr)
    off = w @ (g - np.einsum("jab,jb->ja", Gr, rest))
    V = np.einsum("kab,kb->ka", M, shaped) + off
    return V, M


def skin(model, beta, theta):
    """Pose the shaped template with linear blend skinning.

    Returns (V, transforms): V is (K, 3) vertex positions, transforms is
    (J+1, 4, 4) world transforms of the kinematic nodes.
    """
    shaped = shaped_vertices(model, beta)
    rest = model.joint_regressor_rest @ shaped
    _, _, Gr, g = _chain_transforms(model, theta, rest)
    V, _ = _blend(model, shaped, Gr, g, rest)
    n = Gr.shape[0]
    T = np.tile(np.eye(4), (n, 1, 1))
    T[:, :3, :3] = Gr
    T[:, :3, 3] = g
    return V, T


def skin_with_jacobians(model, beta, theta):
    """skin() plus analytic Jacobians of the vertex positions.

    Returns (V, transforms, dV_dbeta, dV_dtheta) with dV_dbeta of shape
    (K, 3, 10) and dV_dtheta of shape (K, 3, 3J). theta parameter q = 3*(j-1)+c
    drives component c of node j's axis-angle rotation.
    """
    shaped = shaped_vertices(model, beta)
    rest = model.joint_regressor_rest @ shaped
    R_local, dR_local, Gr, g = _chain_transforms(model, theta, rest)
    V, M = _blend(model, shaped, Gr, g, rest)

    n = Gr.shape[0]
    w = model.skin_weights
    K = model.vertex_count

    # Shape path: the template offset and every rest joint are linear in beta.
    drest = np.einsum("jk,kbi->jbi", model.joint_regressor_rest, model.shape_basis)
    dg_b = np.empty((n, 3, NUM_SHAPE_COEFFS))
    dg_b[0] = drest[0]
    for j in range(1, n):
        p = model.parents[j]
        dg_b[j] = np.einsum("ab,bi->ai", Gr[p], drest[j] - drest[p]) + dg_b[p]
    dV_dbeta = np.einsum("kab,kbi->kai", M, model.shape_basis)
    dV_dbeta += np.einsum(
        "kj,jai->kai", w, dg_b - np.einsum("jab,jbi->jai", Gr, drest)
    )

    # Pose path: batch all 3J parameters through one tree walk.
    nq = 3 * (n - 1)
    dGr = np.zeros((nq, n, 3, 3))
    dg_t = np.zeros((nq, n, 3))
    for j in range(1, n):
        p = model.parents[j]
        dGr[:, j] = dGr[:, p] @ R_local[j]
        dg_t[:, j] = dg_t[:, p] + np.einsum("qab,b->qa", dGr[:, p], rest[j] - rest[p])
        base = 3 * (j - 1)
        for c in range(3):
            dGr[base + c, j] += Gr[p] @ dR_local[j][:, :, c]

    # dV[k, :, q] = sum_j w_kj (dGr[q, j] (shaped_k - rest_j) + dg_t[q, j])
    acc = np.zeros((K, 3, nq))
    for j in range(1, n):
        X = shaped - rest[j]  # (K, 3)
        block = dGr[:, j].reshape(nq * 3, 3) @ X.T  # (3 nq, K)
        acc += w[:, j, None, None] * block.reshape(nq, 3, K).transpose(2, 1, 0)
    acc += (w @ dg_t.transpose(1, 0, 2).reshape(n, nq * 3)).reshape(
        K, nq, 3
    ).transpose(0, 2, 1)

    T = np.tile(np.eye(4), (n, 1, 1))
    T[:, :3, :3] = Gr
    T[:, :3, 3] = g
    return V, T, dV_dbeta, acc


def regress_joints(model, V):
    """Evaluation skeleton Y (J, 3) as a fixed linear map of the vertices."""
    return model.pose_regressor @ V


def regress_joints_vjp(model, grad_Y):
    return model.pose_regressor.T @ grad_Y


def vertex_normals(model, V):
    """Unit vertex normals: normalized average of adjacent unit face normals."""
    N, _ = vertex_normals_with_aux(model, V)
    return N


def vertex_normals_with_aux(model, V):
    f = model.faces
    e1 = V[f[:, 1]] - V[f[:, 0]]
    e2 = V[f[:, 2]] - V[f[:, 0]]
    raw = np.cross(e1, e2)
    raw_norm = np.linalg.norm(raw, axis=1)
    if np.any(raw_norm < 2e-12):  # area = |raw| / 2
        bad = int(np.argmin(raw_norm))
        raise DegenerateFace(f"face {bad} has near-zero area")
    fn = raw / raw_norm[:, None]
    m = np.zeros_like(V)
    for c in range(3):
        np.add.at(m, f[:, c], fn)
    m_norm = np.linalg.norm(m, axis=1)
    if np.any(m_norm < 1e-12):
        bad = int(np.argmin(m_norm))
        raise DegenerateFace(f"vertex {bad} has a degenerate normal fan")
    N = m / m_norm[:, None]
    aux = (f, e1, e2, raw, raw_norm, fn, m, m_norm, N)
    return N, aux


def vertex_normals_vjp(aux, grad_N):
    """Backpropagate d(loss)/dN to d(loss)/dV."""
    f, e1, e2, raw, raw_norm, fn, m, m_norm, N = aux
    # Through the final normalization: m -> m / |m|.
    gm = (grad_N - N * np.sum(N * grad_N, axis=1, keepdims=True)) / m_norm[:, None]
    # Scatter-adjoint of the per-face accumulation is a gather.
    gfn = gm[f[:, 0]] + gm[f[:, 1]] + gm[f[:, 2]]
    # Through the face normalization: raw -> raw / |raw|.
    graw = (gfn - fn * np.sum(fn * gfn, axis=1, keepdims=True)) / raw_norm[:, None]
    # raw = e1 x e2.
    ge1 = np.cross(e2, graw)
    ge2 = np.cross(graw, e1)
    grad_V = np.zeros((m.shape[0], 3))
    np.add.at(grad_V, f[:, 1], ge1)
    np.add.at(grad_V, f[:, 2], ge2)
    np.add.at(grad_V, f[:, 0], -(ge1 + ge2))
    return grad_V


def save_model_json(model, path):
    """Persist a model as the versioned JSON document (see docs/formats.md)."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "joint_count": model.joint_count,
        "joint_names": list(model.joint_names),
        "template": model.template.tolist(),
        "shape_basis": model.shape_basis.tolist(),
        "faces": model.faces.tolist(),
        "parents": model.parents.tolist(),
        "joint_regressor_rest": model.joint_regressor_rest.tolist(),
        "skin_weights": model.skin_weights.tolist(),
        "pose_regressor": model.pose_regressor.tolist(),
        "symmetry_groups": [g.tolist() for g in model.symmetry.groups],
        "parts": [
            {"name": name, "vertices": ix.tolist()}
            for name, ix in zip(model.parts.names, model.parts.vertex_sets)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model_json(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"{path}: expected format_version {MODEL_FORMAT_VERSION}")
    try:
        template = np.asarray(doc["template"], dtype=float)
        K = template.shape[0]
        model = BodyModel(
            template=template,
            shape_basis=np.asarray(doc["shape_basis"], dtype=float),
            faces=np.asarray(doc["faces"], dtype=np.int64),
            parents=np.asarray(doc["parents"], dtype=np.int64),
            joint_regressor_rest=np.asarray(doc["joint_regressor_rest"], dtype=float),
            skin_weights=np.asarray(doc["skin_weights"], dtype=float),
            pose_regressor=np.asarray(doc["pose_regressor"], dtype=float),
            symmetry=SymmetryGroups.from_lists(doc["symmetry_groups"], K),
            parts=PartTable.from_lists(
                [p["name"] for p in doc["parts"]],
                [p["vertices"] for p in doc["parts"]],
                K,
            ),
            joint_names=list(doc.get("joint_names", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
    return model.validate()
