"""Direct gradient-based recovery of pose, shape, and cameras from an image pair.

Each image owns a raw pose latent rho (phi = tanh(rho)), shape coefficients
beta, and a weak-perspective camera (rot, t, log s). The total objective is
the weighted sum of the consensus losses; its gradient is assembled by
hand-chained vector-Jacobian products through the fixed pipeline
decode -> skin -> project -> rasterize (detached) -> color recovery -> losses.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bodymodel import (
    regress_joints,
    regress_joints_vjp,
    skin,
    skin_with_jacobians,
    vertex_normals_vjp,
    vertex_normals_with_aux,
)
from .camera import (
    CameraParams,
    camera_normals_vjp,
    camera_normals_with_aux,
    look_at_front,
    project_vjp,
    project_with_aux,
)
from .colorrec import (
    DEFAULT_ALPHA,
    DEFAULT_FALLBACK,
    DEFAULT_GAMMA,
    builtin_features,
    part_prototypes_vjp,
    part_prototypes_with_aux,
    pick_colors_vjp,
    pick_colors_with_aux,
    propagate_symmetry_vjp,
    propagate_symmetry_with_aux,
    visibility_vjp,
    visibility_with_aux,
)
from .errors import Diverged, NoCommonParts
from .losses import (
    loss_color_consistency,
    loss_keypoints2d,
    loss_mean_shape,
    loss_part_prototype,
    loss_pose3d_consistency,
    loss_shape_consistency,
    loss_silhouette,
    loss_vertex_consistency,
)
from .poseprior import LATENT_DIM
from .raster import rasterize_depth, soft_silhouette, soft_silhouette_vjp

logger = logging.getLogger(__name__)

BETA_LIMIT = 5.0
THREADS_ENV = "CONSENSUS_MESH_THREADS"

TRACE_TERMS = [
    "color_consistency",
    "part_prototype",
    "shape_consistency",
    "silhouette",
    "mean_shape",
    "mesh_consistency",
    "pose_consistency",
    "keypoints2d",
    "total",
]


@dataclass
class LossWeights:
    """Weights of the objective terms; w_mean decays over the warmup."""

    w_cc: float = 1.0
    lam: float = 1.0  # inner weight of the co-visible color term
    w_p: float = 1.0
    w_beta: float = 0.1
    w_sil: float = 1.0
    w_mean: float = 1.0
    w_mv_mesh: float = 0.0
    w_mv_pose: float = 0.0
    w_kp2d: float = 0.0

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        known = {k: float(v) for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown loss weight(s): {sorted(unknown)}")
        return cls(**known)


@dataclass
class FitConfig:
    iterations: int = 500
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    restarts: int = 4
    warmup_iters: int = 200  # mean-shape weight reaches zero here
    seed: int = 0
    resolution: int = 128
    sil_tau: float = 0.01


@dataclass
class ImageVars:
    """Optimization variables for one image (48 scalars)."""

    rho: np.ndarray  # (32,) pre-tanh pose latent
    beta: np.ndarray  # (10,)
    rot: np.ndarray  # (3,)
    t: np.ndarray  # (2,)
    log_s: float

    N_PARAMS = LATENT_DIM + 10 + 3 + 2 + 1

    @classmethod
    def zeros(cls, rot=None, t=None, s=1.0):
        return cls(
            rho=np.zeros(LATENT_DIM),
            beta=np.zeros(10),
            rot=np.array(rot if rot is not None else look_at_front(), dtype=float),
            t=np.zeros(2) if t is None else np.asarray(t, dtype=float),
            log_s=float(np.log(s)),
        )

    def pack(self):
        return np.concatenate([self.rho, self.beta, self.rot, self.t, [self.log_s]])

    @classmethod
    def unpack(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(
            rho=x[:32].copy(),
            beta=x[32:42].copy(),
            rot=x[42:45].copy(),
            t=x[45:47].copy(),
            log_s=float(x[47]),
        )

    def copy(self):
        return ImageVars.unpack(self.pack())

    @property
    def phi(self):
        return np.tanh(self.rho)

    def camera(self):
        return CameraParams(rot=self.rot.copy(), t=self.t.copy(), s=float(np.exp(self.log_s)))


def param_names():
    names = [f"rho[{i}]" for i in range(LATENT_DIM)]
    names += [f"beta[{i}]" for i in range(10)]
    names += ["rot[0]", "rot[1]", "rot[2]", "t[0]", "t[1]", "log_s"]
    return names


@dataclass
class FitProblem:
    """Everything fixed during one pair fit: data, model, prior, weights."""

    model: object
    prior: object
    image_a: object
    image_b: object
    mask_a: object = None
    mask_b: object = None
    kp2d_a: object = None
    kp2d_b: object = None
    weights: LossWeights = field(default_factory=LossWeights)
    alpha: float = DEFAULT_ALPHA
    gamma: float = DEFAULT_GAMMA
    fallback: tuple = DEFAULT_FALLBACK
    _features: dict = field(default_factory=dict, repr=False)

    def features(self, which):
        if which not in self._features:
            image = self.image_a if which == "a" else self.image_b
            self._features[which] = builtin_features(image)
        return self._features[which]


def _forward_image(problem, vars_, which, resolution, frozen_depth=None, with_jac=True):
    model = problem.model
    phi = np.tanh(vars_.rho)
    theta = problem.prior.decode(phi)
    if with_jac:
        V, T, dV_dbeta, dV_dtheta = skin_with_jacobians(model, vars_.beta, theta)
    else:
        V, T = skin(model, vars_.beta, theta)
        dV_dbeta = dV_dtheta = None
    n_world, nrm_aux = vertex_normals_with_aux(model, V)
    cam = vars_.camera()
    v, Z, P, proj_aux = project_with_aux(cam, V)
    N, cn_aux = camera_normals_with_aux(cam, n_world)
    depth = frozen_depth
    if depth is None:
        depth = rasterize_depth(v, Z, model.faces, resolution)
    W, vis_aux = visibility_with_aux(depth, v, Z, N, problem.alpha, problem.gamma)
    image = problem.image_a if which == "a" else problem.image_b
    c_tilde, pick_aux = pick_colors_with_aux(image, v, W.W)
    colored, prop_aux = propagate_symmetry_with_aux(
        c_tilde, W.W, model.symmetry, problem.fallback
    )
    proto, proto_aux = part_prototypes_with_aux(
        problem.features(which), v, W.W, model.parts
    )
    return {
        "vars": vars_,
        "phi": phi,
        "theta": theta,
        "V": V,
        "transforms": T,
        "dV_dbeta": dV_dbeta,
        "dV_dtheta": dV_dtheta,
        "nrm_aux": nrm_aux,
        "cam": cam,
        "v": v,
        "Z": Z,
        "proj_aux": proj_aux,
        "N": N,
        "cn_aux": cn_aux,
        "depth": depth,
        "W": W,
        "vis_aux": vis_aux,
        "c_tilde": c_tilde,
        "pick_aux": pick_aux,
        "colored": colored,
        "prop_aux": prop_aux,
        "proto": proto,
        "proto_aux": proto_aux,
        "sil": None,
        "sil_aux": None,
        "joints_aux": None,
    }


def _zero_grads():
    return {
        "C": None,
        "ct": None,
        "W": None,
        "F": None,
        "sil": None,
        "V": None,
        "Y": None,
        "y2d": None,
        "beta": None,
    }


def _acc(d, key, value):
    d[key] = value if d[key] is None else d[key] + value


def _backward_image(problem, st, g):
    """Chain VJPs from loss-space gradients back to the 48 parameters."""
    model = problem.model
    K = model.vertex_count
    dv = np.zeros((K, 2))
    dZ = np.zeros(K)
    dW = np.zeros(K)
    dV = np.zeros((K, 3))
    drot = np.zeros(3)
    dt = np.zeros(2)
    ds = 0.0

    dct = g["ct"].copy() if g["ct"] is not None else np.zeros((K, 3))
    if g["W"] is not None:
        dW += g["W"]
    if g["C"] is not None:
        p_ct, p_W = propagate_symmetry_vjp(st["prop_aux"], grad_colors=g["C"])
        dct += p_ct
        dW += p_W
    if g["F"] is not None:
        v_f, w_f = part_prototypes_vjp(st["proto_aux"], g["F"])
        dv += v_f
        dW += w_f
    if np.any(dct):
        v_p, w_p = pick_colors_vjp(st["pick_aux"], dct)
        dv += v_p
        dW += w_p
    if np.any(dW):
        v_w, z_w, n_w = visibility_vjp(st["vis_aux"], dW)
        dv += v_w
        dZ += z_w
        dnw, drot_n = camera_normals_vjp(st["cn_aux"], n_w)
        drot += drot_n
        dV += vertex_normals_vjp(st["nrm_aux"], dnw)
    if g["sil"] is not None and st["sil_aux"] is not None:
        dv += soft_silhouette_vjp(st["sil_aux"], g["sil"])

    if g["Y"] is not None or g["y2d"] is not None:
        dY = g["Y"].copy() if g["Y"] is not None else 0.0
        if g["y2d"] is not None:
            dYv, drot_y, dt_y, ds_y = project_vjp(st["joints_aux"], grad_v=g["y2d"])
            dY = dY + dYv
            drot += drot_y
            dt += dt_y
            ds += ds_y
        dV += regress_joints_vjp(model, dY)

    if g["V"] is not None:
        dV += g["V"]

    dV2, drot_p, dt_p, ds_p = project_vjp(st["proj_aux"], grad_v=dv, grad_Z=dZ)
    dV += dV2
    drot += drot_p
    dt += dt_p
    ds += ds_p

    dbeta = np.einsum("ka,kai->i", dV, st["dV_dbeta"])
    if g["beta"] is not None:
        dbeta += g["beta"]
    dtheta = np.einsum("ka,kaq->q", dV, st["dV_dtheta"])
    dphi = problem.prior.decode_vjp(dtheta)
    drho = dphi * (1.0 - st["phi"] ** 2)
    dlog_s = ds * st["cam"].s
    return np.concatenate([drho, dbeta, drot, dt, [dlog_s]])


def mean_shape_weight(weights, config, iteration):
    """Warmup schedule: w_mean * max(0, 1 - iter / warmup_iters)."""
    if config.warmup_iters <= 0:
        return 0.0
    return weights.w_mean * max(0.0, 1.0 - iteration / config.warmup_iters)


def total_loss(problem, vars_a, vars_b, iteration, config, frozen_depths=None, want_grad=True):
    """Weighted objective and its gradient w.r.t. both parameter vectors.

    Returns (total, terms, grad_a, grad_b). With frozen_depths=(depth_a,
    depth_b) the depth maps are held fixed (the detach convention), which is
    also how finite differences must evaluate perturbed points.
    """
    w = problem.weights
    fa = frozen_depths[0] if frozen_depths else None
    fb = frozen_depths[1] if frozen_depths else None
    st_a = _forward_image(problem, vars_a, "a", config.resolution, fa, with_jac=want_grad)
    st_b = _forward_image(problem, vars_b, "b", config.resolution, fb, with_jac=want_grad)
    ga = _zero_grads()
    gb = _zero_grads()
    terms = {name: 0.0 for name in TRACE_TERMS}

    val_cc, _, gcc = loss_color_consistency(
        st_a["colored"], st_b["colored"], st_a["W"].W, st_b["W"].W, w.lam
    )
    terms["color_consistency"] = val_cc
    if w.w_cc != 0.0:
        _acc(ga, "C", w.w_cc * gcc["C_a"])
        _acc(gb, "C", w.w_cc * gcc["C_b"])
        _acc(ga, "ct", w.w_cc * gcc["ct_a"])
        _acc(gb, "ct", w.w_cc * gcc["ct_b"])
        _acc(ga, "W", w.w_cc * gcc["W_a"])
        _acc(gb, "W", w.w_cc * gcc["W_b"])

    try:
        val_p, gp = loss_part_prototype(st_a["proto"], st_b["proto"])
        terms["part_prototype"] = val_p
        if w.w_p != 0.0:
            _acc(ga, "F", w.w_p * gp["F_a"])
            _acc(gb, "F", w.w_p * gp["F_b"])
    except NoCommonParts:
        logger.warning("no co-observed parts; dropping the prototype term")
        terms["part_prototype"] = 0.0

    val_beta, gbeta = loss_shape_consistency(vars_a.beta, vars_b.beta)
    terms["shape_consistency"] = val_beta
    if w.w_beta != 0.0:
        _acc(ga, "beta", w.w_beta * gbeta["beta_a"])
        _acc(gb, "beta", w.w_beta * gbeta["beta_b"])

    if problem.mask_a is not None and problem.mask_b is not None and w.w_sil != 0.0:
        val_sil = 0.0
        for st, mask, g in ((st_a, problem.mask_a, ga), (st_b, problem.mask_b, gb)):
            sil, sil_aux = soft_silhouette(
                st["v"],
                problem.model.faces,
                config.sil_tau,
                (mask.width, mask.height),
            )
            st["sil"], st["sil_aux"] = sil, sil_aux
            v_s, g_s = loss_silhouette(sil, mask)
            val_sil += v_s
            _acc(g, "sil", w.w_sil * g_s)
        terms["silhouette"] = val_sil

    w_mean = mean_shape_weight(w, config, iteration)
    val_mean = 0.0
    for vars_, g in ((vars_a, ga), (vars_b, gb)):
        v_m, g_m = loss_mean_shape(vars_.beta)
        val_mean += v_m
        if w_mean != 0.0:
            _acc(g, "beta", w_mean * g_m)
    terms["mean_shape"] = val_mean

    if w.w_mv_mesh != 0.0:
        val_mv, gmv = loss_vertex_consistency(st_a["V"], st_b["V"])
        terms["mesh_consistency"] = val_mv
        _acc(ga, "V", w.w_mv_mesh * gmv["V_a"])
        _acc(gb, "V", w.w_mv_mesh * gmv["V_b"])

    if w.w_mv_pose != 0.0:
        Y_a = regress_joints(problem.model, st_a["V"])
        Y_b = regress_joints(problem.model, st_b["V"])
        val_pose, gpose = loss_pose3d_consistency(Y_a, Y_b)
        terms["pose_consistency"] = val_pose
        _acc(ga, "Y", w.w_mv_pose * gpose["Y_a"])
        _acc(gb, "Y", w.w_mv_pose * gpose["Y_b"])

    if w.w_kp2d != 0.0:
        for st, kp, g in ((st_a, problem.kp2d_a, ga), (st_b, problem.kp2d_b, gb)):
            if kp is None:
                continue
            Y = regress_joints(problem.model, st["V"])
            y2d, _, _, joints_aux = project_with_aux(st["cam"], Y)
            st["joints_aux"] = joints_aux
            val_kp, g_kp = loss_keypoints2d(y2d, kp)
            terms["keypoints2d"] += val_kp
            _acc(g, "y2d", w.w_kp2d * g_kp)

    total = (
        w.w_cc * terms["color_consistency"]
        + w.w_p * terms["part_prototype"]
        + w.w_beta * terms["shape_consistency"]
        + w.w_sil * terms["silhouette"]
        + w_mean * terms["mean_shape"]
        + w.w_mv_mesh * terms["mesh_consistency"]
        + w.w_mv_pose * terms["pose_consistency"]
        + w.w_kp2d * terms["keypoints2d"]
    )
    terms["total"] = total
    if not want_grad:
        return total, terms, None, None
    grad_a = _backward_image(problem, st_a, ga)
    grad_b = _backward_image(problem, st_b, gb)
    return total, terms, grad_a, grad_b


@dataclass
class RestartOutcome:
    index: int
    final_loss: float
    diverged: bool
    vars_a: object = None
    vars_b: object = None
    trace: list = None


@dataclass
class FitResult:
    vars_a: ImageVars
    vars_b: ImageVars
    theta_a: np.ndarray
    theta_b: np.ndarray
    colored_a: object
    colored_b: object
    final_losses: dict
    trace: list
    restarts: list
    best_restart: int

    def image_param_dict(self, which):
        vars_ = self.vars_a if which == "a" else self.vars_b
        theta = self.theta_a if which == "a" else self.theta_b
        return {
            "phi": vars_.phi.tolist(),
            "theta": theta.tolist(),
            "beta": vars_.beta.tolist(),
            "camera": vars_.camera().to_dict(),
        }


def _clamp_step(vars_):
    np.clip(vars_.beta, -BETA_LIMIT, BETA_LIMIT, out=vars_.beta)
    return vars_


def _adam_run(problem, config, va0, vb0, index):
    va = va0.copy()
    vb = vb0.copy()
    n = ImageVars.N_PARAMS
    m = np.zeros(2 * n)
    v2 = np.zeros(2 * n)
    trace = []
    for it in range(config.iterations):
        total, terms, ga, gb = total_loss(problem, va, vb, it, config)
        if not np.isfinite(total):
            return RestartOutcome(index=index, final_loss=np.inf, diverged=True)
        trace.append({"iteration": it, **terms})
        g = np.concatenate([ga, gb])
        if not np.all(np.isfinite(g)):
            return RestartOutcome(index=index, final_loss=np.inf, diverged=True)
        t = it + 1
        m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * g
        v2 = config.adam_beta2 * v2 + (1.0 - config.adam_beta2) * g * g
        m_hat = m / (1.0 - config.adam_beta1**t)
        v_hat = v2 / (1.0 - config.adam_beta2**t)
        step = config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        x = np.concatenate([va.pack(), vb.pack()]) - step
        va = _clamp_step(ImageVars.unpack(x[:n]))
        vb = _clamp_step(ImageVars.unpack(x[n:]))
    final, terms, _, _ = total_loss(
        problem, va, vb, config.iterations, config, want_grad=False
    )
    if not np.isfinite(final):
        return RestartOutcome(index=index, final_loss=np.inf, diverged=True)
    trace.append({"iteration": config.iterations, **terms})
    return RestartOutcome(
        index=index, final_loss=final, diverged=False, vars_a=va, vars_b=vb, trace=trace
    )


def default_init(problem):
    """Spec'd starting point: zero latent and shape, framing from masks if given."""
    init = []
    for mask in (problem.mask_a, problem.mask_b):
        if mask is None:
            init.append(ImageVars.zeros())
            continue
        s, t = mask_framing(mask)
        init.append(ImageVars.zeros(t=t, s=s))
    return init[0], init[1]


def mask_framing(mask, body_height=1.7):
    """Scale and translation that frame a foreground mask's bounding box."""
    ys, xs = np.nonzero(mask.data > 0.5)
    if ys.size == 0:
        return 1.0, np.zeros(2)
    half = mask.height / 2.0
    x_lo = (xs.min() + 0.5 - mask.width / 2.0) / half
    x_hi = (xs.max() + 0.5 - mask.width / 2.0) / half
    y_lo = (ys.min() + 0.5 - mask.height / 2.0) / half
    y_hi = (ys.max() + 0.5 - mask.height / 2.0) / half
    s = max(y_hi - y_lo, 1e-3) / body_height
    t = np.array([(x_lo + x_hi) / 2.0, (y_lo + y_hi) / 2.0])
    return s, t


def _thread_count():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    if n == 0:
        return os.cpu_count() or 1
    return max(1, n)


def fit_pair(problem, config, init=None):
    """Run `restarts` Adam descents from perturbed starts; keep the best.

    init optionally supplies (vars_a, vars_b) as the base starting point;
    restart 0 uses it verbatim, later restarts add N(0, 0.1) latent noise.
    Deterministic given config.seed. Raises Diverged if every restart
    produced a non-finite objective.
    """
    if init is None:
        base_a, base_b = default_init(problem)
    else:
        base_a, base_b = init[0].copy(), init[1].copy()

    starts = []
    for r in range(config.restarts):
        va = base_a.copy()
        vb = base_b.copy()
        if r > 0:
            rng = np.random.default_rng([config.seed, r])
            for v in (va, vb):
                phi = np.tanh(v.rho) + rng.normal(0.0, 0.1, LATENT_DIM)
                v.rho = np.arctanh(np.clip(phi, -0.999999, 0.999999))
        starts.append((va, vb))

    n_threads = min(_thread_count(), config.restarts)
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            outcomes = list(
                pool.map(
                    lambda args: _adam_run(problem, config, args[1][0], args[1][1], args[0]),
                    enumerate(starts),
                )
            )
    else:
        outcomes = [
            _adam_run(problem, config, va, vb, r) for r, (va, vb) in enumerate(starts)
        ]

    live = [o for o in outcomes if not o.diverged]
    if not live:
        raise Diverged("all restarts diverged")
    best = min(live, key=lambda o: (o.final_loss, o.index))

    st_a = _forward_image(problem, best.vars_a, "a", config.resolution, with_jac=False)
    st_b = _forward_image(problem, best.vars_b, "b", config.resolution, with_jac=False)
    return FitResult(
        vars_a=best.vars_a,
        vars_b=best.vars_b,
        theta_a=st_a["theta"],
        theta_b=st_b["theta"],
        colored_a=st_a["colored"],
        colored_b=st_b["colored"],
        final_losses=best.trace[-1],
        trace=best.trace,
        restarts=[(o.index, o.final_loss, o.diverged) for o in outcomes],
        best_restart=best.index,
    )


@dataclass
class FDReport:
    names: list
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray
    max_rel_error: float
    passed: bool
    h: float
    tolerance: float

    def to_dict(self):
        return {
            "max_rel_error": self.max_rel_error,
            "passed": bool(self.passed),
            "h": self.h,
            "tolerance": self.tolerance,
            "per_parameter": [
                {
                    "name": n,
                    "analytic": float(a),
                    "numeric": float(fd),
                    "rel_error": float(r),
                }
                for n, a, fd, r in zip(
                    self.names, self.analytic, self.numeric, self.rel_errors
                )
            ],
        }


def finite_diff_check(
    problem,
    vars_a,
    vars_b,
    config=None,
    iteration=0,
    h=1e-4,
    tolerance=1e-3,
    grad_fn=None,
):
    """Central-difference audit of the analytic gradient.

    The depth maps are rasterized once at the base point and held fixed for
    every perturbed evaluation, matching the detach convention of the
    analytic path. grad_fn may override the analytic gradient (used by
    negative-control tests and fault injection).
    """
    config = config or FitConfig()
    base_a = _forward_image(problem, vars_a, "a", config.resolution, with_jac=False)
    base_b = _forward_image(problem, vars_b, "b", config.resolution, with_jac=False)
    frozen = (base_a["depth"], base_b["depth"])

    if grad_fn is None:
        _, _, ga, gb = total_loss(
            problem, vars_a, vars_b, iteration, config, frozen_depths=frozen
        )
    else:
        ga, gb = grad_fn(problem, vars_a, vars_b, iteration, config, frozen)
    analytic = np.concatenate([ga, gb])

    n = ImageVars.N_PARAMS
    x0 = np.concatenate([vars_a.pack(), vars_b.pack()])
    numeric = np.zeros_like(x0)
    for i in range(x0.size):
        for sign in (+1.0, -1.0):
            x = x0.copy()
            x[i] += sign * h
            va = ImageVars.unpack(x[:n])
            vb = ImageVars.unpack(x[n:])
            val, _, _, _ = total_loss(
                problem, va, vb, iteration, config, frozen_depths=frozen, want_grad=False
            )
            numeric[i] += sign * val
        numeric[i] /= 2.0 * h

    rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-8)
    names = [f"a.{p}" for p in param_names()] + [f"b.{p}" for p in param_names()]
    max_rel = float(rel.max())
    return FDReport(
        names=names,
        analytic=analytic,
        numeric=numeric,
        rel_errors=rel,
        max_rel_error=max_rel,
        passed=bool(max_rel < tolerance),
        h=h,
        tolerance=tolerance,
    )
