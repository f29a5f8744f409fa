"""Command-line interface.

Subcommands: synth, render, recover-colors, fit-pair, gradcheck, transfer,
eval. Exit codes: 0 success, 1 verification failure, 2 usage/input error,
3 optimization failure. Every subcommand is deterministic given --seed.
"""

import argparse
import csv
import json
import sys

import numpy as np

from . import scenes
from .bodymodel import load_model_json, regress_joints, save_model_json, skin
from .camera import project
from .colorrec import (
    DEFAULT_ALPHA,
    DEFAULT_GAMMA,
    DEFAULT_FALLBACK,
    pick_colors,
    propagate_symmetry,
    visibility,
)
from .errors import ConsensusMeshError, Diverged, ModelFormatError
from .fitter import (
    FitConfig,
    FitProblem,
    ImageVars,
    LossWeights,
    finite_diff_check,
    fit_pair,
    TRACE_TERMS,
)
from .images import (
    load_mask_png,
    load_labels_png,
    load_png,
    save_depth_pfm,
    save_labels_png,
    save_mask_png,
    save_png,
)
from .metrics import mpjpe, pa_mpjpe, seg_metrics
from .meshio import load_ply, save_obj, save_ply
from .paramsio import load_params_json, load_skeleton_json, save_params_json
from .poseprior import fit_prior, load_mocap_json
from .raster import rasterize_depth, render_colored, render_part_labels
from .synth import synth_model, synthetic_mocap

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_INPUT = 2
EXIT_OPTIM = 3


def _add_weight_flags(p):
    p.add_argument("--w-cc", type=float, default=None, help="color consistency weight")
    p.add_argument("--lam", type=float, default=None, help="co-visible color inner weight")
    p.add_argument("--w-p", type=float, default=None, help="part prototype weight")
    p.add_argument("--w-beta", type=float, default=None, help="shape consistency weight")
    p.add_argument("--w-sil", type=float, default=None, help="silhouette weight")
    p.add_argument("--w-mean", type=float, default=None, help="initial mean-shape weight")
    p.add_argument("--w-mv-mesh", type=float, default=None)
    p.add_argument("--w-mv-pose", type=float, default=None)
    p.add_argument("--w-kp2d", type=float, default=None)


def _weights_from_args(args):
    weights = LossWeights()
    if getattr(args, "config", None):
        with open(args.config) as fh:
            doc = json.load(fh)
        weights = LossWeights.from_dict(doc.get("weights", doc))
    mapping = {
        "w_cc": "w_cc",
        "lam": "lam",
        "w_p": "w_p",
        "w_beta": "w_beta",
        "w_sil": "w_sil",
        "w_mean": "w_mean",
        "w_mv_mesh": "w_mv_mesh",
        "w_mv_pose": "w_mv_pose",
        "w_kp2d": "w_kp2d",
    }
    for arg_name, field_name in mapping.items():
        val = getattr(args, arg_name, None)
        if val is not None:
            setattr(weights, field_name, val)
    return weights


def _load_image(path):
    try:
        return load_png(path)
    except OSError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc


def cmd_synth(args):
    model = synth_model(seed=args.seed, k_target=args.vertices, joints=args.joints)
    save_model_json(model, args.out_model)
    if args.out_preview:
        colors = scenes.default_colors(model)
        cam = scenes.frame_camera(model.template)
        scene = scenes.render_scene(
            model,
            np.zeros(10),
            np.zeros(3 * model.joint_count),
            cam,
            colors,
            args.resolution,
        )
        save_png(scene["image"], args.out_preview)
    print(f"model: {model.vertex_count} vertices, {model.face_count} faces, "
          f"{model.joint_count} joints, {len(model.symmetry)} symmetry groups")
    return EXIT_OK


def cmd_render(args):
    model = load_model_json(args.model)
    params = load_params_json(args.params)
    colors = None
    if args.colors:
        _, _, colors = load_ply(args.colors)
        if colors is None or len(colors) != model.vertex_count:
            raise ModelFormatError(f"{args.colors}: no per-vertex colors for this model")
    if colors is None:
        colors = np.full((model.vertex_count, 3), 0.7)
    V, _ = skin(model, params["beta"], params["theta"])
    v, Z, _ = project(params["camera"], V)
    image, mask = render_colored(v, Z, model.faces, colors, args.resolution)
    save_png(image, args.out)
    if args.mask_out:
        save_mask_png(mask, args.mask_out)
    if args.depth:
        save_depth_pfm(rasterize_depth(v, Z, model.faces, args.resolution), args.depth)
    if args.parts:
        labels = render_part_labels(v, Z, model.faces, model.parts, args.resolution)
        save_labels_png(labels, args.parts, n_labels=len(model.parts))
    return EXIT_OK


def _recover(model, params, image, resolution, alpha, gamma, fallback):
    from .bodymodel import vertex_normals
    from .camera import camera_normals

    V, _ = skin(model, params["beta"], params["theta"])
    v, Z, _ = project(params["camera"], V)
    depth = rasterize_depth(v, Z, model.faces, resolution)
    n_world = vertex_normals(model, V)
    N = camera_normals(params["camera"], n_world)
    W = visibility(depth, v, Z, N, alpha, gamma)
    c_tilde = pick_colors(image, v, W.W)
    colored = propagate_symmetry(c_tilde, W.W, model.symmetry, fallback)
    return V, colored


def _parse_fallback(text):
    vals = [float(x) for x in text.split(",")]
    if len(vals) != 3:
        raise ValueError("fallback must be r,g,b")
    return tuple(vals)


def cmd_recover_colors(args):
    model = load_model_json(args.model)
    params = load_params_json(args.params)
    image = _load_image(args.image)
    fallback = _parse_fallback(args.fallback)
    V, colored = _recover(
        model, params, image, args.resolution, args.alpha, args.gamma, fallback
    )
    save_ply(args.out_ply, V, model.faces, np.clip(colored.colors, 0.0, 1.0))
    if args.out_obj:
        save_obj(args.out_obj, V, model.faces)
    unobserved = np.nonzero(~colored.observed)[0].tolist()
    report = {
        "groups": len(colored.observed),
        "observed": int(colored.observed.sum()),
        "unobserved_group_ids": unobserved,
    }
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report, fh)
            fh.write("\n")
    print(f"observed {report['observed']}/{report['groups']} symmetry groups")
    return EXIT_OK


def _build_prior(model, args):
    if getattr(args, "mocap", None):
        poses = load_mocap_json(args.mocap)
    else:
        poses = synthetic_mocap(model, n=200, seed=args.seed)
    return fit_prior(poses)


def cmd_fit_pair(args):
    import os

    model = load_model_json(args.model)
    prior = _build_prior(model, args)
    weights = _weights_from_args(args)
    config = FitConfig(
        iterations=args.iterations,
        learning_rate=args.learning_rate,
        restarts=args.restarts,
        warmup_iters=args.warmup,
        seed=args.seed,
        resolution=args.resolution,
        sil_tau=args.sil_tau,
    )
    mask_a = load_mask_png(args.mask_a) if args.mask_a else None
    mask_b = load_mask_png(args.mask_b) if args.mask_b else None
    problem = FitProblem(
        model=model,
        prior=prior,
        image_a=_load_image(args.image_a),
        image_b=_load_image(args.image_b),
        mask_a=mask_a,
        mask_b=mask_b,
        weights=weights,
        alpha=args.alpha,
        gamma=args.gamma,
    )
    result = fit_pair(problem, config)

    os.makedirs(args.out_dir, exist_ok=True)
    for which in ("a", "b"):
        vars_ = result.vars_a if which == "a" else result.vars_b
        theta = result.theta_a if which == "a" else result.theta_b
        save_params_json(
            os.path.join(args.out_dir, f"params_{which}.json"),
            theta,
            vars_.beta,
            vars_.camera(),
            phi=vars_.phi,
            losses=result.final_losses,
        )
        colored = result.colored_a if which == "a" else result.colored_b
        V, _ = skin(model, vars_.beta, theta)
        save_ply(
            os.path.join(args.out_dir, f"mesh_{which}.ply"),
            V,
            model.faces,
            np.clip(colored.colors, 0.0, 1.0),
        )
    with open(os.path.join(args.out_dir, "trace.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration"] + TRACE_TERMS)
        for row in result.trace:
            writer.writerow([row["iteration"]] + [repr(row[t]) for t in TRACE_TERMS])
    print(
        f"best restart {result.best_restart}; final total loss "
        f"{result.final_losses['total']:.6g}"
    )
    return EXIT_OK


def cmd_gradcheck(args):
    model = load_model_json(args.model) if args.model else synth_model(
        seed=args.seed, k_target=args.vertices
    )
    prior = _build_prior(model, args)
    colors = scenes.default_colors(model)
    rng = np.random.default_rng(args.seed)
    config = FitConfig(resolution=args.resolution, seed=args.seed)

    reports = []
    for idx in range(args.configs):
        phi_a = rng.uniform(-0.6, 0.6, 32)
        phi_b = rng.uniform(-0.6, 0.6, 32)
        beta_a = rng.uniform(-0.5, 0.5, 10)
        beta_b = rng.uniform(-0.5, 0.5, 10)
        images = []
        for phi, beta, flip in ((phi_a, beta_a, False), (phi_b, beta_b, True)):
            theta = prior.decode(phi)
            V, _ = skin(model, beta, theta)
            cam = scenes.frame_camera(V, fill=0.8)
            bg = scenes.gradient_background(
                args.resolution,
                (0.1, 0.2, 0.55) if not flip else (0.75, 0.6, 0.15),
                (0.3, 0.55, 0.2) if not flip else (0.2, 0.1, 0.4),
                horizontal=not flip,
            )
            scene = scenes.render_scene(model, beta, theta, cam, colors, args.resolution, bg)
            images.append((scene["image"], cam))
        problem = FitProblem(
            model=model, prior=prior, image_a=images[0][0], image_b=images[1][0]
        )
        vars_a = ImageVars.zeros(rot=images[0][1].rot, t=images[0][1].t, s=images[0][1].s)
        vars_b = ImageVars.zeros(rot=images[1][1].rot, t=images[1][1].t, s=images[1][1].s)
        vars_a.rho = np.arctanh(np.clip(phi_a + rng.normal(0, 0.05, 32), -0.99, 0.99))
        vars_b.rho = np.arctanh(np.clip(phi_b + rng.normal(0, 0.05, 32), -0.99, 0.99))
        vars_a.beta = beta_a + rng.normal(0, 0.05, 10)
        vars_b.beta = beta_b + rng.normal(0, 0.05, 10)

        grad_fn = None
        if args.inject_fault:

            def grad_fn(problem, va, vb, iteration, cfg, frozen):
                from .fitter import total_loss

                _, _, ga, gb = total_loss(
                    problem, va, vb, iteration, cfg, frozen_depths=frozen
                )
                ga = ga.copy()
                ga[0] += 0.05  # deliberate corruption for the negative control
                return ga, gb

        report = finite_diff_check(
            problem,
            vars_a,
            vars_b,
            config=config,
            h=args.h,
            tolerance=args.tolerance,
            grad_fn=grad_fn,
        )
        reports.append(report)
        print(f"config {idx}: max rel error {report.max_rel_error:.3e} "
              f"({'pass' if report.passed else 'FAIL'})")

    worst = max(r.max_rel_error for r in reports)
    passed = all(r.passed for r in reports)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(
                {
                    "passed": bool(passed),
                    "max_rel_error": worst,
                    "configs": [r.to_dict() for r in reports],
                },
                fh,
            )
            fh.write("\n")
    print(f"gradcheck {'passed' if passed else 'FAILED'}: max rel error {worst:.3e}")
    return EXIT_OK if passed else EXIT_VERIFY


def cmd_transfer(args):
    model = load_model_json(args.model)
    source_params = load_params_json(args.source_params)
    target_params = load_params_json(args.target_params)
    fallback = _parse_fallback(args.fallback)
    _, source_colored = _recover(
        model,
        source_params,
        _load_image(args.source_image),
        args.resolution,
        args.alpha,
        args.gamma,
        fallback,
    )
    colors = source_colored.colors.copy()

    if args.parts is not None:
        names = [p for p in args.parts.split(",") if p]
        unknown = [n for n in names if n not in model.parts.names]
        if unknown:
            raise ModelFormatError(
                f"unknown part name(s) {unknown}; known: {model.parts.names}"
            )
        if not args.target_image:
            raise ModelFormatError("part-conditioned transfer needs --target-image")
        _, target_colored = _recover(
            model,
            target_params,
            _load_image(args.target_image),
            args.resolution,
            args.alpha,
            args.gamma,
            fallback,
        )
        colors = target_colored.colors.copy()
        for name in names:
            ix = model.parts.vertex_sets[model.parts.index_of(name)]
            colors[ix] = source_colored.colors[ix]

    V, _ = skin(model, target_params["beta"], target_params["theta"])
    v, Z, _ = project(target_params["camera"], V)
    image, _ = render_colored(v, Z, model.faces, np.clip(colors, 0.0, 1.0), args.resolution)
    save_png(image, args.out)
    return EXIT_OK


def cmd_eval(args):
    out = {}
    if args.pred_skel or args.gt_skel:
        if not (args.pred_skel and args.gt_skel):
            raise ModelFormatError("skeleton eval needs both --pred-skel and --gt-skel")
        pred = load_skeleton_json(args.pred_skel)
        gt = load_skeleton_json(args.gt_skel)
        out["mpjpe"] = mpjpe(pred, gt)
        out["pa_mpjpe"] = pa_mpjpe(pred, gt)
    if args.pred_labels or args.gt_labels:
        if not (args.pred_labels and args.gt_labels):
            raise ModelFormatError("label eval needs both --pred-labels and --gt-labels")
        pred = load_labels_png(args.pred_labels)
        gt = load_labels_png(args.gt_labels)
        n_parts = args.num_parts if args.num_parts else int(max(pred.max(), gt.max()))
        out["segmentation"] = seg_metrics(pred, gt, n_parts)
    if not out:
        raise ModelFormatError("nothing to evaluate; pass skeletons and/or label maps")
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="consensus-mesh",
        description="Colored body-mesh recovery: synthesize, render, recover "
        "colors, fit image pairs, verify gradients, transfer appearance, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a procedural humanoid model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vertices", type=int, default=600, help="target vertex count")
    p.add_argument("--joints", type=int, default=15)
    p.add_argument("--resolution", type=int, default=512)
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-preview", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="render a posed model")
    p.add_argument("--model", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--colors", default=None, help="colored PLY supplying vertex colors")
    p.add_argument("--resolution", type=int, default=512)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out", default=None)
    p.add_argument("--depth", default=None, help="also write a PFM depth map")
    p.add_argument("--parts", default=None, help="also write a part-label PNG")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("recover-colors", help="recover vertex colors from one image")
    p.add_argument("--model", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--fallback", default="0.5,0.5,0.5")
    p.add_argument("--out-ply", required=True)
    p.add_argument("--out-obj", default=None)
    p.add_argument("--report", default=None, help="observed-group report JSON")
    p.set_defaults(func=cmd_recover_colors)

    p = sub.add_parser("fit-pair", help="fit pose/shape/cameras to an image pair")
    p.add_argument("--model", required=True)
    p.add_argument("--image-a", required=True)
    p.add_argument("--image-b", required=True)
    p.add_argument("--mask-a", default=None)
    p.add_argument("--mask-b", default=None)
    p.add_argument("--mocap", default=None, help="pose set JSON for the prior")
    p.add_argument("--config", default=None, help="JSON with a weights object")
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--warmup", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--sil-tau", type=float, default=0.01)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    _add_weight_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_fit_pair)

    p = sub.add_parser("gradcheck", help="finite-difference audit of the gradients")
    p.add_argument("--model", default=None, help="model JSON (default: synthesize)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vertices", type=int, default=300)
    p.add_argument("--configs", type=int, default=5)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--mocap", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("transfer", help="full-body or part-conditioned appearance transfer")
    p.add_argument("--model", required=True)
    p.add_argument("--source-image", required=True)
    p.add_argument("--source-params", required=True)
    p.add_argument("--target-params", required=True)
    p.add_argument("--target-image", default=None)
    p.add_argument("--parts", default=None, help="comma-separated part names")
    p.add_argument("--resolution", type=int, default=512)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--fallback", default="0.5,0.5,0.5")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("eval", help="pose and segmentation metrics")
    p.add_argument("--pred-skel", default=None)
    p.add_argument("--gt-skel", default=None)
    p.add_argument("--pred-labels", default=None)
    p.add_argument("--gt-labels", default=None)
    p.add_argument("--num-parts", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Diverged as exc:
        print(f"optimization failed: {exc}", file=sys.stderr)
        return EXIT_OPTIM
    except (ConsensusMeshError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
