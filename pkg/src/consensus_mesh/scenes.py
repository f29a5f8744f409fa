"""Synthetic scene construction shared by tests, scripts, and CLI previews."""

import numpy as np

from .bodymodel import skin
from .camera import CameraParams, look_at_front, project
from .images import ImageRGB
from .raster import rasterize_depth, render_colored


def default_colors(model):
    """Smooth palette over the body, constant within each symmetry group.

    Channels depend only on (y, |x|), which mirrored vertices share exactly,
    and slopes are kept gentle so rendered interpolation stays close to the
    vertex colors.
    """
    p = model.template
    y = p[:, 1]
    ax = np.abs(p[:, 0])
    y0, y1 = y.min(), y.max()
    r = 0.30 + 0.50 * (y - y0) / (y1 - y0)
    g = 0.35 + 0.30 * ax / max(ax.max(), 1e-9)
    b = 0.30 + 0.40 * (y1 - y) / (y1 - y0)
    return np.stack([r, g, b], axis=1)


def frame_camera(V, rot=None, fill=0.85):
    """Scale/translate so the rotated body fits the square image frame."""
    if rot is None:
        rot = look_at_front()
    cam0 = CameraParams(rot=rot, t=np.zeros(2), s=1.0)
    v, _, _ = project(cam0, V)
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    extent = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    s = fill * 2.0 / extent
    center = (lo + hi) / 2.0
    return CameraParams(rot=rot, t=-s * center, s=s)


def gradient_background(resolution, c0, c1, horizontal=True):
    if isinstance(resolution, int):
        w = h = resolution
    else:
        w, h = resolution
    c0 = np.asarray(c0, dtype=float)
    c1 = np.asarray(c1, dtype=float)
    ramp = np.linspace(0.0, 1.0, w if horizontal else h)
    data = c0 + ramp[:, None] * (c1 - c0)
    data = np.tile(data[None, :, :], (h, 1, 1)) if horizontal else np.tile(
        data[:, None, :], (1, w, 1)
    )
    return ImageRGB.from_array(data)


def composite_over(rendered, mask, background):
    """Rendered foreground over a background using the hard coverage mask."""
    m = mask.data[:, :, None]
    data = rendered.data * m + background.data * (1.0 - m)
    return ImageRGB.from_array(data)


def render_scene(model, beta, theta, cam, colors, resolution, background=None):
    """Render a posed colored body; returns dict with image, mask, depth, V."""
    V, _ = skin(model, beta, theta)
    v, Z, _ = project(cam, V)
    image, mask = render_colored(v, Z, model.faces, colors, resolution)
    if background is not None:
        image = composite_over(image, mask, background)
    depth = rasterize_depth(v, Z, model.faces, resolution)
    return {"V": V, "v": v, "Z": Z, "image": image, "mask": mask, "depth": depth}


def arm_over_torso_pose(model):
    """Left forearm flexed across the chest; the rest of the body at rest.

    Built for occlusion tests: the forearm sits well in front of the torso
    (clear depth gap) while the camera looks at the front of the body.
    """
    theta = np.zeros(3 * model.joint_count)
    names = model.joint_names
    shoulder = names.index("l_shoulder") - 1
    elbow = names.index("l_elbow") - 1
    # Swing the arm forward (toward -z) and fold the forearm across the body.
    theta[3 * shoulder : 3 * shoulder + 3] = (0.0, 1.25, 0.0)
    theta[3 * elbow : 3 * elbow + 3] = (0.0, 1.15, 0.0)
    return theta
