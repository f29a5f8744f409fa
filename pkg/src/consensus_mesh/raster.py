"""Deterministic software rasterization.

All rasterizers share one z-buffer core that resolves, per pixel, the winning
face and its barycentric coordinates. Coverage follows a center-in-triangle
fill rule with a top-left style tie rule; depth ties go to the lowest face
index, so identical inputs always produce bit-identical maps.

Projected coordinates are in image units (origin at the image center, y down,
1 unit = half the image height); pixel centers sit at integer positions in
pixel space under `to_pixel`.
"""

import math

import numpy as np

from .images import DepthMap, ImageRGB, Mask


def resolve_resolution(resolution):
    if isinstance(resolution, int):
        return resolution, resolution
    w, h = resolution
    return int(w), int(h)


def to_pixel(points, width, height):
    """Image-unit coordinates -> pixel coordinates (centers at integers)."""
    points = np.asarray(points, dtype=float)
    half = height / 2.0
    px = points[..., 0] * half + width / 2.0 - 0.5
    py = points[..., 1] * half + height / 2.0 - 0.5
    return np.stack([px, py], axis=-1)


def pixel_center_units(width, height):
    """Image-unit coordinates of every pixel center, shape (H, W, 2)."""
    half = height / 2.0
    xs = (np.arange(width) + 0.5 - width / 2.0) / half
    ys = (np.arange(height) + 0.5 - height / 2.0) / half
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def _expand_bboxes(x0, x1, y0, y1, face_ids):
    """Flatten per-face pixel bboxes into (pair -> face, px, py) arrays."""
    nx = x1 - x0 + 1
    ny = y1 - y0 + 1
    counts = nx * ny
    keep = (nx > 0) & (ny > 0)
    x0, y0, nx, ny, counts = x0[keep], y0[keep], nx[keep], ny[keep], counts[keep]
    face_ids = face_ids[keep]
    total = int(counts.sum())
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pair_face_slot = np.repeat(np.arange(len(counts)), counts)
    local = np.arange(total) - np.repeat(starts, counts)
    nx_rep = nx[pair_face_slot]
    px = x0[pair_face_slot] + local % nx_rep
    py = y0[pair_face_slot] + local // nx_rep
    return face_ids[pair_face_slot], px, py


def _is_tie_inside(dx, dy):
    # Deterministic ownership of shared edges: an on-edge pixel belongs to
    # the triangle whose (interior-positive) edge direction points down, or
    # left when horizontal.
    return (dy > 0) | ((dy == 0) & (dx < 0))


def rasterize_core(v, Z, faces, resolution):
    """Z-buffer resolve: winning face index and barycentric weights per pixel.

    Returns (face_map, bary) with face_map (H, W} int64, -1 on background,
    and bary (H, W, 3) barycentric coordinates in face-vertex order.
    """
    width, height = resolve_resolution(resolution)
    face_map = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    faces = np.asarray(faces, dtype=np.int64)
    if faces.size == 0 or len(v) == 0:
        return face_map, bary

    p = to_pixel(v, width, height)
    Z = np.asarray(Z, dtype=float)
    a, b, c = p[faces[:, 0]], p[faces[:, 1]], p[faces[:, 2]]
    area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (
        c[:, 0] - a[:, 0]
    )
    valid = np.abs(area2) > 1e-14

    x0 = np.maximum(np.ceil(np.minimum.reduce([a[:, 0], b[:, 0], c[:, 0]])), 0)
    x1 = np.minimum(np.floor(np.maximum.reduce([a[:, 0], b[:, 0], c[:, 0]])), width - 1)
    y0 = np.maximum(np.ceil(np.minimum.reduce([a[:, 1], b[:, 1], c[:, 1]])), 0)
    y1 = np.minimum(np.floor(np.maximum.reduce([a[:, 1], b[:, 1], c[:, 1]])), height - 1)
    x1 = np.where(valid, x1, x0 - 1)  # drop degenerate faces

    fid, px, py = _expand_bboxes(
        x0.astype(np.int64),
        x1.astype(np.int64),
        y0.astype(np.int64),
        y1.astype(np.int64),
        np.arange(len(faces)),
    )
    if fid.size == 0:
        return face_map, bary

    pa, pb, pc = a[fid], b[fid], c[fid]
    sgn = np.sign(area2[fid])
    qx = px.astype(float)
    qy = py.astype(float)

    def edge(o1, o2):
        ex = o2[:, 0] - o1[:, 0]
        ey = o2[:, 1] - o1[:, 1]
        val = ex * (qy - o1[:, 1]) - ey * (qx - o1[:, 0])
        val *= sgn
        tie = _is_tie_inside(ex * sgn, ey * sgn)
        return val, (val > 0) | ((val == 0) & tie)

    e0, in0 = edge(pb, pc)  # weight of vertex a
    e1, in1 = edge(pc, pa)  # weight of vertex b
    e2, in2 = edge(pa, pb)  # weight of vertex c
    inside = in0 & in1 & in2
    if not inside.any():
        return face_map, bary

    fid, px, py = fid[inside], px[inside], py[inside]
    denom = np.abs(area2[fid])
    l0 = e0[inside] / denom
    l1 = e1[inside] / denom
    l2 = 1.0 - l0 - l1
    z = l0 * Z[faces[fid, 0]] + l1 * Z[faces[fid, 1]] + l2 * Z[faces[fid, 2]]

    pix = py * width + px
    order = np.lexsort((fid, z, pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]

    rows, cols = py[win], px[win]
    face_map[rows, cols] = fid[win]
    bary[rows, cols, 0] = l0[win]
    bary[rows, cols, 1] = l1[win]
    bary[rows, cols, 2] = l2[win]
    return face_map, bary


def background_depth(v, Z):
    """Sentinel depth: max mesh depth plus 10x the (v, Z) bounding-box diagonal."""
    if len(Z) == 0:
        return 1.0
    v = np.asarray(v, dtype=float)
    Z = np.asarray(Z, dtype=float)
    spans = np.array(
        [np.ptp(v[:, 0]), np.ptp(v[:, 1]), np.ptp(Z)], dtype=float
    )
    diag = float(np.linalg.norm(spans))
    if diag == 0.0:
        diag = 1e-6
    return float(Z.max() + 10.0 * diag)


def rasterize_depth(v, Z, faces, resolution):
    """Hard z-buffer depth map; background pixels carry the z_far sentinel.

    The result is treated as a constant during differentiation: gradients
    flow through bilinear sample coordinates and direct depth terms only.
    """
    width, height = resolve_resolution(resolution)
    z_far = background_depth(v, Z)
    face_map, bary = rasterize_core(v, Z, faces, resolution)
    data = np.full((height, width), z_far)
    covered = face_map >= 0
    if covered.any():
        f = np.asarray(faces, dtype=np.int64)[face_map[covered]]
        Z = np.asarray(Z, dtype=float)
        zvals = np.sum(bary[covered] * Z[f], axis=1)
        data[covered] = zvals
    return DepthMap(width=width, height=height, data=data, z_far=z_far)


def render_colored(v, Z, faces, colors, resolution):
    """Z-buffered barycentric interpolation of per-vertex colors.

    Returns (ImageRGB, Mask); background is black, the mask is hard coverage.
    """
    width, height = resolve_resolution(resolution)
    face_map, bary = rasterize_core(v, Z, faces, resolution)
    img = np.zeros((height, width, 3))
    covered = face_map >= 0
    if covered.any():
        f = np.asarray(faces, dtype=np.int64)[face_map[covered]]
        colors = np.asarray(colors, dtype=float)
        img[covered] = np.einsum("pc,pcd->pd", bary[covered], colors[f])
    mask = Mask.from_array(covered.astype(float))
    return ImageRGB.from_array(img), mask


def render_part_labels(v, Z, faces, parts, resolution):
    """Integer label map: 0 background, part ids 1..L by per-face majority."""
    face_map, _ = rasterize_core(v, Z, faces, resolution)
    faces = np.asarray(faces, dtype=np.int64)
    fp = np.sort(parts.part_of_vertex[faces], axis=1)
    face_label = np.where(
        fp[:, 0] == fp[:, 1],
        fp[:, 0],
        np.where(fp[:, 1] == fp[:, 2], fp[:, 1], fp[:, 0]),
    )
    labels = np.zeros(face_map.shape, dtype=np.int64)
    covered = face_map >= 0
    labels[covered] = face_label[face_map[covered]] + 1
    return labels


def _as_array(m):
    return m.data if hasattr(m, "data") else np.asarray(m, dtype=float)


def _bilinear_setup(data, points):
    H, W = data.shape[:2]
    p = to_pixel(points, W, H)
    px = np.clip(p[:, 0], 0.0, W - 1.0)
    py = np.clip(p[:, 1], 0.0, H - 1.0)
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    x0 = np.minimum(x0, W - 2) if W > 1 else x0 * 0
    y0 = np.minimum(y0, H - 2) if H > 1 else y0 * 0
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = px - x0
    fy = py - y0
    live_x = (p[:, 0] > 0.0) & (p[:, 0] < W - 1.0)
    live_y = (p[:, 1] > 0.0) & (p[:, 1] < H - 1.0)
    return H, W, x0, x1, y0, y1, fx, fy, live_x, live_y


def sample_bilinear(grid, points):
    """Bilinear interpolation with clamp-to-edge addressing.

    grid may be a raw array, DepthMap, ImageRGB, Mask, or FeatureMap; points
    are (N, 2) image-unit coordinates. Returns (N,) or (N, C).
    """
    vals, _ = sample_bilinear_with_grad(grid, points)
    return vals


def sample_bilinear_with_grad(grid, points):
    """Sampled values plus their derivative w.r.t. the sample coordinates.

    The grid itself is held constant. Gradient shapes: (N, 2) for scalar
    grids, (N, C, 2) for channel grids; zero where clamping is active.
    """
    data = _as_array(grid)
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    H, W, x0, x1, y0, y1, fx, fy, live_x, live_y = _bilinear_setup(data, points)
    scalar = data.ndim == 2
    d = data[..., None] if scalar else data

    v00 = d[y0, x0]
    v01 = d[y0, x1]
    v10 = d[y1, x0]
    v11 = d[y1, x1]
    fx_ = fx[:, None]
    fy_ = fy[:, None]
    top = v00 * (1 - fx_) + v01 * fx_
    bot = v10 * (1 - fx_) + v11 * fx_
    vals = top * (1 - fy_) + bot * fy_

    half = H / 2.0  # d(pixel coord)/d(image unit)
    ddx = ((v01 - v00) * (1 - fy_) + (v11 - v10) * fy_) * (live_x * half)[:, None]
    ddy = (bot - top) * (live_y * half)[:, None]
    grad = np.stack([ddx, ddy], axis=-1)
    if scalar:
        return vals[:, 0], grad[:, 0, :]
    return vals, grad


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _point_segment_distance(px, py, ax, ay, bx, by):
    """Distance from points to segments plus the t-parameter case split."""
    ux = bx - ax
    uy = by - ay
    uu = ux * ux + uy * uy
    proj = (px - ax) * ux + (py - ay) * uy
    t = proj / np.maximum(uu, 1e-300)
    cross = ux * (py - ay) - uy * (px - ax)
    d_mid = np.abs(cross) / np.sqrt(np.maximum(uu, 1e-300))
    d_a = np.hypot(px - ax, py - ay)
    d_b = np.hypot(px - bx, py - by)
    mid = (t > 0.0) & (t < 1.0)
    dist = np.where(mid, d_mid, np.where(t <= 0.0, d_a, d_b))
    return dist, mid, t, cross, uu


def soft_silhouette(v, faces, tau, resolution, cutoff=20.0):
    """Differentiable coverage: A(u) = 1 - prod_f (1 - sigmoid(delta_f(u)/tau)).

    delta_f is the signed Euclidean distance (image units, positive inside)
    from the pixel center to projected triangle f. Faces farther than
    cutoff*tau from a pixel are skipped; their factor differs from 1 by less
    than sigmoid(-cutoff).

    Returns (Mask, aux); pass aux to soft_silhouette_vjp for gradients w.r.t. v.
    """
    mask, aux = _soft_silhouette_impl(v, faces, tau, resolution, cutoff)
    return mask, aux


def _soft_silhouette_impl(v, faces, tau, resolution, cutoff):
    width, height = resolve_resolution(resolution)
    faces = np.asarray(faces, dtype=np.int64)
    v = np.asarray(v, dtype=float)
    data = np.zeros((height, width))
    empty_aux = None
    if faces.size == 0 or len(v) == 0:
        return Mask.from_array(data), empty_aux

    p = to_pixel(v, width, height)
    half = height / 2.0
    margin = math.ceil(cutoff * tau * half)
    a, b, c = p[faces[:, 0]], p[faces[:, 1]], p[faces[:, 2]]
    x0 = np.maximum(np.ceil(np.minimum.reduce([a[:, 0], b[:, 0], c[:, 0]])) - margin, 0)
    x1 = np.minimum(
        np.floor(np.maximum.reduce([a[:, 0], b[:, 0], c[:, 0]])) + margin, width - 1
    )
    y0 = np.maximum(np.ceil(np.minimum.reduce([a[:, 1], b[:, 1], c[:, 1]])) - margin, 0)
    y1 = np.minimum(
        np.floor(np.maximum.reduce([a[:, 1], b[:, 1], c[:, 1]])) + margin, height - 1
    )
    fid, px, py = _expand_bboxes(
        x0.astype(np.int64),
        x1.astype(np.int64),
        y0.astype(np.int64),
        y1.astype(np.int64),
        np.arange(len(faces)),
    )
    if fid.size == 0:
        return Mask.from_array(data), empty_aux

    # Work in image units from here on.
    qx = (px + 0.5 - width / 2.0) / half
    qy = (py + 0.5 - height / 2.0) / half
    tri = v[faces[fid]]  # (P, 3, 2)

    dists = np.empty((3, fid.size))
    cases = []
    for e in range(3):
        ax, ay = tri[:, e, 0], tri[:, e, 1]
        bx, by = tri[:, (e + 1) % 3, 0], tri[:, (e + 1) % 3, 1]
        dist, mid, t, cross, uu = _point_segment_distance(qx, qy, ax, ay, bx, by)
        dists[e] = dist
        cases.append((mid, t, cross, uu))
    dmin = dists.min(axis=0)

    # Inside test: all edge crossings share the sign of the doubled area.
    area2 = (tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1]) - (
        tri[:, 1, 1] - tri[:, 0, 1]
    ) * (tri[:, 2, 0] - tri[:, 0, 0])
    sgn = np.where(area2 >= 0, 1.0, -1.0)
    crossings = np.stack([cases[e][2] for e in range(3)]) * sgn
    inside = np.all(crossings > 0, axis=0)
    delta = np.where(inside, dmin, -dmin)

    s = _sigmoid(delta / tau)
    s = np.minimum(s, 1.0 - 1e-12)
    pix = py * width + px
    log_terms = np.log1p(-s)
    log_total = np.zeros(height * width)
    np.add.at(log_total, pix, log_terms)
    data = -np.expm1(log_total).reshape(height, width)

    aux = {
        "shape": (height, width),
        "faces": faces,
        "fid": fid,
        "pix": pix,
        "qx": qx,
        "qy": qy,
        "tri": tri,
        "dists": dists,
        "dmin": dmin,
        "cases": cases,
        "inside": inside,
        "s": s,
        "log_total": log_total,
        "tau": tau,
        "n_verts": len(v),
    }
    return Mask.from_array(data), aux


def soft_silhouette_vjp(aux, grad_mask):
    """Gradient of a scalar loss w.r.t. the projected vertices v (K, 2).

    Where two or three edges of a face tie for the nearest feature (exact
    ties are routine: projected tube rings are collinear), the gradient is
    split evenly among them, which is also what central differences measure.
    """
    if aux is None:
        return None
    faces = aux["faces"]
    fid = aux["fid"]
    pix = aux["pix"]
    qx, qy = aux["qx"], aux["qy"]
    tri = aux["tri"]
    dists = aux["dists"]
    dmin = aux["dmin"]
    cases = aux["cases"]
    inside = aux["inside"]
    s = aux["s"]
    tau = aux["tau"]

    gA = np.asarray(grad_mask, dtype=float).reshape(-1)[pix]
    # A = 1 - exp(L) with L = sum log(1 - s_f): dA/ds_f = exp(L) / (1 - s_f).
    gs = gA * np.exp(aux["log_total"][pix] - np.log1p(-s))
    gdelta = gs * s * (1.0 - s) / tau
    gdmin = np.where(inside, gdelta, -gdelta)

    # Identify the nearest feature behind each tied edge distance: an edge
    # interior (feature 3+e) or one of the triangle's vertices (feature e).
    # Two edges meeting at the achieving vertex are one feature and must
    # count once; distinct tied features split the subgradient evenly,
    # which is what central differences measure at a two-way tie.
    tie = np.abs(dists - dmin) <= 1e-9 * np.maximum(dmin, 1e-12) + 1e-15
    n_pairs = fid.size
    feature = np.empty((3, n_pairs), dtype=np.int8)
    for e in range(3):
        mid, t, _, _ = cases[e]
        feature[e] = np.where(mid, 3 + e, np.where(t <= 0.0, e, (e + 1) % 3))
    seen = np.zeros((6, n_pairs), dtype=bool)
    contribute = np.zeros((3, n_pairs), dtype=bool)
    rows = np.arange(n_pairs)
    for e in range(3):
        f = feature[e]
        fresh = tie[e] & ~seen[f, rows]
        contribute[e] = fresh
        seen[f[fresh], rows[fresh]] = True
    n_distinct = np.maximum(seen.sum(axis=0), 1)
    share = gdmin / n_distinct

    grad_v = np.zeros((aux["n_verts"], 2))
    for e in range(3):
        sel = contribute[e]
        if not sel.any():
            continue
        mid, t, cross, uu = cases[e]
        mid, t, cross, uu = mid[sel], t[sel], cross[sel], uu[sel]
        g = share[sel]
        ia = faces[fid[sel], e]
        ib = faces[fid[sel], (e + 1) % 3]
        ax, ay = tri[sel, e, 0], tri[sel, e, 1]
        bx, by = tri[sel, (e + 1) % 3, 0], tri[sel, (e + 1) % 3, 1]
        pxu, pyu = qx[sel], qy[sel]

        ga = np.zeros((sel.sum(), 2))
        gb = np.zeros((sel.sum(), 2))

        # Interior of the segment: d = |cross| / |u|.
        if mid.any():
            m = mid
            sc = np.where(cross[m] >= 0, 1.0, -1.0)
            ru = 1.0 / np.sqrt(uu[m])
            ru3 = ru / uu[m]
            dca = np.stack([by[m] - pyu[m], pxu[m] - bx[m]], axis=1)
            dcb = np.stack([pyu[m] - ay[m], ax[m] - pxu[m]], axis=1)
            u_vec = np.stack([bx[m] - ax[m], by[m] - ay[m]], axis=1)
            ga[m] = sc[:, None] * (dca * ru[:, None] + (cross[m] * ru3)[:, None] * u_vec)
            gb[m] = sc[:, None] * (dcb * ru[:, None] - (cross[m] * ru3)[:, None] * u_vec)

        # Nearest feature is an endpoint.
        lo = (~mid) & (t <= 0.0)
        if lo.any():
            dx = ax[lo] - pxu[lo]
            dy = ay[lo] - pyu[lo]
            d = np.maximum(np.hypot(dx, dy), 1e-12)
            ga[lo] = np.stack([dx / d, dy / d], axis=1)
        hi = (~mid) & (t >= 1.0)
        if hi.any():
            dx = bx[hi] - pxu[hi]
            dy = by[hi] - pyu[hi]
            d = np.maximum(np.hypot(dx, dy), 1e-12)
            gb[hi] = np.stack([dx / d, dy / d], axis=1)

        np.add.at(grad_v, ia, g[:, None] * ga)
        np.add.at(grad_v, ib, g[:, None] * gb)
    return grad_v
