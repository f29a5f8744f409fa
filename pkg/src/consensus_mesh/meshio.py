"""Colored mesh export: ASCII PLY with uchar RGB, plus plain OBJ."""

import numpy as np

from .errors import ModelFormatError


def save_ply(path, vertices, faces, colors=None):
    """ASCII PLY; colors (K, 3) in [0, 1] become uchar red/green/blue."""
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(vertices)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if colors is not None:
        colors = np.clip(np.asarray(colors, dtype=float), 0.0, 1.0)
        rgb = np.rint(colors * 255.0).astype(np.int64)
        lines += [
            "property uchar red",
            "property uchar green",
            "property uchar blue",
        ]
    lines += [
        f"element face {len(faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        for i, p in enumerate(vertices):
            row = f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}"
            if colors is not None:
                row += f" {rgb[i, 0]} {rgb[i, 1]} {rgb[i, 2]}"
            fh.write(row + "\n")
        for f in faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def load_ply(path):
    """Read back the ASCII PLY subset written by save_ply.

    Returns (vertices, faces, colors-or-None) with colors scaled to [0, 1].
    """
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise ModelFormatError(f"{path}: not a PLY file")
        n_vert = n_face = 0
        has_color = False
        for line in fh:
            tok = line.split()
            if tok[:2] == ["element", "vertex"]:
                n_vert = int(tok[2])
            elif tok[:2] == ["element", "face"]:
                n_face = int(tok[2])
            elif tok[:3] == ["property", "uchar", "red"]:
                has_color = True
            elif tok[0] == "end_header":
                break
        verts = np.zeros((n_vert, 3))
        colors = np.zeros((n_vert, 3)) if has_color else None
        for i in range(n_vert):
            vals = fh.readline().split()
            verts[i] = [float(x) for x in vals[:3]]
            if has_color:
                colors[i] = [int(x) / 255.0 for x in vals[3:6]]
        faces = np.zeros((n_face, 3), dtype=np.int64)
        for i in range(n_face):
            vals = fh.readline().split()
            if vals[0] != "3":
                raise ModelFormatError(f"{path}: only triangle faces supported")
            faces[i] = [int(x) for x in vals[1:4]]
    return verts, faces, colors


def save_obj(path, vertices, faces):
    """Plain OBJ (positions and triangles only); 1-based indices."""
    with open(path, "w") as fh:
        for p in np.asarray(vertices, dtype=float):
            fh.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        for f in np.asarray(faces, dtype=np.int64):
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
