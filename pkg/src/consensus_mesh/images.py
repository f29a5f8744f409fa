"""Raster map containers and file I/O (PNG, PFM, palette label maps).

Pixel values live in float64 internally; quantization to 8 bits happens only
at the PNG boundary. Depth maps export to little-endian PFM.
"""

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ModelFormatError


@dataclass
class ImageRGB:
    width: int
    height: int
    data: np.ndarray  # (H, W, 3) float

    @classmethod
    def from_array(cls, data):
        data = np.asarray(data, dtype=float)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError("ImageRGB expects an (H, W, 3) array")
        return cls(width=data.shape[1], height=data.shape[0], data=data)


@dataclass
class Mask:
    width: int
    height: int
    data: np.ndarray  # (H, W) float in [0, 1]

    @classmethod
    def from_array(cls, data):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2:
            raise ValueError("Mask expects an (H, W) array")
        return cls(width=data.shape[1], height=data.shape[0], data=data)


@dataclass
class DepthMap:
    width: int
    height: int
    data: np.ndarray  # (H, W) float
    z_far: float  # background sentinel; every foreground pixel is smaller


@dataclass
class FeatureMap:
    width: int
    height: int
    data: np.ndarray  # (H, W, D) float


def save_png(image, path):
    arr = np.clip(image.data, 0.0, 1.0)
    arr = np.rint(arr * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return ImageRGB.from_array(arr)


def save_mask_png(mask, path):
    arr = np.clip(mask.data, 0.0, 1.0)
    arr = np.rint(arr * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_mask_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return Mask.from_array(arr)


def label_palette(n_labels):
    """Deterministic palette: background black, then evenly spaced hues."""
    pal = np.zeros((256, 3), dtype=np.uint8)
    for i in range(1, min(n_labels + 1, 256)):
        h = (i - 1) / max(n_labels, 1)
        r, g, b = _hsv_to_rgb(h, 0.85, 0.95)
        pal[i] = (int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))
    return pal


def _hsv_to_rgb(h, s, v):
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def save_labels_png(labels, path, n_labels=None):
    """Write an integer label map as a palette-indexed PNG."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("label ids must fit in one byte")
    if n_labels is None:
        n_labels = int(labels.max())
    im = Image.fromarray(labels.astype(np.uint8), mode="P")
    im.putpalette(label_palette(n_labels).reshape(-1).tolist())
    im.save(path, format="PNG")


def load_labels_png(path):
    with Image.open(path) as im:
        if im.mode != "P":
            im = im.convert("P")
        return np.asarray(im, dtype=np.int64)


def save_depth_pfm(depth, path):
    """Little-endian grayscale PFM; rows are stored bottom-to-top."""
    H, W = depth.data.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{W} {H}\n".encode("ascii"))
        fh.write(b"-1.0\n")  # negative scale marks little-endian
        fh.write(depth.data[::-1].astype("<f4").tobytes())


def load_depth_pfm(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise ModelFormatError(f"{path}: not a grayscale PFM")
        W, H = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(W * H * 4), dtype=dtype).reshape(H, W)
    data = np.asarray(data[::-1], dtype=np.float64)
    return DepthMap(width=W, height=H, data=data, z_far=float(data.max()))
