"""Heatmap export as binary PPM (P6).

The seismic map is two linear ramps: -1 is blue (0, 0, 255), 0 is white and
+1 is red (255, 0, 0). Channel values are floored, so -0.5 gives 127.
"""
import os

import numpy as np


def seismic_rgb(values):
    """uint8 (H, W, 3) seismic colours of values clipped to [-1, 1]."""
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    if v.ndim != 2:
        raise ValueError(f"heatmaps need a 2-D map, got shape {v.shape}")
    if np.any(np.isnan(v)):
        raise ValueError("heatmap values must not be NaN")
    fade = np.floor(255.0 * (1.0 - np.abs(v))).astype(np.uint8)
    full = np.full(v.shape, 255, dtype=np.uint8)
    r = np.where(v < 0, fade, full)
    b = np.where(v > 0, fade, full)
    return np.stack([r, fade, b], axis=-1)


def overlay_rgb(values, base, threshold=0.05):
    """Red blended over ``base`` where value > threshold, with opacity equal to the value.

    ``base`` is (C, H, W) or (H, W) in [0, 1]; one channel is shown as grey.
    """
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    b = np.asarray(base, dtype=np.float64)
    if b.ndim == 3:
        b = np.repeat(b, 3, axis=0) if b.shape[0] == 1 else b[:3]
        b = np.moveaxis(b, 0, -1)
    elif b.ndim == 2:
        b = np.repeat(b[..., None], 3, axis=-1)
    if b.shape[:2] != v.shape:
        raise ValueError(f"base image {b.shape[:2]} does not match map {v.shape}")
    alpha = np.where(np.asarray(values) > threshold, v, 0.0)[..., None]
    red = np.array([1.0, 0.0, 0.0])
    out = (1.0 - alpha) * np.clip(b, 0.0, 1.0) + alpha * red
    return np.floor(255.0 * out).astype(np.uint8)


def upscale(rgb, scale):
    if scale < 1:
        raise ValueError("scale must be at least 1")
    return np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)


def write_ppm(path, rgb):
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, c = rgb.shape
    if c != 3:
        raise ValueError("PPM needs three channels")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())
    os.replace(tmp, path)


def read_ppm(path):
    """Parse a P6 file written by ``write_ppm`` (no comments)."""
    with open(path, "rb") as f:
        raw = f.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit P6 image")
    w, h = int(parts[1]), int(parts[2])
    data = parts[4]
    if len(data) != w * h * 3:
        raise ValueError(f"{path}: expected {w * h * 3} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)


def export_heatmap(values, path, mode="seismic", base=None, threshold=0.05, scale=1):
    """Write a map (array or AggregateMap) as a PPM heatmap; returns the RGB array."""
    v = np.asarray(values.values if hasattr(values, "values") else values)
    if mode == "seismic":
        rgb = seismic_rgb(v)
    elif mode == "overlay":
        if base is None:
            raise ValueError("overlay mode needs a base image")
        rgb = overlay_rgb(v, base, threshold)
    else:
        raise ValueError(f"unknown heatmap mode {mode!r}")
    rgb = upscale(rgb, scale)
    write_ppm(path, rgb)
    return rgb
