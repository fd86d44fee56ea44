"""Synthetic digit-on-noise images with exact object masks, and IDX ingestion.

Each class has a fixed stroke template. An image draws its noisy RGB
background first, then its label, then an affine jitter of the template; the
glyph is every pixel within a distance threshold of the jittered strokes, with
the threshold chosen so the glyph covers a target fraction of the image.
Backgrounds stay below the glyph brightness, so mask pixels always differ from
the background they cover.
"""
import struct
from dataclasses import dataclass

import numpy as np

from .errors import IdxFormatError
from .seeding import rng_for


def _ring(cx, cy, rx, ry, n=16):
    t = np.linspace(0, 2 * np.pi, n + 1)
    return list(zip(cx + rx * np.cos(t), cy + ry * np.sin(t)))


# strokes in unit coordinates, x to the right and y downwards
TEMPLATES = (
    [_ring(0.5, 0.5, 0.28, 0.38)],
    [[(0.32, 0.3), (0.52, 0.15), (0.52, 0.82)], [(0.32, 0.82), (0.72, 0.82)]],
    [[(0.2, 0.3), (0.35, 0.12), (0.65, 0.12), (0.78, 0.3), (0.7, 0.5), (0.2, 0.88), (0.82, 0.88)]],
    [[(0.2, 0.15), (0.75, 0.15), (0.45, 0.45), (0.75, 0.62), (0.7, 0.85), (0.2, 0.88)]],
    [[(0.65, 0.9), (0.65, 0.1), (0.15, 0.65), (0.85, 0.65)]],
    [[(0.8, 0.12), (0.25, 0.12), (0.22, 0.45), (0.65, 0.42), (0.8, 0.65), (0.65, 0.88), (0.2, 0.85)]],
    [[(0.7, 0.12), (0.3, 0.45), (0.22, 0.75), (0.45, 0.9), (0.72, 0.78), (0.7, 0.55), (0.3, 0.55)]],
    [[(0.2, 0.12), (0.8, 0.12), (0.4, 0.9)]],
    [_ring(0.5, 0.3, 0.18, 0.17), _ring(0.5, 0.7, 0.22, 0.2)],
    [_ring(0.5, 0.32, 0.2, 0.2), [(0.7, 0.32), (0.6, 0.9)]],
)


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 28
    channels: int = 3
    num_classes: int = 10
    area_low: float = 0.2  # glyph-area fraction is drawn uniformly from [area_low, area_high]
    area_high: float = 0.3
    background_low: float = 0.05  # range of the per-image background mean
    background_high: float = 0.45
    background_spread: float = 0.25  # per-pixel uniform noise half-width around the mean
    glyph_low: float = 0.85  # per-channel glyph brightness range
    rotation: float = 0.25  # radians
    scale_low: float = 0.72
    scale_high: float = 0.88
    shear: float = 0.15
    shift: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_classes <= len(TEMPLATES):
            raise ValueError(f"num_classes must lie in [1, {len(TEMPLATES)}]")
        if not 0.15 <= self.area_low <= self.area_high <= 0.35:
            raise ValueError("glyph area range must lie inside [0.15, 0.35]")
        if self.background_high + self.background_spread >= self.glyph_low:
            raise ValueError("background must stay darker than the glyph")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")


@dataclass(frozen=True, eq=False)
class LabeledImage:
    image: np.ndarray
    label: int
    mask: np.ndarray


@dataclass(frozen=True, eq=False)
class Dataset:
    """Images (n, C, H, W) float32, labels (n,) int64, masks (n, H, W) uint8 or None."""

    images: np.ndarray
    labels: np.ndarray
    masks: np.ndarray = None

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        return LabeledImage(self.images[i], int(self.labels[i]), None if self.masks is None else self.masks[i])

    def subset(self, idx):
        return Dataset(self.images[idx], self.labels[idx], None if self.masks is None else self.masks[idx])


def _segment_distance(px, py, strokes):
    best = np.full(px.shape, np.inf)
    for pts in strokes:
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            dx, dy = x1 - x0, y1 - y0
            L2 = dx * dx + dy * dy
            t = np.clip(((px - x0) * dx + (py - y0) * dy) / L2, 0.0, 1.0) if L2 > 0 else 0.0
            d = np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))
            best = np.minimum(best, d)
    return best


def _jitter(cfg, rng, strokes):
    th = rng.uniform(-cfg.rotation, cfg.rotation)
    s = rng.uniform(cfg.scale_low, cfg.scale_high)
    sh = rng.uniform(-cfg.shear, cfg.shear)
    t = rng.uniform(-cfg.shift, cfg.shift, size=2)
    A = s * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]]) @ np.array([[1.0, sh], [0.0, 1.0]])
    n = cfg.image_size
    out = []
    for pts in strokes:
        p = (np.asarray(pts) - 0.5) @ A.T + 0.5 + t
        out.append([tuple(q) for q in p * n])
    return out


def glyph_mask(cfg, label, rng, area=None):
    """Binary mask of one jittered glyph covering about ``area`` of the image."""
    n = cfg.image_size
    strokes = _jitter(cfg, rng, TEMPLATES[label])
    if area is None:
        area = rng.uniform(cfg.area_low, cfg.area_high)
    # render on a padded canvas, then move the glyph by whole pixels so it
    # keeps a one-pixel margin inside the frame
    pad = n // 2
    py, px = np.mgrid[-pad:n + pad, -pad:n + pad] + 0.5
    k = max(1, int(round(area * n * n)))
    for _ in range(20):
        d = _segment_distance(px, py, strokes)
        big = d <= np.sort(d.ravel())[k - 1]
        rows, cols = np.flatnonzero(big.any(axis=1)), np.flatnonzero(big.any(axis=0))
        if rows[-1] - rows[0] <= n - 3 and cols[-1] - cols[0] <= n - 3:
            break
        # too large for the frame: shrink the strokes about the image centre and redraw
        strokes = [[(n / 2 + 0.9 * (x - n / 2), n / 2 + 0.9 * (y - n / 2)) for x, y in pts] for pts in strokes]
    else:
        raise ValueError("glyph does not fit the image; lower the area")

    def offset(lo, hi):
        lo, hi = lo - pad, hi - pad
        return max(0, 1 - lo) - max(0, hi - (n - 2))

    dr, dc = offset(rows[0], rows[-1]), offset(cols[0], cols[-1])
    big = np.roll(big, (dr, dc), axis=(0, 1))
    return big[pad:pad + n, pad:pad + n].astype(np.uint8)


def _background(cfg, rng):
    shape = (cfg.channels, cfg.image_size, cfg.image_size)
    mean = rng.uniform(cfg.background_low, cfg.background_high, size=(cfg.channels, 1, 1))
    return np.clip(mean + rng.uniform(-cfg.background_spread, cfg.background_spread, size=shape), 0.0, 1.0)


def _one(cfg, index):
    rng = rng_for(cfg.seed, "synth", index)
    bg = _background(cfg, rng)
    label = int(rng.integers(cfg.num_classes))
    mask = glyph_mask(cfg, label, rng)
    color = rng.uniform(cfg.glyph_low, 1.0, size=(cfg.channels, 1, 1))
    img = np.where(mask[None].astype(bool), color, bg)
    return bg, img, label, mask


def generate(cfg, n, start=0):
    """``n`` labelled images; image i depends only on (cfg, start + i)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    imgs, labels, masks = [], [], []
    for i in range(start, start + n):
        _, img, label, mask = _one(cfg, i)
        imgs.append(img)
        labels.append(label)
        masks.append(mask)
    return Dataset(np.array(imgs, dtype=np.float32), np.array(labels, dtype=np.int64), np.array(masks, dtype=np.uint8))


def generate_backgrounds(cfg, n, start=0):
    """The pre-glyph backgrounds and labels of the same images ``generate`` would produce."""
    bgs, labels = [], []
    for i in range(start, start + n):
        bg, _, label, _ = _one(cfg, i)
        bgs.append(bg)
        labels.append(label)
    return np.array(bgs, dtype=np.float32), np.array(labels, dtype=np.int64)


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------


def _read_idx(path, magic, rank):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    head = 4 + 4 * rank
    if len(raw) < head:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{rank}I", raw[4:head])
    size = int(np.prod(dims))
    if len(raw) - head < size:
        raise IdxFormatError(f"{path}: truncated data, expected {size} bytes, found {len(raw) - head}")
    if len(raw) - head > size:
        raise IdxFormatError(f"{path}: {len(raw) - head - size} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims)


def load_idx(images_path, labels_path):
    """MNIST-style IDX images (magic 0x803) and labels (magic 0x801), images scaled to [0, 1].

    Returns a Dataset of (n, 1, H, W) float32 images without masks.
    """
    images = _read_idx(images_path, 0x00000803, 3)
    labels = _read_idx(labels_path, 0x00000801, 1)
    if len(images) != len(labels):
        raise IdxFormatError(f"{len(images)} images but {len(labels)} labels")
    return Dataset((images.astype(np.float32) / np.float32(255.0))[:, None], labels.astype(np.int64), None)
