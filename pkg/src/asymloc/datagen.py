"""Homography-pair training data.

Base images are either procedurally synthesized (texture-rich compositions of
polygons, ellipses, lines, checkerboards, and smooth gradients) or ingested
from a directory of PGM/PPM/PNG files.  A pair is (augment(base),
augment(warp(base, H))) with the exact H recorded; augmentation is photometric
only, so the ground-truth homography is never disturbed.  Rotation/scale
live in the homography sampler.

Everything is driven by numpy's PCG64 generator seeded from (seed, index), so
pair sequences are reproducible across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .backend import warp_bilinear
from .errors import ConfigError, CorpusError
from .geometry import Homography, HomographyConfig, sample_homography

LUMA = (0.299, 0.587, 0.114)


@dataclass
class AugmentConfig:
    """Photometric augmentation bounds and per-op apply probabilities.

    On grayscale input the HSV shift degenerates to a multiplicative gain,
    which is how ``hsv_gain_range`` is applied here.  Geometric rotation and
    scaling belong to :class:`HomographyConfig`, not to this suite.
    """

    brightness_delta: float = 0.15
    contrast_range: tuple[float, float] = (0.8, 1.2)
    gamma_range: tuple[float, float] = (0.8, 1.25)
    hsv_gain_range: tuple[float, float] = (0.9, 1.1)
    blur_sigma_range: tuple[float, float] = (0.5, 1.5)
    motion_blur_len_range: tuple[int, int] = (3, 7)
    gaussian_noise_sigma: float = 0.03
    p_brightness_contrast: float = 0.5
    p_gamma: float = 0.3
    p_hsv: float = 0.3
    p_blur: float = 0.2
    p_motion_blur: float = 0.2
    p_noise: float = 0.5

    @staticmethod
    def disabled() -> "AugmentConfig":
        return AugmentConfig(p_brightness_contrast=0.0, p_gamma=0.0, p_hsv=0.0,
                             p_blur=0.0, p_motion_blur=0.0, p_noise=0.0)


@dataclass
class TrainingPair:
    image_a: np.ndarray
    image_b: np.ndarray
    h_ab: Homography
    source_id: str


def synth_base_image(rng: np.random.Generator, size: tuple[int, int]) -> np.ndarray:
    """Procedural grayscale image in [0,1]; deterministic given the rng."""
    w, h = size
    if w < 64 or h < 64:
        raise ConfigError("base images must be at least 64x64")
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xn, yn = xs / w, ys / h

    # smooth background gradient plus a low-frequency wave
    g = rng.uniform(0.2, 0.8)
    img = g + rng.uniform(-0.3, 0.3) * xn + rng.uniform(-0.3, 0.3) * yn
    img += rng.uniform(0.0, 0.15) * np.sin(
        2 * np.pi * (rng.uniform(0.5, 2.0) * xn + rng.uniform(0.5, 2.0) * yn + rng.uniform()))

    for _ in range(int(rng.integers(8, 16))):
        kind = rng.integers(0, 5)
        val = rng.uniform(0.0, 1.0)
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        ang = rng.uniform(0, np.pi)
        ca, sa = np.cos(ang), np.sin(ang)
        u = (xs - cx) * ca + (ys - cy) * sa
        v = -(xs - cx) * sa + (ys - cy) * ca
        if kind == 0:  # rotated rectangle
            a, b = rng.uniform(0.05, 0.3, 2) * min(w, h)
            mask = (np.abs(u) < a) & (np.abs(v) < b)
        elif kind == 1:  # ellipse
            a, b = rng.uniform(0.05, 0.25, 2) * min(w, h)
            mask = (u / a) ** 2 + (v / b) ** 2 < 1.0
        elif kind == 2:  # convex quadrilateral
            r = rng.uniform(0.08, 0.3) * min(w, h)
            angles = np.sort(rng.uniform(0, 2 * np.pi, 4))
            px = cx + r * np.cos(angles)
            py = cy + r * np.sin(angles)
            mask = np.ones((h, w), dtype=bool)
            for k in range(4):
                x1, y1 = px[k], py[k]
                x2, y2 = px[(k + 1) % 4], py[(k + 1) % 4]
                mask &= ((x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)) <= 0
        elif kind == 3:  # checkerboard patch
            cell = rng.integers(4, 12)
            a, b = rng.uniform(0.1, 0.3, 2) * min(w, h)
            region = (np.abs(u) < a) & (np.abs(v) < b)
            checker = ((np.floor(u / cell) + np.floor(v / cell)) % 2).astype(bool)
            val2 = rng.uniform(0.0, 1.0)
            img = np.where(region & checker, val2, img)
            mask = region & ~checker
        else:  # thick line segment
            length = rng.uniform(0.2, 0.8) * min(w, h)
            thick = rng.uniform(1.0, 4.0)
            mask = (np.abs(v) < thick) & (np.abs(u) < length / 2)
        img = np.where(mask, val, img)

    return np.clip(img, 0.0, 1.0).astype(np.float32)


def augment(img: np.ndarray, acfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Photometric augmentation in a fixed order:
    brightness/contrast, gamma, grayscale gain, blur, motion blur, noise.
    Output clamped to [0,1]; never changes geometry.
    """
    out = img.astype(np.float64)
    if rng.random() < acfg.p_brightness_contrast:
        gain = rng.uniform(*acfg.contrast_range)
        delta = rng.uniform(-acfg.brightness_delta, acfg.brightness_delta)
        out = (out - 0.5) * gain + 0.5 + delta
        out = np.clip(out, 0.0, 1.0)
    if rng.random() < acfg.p_gamma:
        gamma = rng.uniform(*acfg.gamma_range)
        out = np.clip(out, 0.0, 1.0) ** gamma
    if rng.random() < acfg.p_hsv:
        out = np.clip(out * rng.uniform(*acfg.hsv_gain_range), 0.0, 1.0)
    if rng.random() < acfg.p_blur:
        out = ndimage.gaussian_filter(out, sigma=rng.uniform(*acfg.blur_sigma_range))
    if rng.random() < acfg.p_motion_blur:
        length = int(rng.integers(acfg.motion_blur_len_range[0],
                                  acfg.motion_blur_len_range[1] + 1))
        kernel = np.ones(length) / length
        axis = int(rng.integers(0, 2))
        out = ndimage.convolve1d(out, kernel, axis=axis, mode="nearest")
    if rng.random() < acfg.p_noise and acfg.gaussian_noise_sigma > 0:
        out = out + rng.normal(0.0, acfg.gaussian_noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def generate_pair(base: np.ndarray, rng: np.random.Generator,
                  hcfg: HomographyConfig, acfg: AugmentConfig,
                  source_id: str = "synthetic") -> TrainingPair:
    """Warp + augment a base image into a training pair with exact h_ab."""
    h, w = base.shape
    hom = sample_homography(rng, hcfg, (w, h))
    warped = warp_bilinear(base, np.linalg.inv(hom.m), h, w)
    image_a = augment(base, acfg, rng)
    image_b = augment(warped.astype(np.float32), acfg, rng)
    return TrainingPair(image_a, image_b, hom, source_id)


def _decode_pnm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] not in (b"P5", b"P6"):
        raise ValueError(f"not a binary PGM/PPM file: {path}")
    magic, w, h, maxval = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"only 8-bit PNM supported: {path}")
    raw = parts[4]
    channels = 1 if magic == b"P5" else 3
    arr = np.frombuffer(raw[: w * h * channels], dtype=np.uint8)
    if arr.size < w * h * channels:
        raise ValueError(f"truncated PNM payload: {path}")
    arr = arr.reshape(h, w, channels).astype(np.float64) / 255.0
    if channels == 3:
        arr = LUMA[0] * arr[..., 0] + LUMA[1] * arr[..., 1] + LUMA[2] * arr[..., 2]
    else:
        arr = arr[..., 0]
    return arr


def _decode_png(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        arr = arr[..., :3].astype(np.float64) / 255.0
        return LUMA[0] * arr[..., 0] + LUMA[1] * arr[..., 1] + LUMA[2] * arr[..., 2]
    return arr.astype(np.float64) / 255.0


def decode_image(path) -> np.ndarray:
    """Decode a single PGM/PPM/PNG file to grayscale [0,1] at native size."""
    p = Path(path)
    if p.suffix.lower() in (".pgm", ".ppm", ".pnm"):
        return _decode_pnm(p).astype(np.float32)
    if p.suffix.lower() == ".png":
        return _decode_png(p).astype(np.float32)
    raise CorpusError(f"unsupported image format: {p}")


def _fit_to_size(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape
    scale = size / min(h, w)
    zoomed = ndimage.zoom(img, scale, order=1)
    zh, zw = zoomed.shape
    top = max(0, (zh - size) // 2)
    left = max(0, (zw - size) // 2)
    out = zoomed[top:top + size, left:left + size]
    if out.shape != (size, size):  # rounding shortfall
        out = np.pad(out, ((0, size - out.shape[0]), (0, size - out.shape[1])), mode="edge")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def load_corpus(path, max_images: int | None = None, training_size: int = 160,
                warn=None) -> list[np.ndarray]:
    """Decode a directory of PGM/PPM/PNG rasters to grayscale [0,1] squares.

    Undecodable files are skipped with a warning; an empty yield is an error.
    """
    root = Path(path)
    images: list[np.ndarray] = []
    files = sorted(p for p in root.iterdir() if p.is_file()) if root.is_dir() else []
    for p in files:
        if max_images is not None and len(images) >= max_images:
            break
        try:
            if p.suffix.lower() in (".pgm", ".ppm", ".pnm"):
                img = _decode_pnm(p)
            elif p.suffix.lower() == ".png":
                img = _decode_png(p)
            else:
                continue
            images.append(_fit_to_size(img, training_size))
        except Exception as exc:  # per-file failures must not kill the corpus
            if warn is not None:
                warn(f"skipping {p}: {exc}")
    if not images:
        raise CorpusError(f"no decodable images in {root}")
    return images


@dataclass
class DatasetConfig:
    num_pairs: int = 2000
    image_size: int = 160
    seed: int = 0
    hcfg: HomographyConfig = field(default_factory=HomographyConfig)
    acfg: AugmentConfig = field(default_factory=AugmentConfig)
    corpus_dir: str | None = None


class PairDataset:
    """Deterministic indexed collection of training pairs.

    Pair ``i`` is fully determined by (seed, i); iteration order is the index
    order, so two runs with the same config see bit-identical data.
    """

    def __init__(self, cfg: DatasetConfig):
        self.cfg = cfg
        self._bases = None
        if cfg.corpus_dir is not None:
            self._bases = load_corpus(cfg.corpus_dir, training_size=cfg.image_size)

    def __len__(self):
        return self.cfg.num_pairs

    def pair(self, index: int) -> TrainingPair:
        rng = np.random.default_rng([self.cfg.seed, index])
        if self._bases is not None:
            base = self._bases[index % len(self._bases)]
            source = f"corpus:{index % len(self._bases)}"
        else:
            base = synth_base_image(rng, (self.cfg.image_size, self.cfg.image_size))
            source = f"synthetic:{self.cfg.seed}:{index}"
        return generate_pair(base, rng, self.cfg.hcfg, self.cfg.acfg, source)

    def __iter__(self):
        for i in range(len(self)):
            yield self.pair(i)
