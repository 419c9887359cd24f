"""Homography sampling, warping, ground-truth correspondences, DLT and RANSAC.

All homographies act on pixel coordinates (x, y) and are canonicalized so the
bottom-right entry is 1.  Points are N x 2 float arrays in (x, y) order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArityError, ConfigError, DegeneracyError

_DET_EPS = 1e-12


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform with m[2][2] == 1 and |det| > 1e-12."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ConfigError("homography must be 3x3")
        if abs(m[2, 2]) < _DET_EPS:
            raise DegeneracyError("homography cannot be canonicalized (m[2][2] ~ 0)")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) < _DET_EPS:
            raise DegeneracyError("singular homography")
        object.__setattr__(self, "m", m)

    @staticmethod
    def identity() -> "Homography":
        return Homography(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def compose(self, other: "Homography") -> "Homography":
        """self after other: (self @ other)(p) = self(other(p))."""
        return Homography(self.m @ other.m)

    def to_flat(self) -> list[float]:
        return [float(v) for v in self.m.reshape(-1)]


@dataclass
class CorrespondenceSet:
    """One-to-one index pairs between two keypoint sets."""

    pairs: list[tuple[int, int]]
    tolerance_px: float

    def __len__(self):
        return len(self.pairs)


@dataclass
class HomographyConfig:
    """Knobs for the random homography sampler."""

    max_corner_perturb_frac: float = 0.15
    max_rotation_deg: float = 15.0
    scale_range: tuple[float, float] = (0.85, 1.15)
    translation_frac: float = 0.05

    def validate(self):
        if not (0.0 <= self.max_corner_perturb_frac < 0.5):
            raise ConfigError("max_corner_perturb_frac must be in [0, 0.5)")
        if self.scale_range[0] <= 0 or self.scale_range[1] < self.scale_range[0]:
            raise ConfigError("scale_range must be positive and ordered")


def warp_points(h: Homography, pts: np.ndarray) -> np.ndarray:
    """Projective transform with perspective divide.

    Points whose homogeneous w-component collapses (|w| < 1e-9) come back
    non-finite so callers can filter them.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    ones = np.ones((pts.shape[0], 1))
    hom = np.hstack([pts, ones]) @ h.m.T
    w = hom[:, 2:3]
    out = np.full_like(pts, np.nan)
    valid = np.abs(w[:, 0]) >= 1e-9
    out[valid] = hom[valid, :2] / w[valid]
    return out


def corners(image_size: tuple[int, int]) -> np.ndarray:
    """Four image corners, (x, y) order, for an image_size of (width, height)."""
    w, h = image_size
    return np.array([[0.0, 0.0], [w - 1.0, 0.0], [w - 1.0, h - 1.0], [0.0, h - 1.0]])


def corner_error(h_est: Homography, h_gt: Homography, image_size: tuple[int, int]) -> float:
    """Mean displacement of the four image corners between two homographies."""
    c = corners(image_size)
    d = warp_points(h_est, c) - warp_points(h_gt, c)
    dist = np.sqrt((d * d).sum(axis=1))
    if not np.all(np.isfinite(dist)):
        return float("inf")
    return float(dist.mean())


def sample_homography(rng: np.random.Generator, cfg: HomographyConfig,
                      image_size: tuple[int, int]) -> Homography:
    """Random similarity + projective corner perturbation.

    Deterministic given the rng state.  Near-singular draws are resampled
    internally (up to 100 tries).
    """
    cfg.validate()
    w, h = image_size
    bound = cfg.max_corner_perturb_frac * min(w, h)
    cs = corners(image_size)
    for _ in range(100):
        # similarity part around the image center
        angle = np.deg2rad(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg))
        scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1])
        tx = rng.uniform(-cfg.translation_frac, cfg.translation_frac) * w
        ty = rng.uniform(-cfg.translation_frac, cfg.translation_frac) * h
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        ca, sa = np.cos(angle) * scale, np.sin(angle) * scale
        sim = np.array([
            [ca, -sa, cx - ca * cx + sa * cy + tx],
            [sa, ca, cy - sa * cx - ca * cy + ty],
            [0.0, 0.0, 1.0],
        ])
        # projective part: displace each corner by at most `bound`
        perturbed = cs + rng.uniform(-bound, bound, size=(4, 2))
        try:
            proj = _exact_dlt(cs, perturbed)
            cand = Homography(sim @ proj.m)
        except DegeneracyError:
            continue
        if np.all(np.isfinite(warp_points(cand, cs))):
            return cand
    raise DegeneracyError("failed to sample a non-singular homography in 100 tries")


def _hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity transform taking pts to zero centroid and mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    d = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if d < 1e-12:
        raise DegeneracyError("coincident points")
    s = np.sqrt(2.0) / d
    return np.array([
        [s, 0.0, -s * centroid[0]],
        [0.0, s, -s * centroid[1]],
        [0.0, 0.0, 1.0],
    ])


def _exact_dlt(src: np.ndarray, dst: np.ndarray) -> Homography:
    """DLT without Hartley normalization; used for the corner-perturbation solve."""
    return _dlt_core(src, dst, normalize=False)


def _dlt_core(src: np.ndarray, dst: np.ndarray, normalize: bool) -> Homography:
    n = src.shape[0]
    if normalize:
        ts = _hartley_normalization(src)
        td = _hartley_normalization(dst)
        src = warp_points(Homography(ts), src)
        dst = warp_points(Homography(td), dst)
    a = np.zeros((2 * n, 9))
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v
    _, s, vt = np.linalg.svd(a)
    if s[-2] < 1e-9 * max(s[0], 1.0):
        raise DegeneracyError("rank-deficient DLT system (degenerate point configuration)")
    hm = vt[-1].reshape(3, 3)
    if normalize:
        hm = np.linalg.inv(td) @ hm @ ts
    if abs(hm[2, 2]) < _DET_EPS:
        raise DegeneracyError("DLT produced a non-canonicalizable homography")
    return Homography(hm)


def estimate_homography_dlt(src: np.ndarray, dst: np.ndarray) -> Homography:
    """Least-squares homography from >= 4 point pairs (Hartley-normalized DLT)."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ArityError("DLT needs matching src/dst point counts")
    if src.shape[0] < 4:
        raise ArityError(f"DLT needs at least 4 correspondences, got {src.shape[0]}")
    return _dlt_core(src, dst, normalize=True)


def ground_truth_correspondences(h: Homography, pos_a: np.ndarray, pos_b: np.ndarray,
                                 tol_px: float = 3.0) -> CorrespondenceSet:
    """Mutual-closest-within-tolerance pairs between two position sets.

    (i, j) is kept iff warp(h, a_i) has b_j as its nearest neighbour within
    tol_px, and warp(h^-1, b_j) has a_i as its nearest neighbour.  Ties break
    toward the lowest index; the result is one-to-one.
    """
    if tol_px <= 0:
        raise ConfigError("tol_px must be positive")
    pos_a = np.asarray(pos_a, dtype=np.float64).reshape(-1, 2)
    pos_b = np.asarray(pos_b, dtype=np.float64).reshape(-1, 2)
    if pos_a.shape[0] == 0 or pos_b.shape[0] == 0:
        return CorrespondenceSet([], tol_px)
    wa = warp_points(h, pos_a)
    wb = warp_points(h.inverse(), pos_b)
    d_fwd = np.linalg.norm(wa[:, None, :] - pos_b[None, :, :], axis=2)
    d_rev = np.linalg.norm(wb[:, None, :] - pos_a[None, :, :], axis=2)
    d_fwd = np.where(np.isfinite(d_fwd), d_fwd, np.inf)
    d_rev = np.where(np.isfinite(d_rev), d_rev, np.inf)
    nn_fwd = np.argmin(d_fwd, axis=1)
    nn_rev = np.argmin(d_rev, axis=1)
    pairs = []
    for i, j in enumerate(nn_fwd):
        if d_fwd[i, j] <= tol_px and nn_rev[j] == i:
            pairs.append((int(i), int(j)))
    return CorrespondenceSet(pairs, tol_px)


@dataclass
class RansacResult:
    success: bool
    homography: Homography | None
    inlier_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    iterations: int = 0


def ransac_homography(src: np.ndarray, dst: np.ndarray, iters: int = 1000,
                      inlier_tol_px: float = 3.0,
                      rng: np.random.Generator | None = None) -> RansacResult:
    """Robust homography fit: best 4-point hypothesis by inlier count, then DLT refit.

    Ties between hypotheses break toward lower mean inlier residual.  Returns a
    failure result (not an exception) when no hypothesis reaches 4 inliers.
    Deterministic given the rng seed.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = src.shape[0]
    if src.shape != dst.shape or n < 4:
        raise ArityError(f"RANSAC needs >= 4 matches, got {n}")
    if iters < 1:
        raise ConfigError("iters must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)

    best_count = 0
    best_resid = np.inf
    best_mask = None
    for _ in range(iters):
        idx = rng.choice(n, size=4, replace=False)
        try:
            hyp = _dlt_core(src[idx], dst[idx], normalize=True)
        except DegeneracyError:
            continue
        proj = warp_points(hyp, src)
        resid = np.linalg.norm(proj - dst, axis=1)
        resid = np.where(np.isfinite(resid), resid, np.inf)
        mask = resid <= inlier_tol_px
        count = int(mask.sum())
        if count < 4:
            continue
        mean_resid = float(resid[mask].mean())
        if count > best_count or (count == best_count and mean_resid < best_resid):
            best_count = count
            best_resid = mean_resid
            best_mask = mask
    if best_mask is None:
        return RansacResult(False, None, np.zeros(n, dtype=bool), iters)
    try:
        refined = _dlt_core(src[best_mask], dst[best_mask], normalize=True)
    except DegeneracyError:
        return RansacResult(False, None, np.zeros(n, dtype=bool), iters)
    return RansacResult(True, refined, best_mask, iters)
