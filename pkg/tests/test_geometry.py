"""Unit tests for homography algebra, DLT, correspondences, and RANSAC."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymloc.errors import ArityError, ConfigError, DegeneracyError
from asymloc.geometry import (CorrespondenceSet, Homography, HomographyConfig,
                              corner_error, corners, estimate_homography_dlt,
                              ground_truth_correspondences, ransac_homography,
                              sample_homography, warp_points)


def random_homography(rng, size=(100, 100)):
    return sample_homography(rng, HomographyConfig(), size)


# ---------------------------------------------------------------------------
# algebra

def test_canonicalization_scale_invariant():
    m = np.array([[2.0, 0, 4], [0, 2.0, 6], [0, 0, 2.0]])
    h = Homography(m)
    assert h.m[2, 2] == 1.0
    assert np.allclose(h.m, m / 2.0)


def test_identity_and_inverse_roundtrip():
    rng = np.random.default_rng(0)
    h = random_homography(rng)
    eye = h.compose(h.inverse())
    assert np.allclose(eye.m, np.eye(3), atol=1e-10)
    pts = rng.uniform(0, 100, (20, 2))
    back = warp_points(h.inverse(), warp_points(h, pts))
    assert np.allclose(back, pts, atol=1e-8)


def test_compose_order():
    t = Homography(np.array([[1, 0, 5], [0, 1, 0], [0, 0, 1]], dtype=float))
    s = Homography(np.array([[2, 0, 0], [0, 2, 0], [0, 0, 1]], dtype=float))
    p = np.array([[1.0, 1.0]])
    # (s after t)(p) = s(t(p)) = 2 * (p + [5,0])
    assert np.allclose(warp_points(s.compose(t), p), [[12.0, 2.0]])


def test_singular_rejected():
    with pytest.raises(DegeneracyError):
        Homography(np.array([[1, 0, 0], [2, 0, 0], [0, 0, 1]], dtype=float))
    with pytest.raises(DegeneracyError):
        Homography(np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1e-15]]))
    with pytest.raises(ConfigError):
        Homography(np.eye(4))


def test_warp_points_w_collapse_nonfinite():
    h = Homography(np.array([[1, 0, 0], [0, 1, 0], [-0.01, 0, 1.0]]))
    out = warp_points(h, np.array([[100.0, 0.0], [1.0, 1.0]]))
    assert not np.all(np.isfinite(out[0]))
    assert np.all(np.isfinite(out[1]))


def test_corners_convention():
    assert np.array_equal(corners((10, 6)),
                          [[0, 0], [9, 0], [9, 5], [0, 5]])


def test_corner_error_translation():
    h = Homography(np.array([[1, 0, 3], [0, 1, 4], [0, 0, 1]], dtype=float))
    assert corner_error(h, Homography.identity(), (50, 50)) == pytest.approx(5.0)


# ---------------------------------------------------------------------------
# sampling and DLT

def test_sample_homography_deterministic_and_valid():
    a = sample_homography(np.random.default_rng(7), HomographyConfig(), (96, 96))
    b = sample_homography(np.random.default_rng(7), HomographyConfig(), (96, 96))
    assert np.array_equal(a.m, b.m)
    assert abs(np.linalg.det(a.m)) > 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_dlt_exact_recovery(seed):
    rng = np.random.default_rng(seed)
    h = random_homography(rng)
    src = rng.uniform(0, 100, (8, 2))
    dst = warp_points(h, src)
    est = estimate_homography_dlt(src, dst)
    assert corner_error(est, h, (100, 100)) < 1e-6


def test_dlt_minimal_four_points():
    rng = np.random.default_rng(42)
    h = random_homography(rng)
    src = np.array([[0.0, 0], [90, 5], [85, 95], [5, 90]])
    est = estimate_homography_dlt(src, warp_points(h, src))
    assert corner_error(est, h, (100, 100)) < 1e-6


def test_dlt_arity_and_degeneracy():
    with pytest.raises(ArityError):
        estimate_homography_dlt(np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(ArityError):
        estimate_homography_dlt(np.zeros((5, 2)), np.zeros((4, 2)))
    collinear = np.array([[0.0, 0], [1, 1], [2, 2], [3, 3], [4, 4]])
    with pytest.raises(DegeneracyError):
        estimate_homography_dlt(collinear, collinear * 2)


def test_dlt_hartley_conditioning_far_origin():
    # large coordinate offsets are exactly where normalization matters
    rng = np.random.default_rng(3)
    h = random_homography(rng)
    src = rng.uniform(0, 100, (10, 2)) + 1e5
    shift = Homography(np.array([[1, 0, 1e5], [0, 1, 1e5], [0, 0, 1]], dtype=float))
    h_shifted = h.compose(shift.inverse())
    dst = warp_points(h_shifted, src)
    est = estimate_homography_dlt(src, dst)
    err = warp_points(est, src) - dst
    assert np.max(np.abs(err)) < 1e-4


# ---------------------------------------------------------------------------
# ground-truth correspondences

def test_correspondences_translation_grid():
    pos_a = np.array([[10.0, 10], [20, 10], [30, 10]])
    h = Homography(np.array([[1, 0, 2], [0, 1, 0], [0, 0, 1]], dtype=float))
    pos_b = pos_a + [2.0, 0.5]
    corr = ground_truth_correspondences(h, pos_a, pos_b, 3.0)
    assert corr.pairs == [(0, 0), (1, 1), (2, 2)]


def test_correspondences_respect_tolerance():
    pos_a = np.array([[0.0, 0.0]])
    pos_b = np.array([[5.0, 0.0]])
    corr = ground_truth_correspondences(Homography.identity(), pos_a, pos_b, 3.0)
    assert corr.pairs == []
    corr = ground_truth_correspondences(Homography.identity(), pos_a, pos_b, 6.0)
    assert corr.pairs == [(0, 0)]


def test_correspondences_one_to_one_lowest_index_ties():
    pos_a = np.array([[0.0, 0.0], [0.0, 0.0]])   # duplicate a-points
    pos_b = np.array([[0.0, 0.0]])
    corr = ground_truth_correspondences(Homography.identity(), pos_a, pos_b, 1.0)
    assert corr.pairs == [(0, 0)]


def test_correspondences_empty_inputs():
    corr = ground_truth_correspondences(Homography.identity(),
                                        np.zeros((0, 2)), np.zeros((0, 2)), 3.0)
    assert corr.pairs == []


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_correspondences_are_one_to_one(seed):
    rng = np.random.default_rng(seed)
    h = random_homography(rng)
    pos_a = rng.uniform(10, 90, (30, 2))
    pos_b = rng.uniform(10, 90, (25, 2))
    corr = ground_truth_correspondences(h, pos_a, pos_b, 5.0)
    a_idx = [i for i, _ in corr.pairs]
    b_idx = [j for _, j in corr.pairs]
    assert len(set(a_idx)) == len(a_idx)
    assert len(set(b_idx)) == len(b_idx)


# ---------------------------------------------------------------------------
# RANSAC

def _noisy_matches(rng, h, n=60, outlier_frac=0.4, noise=0.5, frame=100.0):
    src = rng.uniform(0, frame, (n, 2))
    dst = warp_points(h, src) + rng.normal(0, noise, (n, 2))
    n_out = int(outlier_frac * n)
    idx = rng.choice(n, n_out, replace=False)
    dst[idx] = rng.uniform(0, frame, (n_out, 2))
    return src, dst


def test_ransac_rejects_outliers():
    rng = np.random.default_rng(12)
    h = random_homography(rng)
    src, dst = _noisy_matches(rng, h)
    res = ransac_homography(src, dst, iters=1000, inlier_tol_px=3.0,
                            rng=np.random.default_rng(0))
    assert res.success
    assert corner_error(res.homography, h, (100, 100)) < 1.5


def test_ransac_failure_is_result_not_exception():
    # collinear data makes every 4-point hypothesis degenerate
    t = np.linspace(0, 1, 12)
    src = np.stack([t * 100, t * 100], axis=1)
    dst = src * 1.5
    res = ransac_homography(src, dst, iters=50, inlier_tol_px=1.0,
                            rng=np.random.default_rng(0))
    assert not res.success
    assert res.homography is None
    assert not res.inlier_mask.any()


def test_ransac_deterministic_given_rng():
    rng = np.random.default_rng(5)
    h = random_homography(rng)
    src, dst = _noisy_matches(rng, h)
    r1 = ransac_homography(src, dst, rng=np.random.default_rng(3))
    r2 = ransac_homography(src, dst, rng=np.random.default_rng(3))
    assert np.array_equal(r1.homography.m, r2.homography.m)
    assert np.array_equal(r1.inlier_mask, r2.inlier_mask)


def test_ransac_too_few_points():
    with pytest.raises(ArityError):
        ransac_homography(np.zeros((3, 2)), np.zeros((3, 2)),
                          rng=np.random.default_rng(0))
