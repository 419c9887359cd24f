"""Synthetic pair generation, augmentation, image decoding, corpus loading."""

import numpy as np
import pytest

from asymloc.datagen import (AugmentConfig, DatasetConfig, PairDataset,
                             augment, decode_image, generate_pair,
                             load_corpus, synth_base_image)
from asymloc.errors import ConfigError, CorpusError
from asymloc.geometry import (HomographyConfig, corners,
                              ground_truth_correspondences, warp_points)


def test_synth_base_image_deterministic_and_bounded():
    a = synth_base_image(np.random.default_rng(3), (96, 96))
    b = synth_base_image(np.random.default_rng(3), (96, 96))
    assert np.array_equal(a, b)
    assert a.dtype == np.float32 and a.shape == (96, 96)
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert a.std() > 0.02  # actually textured, not flat
    c = synth_base_image(np.random.default_rng(4), (96, 96))
    assert not np.array_equal(a, c)


def test_synth_base_image_too_small_rejected():
    with pytest.raises(ConfigError):
        synth_base_image(np.random.default_rng(0), (32, 64))


def test_augment_disabled_is_identity():
    img = synth_base_image(np.random.default_rng(0), (64, 64))
    out = augment(img, AugmentConfig.disabled(), np.random.default_rng(1))
    assert np.array_equal(out, img)


def test_augment_photometric_only_and_bounded():
    img = synth_base_image(np.random.default_rng(0), (64, 64))
    acfg = AugmentConfig(p_brightness_contrast=1.0, p_gamma=1.0, p_hsv=1.0,
                         p_blur=1.0, p_motion_blur=1.0, p_noise=1.0)
    out = augment(img, acfg, np.random.default_rng(1))
    assert out.shape == img.shape
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert not np.array_equal(out, img)


def test_generate_pair_homography_consistency():
    # with augmentation off, warping image_a by h_ab reproduces image_b
    # wherever the warp stays inside the frame
    base = synth_base_image(np.random.default_rng(5), (96, 96))
    pair = generate_pair(base, np.random.default_rng(5), HomographyConfig(),
                         AugmentConfig.disabled())
    assert np.array_equal(pair.image_a, base)
    src = corners((96, 96)).astype(np.float64)
    dst = warp_points(pair.h_ab, src)
    assert np.all(np.isfinite(dst))
    # dense check through the ground-truth correspondence helper
    ys, xs = np.mgrid[20:76:8, 20:76:8]
    pos = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    warped = warp_points(pair.h_ab, pos)
    inside = np.all((warped >= 1) & (warped <= 94), axis=1)
    sampled_a = pair.image_a[pos[inside, 1].astype(int), pos[inside, 0].astype(int)]
    xi = np.clip(warped[inside, 0], 0, 94)
    yi = np.clip(warped[inside, 1], 0, 94)
    x0, y0 = xi.astype(int), yi.astype(int)
    fx, fy = xi - x0, yi - y0
    b = pair.image_b
    sampled_b = ((1 - fx) * (1 - fy) * b[y0, x0] + fx * (1 - fy) * b[y0, x0 + 1]
                 + (1 - fx) * fy * b[y0 + 1, x0] + fx * fy * b[y0 + 1, x0 + 1])
    assert np.mean(np.abs(sampled_a - sampled_b)) < 0.05


def test_pair_dataset_deterministic_and_indexed():
    cfg = DatasetConfig(num_pairs=4, image_size=64, seed=11)
    d1, d2 = PairDataset(cfg), PairDataset(cfg)
    p1, p2 = d1.pair(2), d2.pair(2)
    assert np.array_equal(p1.image_a, p2.image_a)
    assert np.array_equal(p1.image_b, p2.image_b)
    assert np.array_equal(p1.h_ab.m, p2.h_ab.m)
    assert not np.array_equal(d1.pair(0).image_a, d1.pair(1).image_a)
    assert len(list(d1)) == 4


def test_pair_dataset_seed_changes_data():
    a = PairDataset(DatasetConfig(num_pairs=1, image_size=64, seed=0)).pair(0)
    b = PairDataset(DatasetConfig(num_pairs=1, image_size=64, seed=1)).pair(0)
    assert not np.array_equal(a.image_a, b.image_a)


def test_pair_has_usable_correspondences():
    pair = PairDataset(DatasetConfig(num_pairs=1, image_size=96, seed=7)).pair(0)
    rng = np.random.default_rng(0)
    pos_a = rng.uniform(10, 86, (64, 2))
    pos_b = warp_points(pair.h_ab, pos_a)
    keep = np.all((pos_b >= 0) & (pos_b <= 95), axis=1)
    corr = ground_truth_correspondences(pair.h_ab, pos_a[keep], pos_b[keep], 3.0)
    assert len(corr.pairs) == int(keep.sum())


# ---------------------------------------------------------------------------
# decoding and corpus loading

def write_pgm(path, arr):
    arr = (np.clip(arr, 0, 1) * 255).astype(np.uint8)
    h, w = arr.shape
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes())


def write_ppm(path, arr_rgb):
    arr = (np.clip(arr_rgb, 0, 1) * 255).astype(np.uint8)
    h, w, _ = arr.shape
    path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes())


def test_decode_pgm_roundtrip(tmp_path):
    img = synth_base_image(np.random.default_rng(0), (64, 64))
    p = tmp_path / "a.pgm"
    write_pgm(p, img)
    got = decode_image(p)
    assert got.shape == (64, 64)
    assert np.max(np.abs(got - img)) < 1.0 / 255 + 1e-6


def test_decode_ppm_luma(tmp_path):
    rgb = np.zeros((8, 8, 3))
    rgb[..., 1] = 1.0  # pure green
    p = tmp_path / "g.ppm"
    write_ppm(p, rgb)
    got = decode_image(p)
    assert np.allclose(got, 0.587, atol=2e-3)


def test_decode_png(tmp_path):
    from PIL import Image
    img = (synth_base_image(np.random.default_rng(1), (64, 64)) * 255).astype(np.uint8)
    p = tmp_path / "a.png"
    Image.fromarray(img, mode="L").save(p)
    got = decode_image(p)
    assert got.shape == (64, 64)
    assert np.max(np.abs(got - img / 255.0)) < 1e-6


def test_decode_unsupported_suffix(tmp_path):
    p = tmp_path / "a.bmp"
    p.write_bytes(b"BM")
    with pytest.raises(CorpusError):
        decode_image(p)


def test_load_corpus_skips_bad_files_and_resizes(tmp_path):
    img = synth_base_image(np.random.default_rng(0), (80, 120))
    write_pgm(tmp_path / "good.pgm", img)
    (tmp_path / "broken.pgm").write_bytes(b"P5\n10 10\n255\nshort")
    (tmp_path / "notes.txt").write_text("ignore me")
    warnings = []
    images = load_corpus(tmp_path, training_size=64, warn=warnings.append)
    assert len(images) == 1
    assert images[0].shape == (64, 64)
    assert len(warnings) == 1 and "broken.pgm" in warnings[0]


def test_load_corpus_empty_is_error(tmp_path):
    with pytest.raises(CorpusError):
        load_corpus(tmp_path, training_size=64)


def test_load_corpus_max_images(tmp_path):
    for i in range(5):
        write_pgm(tmp_path / f"{i}.pgm",
                  synth_base_image(np.random.default_rng(i), (64, 64)))
    images = load_corpus(tmp_path, training_size=64, max_images=3)
    assert len(images) == 3
