import numpy as np
import pytest
from scipy import ndimage, stats

from facecomplete.exceptions import ConfigurationError
from facecomplete.masks import (
    EVAL_SITES,
    BinaryMask,
    apply_mask,
    eval_masks,
    gen_block_mask,
    gen_noise_mask,
    gen_pattern_mask,
    load_mask_png,
    save_mask_png,
)


class TestBlockMask:
    def test_fraction_exact(self, rng):
        m = gen_block_mask(rng, S=128, block=64)
        assert m.occluded_fraction == 64 ** 2 / 128 ** 2 == 0.25
        assert m.kind == "block"

    def test_block_must_be_smaller_than_image(self, rng):
        with pytest.raises(ConfigurationError):
            gen_block_mask(rng, S=128, block=128)
        with pytest.raises(ConfigurationError):
            gen_block_mask(rng, S=64, block=100)

    def test_single_contiguous_block(self, rng):
        m = gen_block_mask(rng, S=64, block=16)
        _, n = ndimage.label(m.grid == 0)
        assert n == 1
        ys, xs = np.nonzero(m.grid == 0)
        assert ys.max() - ys.min() == 15 and xs.max() - xs.min() == 15

    def test_origin_marginals_uniform(self):
        # 10k draws; block top-left coordinates should be uniform over [0, S-block]
        rng = np.random.default_rng(2024)
        S, block, n = 128, 64, 10_000
        xs, ys = np.empty(n, dtype=int), np.empty(n, dtype=int)
        for k in range(n):
            grid = gen_block_mask(rng, S, block).grid
            ys[k], xs[k] = np.argwhere(grid == 0)[0]
        for coords in (xs, ys):
            counts = np.bincount(coords, minlength=S - block + 1)
            assert len(counts) == S - block + 1
            p = stats.chisquare(counts).pvalue
            assert p > 0.01

    def test_reproducible(self):
        a = gen_block_mask(np.random.default_rng(5), 128, 64)
        b = gen_block_mask(np.random.default_rng(5), 128, 64)
        assert np.array_equal(a.grid, b.grid)


class TestPatternMask:
    def test_fraction_within_tolerance(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            m = gen_pattern_mask(rng, S=128)
            assert 0.22 <= m.occluded_fraction <= 0.28
            assert m.kind == "pattern"

    def test_reproducible(self):
        a = gen_pattern_mask(np.random.default_rng(3), 128)
        b = gen_pattern_mask(np.random.default_rng(3), 128)
        assert np.array_equal(a.grid, b.grid)

    def test_blob_statistics_stable_across_seeds(self):
        def summarize(seed, n=300):
            rng = np.random.default_rng(seed)
            blobs, fracs = [], []
            for _ in range(n):
                m = gen_pattern_mask(rng, S=128)
                fracs.append(m.occluded_fraction)
                blobs.append(ndimage.label(m.grid == 0)[1])
            return np.mean(blobs), np.mean(fracs)

        blobs_a, frac_a = summarize(11)
        blobs_b, frac_b = summarize(222)
        assert abs(blobs_a - blobs_b) / blobs_a < 0.10
        assert abs(frac_a - frac_b) / frac_a < 0.10
        assert blobs_a >= 1.0

    def test_invalid_fraction(self, rng):
        with pytest.raises(ConfigurationError):
            gen_pattern_mask(rng, 128, target_fraction=0.0)


class TestNoiseMask:
    def test_fraction_concentration(self):
        rng = np.random.default_rng(77)
        for _ in range(100):
            m = gen_noise_mask(rng, S=128, fraction=0.80)
            assert abs(m.occluded_fraction - 0.80) <= 0.01

    def test_complement_flips_fraction(self, rng):
        m = gen_noise_mask(rng, S=128, fraction=0.80)
        flipped = BinaryMask(1 - m.grid, "noise")
        assert flipped.occluded_fraction == pytest.approx(1.0 - m.occluded_fraction)

    def test_reproducible(self):
        a = gen_noise_mask(np.random.default_rng(4), 128)
        b = gen_noise_mask(np.random.default_rng(4), 128)
        assert np.array_equal(a.grid, b.grid)

    def test_invalid_fraction(self, rng):
        with pytest.raises(ConfigurationError):
            gen_noise_mask(rng, 128, fraction=1.0)


class TestEvalMasks:
    def test_area_exact(self):
        for site, m in eval_masks(128).items():
            assert (m.grid == 0).sum() == 40 * 48 == 1920
            assert m.kind == "eval_site"

    def test_left_right_eyes_mirror(self):
        ms = eval_masks(128)
        assert np.array_equal(ms["O1"].grid[:, ::-1], ms["O2"].grid)
        assert np.array_equal(ms["O4"].grid[:, ::-1], ms["O5"].grid)

    def test_inside_border(self):
        for m in eval_masks(128).values():
            ys, xs = np.nonzero(m.grid == 0)
            assert ys.min() >= 1 and xs.min() >= 1
            assert ys.max() <= 126 and xs.max() <= 126

    def test_site_names(self):
        assert tuple(eval_masks(128).keys()) == EVAL_SITES

    def test_scales_with_resolution(self):
        for m in eval_masks(64).values():
            assert (m.grid == 0).sum() == 20 * 24

    def test_eye_landmark_recentering(self):
        ms = eval_masks(128, eye_landmarks=((30.0, 50.0), (90.0, 50.0)))
        ys, xs = np.nonzero(ms["O1"].grid == 0)
        assert abs((xs.min() + xs.max()) / 2 - 30.0) <= 1.0
        assert abs((ys.min() + ys.max()) / 2 - 50.0) <= 1.0


class TestApplyMask:
    def test_all_visible_is_identity(self, rng):
        img = rng.uniform(-1, 1, (32, 32, 3))
        out = apply_mask(img, np.ones((32, 32), dtype=np.uint8), fill="noise", rng=rng)
        assert np.array_equal(out, img)

    def test_all_occluded_zero_fill(self, rng):
        img = rng.uniform(-1, 1, (32, 32, 3))
        out = apply_mask(img, np.zeros((32, 32), dtype=np.uint8), fill="zeros")
        assert np.all(out == -1.0)

    def test_noise_fill_mean(self):
        rng = np.random.default_rng(123)
        img = np.ones((128, 128, 3))
        out = apply_mask(img, np.zeros((128, 128), dtype=np.uint8), fill="noise", rng=rng)
        assert abs(out.mean()) < 0.05
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_visible_pixels_bit_exact(self, rng):
        img = rng.uniform(-1, 1, (64, 64, 3))
        mask = gen_block_mask(rng, 64, 16)
        out = apply_mask(img, mask, fill="noise", rng=rng)
        vis = mask.grid.astype(bool)
        assert np.array_equal(out[vis], img[vis])

    def test_shape_mismatch_fatal(self, rng):
        with pytest.raises(ValueError):
            apply_mask(np.zeros((32, 32, 3)), np.ones((16, 16)), fill="zeros")

    def test_unknown_fill(self, rng):
        with pytest.raises(ConfigurationError):
            apply_mask(np.zeros((8, 8, 3)), np.ones((8, 8)), fill="blur")

    def test_noise_fill_requires_rng(self):
        with pytest.raises(ValueError):
            apply_mask(np.zeros((8, 8, 3)), np.ones((8, 8)), fill="noise")


class TestSerialization:
    def test_png_roundtrip(self, rng, tmp_path):
        m = gen_pattern_mask(rng, 64)
        path = tmp_path / "m.png"
        save_mask_png(m, path)
        back = load_mask_png(path, kind="pattern")
        assert np.array_equal(back.grid, m.grid)

    def test_nonbinary_rejected(self):
        with pytest.raises(ValueError):
            BinaryMask(np.full((8, 8), 2), "block")
