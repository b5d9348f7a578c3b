"""Metrics, synthetic pair generation, brush holes, golden scene."""

import numpy as np
import pytest
from scipy import ndimage

from refill.core import MaskError
from refill.harness import (
    PSNR_SENTINEL,
    BrushParams,
    SynthRegime,
    SynthTruth,
    brush_hole,
    eval_run,
    invert_truth,
    make_two_plane_scene,
    psnr,
    ssim,
    synth_pair,
)
from conftest import multiscale_noise, textured_rgb


def smooth_rgb(h, w, seeds=(1, 2, 3), lo=0.2, hi=0.8):
    img = np.stack([multiscale_noise(h, w, seed=s) for s in seeds], axis=-1)
    return lo + (hi - lo) * img


# ------------------------------------------------------------------ psnr

class TestPsnr:
    def test_identical_gives_sentinel(self):
        a = textured_rgb(32, 32, seed=1)
        assert psnr(a, a.copy()) == PSNR_SENTINEL

    def test_constant_difference_closed_form(self):
        # 20*log10(255/16) = 24.0484 dB
        a = np.full((16, 16, 3), 0.5)
        b = a + 16.0 / 255.0
        assert psnr(a, b) == pytest.approx(24.0484, abs=0.01)

    def test_empty_region_raises(self):
        a = np.zeros((8, 8, 3))
        with pytest.raises(ValueError):
            psnr(a, a, region=np.zeros((8, 8)))

    def test_region_restricts_support(self):
        a = np.zeros((8, 8, 3))
        b = a.copy()
        b[0, 0] = 1.0              # error outside the region
        region = np.zeros((8, 8))
        region[4:, 4:] = 1.0
        assert psnr(a, b, region=region) == PSNR_SENTINEL

    def test_symmetry(self):
        a = textured_rgb(24, 24, seed=2)
        b = textured_rgb(24, 24, seed=3)
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((5, 4)))


# ------------------------------------------------------------------ ssim

class TestSsim:
    def test_identical_images(self):
        a = smooth_rgb(32, 32)
        assert ssim(a, a.copy()) == 1.0

    def test_equal_constants(self):
        a = np.full((16, 16, 3), 0.42)
        assert ssim(a, a.copy()) == 1.0

    def test_inverted_checkerboard_negative(self):
        ch = (np.indices((64, 64)).sum(axis=0) % 2).astype(np.float64)
        assert ssim(ch, 1.0 - ch) < 0.0

    def test_too_small_raises(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_symmetry(self):
        a = smooth_rgb(32, 32, seeds=(4, 5, 6))
        b = smooth_rgb(32, 32, seeds=(7, 8, 9))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_bounded(self):
        a = textured_rgb(32, 32, seed=4)
        b = textured_rgb(32, 32, seed=5)
        assert -1.0 <= ssim(a, b) <= 1.0


# ------------------------------------------------------------- synth pairs

class TestSynthPair:
    def test_none_regime_identity(self):
        gt = textured_rgb(64, 64, seed=1)
        tgt, src, truth = synth_pair(gt, SynthRegime.from_name("none", seed=3))
        assert np.array_equal(tgt, gt)
        assert np.array_equal(src, gt)
        assert np.array_equal(truth.homography, np.eye(3))
        assert np.array_equal(truth.gains, np.ones(3))

    def test_zero_displacement_records_identity(self):
        gt = smooth_rgb(64, 64)
        reg = SynthRegime.from_name("spatial", seed=1, max_corner_px=0.0)
        _, src, truth = synth_pair(gt, reg)
        assert np.allclose(truth.homography, np.eye(3), atol=1e-9)
        assert np.allclose(src, gt, atol=1e-9)

    def test_pinned_color_transform_exact(self):
        gt = textured_rgb(48, 48, seed=7)
        reg = SynthRegime.from_name("color", seed=2,
                                    gain_range=(0.8, 0.8),
                                    offset_range=(0.05, 0.05))
        _, src, truth = synth_pair(gt, reg)
        assert np.array_equal(src, np.clip(gt * 0.8 + 0.05, 0.0, 1.0))
        assert np.allclose(truth.gains, 0.8)
        assert np.allclose(truth.offsets, 0.05)

    def test_deterministic(self):
        gt = textured_rgb(64, 64, seed=9)
        reg = SynthRegime.from_name("both", seed=11)
        _, s1, t1 = synth_pair(gt, reg)
        _, s2, t2 = synth_pair(gt, reg)
        assert np.array_equal(s1, s2)
        assert np.array_equal(t1.homography, t2.homography)

    @pytest.mark.parametrize("name", ["both", "color", "spatial"])
    def test_truth_roundtrip_recovers_gt(self, name):
        gt = smooth_rgb(160, 192)
        reg = SynthRegime.from_name(name, seed=5, max_corner_px=12.0)
        tgt, src, truth = synth_pair(gt, reg)
        rec = invert_truth(src, truth)
        inner = (slice(24, -24), slice(24, -24))
        assert np.abs(rec[inner] - tgt[inner]).mean() < 0.02

    def test_truth_dict_roundtrip(self):
        gt = smooth_rgb(64, 64)
        _, _, truth = synth_pair(gt, SynthRegime.from_name("both", seed=4))
        back = SynthTruth.from_dict(truth.to_dict())
        assert np.array_equal(back.homography, truth.homography)
        assert np.array_equal(back.gains, truth.gains)
        assert np.array_equal(back.offsets, truth.offsets)

    def test_unknown_regime_name(self):
        with pytest.raises(ValueError):
            SynthRegime.from_name("CS")


# ------------------------------------------------------------- brush holes

class TestBrushHole:
    def test_zero_strokes_empty_mask(self):
        m = brush_hole((128, 128), BrushParams(n_strokes=(0, 0)), seed=1)
        assert not m.any()

    def test_deterministic_per_seed(self):
        a = brush_hole((128, 128), seed=42)
        b = brush_hole((128, 128), seed=42)
        assert np.array_equal(a, b)

    def test_seeds_differ(self):
        a = brush_hole((128, 128), seed=1)
        b = brush_hole((128, 128), seed=2)
        assert not np.array_equal(a, b)

    def test_hundred_seeds_within_fraction_band(self):
        fracs = [brush_hole((256, 256), seed=s).mean() for s in range(100)]
        assert min(fracs) >= 0.05
        assert max(fracs) <= 0.40

    def test_binary_values(self):
        m = brush_hole((96, 96), seed=3)
        assert set(np.unique(m)) <= {0.0, 1.0}

    def test_unsatisfiable_bounds_raise(self):
        params = BrushParams(min_fraction=0.99, max_fraction=0.995,
                             max_attempts=3)
        with pytest.raises(MaskError):
            brush_hole((64, 64), params, seed=0)


# ------------------------------------------------------------ golden scene

class TestTwoPlaneScene:
    def test_planes_align_under_own_homography(self):
        from refill.proposals import warp_with_homography
        tgt, src, info = make_two_plane_scene(seed=0)
        fg = info["fg_mask"] > 0.5
        fg_in = ndimage.binary_erosion(fg, iterations=12)
        bg_in = ndimage.binary_erosion(~fg, iterations=12)

        wb, vb = warp_with_homography(src, info["H_bg"], tgt.shape[:2])
        err_bg = np.abs(wb - tgt).mean(axis=2)
        assert err_bg[bg_in & (vb > 0.999)].mean() < 0.005
        assert err_bg[fg_in].mean() > 0.03        # fg misaligned under H_bg

        wf, _ = warp_with_homography(src, info["H_fg"], tgt.shape[:2])
        err_fg = np.abs(wf - tgt).mean(axis=2)
        assert err_fg[fg_in].mean() < 1e-9        # integer shift: exact
        assert err_fg[bg_in].mean() > 0.03

    def test_deterministic(self):
        t1, s1, _ = make_two_plane_scene(seed=4)
        t2, s2, _ = make_two_plane_scene(seed=4)
        assert np.array_equal(t1, t2)
        assert np.array_equal(s1, s2)


# -------------------------------------------------------------- eval_run

def test_eval_run_empty_dir_raises(tmp_path):
    with pytest.raises(ValueError):
        eval_run(tmp_path, None)
