import numpy as np
import pytest

from conftest import textured_rgb
from refill.core import PipelineConfig, RefillError, masked_target
from refill.harness import make_two_plane_scene, psnr
from refill.pipeline import (FusionResult, fill_only_composite, pick_fit_scale,
                             run_pipeline)


def checker_hole(h, w, y0=None, x0=None, size=24):
    hole = np.zeros((h, w))
    y0 = h // 2 - size // 2 if y0 is None else y0
    x0 = w // 2 - size // 2 if x0 is None else x0
    hole[y0:y0 + size, x0:x0 + size] = 1.0
    return hole


class TestFitScale:
    def test_small_stays_native(self):
        assert pick_fit_scale(192, 256) == 1
        assert pick_fit_scale(256, 256) == 1

    def test_doubles_until_bounded(self):
        assert pick_fit_scale(512, 512) == 2
        assert pick_fit_scale(768, 1024) == 4
        assert pick_fit_scale(2048, 2048) == 8


class TestSelfReference:
    """Source identical to target: the pipeline has perfect evidence."""

    def test_reconstruction_psnr(self):
        tgt = textured_rgb(160, 200, seed=21)
        hole = checker_hole(160, 200)
        out = run_pipeline(tgt, hole, tgt, PipelineConfig())
        assert not out.degraded
        assert psnr(tgt, out.composite, region=hole) >= 45.0

    def test_known_pixels_bit_identical(self):
        tgt = textured_rgb(96, 128, seed=3)
        hole = checker_hole(96, 128, size=20)
        out = run_pipeline(tgt, hole, tgt, PipelineConfig())
        known = hole < 0.5
        assert np.array_equal(out.composite[known], tgt[known])


class TestDegradedInputs:
    def test_textureless_degrades_to_fill(self):
        flat = np.full((96, 128, 3), 0.5)
        hole = checker_hole(96, 128, size=16)
        out = run_pipeline(flat, hole, flat, PipelineConfig())
        assert out.degraded
        assert out.proposals == []
        assert out.notes
        baseline = fill_only_composite(flat, hole, PipelineConfig())
        assert np.array_equal(out.composite, baseline)

    def test_degraded_weights_are_fallback_only(self):
        flat = np.full((64, 64, 3), 0.25)
        hole = checker_hole(64, 64, size=12)
        out = run_pipeline(flat, hole, flat, PipelineConfig())
        assert out.weights.proposal_weights.shape == (0, 64, 64)
        assert np.array_equal(out.weights.fallback, np.ones((64, 64)))
        assert out.n_proposals_used == 0

    def test_empty_hole_returns_target(self):
        tgt = textured_rgb(64, 64, seed=8)
        out = run_pipeline(tgt, np.zeros((64, 64)), tgt, PipelineConfig())
        assert np.array_equal(out.composite, tgt)
        assert out.notes == ["empty hole"]
        assert not out.degraded

    def test_invalid_config_raises(self):
        tgt = textured_rgb(64, 64, seed=8)
        cfg = PipelineConfig(n_clusters=0)
        with pytest.raises(RefillError):
            run_pipeline(tgt, np.zeros((64, 64)), tgt, cfg)

    def test_mask_shape_mismatch_raises(self):
        tgt = textured_rgb(64, 64, seed=8)
        with pytest.raises(RefillError):
            run_pipeline(tgt, np.zeros((32, 32)), tgt)


class TestDeterminism:
    def test_repeat_runs_bit_identical(self):
        tgt = textured_rgb(128, 160, seed=5)
        src = textured_rgb(128, 160, seed=5)
        hole = checker_hole(128, 160)
        a = run_pipeline(tgt, hole, src, PipelineConfig(rng_seed=7))
        b = run_pipeline(tgt, hole, src, PipelineConfig(rng_seed=7))
        assert np.array_equal(a.composite, b.composite)
        assert np.array_equal(a.weights.proposal_weights,
                              b.weights.proposal_weights)
        assert np.array_equal(a.fill, b.fill)


class TestToggles:
    def test_all_disabled_equals_fill_only(self):
        tgt = textured_rgb(128, 160, seed=11)
        hole = checker_hole(128, 160)
        probe = run_pipeline(tgt, hole, tgt, PipelineConfig())
        n = len(probe.proposals)
        assert n >= 1
        toggles = {i: False for i in range(1, n + 1)}
        cfg = PipelineConfig(proposal_toggles=toggles)
        out = run_pipeline(tgt, hole, tgt, cfg)
        baseline = fill_only_composite(tgt, hole, PipelineConfig())
        assert np.array_equal(out.composite, baseline)

    def test_disabled_proposal_gets_zero_weight(self):
        tgt = textured_rgb(128, 160, seed=11)
        hole = checker_hole(128, 160)
        cfg = PipelineConfig(proposal_toggles={1: False})
        out = run_pipeline(tgt, hole, tgt, cfg)
        assert np.all(out.weights.proposal_weights[0] == 0.0)

    def test_partition_of_unity_with_toggle(self):
        tgt = textured_rgb(128, 160, seed=11)
        hole = checker_hole(128, 160)
        out = run_pipeline(tgt, hole, tgt, PipelineConfig(proposal_toggles={1: False}))
        assert out.weights.partition_error() <= 1e-6


class TestTwoPlaneScene:
    def test_residual_clustering_beats_single_homography(self):
        tgt, src, info = make_two_plane_scene(seed=0)
        hole = info["hole"]
        multi = run_pipeline(tgt, hole, src,
                             PipelineConfig(clustering_mode="residual", n_clusters=2))
        single = run_pipeline(tgt, hole, src,
                              PipelineConfig(clustering_mode="none", n_clusters=1))
        assert not multi.degraded and not single.degraded
        p_multi = psnr(tgt, multi.composite, region=hole)
        p_single = psnr(tgt, single.composite, region=hole)
        assert len(multi.proposals) >= 2
        assert p_multi - p_single >= 3.0

    def test_proposal_ids_stable_and_fill_last(self):
        tgt, src, info = make_two_plane_scene(seed=0)
        out = run_pipeline(tgt, info["hole"], src,
                           PipelineConfig(clustering_mode="residual", n_clusters=2))
        assert [p.index for p in out.proposals] == list(
            range(1, len(out.proposals) + 1))
        assert out.fill_id == len(out.proposals) + 1
        assert out.proposals[-1].source_cluster == "global"


class TestOutputModes:
    def setup_method(self):
        self.tgt = textured_rgb(96, 128, seed=17)
        self.hole = checker_hole(96, 128, size=20)

    def test_poisson_keeps_known_pixels(self):
        out = run_pipeline(self.tgt, self.hole, self.tgt,
                           PipelineConfig(), poisson=True)
        known = self.hole < 0.5
        assert np.allclose(out.composite[known], self.tgt[known], atol=1e-9)

    def test_posthoc_runs_and_preserves_known(self):
        out = run_pipeline(self.tgt, self.hole, self.tgt,
                           PipelineConfig(), posthoc=True)
        known = self.hole < 0.5
        assert np.array_equal(out.composite[known], self.tgt[known])

    def test_diffusion_fill_method(self):
        out = run_pipeline(self.tgt, self.hole, self.tgt,
                           PipelineConfig(fill_method="diffusion"))
        assert np.isfinite(out.fill).all()

    def test_composite_in_unit_range(self):
        out = run_pipeline(self.tgt, self.hole, self.tgt, PipelineConfig())
        assert out.composite.min() >= 0.0 and out.composite.max() <= 1.0
