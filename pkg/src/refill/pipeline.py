"""End-to-end orchestration: features -> homography proposals -> refinement
-> confidence -> softmax fusion -> composite, with a single-image fill as
the always-available fallback.

Every failure inside proposal generation degrades to the fill instead of
aborting; the result records that it did.  Intermediates (warped and
refined proposals, grids, flow fields, confidences, fusion weights) are
kept on the result for inspection and for the interactive service.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .core import (
    PipelineConfig,
    RefillError,
    composite_hole,
    dilate_mask,
    masked_target,
    validate_image,
    validate_mask,
)
from .refine import refine_proposal
from .features import detect_keypoints, match_descriptors
from .fill import FillParams, diffusion_fill, patchmatch_fill, poisson_blend
from .fusion import (
    FusionWeights,
    boundary_residual,
    confidence_map,
    fuse_proposals,
    harmonic_extend,
    posthoc_refill,
    softmax_fusion_weights,
)
from .proposals import build_proposal_set

MIN_MATCHES = 4
FIT_MAX_DIM = 256       # refinement fitting runs at or below this size
CORR_HINT_RADIUS_PX = 24.0


def _inlier_neighborhood(p, h: int, w: int) -> np.ndarray | None:
    """Disk neighborhoods around a proposal's geometric inliers: the region
    where source and target verifiably show the same surface."""
    pts = p.inlier_points_t
    if pts is None or len(pts) == 0:
        return None
    seeds = np.zeros((h, w))
    xs = np.clip(np.round(pts[:, 0]).astype(int), 0, w - 1)
    ys = np.clip(np.round(pts[:, 1]).astype(int), 0, h - 1)
    seeds[ys, xs] = 1.0
    return dilate_mask(seeds, CORR_HINT_RADIUS_PX)


@dataclasses.dataclass
class FusionResult:
    """Everything run_pipeline produced, keyed by stable 1-based proposal
    ids; the fill occupies id len(proposals) + 1."""
    composite: np.ndarray               # final output, known pixels intact
    merged: np.ndarray                  # pre-composite weighted blend
    weights: FusionWeights
    fill: np.ndarray                    # single-image fallback, full frame
    proposals: list
    target_masked: np.ndarray
    hole: np.ndarray
    config: PipelineConfig
    degraded: bool = False
    notes: list = dataclasses.field(default_factory=list)

    @property
    def fill_id(self) -> int:
        return len(self.proposals) + 1

    @property
    def n_proposals_used(self) -> int:
        hole_b = self.hole > 0.5
        if not hole_b.any() or self.weights.proposal_weights.shape[0] == 0:
            return 0
        w = self.weights.proposal_weights[:, hole_b]
        return int((w.max(axis=1) > 1e-3).sum())


def pick_fit_scale(h: int, w: int, max_dim: int = FIT_MAX_DIM) -> int:
    """Smallest power-of-two downsample bringing max(h, w) under max_dim."""
    scale = 1
    while max(h, w) // scale > max_dim:
        scale *= 2
    return scale


def make_fill(target_masked: np.ndarray, mask: np.ndarray,
              cfg: PipelineConfig) -> np.ndarray:
    if cfg.fill_method == "diffusion":
        return diffusion_fill(target_masked, mask)
    return patchmatch_fill(target_masked, mask, FillParams(seed=cfg.rng_seed))


def fill_only_composite(target: np.ndarray, mask: np.ndarray,
                        cfg: PipelineConfig | None = None) -> np.ndarray:
    """Single-image fill baseline: no source, no proposals."""
    cfg = cfg or PipelineConfig()
    cfg.validate()
    target = validate_image(target, "target")
    mask = validate_mask(mask, like=target)
    tm = masked_target(target, mask)
    return composite_hole(tm, make_fill(tm, mask, cfg), mask)


def _degraded_result(tm, mask, fill_img, cfg, notes) -> FusionResult:
    h, w = tm.shape[:2]
    weights = FusionWeights(np.zeros((0, h, w)), np.ones((h, w)))
    return FusionResult(
        composite=composite_hole(tm, fill_img, mask),
        merged=fill_img.copy(),
        weights=weights,
        fill=fill_img,
        proposals=[],
        target_masked=tm,
        hole=mask,
        config=cfg,
        degraded=True,
        notes=notes,
    )


def _load_depth(path, dims):
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
    if arr.shape != tuple(dims):
        raise RefillError(
            f"depth map dims {arr.shape} do not match target {tuple(dims)}")
    return arr


def run_pipeline(target: np.ndarray, mask: np.ndarray, source: np.ndarray,
                 cfg: PipelineConfig | None = None, *,
                 poisson: bool = False, posthoc: bool = False) -> FusionResult:
    """Fill the hole of `target` guided by `source`; see module docstring.

    Deterministic for a fixed cfg.rng_seed.  `poisson` swaps the final paste
    for a gradient-domain blend; `posthoc` re-synthesizes hole regions the
    fusion left to the fallback.
    """
    cfg = cfg or PipelineConfig()
    cfg.validate()
    target = validate_image(target, "target")
    source = validate_image(source, "source")
    mask = validate_mask(mask, like=target)
    tm = masked_target(target, mask)
    h, w = tm.shape[:2]

    if not (mask > 0.5).any():      # nothing to do
        weights = FusionWeights(np.zeros((0, h, w)), np.ones((h, w)))
        return FusionResult(tm.copy(), tm.copy(), weights, tm.copy(), [],
                            tm, mask, cfg, notes=["empty hole"])

    fill_img = make_fill(tm, mask, cfg)

    notes = []
    try:
        kp_t = detect_keypoints(tm, exclusion=mask)
        kp_s = detect_keypoints(source)
        matches = match_descriptors(kp_t, kp_s)
        if len(matches) < MIN_MATCHES:
            raise RefillError(
                f"only {len(matches)} usable correspondences (need {MIN_MATCHES})")
        depth = None
        if cfg.clustering_mode == "depth-file":
            depth = _load_depth(cfg.depth_path, tm.shape[:2])
        proposals = build_proposal_set(matches, cfg, source, (h, w), depth=depth)
        if not proposals:
            raise RefillError("no homography could be estimated")
    except RefillError as e:
        notes.append(f"degraded to fill-only: {e}")
        result = _degraded_result(tm, mask, fill_img, cfg, notes)
        if poisson:
            result.composite = poisson_blend(tm, result.merged, mask)
        return result

    fit_scale = pick_fit_scale(h, w)
    for p in proposals:
        refined, refined_valid, grid, flow = refine_proposal(
            p.warped, p.valid, tm, mask, cfg, fit_scale=fit_scale,
            corr_hint=_inlier_neighborhood(p, h, w))
        p.refined = refined
        p.refined_valid = refined_valid
        p.color_grid = grid
        p.flow = flow
        resid, domain = boundary_residual(refined, tm, mask, refined_valid)
        e = harmonic_extend(resid, domain, mask)
        p.confidence = confidence_map(e, refined_valid, cfg.confidence_sigma)

    enabled = [cfg.toggle_enabled(p.index) for p in proposals]
    weights = softmax_fusion_weights([p.confidence for p in proposals],
                                     enabled, cfg.softmax_temperature,
                                     cfg.fallback_floor)
    merged, composite = fuse_proposals(
        weights, [p.refined for p in proposals], fill_img, tm, mask)
    if poisson:
        composite = poisson_blend(tm, merged, mask)
    if posthoc:
        composite = posthoc_refill(composite, weights.fallback, mask,
                                   params=FillParams(seed=cfg.rng_seed))

    return FusionResult(composite, merged, weights, fill_img, proposals,
                        tm, mask, cfg, degraded=False, notes=notes)
