"""Reference-guided inpainting: warp, adjust, fuse, fall back.

The library fills a masked region of a target image using content from a
second image of the same scene.  Multiple homography proposals, each
refined by an analytic color-and-spatial transform, compete per pixel in a
confidence-weighted softmax against a single-image fill fallback.

Typical use::

    from refill import PipelineConfig, run_pipeline
    result = run_pipeline(target, mask, source, PipelineConfig())
    # result.composite is the filled image; known pixels are untouched.
"""

from .core import (InvalidConfigError, MaskError, NoHomographyError,
                   PipelineConfig, RefillError, load_hole_mask, load_image,
                   save_hole_mask, save_image)
from .fusion import FusionWeights, fuse_proposals, softmax_fusion_weights
from .harness import (BrushParams, SynthRegime, brush_hole, eval_run,
                      feature_texture, psnr, ssim, synth_pair)
from .pipeline import FusionResult, fill_only_composite, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "BrushParams",
    "FusionResult",
    "FusionWeights",
    "InvalidConfigError",
    "MaskError",
    "NoHomographyError",
    "PipelineConfig",
    "RefillError",
    "SynthRegime",
    "brush_hole",
    "eval_run",
    "feature_texture",
    "fill_only_composite",
    "fuse_proposals",
    "load_hole_mask",
    "load_image",
    "psnr",
    "save_hole_mask",
    "save_image",
    "softmax_fusion_weights",
    "ssim",
    "synth_pair",
    "run_pipeline",
]
