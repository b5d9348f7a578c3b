"""Artifact naming and serialization shared by the CLI dump and the service.

Artifact names are part of the external contract: ``proposal_i``,
``refined_i``, ``confidence_i``, ``weight_i``, ``preview_i`` for the 1-based
proposal id ``i``, plus ``weight_g`` (fallback weight), ``fill`` and
``result``. Scalar maps (confidences, weights) are stored as grayscale PNGs
with the unit interval mapped onto 0..255.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import save_image
from .fusion import merge_with_fill


def result_artifacts(result) -> dict:
    """Flatten a FusionResult into the named artifact images."""
    arts: dict = {}
    for k, p in enumerate(result.proposals):
        i = p.index
        arts[f"proposal_{i}"] = p.warped
        arts[f"refined_{i}"] = p.refined
        arts[f"confidence_{i}"] = p.confidence
        arts[f"weight_{i}"] = result.weights.proposal_weights[k]
        _, preview = merge_with_fill(p.refined, result.fill, p.confidence,
                                     result.hole, result.target_masked)
        arts[f"preview_{i}"] = preview
    arts["weight_g"] = result.weights.fallback
    arts["fill"] = result.fill
    arts["result"] = result.composite
    return arts


def save_artifacts(arts: dict, out_dir) -> dict:
    """Write each artifact as PNG under `out_dir`; returns {name: path}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, img in arts.items():
        path = out_dir / f"{name}.png"
        save_image(path, np.asarray(img))
        paths[name] = path
    return paths
