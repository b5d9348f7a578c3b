"""Confidence estimation and weighted fusion of aligned proposals.

Each refined proposal is scored by how well it reproduces the known pixels
in a narrow band around the hole; the band evidence is propagated into the
hole interior by harmonic extension, mapped through a decaying exponential
to a confidence in [0, 1], and the per-pixel softmax over proposal
confidences (plus a constant fallback score for the single-image fill)
yields fusion weights that form a partition of unity.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import cg

from .core import composite_hole, dilate_mask
from .fill import FillParams, patchmatch_fill

DEFAULT_BAND_PX = 8

# 4-connectivity; matches the Laplace stencil used for the extension
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclasses.dataclass
class FusionWeights:
    """Per-pixel blending weights: one map per proposal plus the fill fallback.

    proposal_weights has shape (K, H, W); fallback has shape (H, W).  At every
    pixel the K+1 weights are nonnegative and sum to 1 (within float error).
    """
    proposal_weights: np.ndarray
    fallback: np.ndarray

    def partition_error(self) -> float:
        total = self.proposal_weights.sum(axis=0) + self.fallback
        return float(np.abs(total - 1.0).max())


def boundary_residual(refined: np.ndarray, target_masked: np.ndarray,
                      hole: np.ndarray, valid: np.ndarray,
                      band_px: int = DEFAULT_BAND_PX):
    """Mean-channel |refined - target| on the known band around the hole.

    Returns (residual, domain) where domain marks the pixels on which the
    residual is defined: known, valid, and within band_px of the hole.  An
    empty domain (hole flush against the frame with no usable band) is the
    caller's signal to distrust the proposal outright.
    """
    if refined.shape != target_masked.shape:
        raise ValueError("refined/target shape mismatch")
    hole_b = hole > 0.5
    band = (dilate_mask(hole_b, band_px) > 0.5) & ~hole_b
    domain = band & (valid >= 0.5)
    resid = np.zeros(hole_b.shape, dtype=np.float64)
    if np.any(domain):
        diff = np.abs(refined - target_masked).mean(axis=2)
        resid[domain] = diff[domain]
    return resid, domain


def harmonic_extend(band_values: np.ndarray, domain: np.ndarray,
                    hole: np.ndarray) -> np.ndarray:
    """Propagate band evidence into the hole by solving Laplace's equation.

    Hole pixels are unknowns with Dirichlet data taken from `band_values` on
    `domain`; band-adjacent edges leaving both sets get natural (Neumann)
    treatment.  Hole components with no contact to the domain -- including
    the fully empty-band case -- receive a +inf sentinel, which downstream
    maps to zero confidence.
    """
    hole_b = hole > 0.5
    h, w = hole_b.shape
    out = np.zeros((h, w), dtype=np.float64)
    out[domain] = band_values[domain]
    if not np.any(hole_b):
        return out
    if not np.any(domain):
        out[hole_b] = np.inf
        return out

    # Drop hole components that never touch the Dirichlet set: their
    # subsystem is pure-Neumann (singular) and there is no evidence anyway.
    labels, nlab = ndimage.label(hole_b, structure=_CROSS)
    touching = np.unique(labels[ndimage.binary_dilation(domain, _CROSS) & hole_b])
    solvable = np.isin(labels, touching[touching > 0]) & hole_b
    out[hole_b & ~solvable] = np.inf
    if not np.any(solvable):
        return out

    idx = -np.ones((h, w), dtype=np.int64)
    ys, xs = np.nonzero(solvable)
    n = ys.size
    idx[ys, xs] = np.arange(n)

    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    b = np.zeros(n)
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        ny, nx = ys + dy, xs + dx
        inb = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        nidx = np.where(inb, idx[ny.clip(0, h - 1), nx.clip(0, w - 1)], -1)
        unk = inb & (nidx >= 0)
        dom = inb & ~unk & domain[ny.clip(0, h - 1), nx.clip(0, w - 1)]
        diag += (unk | dom).astype(np.float64)
        rows.append(np.nonzero(unk)[0])
        cols.append(nidx[unk])
        vals.append(np.full(int(unk.sum()), -1.0))
        np.add.at(b, np.nonzero(dom)[0], band_values[ny[dom], nx[dom]])
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    A = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n))
    x0 = np.full(n, band_values[domain].mean())
    x, info = cg(A, b, x0=x0, rtol=1e-10, atol=0.0,
                 maxiter=20 * int(np.sqrt(n)) + 2000)
    if info != 0:  # fall back to a direct solve; fields here are tiny/smooth
        x = sparse.linalg.spsolve(A.tocsc(), b)
    out[ys, xs] = x
    return out


def confidence_map(e: np.ndarray, valid: np.ndarray,
                   sigma: float) -> np.ndarray:
    """c = [valid >= 0.5] * exp(-e / sigma); the +inf sentinel maps to 0."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    with np.errstate(over="ignore"):
        c = np.exp(-np.maximum(e, 0.0) / sigma)
    c = np.where(valid >= 0.5, c, 0.0)
    return np.clip(c, 0.0, 1.0)


def merge_with_fill(refined: np.ndarray, fill_img: np.ndarray,
                    conf: np.ndarray, hole: np.ndarray,
                    target_masked: np.ndarray):
    """Blend one proposal with the fill by its confidence.

    Returns (merged, preview) where merged = c * refined + (1 - c) * fill
    and preview composites the merged content into the hole.
    """
    c = conf[..., None]
    merged = c * refined + (1.0 - c) * fill_img
    return merged, composite_hole(target_masked, merged, hole)


def softmax_fusion_weights(confidences: Sequence[np.ndarray],
                           enabled: Sequence[bool],
                           tau: float, gamma: float) -> FusionWeights:
    """Per-pixel softmax over proposal confidences plus the fill fallback.

    Disabled proposals, and pixels where a proposal's confidence is exactly
    zero, are excluded from the softmax so their weight is exactly zero.
    The fallback competes with constant score `gamma` everywhere; with every
    proposal excluded it therefore wins with weight 1.
    """
    if len(confidences) == 0:
        raise ValueError("need at least one proposal confidence")
    if tau <= 0 or gamma <= 0:
        raise ValueError("tau and gamma must be positive")
    if len(enabled) != len(confidences):
        raise ValueError("enabled flags must match confidences")
    conf = np.stack([np.asarray(c, dtype=np.float64) for c in confidences])
    on = np.asarray(enabled, dtype=bool)[:, None, None]
    include = on & (conf > 0.0)
    # max over included scores and gamma keeps every exponent <= 0
    top = np.where(include, conf, -np.inf).max(axis=0)
    top = np.maximum(top, gamma)
    ex = np.where(include, np.exp((conf - top) / tau), 0.0)
    eg = np.exp((gamma - top) / tau)
    denom = ex.sum(axis=0) + eg
    return FusionWeights(ex / denom, eg / denom)


def fuse_proposals(weights: FusionWeights, refined: Sequence[np.ndarray],
                   fill_img: np.ndarray, target_masked: np.ndarray,
                   hole: np.ndarray):
    """Weighted sum of proposals and fill; returns (merged, composite).

    The composite keeps known pixels bit-identical to the masked target.
    Proposals with an all-zero weight map never touch the sum, so their
    image content cannot leak into the result.
    """
    merged = weights.fallback[..., None] * fill_img
    for k, img in enumerate(refined):
        wk = weights.proposal_weights[k]
        if not np.any(wk):
            continue
        merged = merged + wk[..., None] * img
    return merged, composite_hole(target_masked, merged, hole)


def weights_summary(weights: FusionWeights, hole: np.ndarray) -> dict:
    """Mean weight and argmax coverage per proposal over the hole region."""
    hole_b = hole > 0.5
    n = max(int(hole_b.sum()), 1)
    stack = np.concatenate([weights.proposal_weights,
                            weights.fallback[None]], axis=0)
    arg = stack.argmax(axis=0)
    out = {"proposals": [], "fallback": {
        "mean_weight": float(weights.fallback[hole_b].mean()) if hole_b.any() else 0.0,
        "coverage": float(((arg == len(stack) - 1) & hole_b).sum() / n),
    }}
    for k in range(weights.proposal_weights.shape[0]):
        wk = weights.proposal_weights[k]
        out["proposals"].append({
            "mean_weight": float(wk[hole_b].mean()) if hole_b.any() else 0.0,
            "coverage": float(((arg == k) & hole_b).sum() / n),
        })
    return out


def posthoc_refill(composite: np.ndarray, fallback_weight: np.ndarray,
                   hole: np.ndarray, threshold: float = 0.5,
                   params: FillParams | None = None) -> np.ndarray:
    """Re-synthesize the sub-region the fusion left to the fallback.

    Pixels of the hole where the fallback weight exceeds `threshold` are
    re-filled by patch synthesis using the rest of the composite as context;
    everything else is untouched.  Off by default in the pipeline: it can
    paper over alignment failures but may also overwrite good content.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    sub = ((hole > 0.5) & (fallback_weight > threshold)).astype(np.float64)
    if not np.any(sub):
        return composite.copy()
    return patchmatch_fill(composite, sub, params or FillParams())
