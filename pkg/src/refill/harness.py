"""Synthetic pair generation, brush holes, metrics, and batch evaluation.

Pairs are produced by perturbing a ground-truth image with a random
4-corner homography (spatial regime) and/or a per-channel affine color
jitter (color regime); the exact parameters are recorded so alignment can
be checked against truth.  Metrics are PSNR (peak 1.0) and single-scale
SSIM on luminance.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import (
    MaskError,
    bilinear_sample,
    load_hole_mask,
    load_image,
    validate_image,
)
from .refine import luminance_guidance
from .proposals import fit_homography_dlt

PSNR_SENTINEL = 99.0       # reported for exact matches (infinite PSNR)

REGIMES = {
    "both": (True, True),       # color and spatial perturbation
    "color": (True, False),
    "spatial": (False, True),
    "none": (False, False),     # source == target
}


# ----------------------------------------------------------------- metrics

def psnr(a: np.ndarray, b: np.ndarray, region: np.ndarray | None = None) -> float:
    """10*log10(1/MSE) with peak 1.0; equal inputs return the 99 dB sentinel."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("psnr operands must share a shape")
    d2 = (a - b) ** 2
    if region is not None:
        sel = np.asarray(region) > 0.5
        if not sel.any():
            raise ValueError("psnr region is empty")
        d2 = d2[sel]
    mse = float(d2.mean())
    if mse == 0.0:
        return PSNR_SENTINEL
    return float(10.0 * np.log10(1.0 / mse))


def _ssim_window(x: np.ndarray, kern1d: np.ndarray) -> np.ndarray:
    y = ndimage.correlate1d(x, kern1d, axis=0, mode="nearest")
    return ndimage.correlate1d(y, kern1d, axis=1, mode="nearest")


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03,
         win: int = 11, sigma: float = 1.5) -> float:
    """Mean single-scale SSIM over fully interior 11x11 Gaussian windows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("ssim operands must share a shape")
    x = luminance_guidance(a) if a.ndim == 3 else a
    y = luminance_guidance(b) if b.ndim == 3 else b
    if min(x.shape) < win:
        raise ValueError(f"ssim needs at least {win}x{win} images")
    r = win // 2
    t = np.arange(win) - r
    kern = np.exp(-0.5 * (t / sigma) ** 2)
    kern /= kern.sum()
    mu_x = _ssim_window(x, kern)
    mu_y = _ssim_window(y, kern)
    var_x = _ssim_window(x * x, kern) - mu_x * mu_x
    var_y = _ssim_window(y * y, kern) - mu_y * mu_y
    cov = _ssim_window(x * y, kern) - mu_x * mu_y
    c1 = k1 * k1
    c2 = k2 * k2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    smap = num / den
    # only windows fully inside the frame (padding-free)
    return float(smap[r:-r, r:-r].mean())


# ------------------------------------------------------------ pair synthesis

@dataclasses.dataclass
class SynthRegime:
    """Which perturbations to apply and how strong they may be."""
    color_perturb: bool
    spatial_perturb: bool
    max_corner_px: float = 16.0
    gain_range: tuple = (0.7, 1.3)
    offset_range: tuple = (-0.08, 0.08)
    seed: int = 0

    @classmethod
    def from_name(cls, name: str, **kw) -> "SynthRegime":
        if name not in REGIMES:
            raise ValueError(f"unknown regime {name!r}; pick from {sorted(REGIMES)}")
        c, s = REGIMES[name]
        return cls(color_perturb=c, spatial_perturb=s, **kw)


@dataclasses.dataclass
class SynthTruth:
    """Exact perturbation parameters used to build a pair."""
    homography: np.ndarray          # source -> target coords
    gains: np.ndarray               # per-channel
    offsets: np.ndarray

    def to_dict(self) -> dict:
        return {"homography": self.homography.tolist(),
                "gains": self.gains.tolist(),
                "offsets": self.offsets.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthTruth":
        return cls(np.asarray(d["homography"], dtype=np.float64),
                   np.asarray(d["gains"], dtype=np.float64),
                   np.asarray(d["offsets"], dtype=np.float64))


def _corner_homography(h: int, w: int, disp: np.ndarray) -> np.ndarray:
    """Homography H with H(corner_k) = corner_k + disp[k]."""
    corners = np.array([[0.0, 0.0], [w - 1.0, 0.0],
                        [0.0, h - 1.0], [w - 1.0, h - 1.0]])
    return fit_homography_dlt(corners + disp, corners)


def synth_pair(gt: np.ndarray, regime: SynthRegime):
    """Perturb `gt` into a misaligned/retouched source; target is gt itself.

    The source is gt resampled through a homography H (so that warping the
    source by H re-aligns it with the target) followed by per-channel
    clip(gain*v + offset).  H comes from four random corner displacements of
    at most max_corner_px; sampling clamps at the frame so callers should
    keep holes away from the border by about that margin.
    """
    gt = validate_image(gt)
    h, w = gt.shape[:2]
    rng = np.random.default_rng(regime.seed)
    if regime.spatial_perturb:
        disp = rng.uniform(-regime.max_corner_px, regime.max_corner_px, (4, 2))
        H = _corner_homography(h, w, disp)
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
        hom = np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1) @ H.T
        sx = (hom[:, 0] / hom[:, 2]).reshape(h, w)
        sy = (hom[:, 1] / hom[:, 2]).reshape(h, w)
        source = bilinear_sample(gt, sx, sy, mode="clamp")
    else:
        H = np.eye(3)
        source = gt.copy()
    if regime.color_perturb:
        gains = rng.uniform(*regime.gain_range, 3)
        offsets = rng.uniform(*regime.offset_range, 3)
        source = np.clip(source * gains + offsets, 0.0, 1.0)
    else:
        gains = np.ones(3)
        offsets = np.zeros(3)
    return gt.copy(), source, SynthTruth(H, gains, offsets)


def invert_truth(source: np.ndarray, truth: SynthTruth) -> np.ndarray:
    """Undo the recorded color transform then the recorded homography."""
    from .proposals import warp_with_homography
    img = np.clip((source - truth.offsets) / truth.gains, 0.0, 1.0)
    out, _ = warp_with_homography(img, truth.homography, img.shape[:2])
    return out


# ------------------------------------------------------------- brush holes

@dataclasses.dataclass
class BrushParams:
    n_strokes: tuple = (1, 3)           # inclusive range
    n_vertices: tuple = (4, 12)
    thickness: tuple = (12.0, 48.0)
    step_scale: tuple = (0.08, 0.22)    # segment length in units of min(h,w)
    min_fraction: float = 0.05
    max_fraction: float = 0.40
    max_attempts: int = 10


def _render_stroke(mask: np.ndarray, verts: np.ndarray, radius: float) -> None:
    h, w = mask.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    for a, b in zip(verts[:-1], verts[1:]):
        d = b - a
        L2 = float(d @ d)
        if L2 < 1e-12:
            t = np.zeros_like(xs)
        else:
            t = np.clip(((xs - a[0]) * d[0] + (ys - a[1]) * d[1]) / L2, 0.0, 1.0)
        px = a[0] + t * d[0]
        py = a[1] + t * d[1]
        mask[(xs - px) ** 2 + (ys - py) ** 2 <= radius * radius] = 1.0


def brush_hole(dims: tuple, params: BrushParams | None = None,
               seed: int = 0) -> np.ndarray:
    """Free-form hole from random polyline strokes rendered as capsules.

    Deterministic per seed.  Regenerates (bounded attempts) until the hole
    fraction lands in [min_fraction, max_fraction]; a zero stroke count is
    honored with an empty mask.
    """
    params = params or BrushParams()
    h, w = dims
    if h <= 0 or w <= 0:
        raise MaskError("mask dims must be positive")
    if params.n_strokes[1] <= 0:
        return np.zeros((h, w), dtype=np.float64)
    scale = float(min(h, w))
    for attempt in range(params.max_attempts):
        rng = np.random.default_rng([seed, attempt])
        mask = np.zeros((h, w), dtype=np.float64)
        n = int(rng.integers(params.n_strokes[0], params.n_strokes[1] + 1))
        for _ in range(n):
            nv = int(rng.integers(params.n_vertices[0], params.n_vertices[1] + 1))
            radius = 0.5 * rng.uniform(*params.thickness)
            pos = np.array([rng.uniform(0.18 * w, 0.82 * w),
                            rng.uniform(0.18 * h, 0.82 * h)])
            ang = rng.uniform(0.0, 2.0 * np.pi)
            verts = [pos.copy()]
            for _ in range(nv - 1):
                ang += rng.uniform(-np.pi / 2, np.pi / 2)
                step = rng.uniform(*params.step_scale) * scale
                pos = pos + step * np.array([np.cos(ang), np.sin(ang)])
                pos[0] = np.clip(pos[0], 0.05 * w, 0.95 * w)
                pos[1] = np.clip(pos[1], 0.05 * h, 0.95 * h)
                verts.append(pos.copy())
            _render_stroke(mask, np.array(verts), radius)
        frac = mask.mean()
        if params.min_fraction <= frac <= params.max_fraction:
            return mask
    raise MaskError(
        f"could not draw a hole within fraction bounds after "
        f"{params.max_attempts} attempts (seed {seed})")


# -------------------------------------------------------- two-plane golden

def _translation(tx: float, ty: float) -> np.ndarray:
    H = np.eye(3)
    H[0, 2] = tx
    H[1, 2] = ty
    return H


def _noise_texture(h: int, w: int, seed: int, octaves: int = 4) -> np.ndarray:
    """Band-limited 3-channel value noise in [0.1, 0.9]."""
    rng = np.random.default_rng(seed)
    out = np.zeros((h, w, 3))
    for c in range(3):
        acc = np.zeros((h, w))
        amp = 1.0
        total = 0.0
        for o in range(octaves):
            gh = max(2, h // (2 ** (octaves - o + 1)))
            gw = max(2, w // (2 ** (octaves - o + 1)))
            g = rng.standard_normal((gh, gw))
            acc += amp * ndimage.zoom(g, (h / gh, w / gw), order=3,
                                      grid_mode=True, mode="reflect")
            total += amp
            amp *= 0.55
        acc /= total
        lo, hi = acc.min(), acc.max()
        out[..., c] = 0.1 + 0.8 * (acc - lo) / max(hi - lo, 1e-9)
    return out


def feature_texture(h: int, w: int, seed: int,
                     n_rects: int | None = None) -> np.ndarray:
    """Noise base plus hard-edged rectangles: plenty of corner keypoints."""
    img = _noise_texture(h, w, seed)
    rng = np.random.default_rng(seed + 7777)
    if n_rects is None:
        n_rects = max(30, h * w // 400)     # roughly one per 20x20 px
    for _ in range(n_rects):
        rh = int(rng.integers(4, max(6, h // 12)))
        rw = int(rng.integers(4, max(6, w // 12)))
        y = int(rng.integers(0, h - rh))
        x = int(rng.integers(0, w - rw))
        img[y:y + rh, x:x + rw] = rng.uniform(0.05, 0.95, 3)
    # small high-contrast dots: strong, well-localized blob responses
    for _ in range(max(20, h * w // 600)):
        r = int(rng.integers(2, 4))
        y = int(rng.integers(r, h - r))
        x = int(rng.integers(r, w - r))
        img[y - r:y + r, x - r:x + r] = rng.uniform(0.0, 1.0, 3)
    return img


def make_two_plane_scene(h: int = 192, w: int = 256, seed: int = 0,
                         bg_shift: tuple = (8.0, 0.0),
                         fg_shift: tuple = (-6.0, 3.0)):
    """Textured background plus a foreground rectangle translating
    differently (parallax); both motions are exact homographies.  Returns
    (target, source, info) with per-plane source->target homographies, the
    target-frame foreground mask, and a canonical hole straddling the
    foreground/background boundary."""
    bg = feature_texture(h, w, seed)
    fg = feature_texture(h, w, seed + 101)
    y0, y1 = int(0.24 * h), int(0.78 * h)
    x0, x1 = int(0.22 * w), int(0.66 * w)
    fg_mask = np.zeros((h, w))
    fg_mask[y0:y1, x0:x1] = 1.0

    target = np.where(fg_mask[..., None] > 0.5, fg, bg)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    bx, by = bg_shift
    fx, fy = fg_shift
    src_bg = bilinear_sample(bg, xs + bx, ys + by, mode="clamp")
    src_fg = bilinear_sample(fg, xs + fx, ys + fy, mode="clamp")
    # the fg plane content appears in the source wherever its target-frame
    # footprint lands after the inverse shift
    in_fg = (xs + fx >= x0) & (xs + fx < x1) & (ys + fy >= y0) & (ys + fy < y1)
    source = np.where(in_fg[..., None], src_fg, src_bg)

    # canonical hole spans the fg LEFT edge: with the default shifts the
    # planes sweep apart there, so no target content is occluded in the
    # source and both sides of the hole are recoverable by the right plane
    hole = np.zeros((h, w))
    hy0, hy1 = int(0.38 * h), int(0.64 * h)
    hole[hy0:hy1, x0 - 18:x0 + 18] = 1.0

    info = {
        "H_bg": _translation(bx, by),
        "H_fg": _translation(fx, fy),
        "fg_mask": fg_mask,
        "hole": hole,
    }
    return target, source, info


# -------------------------------------------------------------- evaluation

CSV_COLUMNS = ("pair_id", "psnr_hole", "ssim_full", "hole_fraction",
               "n_proposals_used")


@dataclasses.dataclass
class EvalReport:
    rows: list
    aggregates: dict
    config: dict

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
            wr.writeheader()
            for row in self.rows:
                wr.writerow({k: row[k] for k in CSV_COLUMNS})

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows, "aggregates": self.aggregates,
                           "config": self.config}, indent=2)


def _aggregate(rows: list) -> dict:
    out = {}
    for key in ("psnr_hole", "ssim_full", "hole_fraction"):
        vals = np.array([r[key] for r in rows], dtype=np.float64)
        out[f"mean_{key}"] = float(vals.mean())
        out[f"median_{key}"] = float(np.median(vals))
    return out


def discover_pairs(pairs_dir) -> list:
    """Immediate subdirectories holding target/source/mask/gt PNGs."""
    root = Path(pairs_dir)
    found = []
    if root.is_dir():
        for sub in sorted(p for p in root.iterdir() if p.is_dir()):
            names = {f"{n}.png" for n in ("target", "source", "mask", "gt")}
            if names <= {p.name for p in sub.iterdir()}:
                found.append(sub)
    return found

def eval_run(pairs_dir, cfg, out_path=None) -> EvalReport:
    """Run the pipeline over every quadruple and collect hole metrics."""
    subs = discover_pairs(pairs_dir)
    if not subs:
        raise ValueError(f"no (target, source, mask, gt) quadruples under {pairs_dir}")
    from .pipeline import run_pipeline   # deferred: avoids import cycle
    rows = []
    for sub in subs:
        target = load_image(sub / "target.png")
        source = load_image(sub / "source.png")
        mask = load_hole_mask(sub / "mask.png")
        gt = load_image(sub / "gt.png")
        result = run_pipeline(target, mask, source, cfg)
        rows.append({
            "pair_id": sub.name,
            "psnr_hole": psnr(result.composite, gt, region=mask),
            "ssim_full": ssim(result.composite, gt),
            "hole_fraction": float((mask > 0.5).mean()),
            "n_proposals_used": result.n_proposals_used,
        })
    report = EvalReport(rows, _aggregate(rows), cfg.to_dict())
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        report.write_csv(out_path)
        out_path.with_suffix(".json").write_text(report.to_json())
    return report
