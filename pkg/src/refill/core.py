"""Shared domain types, image I/O and small raster utilities.

Images are numpy float64 arrays in [0, 1]: color images have shape (H, W, 3),
single-channel maps (H, W). Hole masks are (H, W) float64 arrays with values
in {0, 1} where 1 marks a pixel to be replaced. Valid masks are (H, W) arrays
in [0, 1], fractional at warp boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage


class RefillError(Exception):
    """Base class for engine errors."""


class DimensionMismatchError(RefillError):
    pass


class InvalidConfigError(RefillError):
    pass


class NoHomographyError(RefillError):
    """Raised when a homography cannot be estimated from the given pairs."""


class MaskError(RefillError):
    """Raised for masks with no usable pixels (e.g. all-hole)."""


CLUSTERING_MODES = ("residual", "spatial", "random", "depth-file", "none")
FILL_METHODS = ("patchmatch", "diffusion")
REFINE_MODES = ("full", "color", "spatial", "none")


@dataclass
class PipelineConfig:
    """Knobs for the end-to-end pipeline.

    `proposal_toggles` maps 1-based proposal index to enabled/disabled; missing
    indices default to enabled. `depth_path` is only consulted in the
    "depth-file" clustering mode.
    """

    n_clusters: int = 5
    clustering_mode: str = "residual"
    grid_s: int = 8
    grid_d: int = 8
    ransac_threshold_px: float = 3.0
    confidence_sigma: float = 0.05
    softmax_temperature: float = 0.1
    fallback_floor: float = 0.5 / np.e
    fill_method: str = "patchmatch"
    proposal_toggles: dict = field(default_factory=dict)
    rng_seed: int = 0
    refine_mode: str = "full"
    refine_order: str = "cs"  # "cs": color then spatial, "sc": swapped
    depth_path: str | None = None

    def validate(self) -> None:
        if self.n_clusters < 1:
            raise InvalidConfigError(f"n_clusters must be >= 1, got {self.n_clusters}")
        if self.grid_s < 2 or self.grid_d < 2:
            raise InvalidConfigError("grid_s and grid_d must be >= 2")
        if self.confidence_sigma <= 0 or self.softmax_temperature <= 0:
            raise InvalidConfigError("confidence_sigma and softmax_temperature must be > 0")
        if not (0.0 < self.fallback_floor < 1.0):
            raise InvalidConfigError(f"fallback_floor must lie in (0,1), got {self.fallback_floor}")
        if self.ransac_threshold_px <= 0:
            raise InvalidConfigError("ransac_threshold_px must be > 0")
        if self.clustering_mode not in CLUSTERING_MODES:
            raise InvalidConfigError(f"unknown clustering_mode {self.clustering_mode!r}")
        if self.fill_method not in FILL_METHODS:
            raise InvalidConfigError(f"unknown fill_method {self.fill_method!r}")
        if self.refine_mode not in REFINE_MODES:
            raise InvalidConfigError(f"unknown refine_mode {self.refine_mode!r}")
        if self.refine_order not in ("cs", "sc"):
            raise InvalidConfigError(f"refine_order must be 'cs' or 'sc', got {self.refine_order!r}")
        if self.clustering_mode == "depth-file" and not self.depth_path:
            raise InvalidConfigError("clustering_mode 'depth-file' requires depth_path")

    def toggle_enabled(self, index: int) -> bool:
        return bool(self.proposal_toggles.get(index, True))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["proposal_toggles"] = {str(k): bool(v) for k, v in self.proposal_toggles.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise InvalidConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise InvalidConfigError("config JSON must be an object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise InvalidConfigError(f"unknown config fields: {sorted(unknown)}")
        if "proposal_toggles" in raw:
            raw["proposal_toggles"] = {int(k): bool(v) for k, v in raw["proposal_toggles"].items()}
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def with_overrides(self, **kw) -> "PipelineConfig":
        cfg = replace(self, **kw)
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# validation helpers

def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] not in (1, 3):
        raise RefillError(f"{name}: channels must be 1 or 3, got {img.shape[2]}")
    if img.ndim not in (2, 3):
        raise RefillError(f"{name}: expected 2-D or 3-D array, got ndim={img.ndim}")
    if not np.all(np.isfinite(img)):
        raise RefillError(f"{name}: contains non-finite samples")
    return img


def validate_mask(mask: np.ndarray, like: np.ndarray | None = None,
                  require_known: bool = True) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise RefillError(f"mask must be 2-D, got ndim={mask.ndim}")
    vals = np.unique(mask)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise RefillError("mask must be binary {0,1}")
    if like is not None and mask.shape != like.shape[:2]:
        raise DimensionMismatchError(
            f"mask dims {mask.shape} do not match image dims {like.shape[:2]}")
    if require_known and not np.any(mask == 0):
        raise MaskError("mask has no known (0-valued) pixels")
    return mask


def check_homography(H: np.ndarray) -> np.ndarray:
    """Normalize a 3x3 homography (bottom-right entry 1) and verify invertibility."""
    H = np.asarray(H, dtype=np.float64)
    if H.shape != (3, 3):
        raise RefillError(f"homography must be 3x3, got {H.shape}")
    if abs(np.linalg.det(H)) <= 1e-12:
        raise NoHomographyError("homography is singular")
    if abs(H[2, 2]) > 1e-12:
        H = H / H[2, 2]
    return H


# ---------------------------------------------------------------------------
# image arithmetic

def masked_target(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero out the hole pixels of `img`. Known pixels pass through untouched."""
    img = validate_image(img)
    mask = validate_mask(mask, like=img, require_known=False)
    hole = mask > 0.5
    out = img.copy()
    out[hole] = 0.0
    return out


def composite_hole(target_masked: np.ndarray, content: np.ndarray,
                   mask: np.ndarray) -> np.ndarray:
    """Paste `content` into the hole; known pixels stay bit-identical."""
    hole = mask > 0.5
    out = target_masked.copy()
    out[hole] = content[hole]
    return out


def dilate_mask(mask: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean dilation of a binary mask by `radius` pixels."""
    if radius <= 0 or not np.any(mask > 0.5):
        return (mask > 0.5).astype(np.float64)
    dist = ndimage.distance_transform_edt(mask < 0.5)
    return (dist <= radius).astype(np.float64)


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                    mode: str = "zero") -> np.ndarray:
    """Bilinear sampling of `img` at float coordinates.

    mode="zero": samples outside the image interpolate against 0 padding.
    mode="clamp": coordinates are clamped to the image rectangle first.
    Works for (H, W) and (H, W, C) arrays; output shape follows xs.
    """
    h, w = img.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if mode == "clamp":
        xs = np.clip(xs, 0.0, w - 1.0)
        ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    flat = img.reshape(h * w, -1)
    nc = flat.shape[1]

    def tap(xi, yi):
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        idx = np.where(inside, yi * w + xi, 0)
        v = flat[idx.ravel()].reshape(xi.shape + (nc,))
        v[~inside] = 0.0
        return v

    w00 = ((1 - fx) * (1 - fy))[..., None]
    w10 = (fx * (1 - fy))[..., None]
    w01 = ((1 - fx) * fy)[..., None]
    w11 = (fx * fy)[..., None]
    out = (tap(x0, y0) * w00 + tap(x0 + 1, y0) * w10 +
           tap(x0, y0 + 1) * w01 + tap(x0 + 1, y0 + 1) * w11)
    if img.ndim == 2:
        return out[..., 0]
    return out


def downsample2(img: np.ndarray) -> np.ndarray:
    """2x2 block-average downsampling (odd trailing row/col dropped)."""
    h, w = img.shape[:2]
    h2, w2 = h // 2, w // 2
    img = img[:h2 * 2, :w2 * 2]
    if img.ndim == 2:
        return img.reshape(h2, 2, w2, 2).mean(axis=(1, 3))
    return img.reshape(h2, 2, w2, 2, -1).mean(axis=(1, 3))


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers (clamped at the border)."""
    h, w = img.shape[:2]
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return bilinear_sample(img, gx, gy, mode="clamp")


# ---------------------------------------------------------------------------
# PNG I/O (8-bit)

def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Load an 8-bit PNG (or other raster) as float64 RGB in [0, 1]."""
    with PILImage.open(path) as im:
        im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr


def save_image(path, img: np.ndarray) -> None:
    # compress_level 3: near-identical size to the default at roughly 2/3
    # the encode time, which matters for interactive re-fusion at 1024x768
    img = np.asarray(img)
    mode = "L" if img.ndim == 2 else "RGB"
    PILImage.fromarray(to_uint8(img), mode=mode).save(
        path, format="PNG", compress_level=3)


def load_hole_mask(path) -> np.ndarray:
    """Load a single-channel PNG mask; sample value >= 128 means hole."""
    with PILImage.open(path) as im:
        im = im.convert("L")
        arr = np.asarray(im)
    return (arr >= 128).astype(np.float64)


def save_hole_mask(path, mask: np.ndarray) -> None:
    arr = np.where(np.asarray(mask) > 0.5, 255, 0).astype(np.uint8)
    PILImage.fromarray(arr, mode="L").save(path, format="PNG")
