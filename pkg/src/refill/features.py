"""Scale-invariant keypoint detection, description and ratio-test matching.

Classical difference-of-Gaussians pipeline: Gaussian scale space, 26-neighbor
extrema, sub-pixel refinement with contrast and edge-ratio rejection, dominant
gradient orientations, and 4x4x8 gradient-histogram descriptors. Everything is
plain numpy so detection is bit-deterministic across runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .core import RefillError, dilate_mask, validate_image

N_OCTAVES = 4
N_SCALES = 3            # scales per octave
SIGMA0 = 1.6            # blur of the first scale-space level
ASSUMED_BLUR = 0.5      # blur assumed present in the input
CONTRAST_THRESHOLD = 0.04
EDGE_RATIO = 10.0
MAX_KEYPOINTS = 4000
EXCLUSION_DILATION_PX = 8.0

_LUMA = np.array([0.299, 0.587, 0.114])


class ImageTooSmallError(RefillError):
    pass


@dataclass
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float
    response: float
    descriptor: np.ndarray = field(repr=False)


@dataclass
class MatchSet:
    """Corresponding point sets between a target and a source image.

    pairs: (target index, source index, descriptor distance) triples.
    points_t / points_s: (n, 2) arrays of (x, y), row i of each paired.
    """

    pairs: list
    points_t: np.ndarray
    points_s: np.ndarray

    def __len__(self) -> int:
        return len(self.points_t)

    @staticmethod
    def empty() -> "MatchSet":
        return MatchSet([], np.zeros((0, 2)), np.zeros((0, 2)))


def _grayscale(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3:
        return img @ _LUMA
    return img


def _gaussian_levels(base: np.ndarray):
    """One octave's Gaussian ladder: N_SCALES + 3 levels starting at SIGMA0."""
    k = 2.0 ** (1.0 / N_SCALES)
    levels = [base]
    sig_prev = SIGMA0
    for i in range(1, N_SCALES + 3):
        sig_total = SIGMA0 * k ** i
        inc = math.sqrt(sig_total ** 2 - sig_prev ** 2)
        levels.append(ndimage.gaussian_filter(levels[-1], inc))
        sig_prev = sig_total
    return levels


def _build_pyramid(gray: np.ndarray):
    """Gaussian and DoG pyramids over up to N_OCTAVES octaves."""
    inc = math.sqrt(max(SIGMA0 ** 2 - ASSUMED_BLUR ** 2, 1e-8))
    base = ndimage.gaussian_filter(gray, inc)
    gaussians, dogs = [], []
    for _ in range(N_OCTAVES):
        if min(base.shape) < 8:
            break
        levels = _gaussian_levels(base)
        gaussians.append(levels)
        dogs.append(np.stack([levels[i + 1] - levels[i] for i in range(N_SCALES + 2)]))
        base = levels[N_SCALES][::2, ::2]
    return gaussians, dogs


def _refine_extremum(dog: np.ndarray, s: int, y: int, x: int):
    """Iterative quadratic refinement. Returns (s, y, x, offset, value) or None."""
    ns, h, w = dog.shape
    for _ in range(5):
        d = dog
        dx = (d[s, y, x + 1] - d[s, y, x - 1]) / 2
        dy = (d[s, y + 1, x] - d[s, y - 1, x]) / 2
        ds = (d[s + 1, y, x] - d[s - 1, y, x]) / 2
        dxx = d[s, y, x + 1] + d[s, y, x - 1] - 2 * d[s, y, x]
        dyy = d[s, y + 1, x] + d[s, y - 1, x] - 2 * d[s, y, x]
        dss = d[s + 1, y, x] + d[s - 1, y, x] - 2 * d[s, y, x]
        dxy = (d[s, y + 1, x + 1] - d[s, y + 1, x - 1] -
               d[s, y - 1, x + 1] + d[s, y - 1, x - 1]) / 4
        dxs = (d[s + 1, y, x + 1] - d[s + 1, y, x - 1] -
               d[s - 1, y, x + 1] + d[s - 1, y, x - 1]) / 4
        dys = (d[s + 1, y + 1, x] - d[s + 1, y - 1, x] -
               d[s - 1, y + 1, x] + d[s - 1, y - 1, x]) / 4
        grad = np.array([dx, dy, ds])
        hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
        try:
            offset = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            value = d[s, y, x] + 0.5 * grad @ offset
            return s, y, x, offset, value, dxx, dyy, dxy
        x += int(round(offset[0]))
        y += int(round(offset[1]))
        s += int(round(offset[2]))
        if not (1 <= s < ns - 1 and 1 <= y < h - 1 and 1 <= x < w - 1):
            return None
    return None


def _octave_candidates(dog: np.ndarray):
    """26-neighborhood extrema above the preliminary contrast floor."""
    prelim = 0.5 * CONTRAST_THRESHOLD / N_SCALES
    mx = ndimage.maximum_filter(dog, size=3)
    mn = ndimage.minimum_filter(dog, size=3)
    cand = ((dog == mx) | (dog == mn)) & (np.abs(dog) > prelim)
    cand[0] = cand[-1] = False
    cand[:, 0, :] = cand[:, -1, :] = False
    cand[:, :, 0] = cand[:, :, -1] = False
    return np.argwhere(cand)


def _orientation_histogram(gx, gy, cy, cx, sigma, radius):
    h, w = gx.shape
    y0, y1 = max(0, cy - radius), min(h, cy + radius + 1)
    x0, x1 = max(0, cx - radius), min(w, cx + radius + 1)
    sx = gx[y0:y1, x0:x1]
    sy = gy[y0:y1, x0:x1]
    yy, xx = np.mgrid[y0 - cy:y1 - cy, x0 - cx:x1 - cx]
    weight = np.exp(-(xx ** 2 + yy ** 2) / (2 * sigma ** 2))
    mag = np.hypot(sx, sy) * weight
    ang = np.arctan2(sy, sx) % (2 * np.pi)
    bins = (ang / (2 * np.pi) * 36).astype(np.int64) % 36
    hist = np.bincount(bins.ravel(), weights=mag.ravel(), minlength=36)
    # two smoothing passes of the circular [1 4 6 4 1]/16 kernel
    for _ in range(2):
        hist = (np.roll(hist, 2) + 4 * np.roll(hist, 1) + 6 * hist +
                4 * np.roll(hist, -1) + np.roll(hist, -2)) / 16.0
    return hist


def _dominant_orientations(hist):
    out = []
    peak = hist.max()
    if peak <= 0:
        return out
    for i in range(36):
        left, right = hist[(i - 1) % 36], hist[(i + 1) % 36]
        if hist[i] > left and hist[i] > right and hist[i] >= 0.8 * peak:
            # parabolic interpolation of the peak bin
            denom = left - 2 * hist[i] + right
            shift = 0.0 if denom == 0 else 0.5 * (left - right) / denom
            out.append(((i + shift) % 36) / 36.0 * 2 * np.pi)
    return out


DESC_WIDTH = 4
DESC_BINS = 8
DESC_SCALE_MULT = 3.0
DESC_MAG_CAP = 0.2


def _descriptor(gx, gy, x, y, sigma, theta):
    """4x4 spatial x 8 orientation gradient histogram, trilinearly binned."""
    h, w = gx.shape
    hist_w = DESC_SCALE_MULT * sigma
    radius = int(round(hist_w * math.sqrt(2) * (DESC_WIDTH + 1) * 0.5))
    radius = min(radius, int(math.hypot(h, w)))
    cy, cx = int(round(y)), int(round(x))
    y0, y1 = max(0, cy - radius), min(h, cy + radius + 1)
    x0, x1 = max(0, cx - radius), min(w, cx + radius + 1)
    if y0 >= y1 or x0 >= x1:
        return None
    sx = gx[y0:y1, x0:x1].ravel()
    sy = gy[y0:y1, x0:x1].ravel()
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy = (yy - y).ravel()
    dx = (xx - x).ravel()
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    # rotated coordinates in histogram cells, origin at the window center
    u = (cos_t * dx + sin_t * dy) / hist_w + DESC_WIDTH / 2 - 0.5
    v = (-sin_t * dx + cos_t * dy) / hist_w + DESC_WIDTH / 2 - 0.5
    keep = (u > -1) & (u < DESC_WIDTH) & (v > -1) & (v < DESC_WIDTH)
    if not np.any(keep):
        return None
    u, v, sx, sy = u[keep], v[keep], sx[keep], sy[keep]
    mag = np.hypot(sx, sy)
    ang = (np.arctan2(sy, sx) - theta) % (2 * np.pi)
    weight = np.exp(-(u - DESC_WIDTH / 2 + 0.5) ** 2 / (0.5 * DESC_WIDTH ** 2)
                    - (v - DESC_WIDTH / 2 + 0.5) ** 2 / (0.5 * DESC_WIDTH ** 2))
    mag = mag * weight
    o = ang / (2 * np.pi) * DESC_BINS

    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    o0 = np.floor(o).astype(np.int64)
    fu, fv, fo = u - u0, v - v0, o - o0

    hist = np.zeros((DESC_WIDTH + 2, DESC_WIDTH + 2, DESC_BINS))
    for du, wu in ((0, 1 - fu), (1, fu)):
        for dv, wv in ((0, 1 - fv), (1, fv)):
            for do, wo in ((0, 1 - fo), (1, fo)):
                np.add.at(hist,
                          (v0 + dv + 1, u0 + du + 1, (o0 + do) % DESC_BINS),
                          mag * wu * wv * wo)
    vec = hist[1:-1, 1:-1, :].ravel()
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        return None
    vec = np.minimum(vec / norm, DESC_MAG_CAP)
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        return None
    return vec / norm


def detect_keypoints(img: np.ndarray, exclusion: np.ndarray | None = None,
                     max_keypoints: int = MAX_KEYPOINTS) -> list[Keypoint]:
    """Detect scale-space keypoints, skipping an (8 px dilated) exclusion zone.

    Keypoints are sorted by response descending, ties broken by (y, x), and
    capped at `max_keypoints`.
    """
    img = validate_image(img)
    if img.shape[0] < 16 or img.shape[1] < 16:
        raise ImageTooSmallError(f"image {img.shape[:2]} smaller than 16x16")
    gray = _grayscale(img)
    excl = None
    if exclusion is not None:
        excl = dilate_mask(exclusion, EXCLUSION_DILATION_PX)

    gaussians, dogs = _build_pyramid(gray)
    grads = [[np.gradient(lvl) for lvl in oct_levels] for oct_levels in gaussians]
    k = 2.0 ** (1.0 / N_SCALES)

    kps: list[Keypoint] = []
    for oct_i, dog in enumerate(dogs):
        scale_factor = 2 ** oct_i
        for s, y, x in _octave_candidates(dog):
            ref = _refine_extremum(dog, s, y, x)
            if ref is None:
                continue
            s_r, y_r, x_r, offset, value, dxx, dyy, dxy = ref
            if abs(value) * N_SCALES < CONTRAST_THRESHOLD:
                continue
            tr = dxx + dyy
            det = dxx * dyy - dxy * dxy
            if det <= 0 or tr * tr * EDGE_RATIO >= (EDGE_RATIO + 1) ** 2 * det:
                continue
            fx = (x_r + offset[0]) * scale_factor
            fy = (y_r + offset[1]) * scale_factor
            if not (0 <= fx <= gray.shape[1] - 1 and 0 <= fy <= gray.shape[0] - 1):
                continue
            if excl is not None and excl[int(round(fy)), int(round(fx))] > 0.5:
                continue
            sigma = SIGMA0 * k ** (s_r + offset[2]) * scale_factor
            sigma_oct = SIGMA0 * k ** (s_r + offset[2])
            gy_map, gx_map = grads[oct_i][s_r]
            cy, cx = int(round(y_r + offset[1])), int(round(x_r + offset[0]))
            hist = _orientation_histogram(
                gx_map, gy_map, cy, cx, 1.5 * sigma_oct,
                int(round(3 * 1.5 * sigma_oct)))
            for theta in _dominant_orientations(hist):
                desc = _descriptor(gx_map, gy_map, x_r + offset[0], y_r + offset[1],
                                   sigma_oct, theta)
                if desc is None:
                    continue
                kps.append(Keypoint(float(fx), float(fy), float(sigma),
                                    float(theta), float(abs(value)), desc))

    kps.sort(key=lambda p: (-p.response, p.y, p.x, p.scale, p.orientation))
    return kps[:max_keypoints]


def match_descriptors(a: list[Keypoint], b: list[Keypoint],
                      ratio: float = 0.75) -> MatchSet:
    """Nearest-neighbor matches a->b passing Lowe's ratio test and a mutual check."""
    if not (0.0 < ratio < 1.0):
        raise RefillError(f"ratio must lie in (0,1), got {ratio}")
    if len(a) < 2 or len(b) < 2:
        return MatchSet.empty()
    da = np.stack([p.descriptor for p in a])
    db = np.stack([p.descriptor for p in b])
    tree_b = cKDTree(db)
    dist, idx = tree_b.query(da, k=2)
    tree_a = cKDTree(da)
    back_dist, back_idx = tree_a.query(db, k=1)

    pairs = []
    for i in range(len(a)):
        d1, d2 = dist[i]
        j = int(idx[i, 0])
        if d2 <= 1e-12:
            continue  # ambiguous: second neighbor coincides
        if d1 / d2 >= ratio:
            continue
        if int(back_idx[j]) != i:
            continue
        pairs.append((i, j, float(d1)))

    if not pairs:
        return MatchSet.empty()
    pts_t = np.array([[a[i].x, a[i].y] for i, _, _ in pairs])
    pts_s = np.array([[b[j].x, b[j].y] for _, j, _ in pairs])
    return MatchSet(pairs, pts_t, pts_s)


def dump_keypoints_json(kps: list[Keypoint], path) -> None:
    data = [{"x": p.x, "y": p.y, "scale": p.scale, "orientation": p.orientation}
            for p in kps]
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
