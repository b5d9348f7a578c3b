"""Multi-homography proposal generation.

Matches are partitioned by a scalar depth proxy, each sufficiently large
cluster contributes one RANSAC homography, and a global homography over all
matches is always attempted. Warping the source through each homography gives
the aligned proposals handed to the refinement stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster import hierarchy

from .core import (NoHomographyError, RefillError, bilinear_sample,
                   check_homography)
from .features import MatchSet

MIN_CLUSTER_MATCHES = 8
RANSAC_CONFIDENCE = 0.999


@dataclass
class ClusterAssignment:
    labels: np.ndarray          # per-match label in [1, n_clusters]
    proxy_values: np.ndarray
    n_clusters: int
    reduced: bool = False       # fewer clusters than requested


@dataclass
class Proposal:
    index: int
    homography: np.ndarray
    warped: np.ndarray
    valid: np.ndarray
    source_cluster: object      # int label or "global"
    match_count: int = 0
    inlier_count: int = 0
    # target-frame xy of the RANSAC inliers behind this homography; these
    # are the only pixels verified to correspond between the two frames
    inlier_points_t: np.ndarray | None = field(default=None, repr=False)
    # filled by downstream stages
    refined: np.ndarray | None = field(default=None, repr=False)
    refined_valid: np.ndarray | None = field(default=None, repr=False)
    color_grid: object = field(default=None, repr=False)
    flow: object = field(default=None, repr=False)
    confidence: np.ndarray | None = field(default=None, repr=False)


def apply_homography(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply H to (n, 2) points. Degenerate projections map to +/-inf."""
    pts = np.asarray(pts, dtype=np.float64)
    den = H[2, 0] * pts[:, 0] + H[2, 1] * pts[:, 1] + H[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = (H[0, 0] * pts[:, 0] + H[0, 1] * pts[:, 1] + H[0, 2]) / den
        y = (H[1, 0] * pts[:, 0] + H[1, 1] * pts[:, 1] + H[1, 2]) / den
    out = np.stack([x, y], axis=1)
    out[~np.isfinite(out)] = 1e12
    return out


def _normalize_points(pts: np.ndarray):
    """Hartley normalization: centroid at origin, RMS distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((pts - centroid) ** 2, axis=1)))
    scale = math.sqrt(2) / max(rms, 1e-12)
    T = np.array([[scale, 0, -scale * centroid[0]],
                  [0, scale, -scale * centroid[1]],
                  [0, 0, 1.0]])
    return (pts - centroid) * scale, T


def fit_homography_dlt(pts_src: np.ndarray, pts_dst: np.ndarray,
                       weights: np.ndarray | None = None) -> np.ndarray:
    """Least-squares homography mapping src -> dst via the normalized DLT.

    Optional nonnegative per-pair weights scale each pair's two equations
    by sqrt(w)."""
    pts_src = np.asarray(pts_src, dtype=np.float64)
    pts_dst = np.asarray(pts_dst, dtype=np.float64)
    if len(pts_src) < 4:
        raise NoHomographyError(f"need >= 4 pairs, got {len(pts_src)}")
    ns, Ts = _normalize_points(pts_src)
    nd, Td = _normalize_points(pts_dst)
    n = len(ns)
    A = np.zeros((2 * n, 9))
    x, y = ns[:, 0], ns[:, 1]
    u, v = nd[:, 0], nd[:, 1]
    A[0::2, 0] = -x
    A[0::2, 1] = -y
    A[0::2, 2] = -1
    A[0::2, 6] = u * x
    A[0::2, 7] = u * y
    A[0::2, 8] = u
    A[1::2, 3] = -x
    A[1::2, 4] = -y
    A[1::2, 5] = -1
    A[1::2, 6] = v * x
    A[1::2, 7] = v * y
    A[1::2, 8] = v
    if weights is not None:
        s = np.sqrt(np.maximum(np.asarray(weights, dtype=np.float64), 0.0))
        A[0::2] *= s[:, None]
        A[1::2] *= s[:, None]
    _, _, vt = np.linalg.svd(A)
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    return check_homography(H)


def symmetric_transfer_error(H: np.ndarray, pts_src: np.ndarray,
                             pts_dst: np.ndarray) -> np.ndarray:
    """Per-pair max of forward and backward point transfer distances."""
    Hinv = np.linalg.inv(H)
    fwd = np.linalg.norm(apply_homography(H, pts_src) - pts_dst, axis=1)
    bwd = np.linalg.norm(apply_homography(Hinv, pts_dst) - pts_src, axis=1)
    return np.maximum(fwd, bwd)


def _has_collinear_triple(pts: np.ndarray, tol: float = 1e-8) -> bool:
    # scale-aware area test over all 4 triples of a minimal sample
    span = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1.0)
    for skip in range(4):
        tri = np.delete(pts, skip, axis=0)
        area = abs((tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1]) -
                   (tri[2, 0] - tri[0, 0]) * (tri[1, 1] - tri[0, 1]))
        if area < tol * span * span:
            return True
    return False


def ransac_homography(pts_src: np.ndarray, pts_dst: np.ndarray,
                      threshold_px: float = 3.0, max_iters: int = 2000,
                      seed: int = 0):
    """RANSAC homography mapping src points to dst points.

    Returns (H, inlier_flags). The final H is refit on all inliers with the
    normalized DLT. Adaptive early exit at 99.9% confidence.
    """
    pts_src = np.asarray(pts_src, dtype=np.float64)
    pts_dst = np.asarray(pts_dst, dtype=np.float64)
    n = len(pts_src)
    if n < 4:
        raise NoHomographyError(f"need >= 4 pairs, got {n}")
    rng = np.random.default_rng(seed)

    best_inliers = None
    best_count = 0
    best_err = np.inf
    needed = max_iters
    it = 0
    while it < min(needed, max_iters):
        it += 1
        sample = rng.choice(n, size=4, replace=False)
        if (_has_collinear_triple(pts_src[sample]) or
                _has_collinear_triple(pts_dst[sample])):
            continue
        try:
            H = fit_homography_dlt(pts_src[sample], pts_dst[sample])
        except (NoHomographyError, np.linalg.LinAlgError):
            continue
        err = symmetric_transfer_error(H, pts_src, pts_dst)
        flags = err < threshold_px
        count = int(flags.sum())
        mean_err = float(err[flags].mean()) if count else np.inf
        if count > best_count or (count == best_count and mean_err < best_err):
            best_count = count
            best_inliers = flags
            best_err = mean_err
            w = count / n
            if w > 0:
                denom = math.log(max(1e-12, 1.0 - w ** 4))
                needed = min(max_iters,
                             int(math.ceil(math.log(1 - RANSAC_CONFIDENCE) / denom))
                             if denom < 0 else max_iters)

    if best_inliers is None or best_count < 4:
        raise NoHomographyError("no non-degenerate consensus found")

    flags = best_inliers
    H = None
    for _ in range(3):
        try:
            H = fit_homography_dlt(pts_src[flags], pts_dst[flags])
        except (NoHomographyError, np.linalg.LinAlgError):
            break
        new_flags = symmetric_transfer_error(H, pts_src, pts_dst) < threshold_px
        if new_flags.sum() < 4 or np.array_equal(new_flags, flags):
            break
        flags = new_flags
    if H is None:
        raise NoHomographyError("inlier refit failed")

    # Huber polish: a couple of contaminated matches just inside the
    # threshold can bias the plain least-squares refit; soft-downweight
    # residuals beyond 1.345 * sigma-hat (MAD) instead of trusting the
    # hard inlier cut.
    for _ in range(3):
        err = symmetric_transfer_error(H, pts_src, pts_dst)
        sel = err < threshold_px
        if sel.sum() < 4:
            break
        r = err[sel]
        k = 1.345 * 1.4826 * max(float(np.median(r)), 1e-9)
        wts = np.minimum(1.0, k / np.maximum(r, 1e-12))
        try:
            H_new = fit_homography_dlt(pts_src[sel], pts_dst[sel], weights=wts)
        except (NoHomographyError, np.linalg.LinAlgError):
            break
        if np.allclose(H_new, H, atol=1e-12):
            H = H_new
            break
        H = H_new
    flags = symmetric_transfer_error(H, pts_src, pts_dst) < threshold_px
    if flags.sum() < 4:
        raise NoHomographyError("inlier refit failed")
    return H, flags


def depth_proxy_values(m: MatchSet, H_global: np.ndarray) -> np.ndarray:
    """Signed parallax proxy: residuals from the global homography projected
    onto their first principal axis, centered to zero mean."""
    if len(m) < 2:
        return np.zeros(len(m))
    residuals = m.points_t - apply_homography(H_global, m.points_s)
    centered = residuals - residuals.mean(axis=0)
    cov = centered.T @ centered / max(len(centered) - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    axis = evecs[:, int(np.argmax(evals))]
    # deterministic sign: principal axis points into the +x (then +y) half
    if axis[0] < 0 or (axis[0] == 0 and axis[1] < 0):
        axis = -axis
    return centered @ axis


def sample_depth(depth: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear depth samples with clamp-to-edge for out-of-bounds points."""
    points = np.asarray(points, dtype=np.float64)
    return bilinear_sample(depth, points[:, 0], points[:, 1], mode="clamp")


def _linkage_labels(obs: np.ndarray, k: int) -> np.ndarray:
    Z = hierarchy.linkage(obs, method="complete")
    return hierarchy.fcluster(Z, t=k, criterion="maxclust")


def agglomerative_cluster(values: np.ndarray, n_clusters: int) -> ClusterAssignment:
    """Bottom-up complete-linkage clustering of scalar values into up to
    `n_clusters` groups, labels ordered by ascending cluster mean."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if n_clusters < 1:
        raise RefillError("n_clusters must be >= 1")
    reduced = False
    k = n_clusters
    if len(values) < k:
        k = len(values)
        reduced = True
    if k == 0:
        return ClusterAssignment(np.zeros(0, dtype=int), values, 0, True)
    if k == 1 or len(values) == 1:
        labels = np.ones(len(values), dtype=int)
        return ClusterAssignment(labels, values, 1, reduced or n_clusters > 1)

    raw = _linkage_labels(values[:, None], k)
    labels, count = _order_by_mean(raw, values)
    if count < n_clusters:
        reduced = True
    return ClusterAssignment(labels, values, count, reduced)


def _order_by_mean(raw_labels: np.ndarray, values: np.ndarray):
    """Relabel clusters 1..k by ascending mean of `values` (first column)."""
    vals = np.atleast_2d(values.T).T
    uniq = np.unique(raw_labels)
    means = [(vals[raw_labels == u, 0].mean(), u) for u in uniq]
    means.sort()
    remap = {u: i + 1 for i, (_, u) in enumerate(means)}
    return np.array([remap[u] for u in raw_labels], dtype=int), len(uniq)


def cluster_points_2d(points: np.ndarray, n_clusters: int) -> ClusterAssignment:
    """Complete-linkage clustering of 2-D points (spatial mode)."""
    points = np.asarray(points, dtype=np.float64)
    k = min(n_clusters, len(points))
    reduced = k < n_clusters
    if k <= 1 or len(points) == 1:
        return ClusterAssignment(np.ones(len(points), dtype=int),
                                 points[:, 0].copy(), 1 if len(points) else 0,
                                 reduced or n_clusters > 1)
    raw = _linkage_labels(points, k)
    labels, count = _order_by_mean(raw, points[:, 0])
    return ClusterAssignment(labels, points[:, 0].copy(), count,
                             reduced or count < n_clusters)


def robust_1d_clusters(values: np.ndarray, n_clusters: int,
                       headroom: int = 2) -> ClusterAssignment:
    """Outlier-tolerant scalar clustering into at most `n_clusters` groups.

    Complete linkage at k=n isolates gross mismatch proxies into singleton
    clusters and leaves the real planes fused; over-clustering with some
    headroom lets junk take its own groups, small groups fold into their
    nearest neighbor, and closest-mean merging then brings the count back
    down to n.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    assign = agglomerative_cluster(values, n_clusters + headroom)
    assign = merge_small_clusters(assign)
    labels = assign.labels.copy()
    while True:
        uniq = np.unique(labels)
        if len(uniq) <= n_clusters:
            break
        means = np.array([values[labels == u].mean() for u in uniq])
        order = np.argsort(means)
        gaps = np.diff(means[order])
        j = int(np.argmin(gaps))
        keep, fold = uniq[order[j]], uniq[order[j + 1]]
        labels[labels == fold] = keep
    labels, count = _order_by_mean(labels, values)
    return ClusterAssignment(labels, values, count,
                             assign.reduced or count < n_clusters)


def merge_small_clusters(assign: ClusterAssignment,
                         min_size: int = MIN_CLUSTER_MATCHES) -> ClusterAssignment:
    """Fold clusters below `min_size` into the nearest cluster by proxy mean."""
    labels = assign.labels.copy()
    values = assign.proxy_values
    while True:
        uniq, counts = np.unique(labels, return_counts=True)
        if len(uniq) <= 1:
            break
        small = [u for u, c in zip(uniq, counts) if c < min_size]
        if not small:
            break
        u = small[0]
        means = {v: values[labels == v].mean() for v in uniq}
        others = [v for v in uniq if v != u]
        nearest = min(others, key=lambda v: abs(means[v] - means[u]))
        labels[labels == u] = nearest
    labels, count = _order_by_mean(labels, values)
    return ClusterAssignment(labels, values, count,
                             assign.reduced or count < assign.n_clusters)


def warp_with_homography(src: np.ndarray, H: np.ndarray, out_dims):
    """Backward-warp `src` into an (h, w) target frame through H (src -> dst).

    Returns the warped image and a fractional valid mask obtained by warping
    an all-ones indicator with the same sampler, so genuinely black source
    pixels are not misclassified as invalid.
    """
    H = check_homography(H)
    h, w = out_dims
    Hinv = np.linalg.inv(H)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    den = Hinv[2, 0] * xs + Hinv[2, 1] * ys + Hinv[2, 2]
    bad = np.abs(den) < 1e-12
    den = np.where(bad, 1.0, den)
    sx = (Hinv[0, 0] * xs + Hinv[0, 1] * ys + Hinv[0, 2]) / den
    sy = (Hinv[1, 0] * xs + Hinv[1, 1] * ys + Hinv[1, 2]) / den
    sx = np.where(bad, -1e9, sx)
    sy = np.where(bad, -1e9, sy)
    warped = bilinear_sample(src, sx, sy, mode="zero")
    valid = bilinear_sample(np.ones(src.shape[:2]), sx, sy, mode="zero")
    return warped, valid


def build_proposal_set(m: MatchSet, cfg, src: np.ndarray, target_dims,
                       depth: np.ndarray | None = None) -> list[Proposal]:
    """Estimate per-cluster homographies plus the global one and warp the
    source once per homography. Cluster proposals come first, the global
    proposal last; indices are 1-based."""
    if len(m) == 0:
        raise RefillError("match set is empty")
    pts_t, pts_s = m.points_t, m.points_s

    try:
        H_global, global_inl = ransac_homography(
            pts_s, pts_t, cfg.ransac_threshold_px, seed=cfg.rng_seed + cfg.n_clusters + 1)
    except NoHomographyError:
        H_global, global_inl = None, None

    cluster_jobs = []  # (label, member indices)
    if cfg.clustering_mode != "none" and H_global is not None and len(m) >= 8:
        if cfg.clustering_mode == "residual":
            proxies = depth_proxy_values(m, H_global)
            assign = robust_1d_clusters(proxies, cfg.n_clusters)
        elif cfg.clustering_mode == "spatial":
            assign = cluster_points_2d(pts_t, cfg.n_clusters)
        elif cfg.clustering_mode == "random":
            rng = np.random.default_rng(cfg.rng_seed)
            labels = rng.integers(1, cfg.n_clusters + 1, size=len(m))
            assign = ClusterAssignment(labels, labels.astype(float), cfg.n_clusters)
            assign = ClusterAssignment(*_compact(assign))
        elif cfg.clustering_mode == "depth-file":
            if depth is None:
                raise RefillError("depth-file clustering requires a depth map")
            depths = sample_depth(depth, pts_t)
            assign = robust_1d_clusters(depths, cfg.n_clusters)
        assign = merge_small_clusters(assign)
        if len(np.unique(assign.labels)) > 1:
            for label in np.unique(assign.labels):
                idx = np.nonzero(assign.labels == label)[0]
                if len(idx) >= MIN_CLUSTER_MATCHES:
                    cluster_jobs.append((int(label), idx))

    proposals: list[Proposal] = []
    for label, idx in cluster_jobs:
        try:
            H, inl = ransac_homography(
                pts_s[idx], pts_t[idx], cfg.ransac_threshold_px,
                seed=cfg.rng_seed + label)
        except NoHomographyError:
            continue
        warped, valid = warp_with_homography(src, H, target_dims)
        proposals.append(Proposal(0, H, warped, valid, label,
                                  match_count=len(idx),
                                  inlier_count=int(inl.sum()),
                                  inlier_points_t=pts_t[idx][inl]))
    if H_global is not None:
        warped, valid = warp_with_homography(src, H_global, target_dims)
        proposals.append(Proposal(0, H_global, warped, valid, "global",
                                  match_count=len(m),
                                  inlier_count=int(global_inl.sum()),
                                  inlier_points_t=pts_t[global_inl]))
    for i, p in enumerate(proposals):
        p.index = i + 1
    return proposals


def _compact(assign: ClusterAssignment):
    labels, count = _order_by_mean(assign.labels, assign.proxy_values)
    return labels, assign.proxy_values, count, count < assign.n_clusters
