"""Per-proposal refinement: bilateral affine color grid + coarse warp field.

Both stages are fitted on trusted pixels only (valid warp coverage outside
the hole) and applied to the whole proposal. The color stage fits one 3x4
affine per cell of an s x s x d grid (two spatial axes, one luminance-guidance
axis); the spatial stage fits an s x s grid of 2-D offsets by robust
Gauss-Newton on an image pyramid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .core import bilinear_sample, dilate_mask, downsample2

_LUMA = np.array([0.299, 0.587, 0.114])

MIN_COLOR_FIT_PIXELS = 12
# acceptance band for stage reverts; mirrors the fusion scoring band
REVERT_BAND_PX = 8
MIN_FLOW_FIT_PIXELS = 100
DEFAULT_MAX_OFFSET = 32.0
CHARBONNIER_EPS = 1e-3
JACOBI_WEIGHT = 0.25


def luminance_guidance(img: np.ndarray) -> np.ndarray:
    """Rec. 601 luminance in [0,1]; single-channel input passes through."""
    if img.ndim == 2:
        return np.clip(img, 0.0, 1.0)
    return np.clip(img @ _LUMA, 0.0, 1.0)


@dataclass
class ColorGrid:
    A: np.ndarray          # (s, s, d, 3, 4) affines [K | b]
    mass: np.ndarray       # (s, s, d) accumulated trilinear weight
    flagged: bool = False  # too little fit data, identity returned

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[2]


def identity_grid(s: int, d: int) -> ColorGrid:
    A = np.zeros((s, s, d, 3, 4))
    A[..., :3, :3] = np.eye(3)
    return ColorGrid(A, np.zeros((s, s, d)), flagged=False)


def _grid_corners(xs, ys, gs, h, w, s, d):
    """Trilinear corner indices/weights for slice coords (x/W*s, y/H*s, g*d).

    Yields 8 (flat_cell_index, weight) pairs per sample; coordinates are
    clamped to the node range so border pixels slice the outermost cells.
    """
    u = np.clip(xs / w * s, 0.0, s - 1.0)
    v = np.clip(ys / h * s, 0.0, s - 1.0)
    t = np.clip(gs * d, 0.0, d - 1.0)
    u0 = np.minimum(u.astype(np.int64), s - 2) if s > 1 else np.zeros_like(u, np.int64)
    v0 = np.minimum(v.astype(np.int64), s - 2) if s > 1 else np.zeros_like(v, np.int64)
    t0 = np.minimum(t.astype(np.int64), d - 2) if d > 1 else np.zeros_like(t, np.int64)
    fu, fv, ft = u - u0, v - v0, t - t0
    out = []
    for du, wu in ((0, 1 - fu), (1, fu)):
        for dv, wv in ((0, 1 - fv), (1, fv)):
            for dt, wt in ((0, 1 - ft), (1, ft)):
                iu = np.minimum(u0 + du, s - 1)
                iv = np.minimum(v0 + dv, s - 1)
                it = np.minimum(t0 + dt, d - 1)
                flat = (iv * s + iu) * d + it
                out.append((flat, wu * wv * wt))
    return out


def fit_color_grid(src: np.ndarray, tgt: np.ndarray, fit_mask: np.ndarray,
                   g: np.ndarray, s: int = 8, d: int = 8,
                   ridge: float = 1e-3) -> ColorGrid:
    """Per-cell ridge least squares mapping src colors to tgt colors.

    Each fit pixel scatters its normal-equation contribution into the 8 cells
    of its trilinear slice. Ridge pulls cells toward identity, so cells with
    no data come out exactly identity. One mass-weighted Jacobi smoothing pass
    couples adjacent cells without letting empty cells dilute fitted ones.
    """
    h, w = src.shape[:2]
    act = fit_mask > 0.5
    n = int(act.sum())
    if n < MIN_COLOR_FIT_PIXELS:
        out = identity_grid(s, d)
        out.flagged = True
        return out

    ys, xs = np.nonzero(act)
    phi = np.concatenate([src[ys, xs], np.ones((n, 1))], axis=1)  # (n, 4)
    rhs = tgt[ys, xs]                                             # (n, 3)
    ncell = s * s * d
    G = np.zeros((ncell, 4, 4))
    R = np.zeros((ncell, 4, 3))
    mass = np.zeros(ncell)
    outer = phi[:, :, None] * phi[:, None, :]
    cross = phi[:, :, None] * rhs[:, None, :]
    for flat, wgt in _grid_corners(xs.astype(float), ys.astype(float),
                                   g[ys, xs], h, w, s, d):
        np.add.at(G, flat, wgt[:, None, None] * outer)
        np.add.at(R, flat, wgt[:, None, None] * cross)
        np.add.at(mass, flat, wgt)

    ident_rhs = np.zeros((4, 3))
    ident_rhs[:3, :3] = np.eye(3)
    At = np.linalg.solve(G + ridge * np.eye(4), R + ridge * ident_rhs)
    A = np.transpose(At, (0, 2, 1)).reshape(s, s, d, 3, 4)
    mass = mass.reshape(s, s, d)
    return _smooth_grid(ColorGrid(A, mass))


def _smooth_grid(grid: ColorGrid) -> ColorGrid:
    """One Jacobi pass over the 6-neighborhood, contributions weighted by
    cell mass: empty cells inherit from populated neighbors, populated cells
    blend 25% of the mass-weighted neighbor mean."""
    A, m = grid.A, grid.mass
    s, d = grid.s, grid.d
    wsum = np.zeros_like(m)
    asum = np.zeros_like(A)
    for axis in range(3):
        for shift in (1, -1):
            mn = np.roll(m, shift, axis=axis)
            an = np.roll(A, shift, axis=axis)
            edge = [slice(None)] * 3
            edge[axis] = 0 if shift == 1 else -1
            mn[tuple(edge)] = 0.0
            an[tuple(edge)] = 0.0
            wsum += mn
            asum += mn[..., None, None] * an
    ncount = np.full_like(m, 6.0)
    for axis, size in ((0, s), (1, s), (2, d)):
        sl = [slice(None)] * 3
        for end in (0, -1):
            sl[axis] = end
            ncount[tuple(sl)] -= 1.0
    mean_neigh_mass = wsum / ncount
    with np.errstate(invalid="ignore", divide="ignore"):
        neigh_mean = asum / wsum[..., None, None]
    have_neigh = wsum > 0
    neigh_mean[~have_neigh] = 0.0

    wj = JACOBI_WEIGHT
    own = (1 - wj) * m
    oth = wj * mean_neigh_mass * have_neigh
    denom = own + oth
    blended = np.where((denom > 0)[..., None, None],
                       (own[..., None, None] * A + oth[..., None, None] * neigh_mean)
                       / np.where(denom > 0, denom, 1.0)[..., None, None],
                       A)
    return ColorGrid(blended, m, grid.flagged)


def revert_harmful_cells(grid: ColorGrid, src: np.ndarray, tgt: np.ndarray,
                         fit_mask: np.ndarray, g: np.ndarray) -> ColorGrid:
    """Reset cells to identity where the fitted affine worsens their own
    trusted pixels. The fit is global, but each cell answers for its own
    trilinear footprint: cells kept alive only by gains elsewhere (typically
    misaligned content) would otherwise leak error into well-aligned areas
    and into the hole interpolation."""
    act = fit_mask > 0.5
    if not act.any():
        return grid
    h, w = src.shape[:2]
    s, d = grid.s, grid.d
    applied = apply_color_grid(grid, g, src)
    gain = (np.abs(applied - tgt).mean(axis=2)
            - np.abs(src - tgt).mean(axis=2))
    ys, xs = np.nonzero(act)
    gv = gain[ys, xs]
    D = np.zeros(s * s * d)
    for flat, wgt in _grid_corners(xs.astype(float), ys.astype(float),
                                   g[ys, xs], h, w, s, d):
        np.add.at(D, flat, wgt * gv)
    bad = D > 1e-12
    if not bad.any():
        return grid
    A = grid.A.copy()
    flat_A = A.reshape(-1, 3, 4)
    flat_A[bad] = 0.0
    flat_A[bad, :3, :3] = np.eye(3)
    return ColorGrid(A, grid.mass, grid.flagged)


def apply_color_grid(grid: ColorGrid, g: np.ndarray, src: np.ndarray,
                     chunk_rows: int = 128) -> np.ndarray:
    """Trilinear slice of the grid per pixel, affine applied, clamped."""
    h, w = src.shape[:2]
    s, d = grid.s, grid.d
    ident = identity_grid(s, d)
    if np.array_equal(grid.A, ident.A):
        # blending identical affines must stay the exact identity map
        return np.clip(src, 0.0, 1.0)
    flatA = grid.A.reshape(-1, 3, 4)
    out = np.empty_like(src)
    for y0 in range(0, h, chunk_rows):
        y1 = min(y0 + chunk_rows, h)
        ys, xs = np.mgrid[y0:y1, 0:w].astype(np.float64)
        Ap = np.zeros((y1 - y0, w, 3, 4))
        for flat, wgt in _grid_corners(xs, ys, g[y0:y1], h, w, s, d):
            Ap += wgt[..., None, None] * flatA[flat]
        phi = np.concatenate([src[y0:y1], np.ones((y1 - y0, w, 1))], axis=2)
        out[y0:y1] = np.einsum("hwij,hwj->hwi", Ap, phi)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# coarse flow


@dataclass
class FlowField:
    grid: np.ndarray       # (s, s, 2) offsets (dx, dy) in pixels
    flagged: bool = False  # too little fit data, zero field returned

    @property
    def s(self) -> int:
        return self.grid.shape[0]


def zero_flow(s: int) -> FlowField:
    return FlowField(np.zeros((s, s, 2)), flagged=False)


def upsample_flow(field: FlowField, h: int, w: int) -> np.ndarray:
    """Corner-aligned bilinear upsampling: node (i, j) sits at pixel
    (j*(w-1)/(s-1), i*(h-1)/(s-1)), so the field at node pixels equals the
    grid values exactly."""
    s = field.s
    if s == 1:
        return np.broadcast_to(field.grid[0, 0], (h, w, 2)).copy()
    xs = np.arange(w) * (s - 1) / max(w - 1, 1)
    ys = np.arange(h) * (s - 1) / max(h - 1, 1)
    gx, gy = np.meshgrid(xs, ys)
    return bilinear_sample(field.grid, gx, gy, mode="clamp")


def _upsample_weights(h, w, s):
    """Sparse (h*w, s*s) matrix U with flow(p) = U @ grid_component."""
    xs = np.arange(w) * (s - 1) / max(w - 1, 1)
    ys = np.arange(h) * (s - 1) / max(h - 1, 1)
    gx, gy = np.meshgrid(xs, ys)
    gx = gx.ravel()
    gy = gy.ravel()
    x0 = np.minimum(gx.astype(np.int64), s - 2)
    y0 = np.minimum(gy.astype(np.int64), s - 2)
    fx = gx - x0
    fy = gy - y0
    rows = np.arange(h * w)
    data, ri, ci = [], [], []
    for dx, wx in ((0, 1 - fx), (1, fx)):
        for dy, wy in ((0, 1 - fy), (1, fy)):
            ri.append(rows)
            ci.append((y0 + dy) * s + (x0 + dx))
            data.append(wx * wy)
    return sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(ri), np.concatenate(ci))),
        shape=(h * w, s * s))


def _charbonnier_objective(src, tgt, act, flow_full):
    h, w = src.shape[:2]
    ys, xs = np.nonzero(act)
    samp = bilinear_sample(src, xs + flow_full[ys, xs, 0],
                           ys + flow_full[ys, xs, 1], mode="clamp")
    r = samp - tgt[ys, xs]
    return float(np.sqrt(r * r + CHARBONNIER_EPS ** 2).sum())


def _fit_flow_level(src, tgt, act, theta, s, max_offset, n_iters=20):
    """Damped Gauss-Newton/IRLS on one pyramid level. theta: (s*s*2,) flat.

    The raw GN step is trust-clamped to 2 px so the photometric
    linearization stays honest, then a backtracking line search enforces a
    non-increasing Charbonnier objective.
    """
    h, w = src.shape[:2]
    U = _upsample_weights(h, w, s)
    ys, xs = np.nonzero(act)
    rows = ys * w + xs
    Ua = U[rows]                       # (n_act, s*s)

    def full_flow(th):
        g = th.reshape(2, s * s)
        fx = (U @ g[0]).reshape(h, w)
        fy = (U @ g[1]).reshape(h, w)
        return np.stack([fx, fy], axis=2)

    obj = _charbonnier_objective(src, tgt, act, full_flow(theta))
    for _ in range(n_iters):
        flow = full_flow(theta)
        px = xs + flow[ys, xs, 0]
        py = ys + flow[ys, xs, 1]
        samp = bilinear_sample(src, px, py, mode="clamp")
        # image gradient at the warped sample positions (central differences)
        gx = (bilinear_sample(src, px + 0.5, py, mode="clamp") -
              bilinear_sample(src, px - 0.5, py, mode="clamp"))
        gy = (bilinear_sample(src, px, py + 0.5, mode="clamp") -
              bilinear_sample(src, px, py - 0.5, mode="clamp"))
        r = samp - tgt[ys, xs]                        # (n, 3)
        wir = 1.0 / np.sqrt(r * r + CHARBONNIER_EPS ** 2)

        # J = [diag(gx_c) @ Ua | diag(gy_c) @ Ua] stacked over channels
        blocks = []
        for c in range(3):
            Jc = sparse.hstack([
                sparse.diags(gx[:, c]) @ Ua,
                sparse.diags(gy[:, c]) @ Ua])
            blocks.append(Jc)
        J = sparse.vstack(blocks).tocsr()
        wall = wir.T.ravel()
        rw = (r * wir).T.ravel()
        JtW = J.T.multiply(wall)
        H = (JtW @ J).toarray()
        b = -(JtW @ rw)
        dg = np.diag(H).copy()
        H[np.diag_indices_from(H)] += 0.1 * dg + 1e-9 * max(dg.max(), 1.0)
        try:
            delta = np.linalg.solve(H, b)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(delta)):
            break
        mx = np.abs(delta).max()
        if mx > 2.0:
            delta *= 2.0 / mx

        step = 1.0
        accepted = False
        for _bt in range(10):
            trial = np.clip(theta + step * delta, -max_offset, max_offset)
            trial_obj = _charbonnier_objective(src, tgt, act, full_flow(trial))
            if trial_obj <= obj:
                theta, obj = trial, trial_obj
                accepted = True
                break
            step *= 0.5
        if not accepted or np.abs(step * delta).max() < 1e-3:
            break
    return theta, obj


def _extend_unsupported(theta, act, h, w, s, support_frac=0.5):
    """Harmonic extension of fitted flow into cells whose bilinear support
    contains almost no trusted pixels (e.g. cells inside the hole). The
    solution on well-supported cells is left bit-identical."""
    U = _upsample_weights(h, w, s)
    full_mass = np.asarray(U.sum(axis=0)).ravel()
    rows = np.nonzero(act.ravel())[0]
    act_mass = np.asarray(U[rows].sum(axis=0)).ravel()
    frac = act_mass / np.maximum(full_mass, 1e-12)
    unknown = frac < support_frac
    if not unknown.any() or unknown.all():
        return theta
    idx = -np.ones(s * s, dtype=np.int64)
    un = np.nonzero(unknown)[0]
    idx[un] = np.arange(len(un))
    out = theta.copy()
    for comp in range(2):
        vals = theta[comp * s * s:(comp + 1) * s * s]
        A = np.zeros((len(un), len(un)))
        b = np.zeros(len(un))
        for k, cell in enumerate(un):
            cy, cx = divmod(cell, s)
            deg = 0
            for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                if 0 <= ny < s and 0 <= nx < s:
                    deg += 1
                    ncell = ny * s + nx
                    if unknown[ncell]:
                        A[k, idx[ncell]] -= 1.0
                    else:
                        b[k] += vals[ncell]
            A[k, k] = deg
        sol = np.linalg.solve(A, b)
        out[comp * s * s + un] = sol
    return out


def _revert_harmful_nodes(theta, src, tgt, act, s):
    """Zero flow nodes whose footprint of trusted pixels got worse under the
    fitted field. Counterpart of revert_harmful_cells for flow: a node is
    only allowed to move pixels it demonstrably helps."""
    h, w = src.shape[:2]
    n = s * s
    U = _upsample_weights(h, w, s)
    flow = np.stack([(U @ theta[:n]).reshape(h, w),
                     (U @ theta[n:]).reshape(h, w)], axis=2)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    warped = bilinear_sample(src, xs + flow[..., 0], ys + flow[..., 1],
                             mode="clamp")
    gain = (np.abs(warped - tgt).mean(axis=2)
            - np.abs(src - tgt).mean(axis=2))
    rows = np.nonzero(act.ravel())[0]
    D = np.asarray(U[rows].T @ gain[act]).ravel()
    bad = D > 1e-12
    if bad.any():
        theta = theta.copy()
        theta[:n][bad] = 0.0
        theta[n:][bad] = 0.0
    return theta, bad


def fit_coarse_flow(src: np.ndarray, tgt: np.ndarray, fit_mask: np.ndarray,
                    s: int = 8, max_offset: float = DEFAULT_MAX_OFFSET,
                    n_levels: int = 3) -> FlowField:
    """Robust coarse alignment field on an image pyramid.

    Pixels outside fit_mask never influence the solution: untrusted source
    content is replaced by the mean fit-region color before any sampling, and
    residuals are only evaluated on fit_mask. Backtracking keeps the
    Charbonnier objective non-increasing, so the zero field is never beaten
    by a worse fit. Cells with (almost) no trusted support pixels take the
    harmonic extension of their supported neighbors instead of drifting on
    noise.
    """
    act0 = fit_mask > 0.5
    if int(act0.sum()) < MIN_FLOW_FIT_PIXELS:
        out = zero_flow(s)
        out.flagged = True
        return out

    fill = src[act0].mean(axis=0)
    src_t = np.where(act0[..., None], src, fill)
    tgt_t = np.where(act0[..., None], tgt, fill)

    pyr = [(src_t, tgt_t, act0.astype(np.float64))]
    for _ in range(n_levels - 1):
        ps, pt, pa = pyr[-1]
        if min(ps.shape[:2]) < 16:
            break
        pyr.append((downsample2(ps), downsample2(pt), downsample2(pa)))

    theta = np.zeros(2 * s * s)
    fitted_lvl = None
    for lvl in range(len(pyr) - 1, -1, -1):
        ps, pt, pa = pyr[lvl]
        act = pa > 0.999  # strict interior: avoid mixed hole/known blocks
        if int(act.sum()) < max(MIN_FLOW_FIT_PIXELS // (4 ** lvl), 4):
            continue
        cap = max_offset / (2 ** lvl)
        theta = np.clip(theta, -cap, cap)
        theta, _ = _fit_flow_level(ps, pt, act, theta, s, cap)
        fitted_lvl = lvl
        if lvl > 0:
            theta = theta * 2.0
    if fitted_lvl is not None:
        ps, _, pa = pyr[fitted_lvl]
        theta = _extend_unsupported(theta, pa > 0.999, ps.shape[0],
                                    ps.shape[1], s)
        theta = np.clip(theta, -max_offset, max_offset)
        theta, bad = _revert_harmful_nodes(theta, src_t, tgt_t, act0, s)
        if bad.any():
            # unsupported cells re-take the harmonic extension so they can
            # no longer inherit values from a now-reverted neighbor
            theta = _extend_unsupported(theta, pa > 0.999, ps.shape[0],
                                        ps.shape[1], s)
    theta = np.clip(theta, -max_offset, max_offset)
    grid = np.stack([theta[:s * s].reshape(s, s),
                     theta[s * s:].reshape(s, s)], axis=2)
    return FlowField(grid)


def apply_flow(src: np.ndarray, field: FlowField | np.ndarray):
    """Backward warp: out(p) = src(p + flow(p)). Returns (out, valid)."""
    h, w = src.shape[:2]
    flow = upsample_flow(field, h, w) if isinstance(field, FlowField) else field
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    px = xs + flow[..., 0]
    py = ys + flow[..., 1]
    out = bilinear_sample(src, px, py, mode="zero")
    valid = bilinear_sample(np.ones((h, w)), px, py, mode="zero")
    return out, valid


def region_mae(refined: np.ndarray, tgt: np.ndarray,
                 region: np.ndarray) -> float:
    """Mean absolute error over the region's active pixels (0 if empty)."""
    act = region > 0.5
    if not np.any(act):
        return 0.0
    return float(np.abs(refined[act] - tgt[act]).mean())


# ---------------------------------------------------------------------------
# per-proposal driver


def refine_proposal(warped: np.ndarray, valid: np.ndarray,
                    target_masked: np.ndarray, hole: np.ndarray, cfg,
                    fit_scale: int = 1, corr_hint: np.ndarray | None = None):
    """Color and/or spatial refinement of one aligned proposal.

    `corr_hint` optionally marks pixels known to correspond between the two
    frames (e.g. neighborhoods of geometric inliers). When given, both fits
    are restricted to it: color or flow estimated from non-corresponding
    content is meaningless no matter how much of it there is.

    Fitting runs on `fit_scale`-downsampled copies (grids live in normalized
    coordinates, so they transfer to full resolution); application always
    runs at full resolution. Each stage is reverted if it fails to reduce
    the L1 residual on the hole-adjacent band of the trusted region -- the
    same neighbourhood fusion later scores -- falling back to the whole
    trusted region when the hole is empty.

    Returns (refined, refined_valid, ColorGrid | None, FlowField | None).
    """
    if cfg.refine_mode == "none":
        return warped, valid, None, None

    fit_mask = ((valid > 0.999) & (hole < 0.5)).astype(np.float64)
    band = ((dilate_mask(hole, REVERT_BAND_PX) > 0.5)
            & (hole < 0.5)).astype(np.float64)

    def shrink(img):
        out = img
        for _ in range(fit_scale.bit_length() - 1):
            out = downsample2(out)
        return out

    stages = {"full": cfg.refine_order, "color": "c", "spatial": "s"}[cfg.refine_mode]
    hint_small = None
    if corr_hint is not None:
        hint_small = shrink(corr_hint.astype(np.float64)) > 0.5
    cur, cur_valid = warped, valid
    grid = field = None
    for stage in stages:
        small_src = shrink(cur)
        small_tgt = shrink(target_masked)
        small_fit = (shrink(fit_mask) > 0.999).astype(np.float64)
        trust = ((cur_valid > 0.999) & (hole < 0.5)).astype(np.float64)
        if stage == "c":
            g_small = luminance_guidance(small_src)
            # color evidence is cleanest away from edges, where residual
            # misalignment would otherwise leak into the affine fit, and is
            # only meaningful where src and tgt plausibly show the same
            # content: robustly gate out gross-mismatch pixels so their
            # cells fall back to identity instead of chasing them
            lum = luminance_guidance(small_tgt)
            dgy, dgx = np.gradient(lum)
            gmag = np.hypot(dgx, dgy)
            act = small_fit > 0.5
            if hint_small is not None:
                hinted = act & hint_small
                if int(hinted.sum()) >= MIN_COLOR_FIT_PIXELS:
                    act = hinted
            color_fit = act.astype(np.float64)
            if act.any():
                resid = np.abs(small_src - small_tgt).mean(axis=2)
                med = np.median(resid[act])
                mad = np.median(np.abs(resid[act] - med))
                cut_r = med + 2.5 * 1.4826 * mad + 0.02
                cut_g = np.quantile(gmag[act], 0.4)
                trimmed = (act & (gmag <= cut_g)
                           & (resid <= cut_r)).astype(np.float64)
                if trimmed.sum() >= MIN_COLOR_FIT_PIXELS:
                    color_fit = trimmed
            grid = fit_color_grid(small_src, small_tgt, color_fit, g_small,
                                  cfg.grid_s, cfg.grid_d)
            grid = revert_harmful_cells(grid, small_src, small_tgt,
                                        small_fit, g_small)
            cand = apply_color_grid(grid, luminance_guidance(cur), cur)
            cand_valid = cur_valid
        else:
            flow_fit = small_fit
            if hint_small is not None:
                hinted = small_fit * hint_small
                if int((hinted > 0.5).sum()) >= MIN_FLOW_FIT_PIXELS:
                    flow_fit = hinted
            field = fit_coarse_flow(small_src, small_tgt, flow_fit,
                                    cfg.grid_s,
                                    max_offset=DEFAULT_MAX_OFFSET / fit_scale)
            if fit_scale > 1:
                field = FlowField(field.grid * fit_scale, field.flagged)
            cand, flow_valid = apply_flow(cur, field)
            vwarp, _ = apply_flow(cur_valid, field)
            cand_valid = flow_valid * vwarp
        gate = trust * ((cand_valid > 0.999).astype(np.float64))
        # fits are global but accountability is local: a stage must help on
        # the band around the hole, where the proposal is actually judged
        score = gate * band
        if not np.any(score > 0.5):
            score = gate
        before = region_mae(cur, target_masked, score)
        after = region_mae(cand, target_masked, score)
        if np.any(score > 0.5) and after <= before + 1e-12:
            cur, cur_valid = cand, cand_valid
        else:
            # stage made the trusted region worse: fall back to its input
            if stage == "c":
                grid = None
            else:
                field = None
    return cur, cur_valid, grid, field
