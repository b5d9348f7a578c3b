"""Single-image hole filling and gradient-domain compositing.

diffusion_fill solves the Laplace equation in the hole (smooth membrane),
patchmatch_fill synthesizes texture by nearest-neighbor patch voting on a
pyramid, poisson_blend pastes source gradients under target boundary
conditions. All three leave known pixels untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import cg

from .core import MaskError, downsample2, resize_bilinear, validate_image, validate_mask

_NEIGH = ((-1, 0), (1, 0), (0, -1), (0, 1))
SOLVE_TOL = 1e-6


@dataclass
class FillParams:
    patch_size: int = 7
    pyramid_levels: int | None = None   # auto from hole size
    em_iters: int = 6
    random_search_decay: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise MaskError(f"patch_size must be odd >= 3, got {self.patch_size}")


def _laplace_system(img: np.ndarray, hole: np.ndarray, grad_src: np.ndarray | None):
    """5-point Laplace/Poisson system over hole pixels.

    Returns (A, b) with A SPD. b includes Dirichlet terms from known
    neighbors and, when grad_src is given, the divergence of its gradient.
    """
    h, w = hole.shape
    hb = hole > 0.5
    n = int(hb.sum())
    idx = -np.ones((h, w), dtype=np.int64)
    ys, xs = np.nonzero(hb)
    idx[ys, xs] = np.arange(n)
    nc = img.shape[2] if img.ndim == 3 else 1
    imgc = img.reshape(h, w, nc)
    srcc = grad_src.reshape(h, w, nc) if grad_src is not None else None

    diag = np.zeros(n)
    rows, cols, vals = [], [], []
    b = np.zeros((n, nc))
    for dy, dx in _NEIGH:
        ny, nx = ys + dy, xs + dx
        inb = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        diag += inb
        nyc = np.clip(ny, 0, h - 1)
        nxc = np.clip(nx, 0, w - 1)
        nidx = idx[nyc, nxc]
        unknown = inb & (nidx >= 0)
        known = inb & (nidx < 0)
        rows.append(np.nonzero(unknown)[0])
        cols.append(nidx[unknown])
        vals.append(-np.ones(int(unknown.sum())))
        b[known] += imgc[nyc[known], nxc[known]]
        if srcc is not None:
            b[inb] += srcc[ys[inb], xs[inb]] - srcc[nyc[inb], nxc[inb]]
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    A = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n))
    return A, b, (ys, xs)


def _solve_channels(A, b, n_iter_cap: int):
    out = np.empty_like(b)
    for c in range(b.shape[1]):
        x0 = None
        atol = SOLVE_TOL * 0.5
        x = np.zeros(b.shape[0])
        for _ in range(4):
            x, _info = cg(A, b[:, c], x0=x0, rtol=0.0, atol=atol,
                          maxiter=n_iter_cap)
            if np.abs(b[:, c] - A @ x).max() < SOLVE_TOL:
                break
            x0 = x
            atol *= 1e-2
        out[:, c] = x
    return out


def _hole_solve(img: np.ndarray, hole: np.ndarray,
                grad_src: np.ndarray | None = None) -> np.ndarray:
    hb = hole > 0.5
    if not hb.any():
        return img.copy()
    A, b, (ys, xs) = _laplace_system(img, hole, grad_src)
    sol = _solve_channels(A, b, n_iter_cap=20 * int(np.sqrt(len(b))) + 2000)
    out = img.copy()
    if img.ndim == 3:
        out[ys, xs] = sol
    else:
        out[ys, xs] = sol[:, 0]
    return out


def diffusion_fill(target_masked: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Harmonic in-fill: hole pixels solve the Laplace equation with known
    neighbors as Dirichlet data (image border acts as a no-flux wall)."""
    img = validate_image(target_masked)
    mask = validate_mask(mask, like=img)
    return _hole_solve(img, mask)


def poisson_blend(target: np.ndarray, source: np.ndarray,
                  mask: np.ndarray) -> np.ndarray:
    """Gradient-domain paste: hole takes the source's gradients, boundary
    takes the target's known pixels."""
    tgt = validate_image(target)
    src = validate_image(source)
    if tgt.shape != src.shape:
        raise MaskError(f"target {tgt.shape} vs source {src.shape} dims differ")
    mask = validate_mask(mask, like=tgt)
    return _hole_solve(tgt, mask, grad_src=src)


# ---------------------------------------------------------------------------
# PatchMatch synthesis


def _downsample_mask(mask: np.ndarray) -> np.ndarray:
    # any hole contribution poisons the coarse pixel
    return (downsample2(mask) > 0.0).astype(np.float64)


def _auto_levels(mask: np.ndarray, h: int, w: int) -> int:
    ys, xs = np.nonzero(mask > 0.5)
    if len(ys) == 0:
        return 1
    extent = max(int(ys.max() - ys.min() + 1), int(xs.max() - xs.min() + 1))
    levels = 1
    while extent > 12 and min(h, w) >> levels >= 32 and levels < 4:
        levels += 1
        extent //= 2
    return levels


def _improve_nnf(est, known_img, valid_src, work_y, work_x, nnf, best_cost,
                 rad, rng, decay, search_max):
    """One NNF improvement round: 4-neighbor propagation + random search."""
    h, w = est.shape[:2]
    n = len(work_y)

    def patch_cost(qy, qx):
        ok = valid_src[np.clip(qy, 0, h - 1), np.clip(qx, 0, w - 1)] & \
            (qy >= rad) & (qy < h - rad) & (qx >= rad) & (qx < w - rad)
        acc = np.full(n, np.inf)
        acc[ok] = 0.0
        qyo, qxo = qy[ok], qx[ok]
        cy, cx = work_y[ok], work_x[ok]
        for dy in range(-rad, rad + 1):
            ay = np.clip(cy + dy, 0, h - 1)
            for dx in range(-rad, rad + 1):
                ax = np.clip(cx + dx, 0, w - 1)
                d = est[ay, ax] - known_img[qyo + dy, qxo + dx]
                acc[ok] += (d * d).sum(axis=-1)
        return acc

    # index of each work pixel in the dense (h, w) lattice, for propagation
    lat = -np.ones((h, w), dtype=np.int64)
    lat[work_y, work_x] = np.arange(n)

    def try_candidates(qy, qx):
        nonlocal best_cost
        c = patch_cost(qy, qx)
        better = c < best_cost
        nnf[better] = np.stack([qy[better], qx[better]], axis=1)
        best_cost = np.where(better, c, best_cost)

    for sy, sx in ((0, -1), (0, 1), (-1, 0), (1, 0)):
        ny = np.clip(work_y + sy, 0, h - 1)
        nx = np.clip(work_x + sx, 0, w - 1)
        src_i = lat[ny, nx]
        has = src_i >= 0
        qy = np.where(has, nnf[np.maximum(src_i, 0), 0] - sy, -1)
        qx = np.where(has, nnf[np.maximum(src_i, 0), 1] - sx, -1)
        try_candidates(qy, qx)

    radius = float(search_max)
    while radius >= 1.0:
        r = int(radius)
        qy = nnf[:, 0] + rng.integers(-r, r + 1, size=n)
        qx = nnf[:, 1] + rng.integers(-r, r + 1, size=n)
        try_candidates(qy, qx)
        radius *= decay
    return nnf, best_cost


def _vote(est, known_img, hole_b, work_y, work_x, nnf, best_cost, rad):
    """Replace hole pixels by the similarity-weighted average of all source
    patches whose footprint covers them."""
    h, w = est.shape[:2]
    acc = np.zeros_like(est)
    wacc = np.zeros((h, w))
    finite = np.isfinite(best_cost)
    cy, cx = work_y[finite], work_x[finite]
    qy, qx = nnf[finite, 0], nnf[finite, 1]
    cost = best_cost[finite]
    if len(cy) == 0:
        return est
    area = (2 * rad + 1) ** 2 * est.shape[2]
    sigma2 = max(np.median(cost) / area, 1e-4)
    wgt = np.exp(-cost / (area * 2.0 * sigma2))
    for dy in range(-rad, rad + 1):
        py = cy + dy
        oky = (py >= 0) & (py < h)
        for dx in range(-rad, rad + 1):
            px = cx + dx
            ok = oky & (px >= 0) & (px < w)
            np.add.at(acc, (py[ok], px[ok]),
                      wgt[ok, None] * known_img[qy[ok] + dy, qx[ok] + dx])
            np.add.at(wacc, (py[ok], px[ok]), wgt[ok])
    upd = hole_b & (wacc > 0)
    est[upd] = acc[upd] / wacc[upd, None]
    return est


def patchmatch_fill(target_masked: np.ndarray, mask: np.ndarray,
                    params: FillParams | None = None) -> np.ndarray:
    """Coarse-to-fine patch synthesis in the hole.

    Each level alternates nearest-neighbor-field improvement (propagation +
    seeded random search) with weighted patch voting; the coarsest level is
    initialized from diffusion_fill. Deterministic for a fixed seed.
    """
    p = params or FillParams()
    p.validate()
    img = validate_image(target_masked)
    mask = validate_mask(mask, like=img)
    if not (mask > 0.5).any():
        return img.copy()
    if img.ndim == 2:
        out = patchmatch_fill(img[..., None].repeat(3, axis=2), mask, p)
        return out[..., 0]
    h, w = img.shape[:2]
    rad = p.patch_size // 2
    if int((mask < 0.5).sum()) < p.patch_size ** 2:
        raise MaskError("known region smaller than one patch")

    n_levels = p.pyramid_levels or _auto_levels(mask, h, w)
    pyr = [(img, mask)]
    for _ in range(n_levels - 1):
        pi, pm = pyr[-1]
        pyr.append((downsample2(pi) * (1 - _downsample_mask(pm))[..., None],
                    _downsample_mask(pm)))

    est = None
    for lvl in range(len(pyr) - 1, -1, -1):
        li, lm = pyr[lvl]
        lh, lw = li.shape[:2]
        hole_b = lm > 0.5
        if est is None:
            est = diffusion_fill(li, lm)
        else:
            up = resize_bilinear(est, lh, lw)
            est = li.copy()
            est[hole_b] = up[hole_b]

        # patch centers fully inside the known region are legal sources
        known_frac = ndimage.uniform_filter(1 - lm, size=p.patch_size,
                                            mode="constant", cval=0.0)
        valid_src = known_frac > 1.0 - 1e-9
        valid_src[:rad] = valid_src[-rad:] = False
        valid_src[:, :rad] = valid_src[:, -rad:] = False
        if not valid_src.any():
            continue  # nothing to copy from at this level; keep diffusion

        work = ndimage.binary_dilation(hole_b, iterations=rad)
        work_y, work_x = np.nonzero(work)
        n_work = len(work_y)
        rng = np.random.default_rng(p.seed * 1000003 + lvl)
        vy, vx = np.nonzero(valid_src)
        pick = rng.integers(0, len(vy), size=n_work)
        nnf = np.stack([vy[pick], vx[pick]], axis=1)
        best_cost = np.full(n_work, np.inf)
        known_level = li  # sources only ever read fully-known patches

        for _ in range(p.em_iters):
            nnf, best_cost = _improve_nnf(
                est, known_level, valid_src, work_y, work_x, nnf, best_cost,
                rad, rng, p.random_search_decay, max(lh, lw))
            est = _vote(est, known_level, hole_b, work_y, work_x, nnf,
                        best_cost, rad)
            best_cost = np.full(n_work, np.inf)  # rescore vs the new estimate
    out = img.copy()
    hb = mask > 0.5
    out[hb] = np.clip(est[hb], 0.0, 1.0)
    return out
