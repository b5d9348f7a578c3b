"""Figure rendering for evaluation reports.

Renders the per-pair metrics of an :class:`~refill.harness.EvalReport` into
static PNG figures next to the CSV, so a report directory is self-contained:
``report.csv`` + ``report.json`` + the figures below.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

import numpy as np  # noqa: E402

from .harness import EvalReport  # noqa: E402

FIGURE_NAMES = ("psnr_hist.png", "psnr_vs_hole_fraction.png",
                "ssim_vs_psnr.png")


def _column(report: EvalReport, key: str) -> np.ndarray:
    return np.array([r[key] for r in report.rows], dtype=np.float64)


def render_figures(report: EvalReport, out_dir) -> list:
    """Write the standard figures for `report` into `out_dir`.

    Returns the list of written paths (always `FIGURE_NAMES`, in order).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    psnr_vals = _column(report, "psnr_hole")
    ssim_vals = _column(report, "ssim_full")
    frac_vals = _column(report, "hole_fraction")
    used_vals = _column(report, "n_proposals_used")
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(psnr_vals, bins=min(20, max(5, len(psnr_vals))),
            color="#4878cf", edgecolor="white")
    ax.axvline(report.aggregates["mean_psnr_hole"], color="#d65f5f",
               linestyle="--",
               label=f"mean {report.aggregates['mean_psnr_hole']:.2f} dB")
    ax.set_xlabel("hole PSNR (dB)")
    ax.set_ylabel("pairs")
    ax.set_title("Hole reconstruction quality")
    ax.legend()
    written.append(_save(fig, out_dir / FIGURE_NAMES[0]))

    fig, ax = plt.subplots(figsize=(6, 4))
    sc = ax.scatter(frac_vals, psnr_vals, c=used_vals, cmap="viridis",
                    s=36, edgecolor="black", linewidth=0.4)
    fig.colorbar(sc, ax=ax, label="proposals used")
    ax.set_xlabel("hole fraction of frame")
    ax.set_ylabel("hole PSNR (dB)")
    ax.set_title("Difficulty vs. quality")
    written.append(_save(fig, out_dir / FIGURE_NAMES[1]))

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(psnr_vals, ssim_vals, color="#6acc65", s=36,
               edgecolor="black", linewidth=0.4)
    ax.set_xlabel("hole PSNR (dB)")
    ax.set_ylabel("full-frame SSIM")
    ax.set_title("Metric agreement")
    written.append(_save(fig, out_dir / FIGURE_NAMES[2]))
    return written


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def render_report(report: EvalReport, out_dir) -> dict:
    """CSV + JSON + figures in one directory; returns {name: path}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    report.write_csv(csv_path)
    json_path = out_dir / "report.json"
    json_path.write_text(report.to_json())
    paths = {"csv": csv_path, "json": json_path}
    for fig_path in render_figures(report, out_dir):
        paths[fig_path.stem] = fig_path
    return paths
