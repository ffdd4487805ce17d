"""Report figures rendered to files alongside the delimited output.

All functions return a matplotlib Figure; the CLI saves them as PNG next
to the corresponding CSV artifacts.  Headless-safe (Agg backend).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib import pyplot as plt
from scipy.stats import chi2

from .inference import EllipseEntry
from .selection import CvReport, SelectionReport
from .simulation import StudyResult
from .solver import ModelParams


def save_figure(fig, path) -> None:
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def quantification_figure(params: ModelParams, ordered_names: list[str] | None = None):
    """Category scores per discrete predictor (transformation plots)."""
    quants = params.quantifications
    names = ordered_names or list(quants)
    names = [n for n in names if n in quants]
    if not names:
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.text(0.5, 0.5, "no discrete predictors", ha="center", va="center")
        ax.set_axis_off()
        return fig
    ncol = min(3, len(names))
    nrow = -(-len(names) // ncol)
    fig, axes = plt.subplots(nrow, ncol, figsize=(4 * ncol, 3 * nrow), squeeze=False)
    for ax in axes.ravel()[len(names):]:
        ax.set_axis_off()
    for ax, name in zip(axes.ravel(), names):
        q = quants[name]
        x = np.arange(1, len(q.categories) + 1)
        ax.plot(x, q.scores, "o-")
        ax.set_xticks(x)
        ax.set_xticklabels(q.categories, rotation=45, ha="right", fontsize=8)
        ax.set_title(f"{name} ({q.level})")
        ax.set_ylabel("quantification")
        ax.axhline(0.0, color="gray", lw=0.5)
    fig.tight_layout()
    return fig


def selection_figure(report: SelectionReport):
    ranks = [row.rank for row in report.rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ranks, [row.aic for row in report.rows], "o-", label="AIC")
    ax.plot(ranks, [row.bic for row in report.rows], "s-", label="BIC")
    ax.set_xlabel("rank S")
    ax.set_ylabel("criterion")
    ax.set_xticks(ranks)
    ax.legend()
    fig.tight_layout()
    return fig


def cv_curve_figure(report: CvReport):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(report.ranks, report.means, yerr=report.standard_errors,
                fmt="o-", capsize=3)
    ax.axvline(report.chosen_rank_min, color="tab:green", ls="--", lw=1,
               label=f"min (S={report.chosen_rank_min})")
    if report.chosen_rank_one_se != report.chosen_rank_min:
        ax.axvline(report.chosen_rank_one_se, color="tab:orange", ls=":", lw=1,
                   label=f"one-SE (S={report.chosen_rank_one_se})")
    ax.set_xlabel("rank S")
    ax.set_ylabel("prediction error per observation")
    ax.set_xticks(report.ranks)
    ax.legend()
    fig.tight_layout()
    return fig


def _ellipse_outline(entry: EllipseEntry, n_points: int = 200) -> np.ndarray:
    lam, vec = np.linalg.eigh(entry.ellipse.covariance)
    lam = np.maximum(lam, 0.0)
    radius = np.sqrt(chi2.ppf(entry.ellipse.level, df=2))
    angles = np.linspace(0, 2 * np.pi, n_points)
    circle = np.column_stack([np.cos(angles), np.sin(angles)])
    return entry.ellipse.center + radius * circle @ np.diag(np.sqrt(lam)) @ vec.T


def ellipse_figure(weights: list[EllipseEntry], loadings: list[EllipseEntry]):
    """Two panels: predictor-weight and response-loading regions (rank 2)."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    for ax, entries, title in ((axes[0], weights, "weights"),
                               (axes[1], loadings, "loadings")):
        for entry in entries:
            if entry.ellipse.center.shape[0] != 2:
                continue
            outline = _ellipse_outline(entry)
            color = "tab:blue" if not entry.contains_origin else "tab:red"
            ax.plot(outline[:, 0], outline[:, 1], color=color, lw=1)
            ax.annotate(entry.name, entry.ellipse.center, fontsize=9,
                        ha="center", va="center")
        ax.axhline(0, color="gray", lw=0.5)
        ax.axvline(0, color="gray", lw=0.5)
        ax.set_title(title)
        ax.set_xlabel("dimension 1")
        ax.set_ylabel("dimension 2")
        ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    return fig


def rmse_boxplot_figure(study: StudyResult):
    by_scenario = study.rmse_by_scenario()
    names = list(by_scenario)
    fig, ax = plt.subplots(figsize=(1.6 * max(4, len(names)), 4))
    ax.boxplot([by_scenario[n] for n in names], tick_labels=names)
    ax.set_ylabel("coefficient RMSE")
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    return fig
