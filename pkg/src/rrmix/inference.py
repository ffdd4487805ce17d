"""Balanced pairs bootstrap, replicate alignment, confidence ellipses,
implied coefficients and category contrasts with bootstrap standard errors.

Bootstrap refits resample (predictor, response) pairs jointly, warm-started
from the reference fit.  Because the loading matrix is only identified up
to rotation, every replicate is aligned to the reference by orthogonal
Procrustes on the loadings before anything is stacked.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import chi2

from .dataset import Dataset
from .rng import substream
from .solver import FitOptions, FitResult, ModelParams, fit
from .util import parallel_map

log = logging.getLogger(__name__)


class InferenceError(RuntimeError):
    pass


def balanced_bootstrap_indices(n: int, b_total: int, seed: int) -> np.ndarray:
    """b_total index vectors of length n in which every observation appears
    exactly b_total times overall: concatenate b_total copies of 0..n-1,
    permute once, split."""
    if n < 1 or b_total < 1:
        raise InferenceError("n and b_total must be positive")
    rng = substream(seed, "bootstrap")
    pool = np.tile(np.arange(n), b_total)
    rng.shuffle(pool)
    return pool.reshape(b_total, n)


def align_replicate(
    reference: tuple[np.ndarray, np.ndarray], candidate: tuple[np.ndarray, np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Rotate a replicate's (B, V) by the orthogonal T minimizing
    ||V_cand T - V_ref||; the product B V' is untouched."""
    B_ref, V_ref = reference
    B_c, V_c = candidate
    if V_c.shape != V_ref.shape:
        raise InferenceError("replicate and reference must share the same rank")
    U, _, Wt = np.linalg.svd(V_c.T @ V_ref)
    T = U @ Wt
    return B_c @ T, V_c @ T


@dataclass
class BootstrapReplicates:
    """Aligned per-replicate parameter draws plus resampling provenance."""

    params: list[ModelParams]
    indices: np.ndarray          # b_total x n (includes failed replicates)
    seed: int
    n_failed: int
    failures: list[str] = field(default_factory=list)

    @property
    def n_replicates(self) -> int:
        return len(self.params)

    @property
    def weight_stack(self) -> np.ndarray:      # K x P x S
        return np.stack([p.B for p in self.params])

    @property
    def loading_stack(self) -> np.ndarray:     # K x R x S
        return np.stack([p.V for p in self.params])

    @property
    def intercept_stack(self) -> np.ndarray:   # K x R
        return np.stack([p.m for p in self.params])

    def threshold_stack(self, response: str) -> np.ndarray:
        return np.stack([p.thresholds[response] for p in self.params])


def _bootstrap_job(args):
    dataset, idx, rank, warm, base = args
    opts = FitOptions(
        tolerance=base.tolerance, max_iterations=base.max_iterations, seed=base.seed,
        warm_start=warm, step_order=base.step_order, count_sigma2=base.count_sigma2,
    )
    try:
        res = fit(dataset.subset(idx), rank, opts)
    except Exception as exc:  # resamples can empty categories or separate
        return None, f"{type(exc).__name__}: {exc}"
    if not res.converged:
        return None, f"no convergence in {res.iterations} iterations"
    return res.params, None


def run_bootstrap(
    dataset: Dataset,
    reference_fit: FitResult,
    b_total: int,
    seed: int,
    options: FitOptions | None = None,
    indices: np.ndarray | None = None,
    threads: int = 1,
    max_failure_rate: float = 0.05,
) -> BootstrapReplicates:
    """Balanced pairs bootstrap around a converged reference fit.

    Each replicate refits on resampled rows (warm start = reference),
    is aligned to the reference, and failed refits are dropped with their
    reasons recorded; more than `max_failure_rate` failures is an error.
    `indices` overrides the balanced index sets (testing hook).
    """
    if not reference_fit.converged:
        raise InferenceError("reference fit did not converge; bootstrap would be meaningless")
    base = options or FitOptions()
    if indices is None:
        indices = balanced_bootstrap_indices(dataset.n, b_total, seed)
    jobs = [(dataset, idx, reference_fit.params.rank, reference_fit.params, base)
            for idx in indices]
    results = parallel_map(_bootstrap_job, jobs, threads=threads)

    ref = (reference_fit.params.B, reference_fit.params.V)
    kept: list[ModelParams] = []
    failures: list[str] = []
    for rep, (params, err) in enumerate(results):
        if params is None:
            failures.append(f"replicate {rep}: {err}")
            continue
        B_a, V_a = align_replicate(ref, (params.B, params.V))
        aligned = params.copy()
        aligned.B, aligned.V = B_a, V_a
        kept.append(aligned)
    if failures:
        log.warning("bootstrap: %d/%d replicates failed", len(failures), len(indices))
    if len(failures) > max_failure_rate * len(indices):
        raise InferenceError(
            f"{len(failures)}/{len(indices)} bootstrap replicates failed: "
            + "; ".join(failures[:5])
        )
    return BootstrapReplicates(params=kept, indices=indices, seed=seed,
                               n_failed=len(failures), failures=failures)


@dataclass
class Ellipse:
    center: np.ndarray
    covariance: np.ndarray
    level: float
    degenerate: bool = False


def confidence_ellipse(points: np.ndarray, level: float = 0.95
                       ) -> tuple[Ellipse, bool]:
    """Normal-theory confidence region for the mean-centered draws.

    contains_origin is the Mahalanobis test of 0 against the sample
    covariance at the chi-square quantile with as many degrees of freedom
    as the draw dimension (2 for the usual two-dimensional solution).  A
    singular covariance falls back to the leading principal marginal.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < 10:
        raise InferenceError("need at least 10 draws (rows) of dimension >= 1")
    dim = points.shape[1]
    center = points.mean(axis=0)
    cov = np.cov(points, rowvar=False, ddof=1).reshape(dim, dim)
    eigval, eigvec = np.linalg.eigh(cov)
    tol = max(eigval.max(), 0.0) * 1e-12 + 1e-300
    if np.all(eigval > tol):
        maha = float(center @ np.linalg.solve(cov, center))
        contains = maha <= chi2.ppf(level, df=dim)
        return Ellipse(center=center, covariance=cov, level=level), bool(contains)
    # degenerate spread: test along the leading nonzero-variance axis only
    lead = eigvec[:, -1]
    var = eigval[-1]
    if var <= tol:
        contains = bool(np.allclose(center, 0.0))
    else:
        maha = float((center @ lead) ** 2 / var)
        contains = maha <= chi2.ppf(level, df=1)
    return Ellipse(center=center, covariance=cov, level=level, degenerate=True), bool(contains)


def implied_coefficients(B: np.ndarray, V: np.ndarray) -> np.ndarray:
    """The predictor-by-response effect matrix B V'."""
    return B @ V.T


def category_contrasts(params: ModelParams, dataset: Dataset
                       ) -> tuple[list[str], np.ndarray]:
    """Dummy-comparable effects: one row per numeric predictor (its implied
    coefficients) and one row per non-baseline category c of each discrete
    predictor, (score_c - score_1) * b_p' V'.

    Rows are labeled like PA2, E9 (variable name + 1-based category index).
    Categories a fold/replicate never saw yield rows of NaN.
    """
    A = params.implied_coefficients()
    labels: list[str] = []
    rows: list[np.ndarray] = []
    for i, var in enumerate(dataset.predictors):
        if var.level == "numeric":
            labels.append(var.name)
            rows.append(A[i])
            continue
        quant = params.quantifications[var.name]
        try:
            base = quant.score_of(var.categories[0])
        except KeyError:
            base = np.nan
        for c in range(2, var.n_categories + 1):
            labels.append(f"{var.name}{c}")
            label = var.categories[c - 1]
            if label in quant.categories and np.isfinite(base):
                rows.append((quant.score_of(label) - base) * A[i])
            else:
                rows.append(np.full(A.shape[1], np.nan))
    return labels, np.vstack(rows)


def bootstrap_se(replicates: BootstrapReplicates,
                 statistic: Callable[[ModelParams], np.ndarray]) -> np.ndarray:
    """Elementwise sample standard deviation (K-1 divisor) of a statistic
    evaluated on every aligned replicate."""
    if replicates.n_replicates < 2:
        raise InferenceError("need at least 2 replicates for a standard error")
    stack = np.stack([np.asarray(statistic(p), dtype=float) for p in replicates.params])
    return stack.std(axis=0, ddof=1)


@dataclass
class EllipseEntry:
    name: str
    ellipse: Ellipse
    contains_origin: bool


def ellipse_summary(replicates: BootstrapReplicates, names_weights: list[str],
                    names_loadings: list[str], level: float = 0.95
                    ) -> tuple[list[EllipseEntry], list[EllipseEntry]]:
    """Per-predictor (weight rows) and per-response (loading rows) regions."""
    weights = []
    for i, name in enumerate(names_weights):
        pts = replicates.weight_stack[:, i, :]
        ell, contains = confidence_ellipse(pts, level)
        weights.append(EllipseEntry(name, ell, contains))
    loadings = []
    for j, name in enumerate(names_loadings):
        pts = replicates.loading_stack[:, j, :]
        ell, contains = confidence_ellipse(pts, level)
        loadings.append(EllipseEntry(name, ell, contains))
    return weights, loadings
