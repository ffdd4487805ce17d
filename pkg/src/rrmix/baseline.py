"""Separate per-response regressions with dummy-coded predictors.

Each binary response gets a standard logistic regression, each ordinal
response a proportional-odds model, both on the same design: standardized
numeric predictors plus first-category-baseline dummies.  Used as the
comparison arm against the joint rank-constrained fit: summed deviances,
parameter counts, information criteria, and bootstrap standard errors of
dummy-comparable coefficients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, standardize
from .inference import balanced_bootstrap_indices, category_contrasts
from .likelihood import logistic_cdf
from .solver import FitOptions, FitResult, fit
from .util import parallel_map

log = logging.getLogger(__name__)

DIVERGENCE_COEF_BOUND = 10.0  # |coef| beyond this marks a quasi-separated fit
GRADIENT_TOL = 1e-8
MAX_NEWTON_ITER = 100


class BaselineError(RuntimeError):
    pass


@dataclass(frozen=True)
class DummyDesign:
    """Expanded design: standardized numerics, C-1 dummies per discrete
    predictor (first category is the baseline), labels like PA2, E9."""

    matrix: np.ndarray
    labels: list[str]


def build_dummy_design(dataset: Dataset) -> DummyDesign:
    cols, labels = [], []
    for var in dataset.predictors:
        col = dataset[var.name]
        if var.level == "numeric":
            z, _, _ = standardize(col)
            cols.append(z)
            labels.append(var.name)
            continue
        codes = col if var.level != "binary" else col + 1
        for c in range(2, var.n_categories + 1):
            cols.append((codes == c).astype(float))
            labels.append(f"{var.name}{c}")
    return DummyDesign(matrix=np.column_stack(cols), labels=labels)


def _damped_newton(x0, value_grad, hessian, max_iter=MAX_NEWTON_ITER):
    """Newton with step halving on NLL increase; returns (x, converged)."""
    x = np.asarray(x0, dtype=float)
    value, grad = value_grad(x)
    for _ in range(max_iter):
        if np.abs(grad).max() < GRADIENT_TOL:
            return x, True
        H = hessian(x)
        ridge = 0.0
        while True:
            try:
                step = np.linalg.solve(H + ridge * np.eye(len(x)), -grad)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.isfinite(step).all():
                break
            ridge = max(ridge * 10.0, 1e-8)
        scale = 1.0
        for _ in range(50):
            cand = x + scale * step
            cand_value, cand_grad = value_grad(cand)
            if np.isfinite(cand_value) and cand_value <= value + 1e-12:
                x, value, grad = cand, cand_value, cand_grad
                break
            scale *= 0.5
        else:
            return x, np.abs(grad).max() < GRADIENT_TOL
    return x, bool(np.abs(grad).max() < GRADIENT_TOL)


def _fd_hessian(grad_fn, x, h=1e-6):
    d = len(x)
    H = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        H[:, j] = (grad_fn(x + e) - grad_fn(x - e)) / (2 * h)
    return (H + H.T) / 2.0


@dataclass
class BinaryFit:
    coefficients: np.ndarray
    intercept: float
    deviance: float
    converged: bool
    diverged: bool


def fit_binary_logistic(design: DummyDesign, y: np.ndarray) -> BinaryFit:
    """Damped-Newton logistic MLE.  Quasi-separated fits (huge coefficients
    or a flat gradient at the iteration cap) are returned with the
    divergence marker set instead of raising."""
    X = np.column_stack([np.ones(len(y)), design.matrix])
    q = 2.0 * np.asarray(y, dtype=float) - 1.0

    def value_grad(beta):
        eta = X @ beta
        value = float(np.logaddexp(0.0, -q * eta).sum())
        grad = -X.T @ (q * logistic_cdf(-q * eta))
        return value, grad

    def hessian(beta):
        pi = logistic_cdf(X @ beta)
        w = np.maximum(pi * (1.0 - pi), 1e-12)
        return (X * w[:, None]).T @ X

    beta, converged = _damped_newton(np.zeros(X.shape[1]), value_grad, hessian)
    value, _ = value_grad(beta)
    diverged = (not converged) or bool(np.abs(beta).max(initial=0.0) > DIVERGENCE_COEF_BOUND)
    if diverged:
        log.warning("binary logistic fit unstable (quasi-separation likely)")
    return BinaryFit(coefficients=beta[1:], intercept=float(beta[0]),
                     deviance=2.0 * value, converged=converged, diverged=diverged)


@dataclass
class OrdinalFit:
    coefficients: np.ndarray
    thresholds: np.ndarray
    deviance: float
    converged: bool
    diverged: bool


def fit_proportional_odds(design: DummyDesign, y: np.ndarray, n_categories: int
                          ) -> OrdinalFit:
    """Damped-Newton cumulative-logit MLE, logit P(y <= c) = t_c - x'beta,
    thresholds kept strictly increasing by a log-gap parameterization."""
    X = design.matrix
    y = np.asarray(y, dtype=int)
    n, p = X.shape
    C = n_categories
    counts = np.bincount(y, minlength=C + 1)[1:]
    if np.any(counts == 0):
        raise BaselineError("every ordinal category must be observed")

    def unpack(par):
        beta, gamma = par[:p], par[p:]
        t = np.empty(C - 1)
        t[0] = gamma[0]
        if C > 2:
            t[1:] = gamma[0] + np.cumsum(np.exp(gamma[1:]))
        return beta, t

    def value_grad(par):
        beta, t = unpack(par)
        eta = X @ beta
        a = np.where(y == C, np.inf, t[np.minimum(y, C - 1) - 1] - eta)
        b = np.where(y == 1, -np.inf, t[np.maximum(y - 2, 0)] - eta)
        Fa, Fb = logistic_cdf(a), logistic_cdf(b)
        fa = np.where(np.isfinite(a), Fa * (1 - Fa), 0.0)
        fb = np.where(np.isfinite(b), Fb * (1 - Fb), 0.0)
        pi = np.maximum(Fa - Fb, 1e-300)
        value = float(-np.log(pi).sum())
        g_eta = (fa - fb) / pi
        g_beta = X.T @ g_eta
        g_t = np.zeros(C - 1)
        for c in range(1, C):
            g_t[c - 1] = (-(fa[y == c] / pi[y == c]).sum()
                          + (fb[y == c + 1] / pi[y == c + 1]).sum())
        gamma = par[p:]
        jac = np.zeros((C - 1, C - 1))
        jac[:, 0] = 1.0
        for j in range(1, C - 1):
            jac[j:, j] = np.exp(gamma[j])
        return value, np.concatenate([g_beta, jac.T @ g_t])

    cum = np.cumsum(counts[:-1]) / counts.sum()
    t0 = np.log(cum / (1.0 - cum))
    gamma0 = np.concatenate([[t0[0]], np.log(np.maximum(np.diff(t0), 1e-3))])
    x0 = np.concatenate([np.zeros(p), gamma0])
    par, converged = _damped_newton(
        x0, value_grad, lambda par: _fd_hessian(lambda q_: value_grad(q_)[1], par)
    )
    value, _ = value_grad(par)
    beta, t = unpack(par)
    diverged = (not converged) or bool(np.abs(beta).max(initial=0.0) > DIVERGENCE_COEF_BOUND)
    if diverged:
        log.warning("proportional-odds fit unstable (quasi-separation likely)")
    return OrdinalFit(coefficients=beta, thresholds=t, deviance=2.0 * value,
                      converged=converged, diverged=diverged)


@dataclass
class SeparateFits:
    """All per-response fits on a common dummy design."""

    design_labels: list[str]
    response_names: list[str]
    fits: dict[str, BinaryFit | OrdinalFit]
    total_deviance: float
    total_k: int

    def coefficient_table(self) -> np.ndarray:
        """Slopes, rows = design columns, columns = responses."""
        return np.column_stack([self.fits[name].coefficients for name in self.response_names])

    @property
    def any_diverged(self) -> bool:
        return any(f.diverged for f in self.fits.values())


def fit_separate_models(dataset: Dataset) -> SeparateFits:
    design = build_dummy_design(dataset)
    fits: dict[str, BinaryFit | OrdinalFit] = {}
    total_dev, total_k = 0.0, 0
    names = []
    for var in dataset.responses:
        if var.level == "numeric":
            raise BaselineError(
                "the separate-models comparison covers binary and ordinal responses only"
            )
        y = dataset[var.name]
        if var.level == "binary":
            res = fit_binary_logistic(design, y)
            total_k += len(design.labels) + 1
        else:
            res = fit_proportional_odds(design, y, var.n_categories)
            total_k += len(design.labels) + var.n_categories - 1
        fits[var.name] = res
        total_dev += res.deviance
        names.append(var.name)
    return SeparateFits(design_labels=design.labels, response_names=names, fits=fits,
                        total_deviance=total_dev, total_k=total_k)


def separate_information_criteria(total_deviance: float, total_k: int, n: int
                                  ) -> tuple[float, float]:
    """AIC and BIC from a summed deviance (deviance = 2 * NLL)."""
    return total_deviance + 2.0 * total_k, total_deviance + float(np.log(n)) * total_k


@dataclass
class ComparisonReport:
    labels: list[str]                 # contrast rows: A, PA2, PA3, G2, ...
    response_names: list[str]
    separate_coefficients: np.ndarray
    joint_contrasts: np.ndarray
    separate_se: np.ndarray | None
    joint_se: np.ndarray | None
    separate_deviance: float
    separate_k: int
    separate_aic: float
    separate_bic: float
    joint_nll: float
    joint_k: int
    joint_aic: float
    joint_bic: float
    n_bootstrap_used: int
    notes: list[str] = field(default_factory=list)


def _compare_job(args):
    dataset, idx, rank, warm, opts = args
    sub = dataset.subset(idx)
    try:
        sep = fit_separate_models(sub)
        joint = fit(sub, rank, FitOptions(
            tolerance=opts.tolerance, max_iterations=opts.max_iterations,
            warm_start=warm, step_order=opts.step_order, count_sigma2=opts.count_sigma2,
        ))
        if not joint.converged:
            return None, "joint refit did not converge"
        _, contrasts = category_contrasts(joint.params, sub)
        return (sep.coefficient_table(), contrasts), None
    except Exception as exc:
        return None, f"{type(exc).__name__}: {exc}"


def compare(
    dataset: Dataset,
    joint_fit: FitResult,
    b_total: int = 0,
    seed: int = 0,
    options: FitOptions | None = None,
    threads: int = 1,
) -> ComparisonReport:
    """Separate-models arm vs the joint rank-constrained fit.

    Reports summed deviance, parameter totals, AIC/BIC for both, the
    dummy-comparable coefficient tables, and (with b_total > 0) bootstrap
    standard errors computed on shared balanced resamples so the two arms
    are compared on identical data draws.
    """
    opts = options or FitOptions()
    sep = fit_separate_models(dataset)
    sep_aic, sep_bic = separate_information_criteria(sep.total_deviance, sep.total_k, dataset.n)
    labels, joint_contrasts = category_contrasts(joint_fit.params, dataset)
    if labels != sep.design_labels:
        raise BaselineError(
            f"contrast labels {labels} do not line up with design labels {sep.design_labels}"
        )
    joint_aic = 2.0 * joint_fit.nll + 2.0 * joint_fit.k
    joint_bic = 2.0 * joint_fit.nll + float(np.log(dataset.n)) * joint_fit.k

    sep_se = joint_se = None
    used = 0
    notes: list[str] = []
    if b_total > 0:
        indices = balanced_bootstrap_indices(dataset.n, b_total, seed)
        jobs = [(dataset, idx, joint_fit.params.rank, joint_fit.params, opts)
                for idx in indices]
        results = parallel_map(_compare_job, jobs, threads=threads)
        sep_tables, joint_tables = [], []
        for rep, (tables, err) in enumerate(results):
            if tables is None:
                notes.append(f"replicate {rep}: {err}")
                continue
            sep_tables.append(tables[0])
            joint_tables.append(tables[1])
        used = len(sep_tables)
        if used < 2:
            raise BaselineError("fewer than 2 usable bootstrap replicates")
        if b_total - used > 0.05 * b_total:
            raise BaselineError(
                f"{b_total - used}/{b_total} comparison replicates failed: "
                + "; ".join(notes[:5])
            )
        sep_se = np.stack(sep_tables).std(axis=0, ddof=1)
        joint_stack = np.stack(joint_tables)
        joint_se = np.empty(joint_stack.shape[1:])
        for r in range(joint_stack.shape[1]):
            for c in range(joint_stack.shape[2]):
                vals = joint_stack[:, r, c]
                vals = vals[np.isfinite(vals)]
                joint_se[r, c] = vals.std(ddof=1) if len(vals) > 1 else np.nan

    return ComparisonReport(
        labels=labels, response_names=sep.response_names,
        separate_coefficients=sep.coefficient_table(), joint_contrasts=joint_contrasts,
        separate_se=sep_se, joint_se=joint_se,
        separate_deviance=sep.total_deviance, separate_k=sep.total_k,
        separate_aic=sep_aic, separate_bic=sep_bic,
        joint_nll=joint_fit.nll, joint_k=joint_fit.k,
        joint_aic=joint_aic, joint_bic=joint_bic,
        n_bootstrap_used=used, notes=notes,
    )
