"""Rank-constrained maximum-likelihood fitting loop for mixed responses.

One iteration: majorization working responses, then the four canonical
least-squares updates (predictor quantifications, weights, orthonormal
loadings, intercepts) in a configurable order, then the residual-variance
update, then per-response threshold MLEs.  Iterates until the NLL decrease
falls below tolerance.  The identification rotation (diagonal U'U with
ordered, sign-fixed columns) is applied once at convergence.
"""

from __future__ import annotations

import json
import warnings as _warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, IndicatorMatrix, VariableSchema, build_indicator, schema_hash
from .likelihood import (
    SmallResidualVarianceWarning,
    logistic_cdf,
    nll,
    ordinal_category_probs,
    validate_thresholds,
    working_response,
)
from .scaling import (
    Quantification,
    ScaledPredictors,
    initial_scaling,
    scale_new_data,
    update_quantification,
)

CANONICAL_STEPS = ("quantifications", "weights", "loadings", "intercepts")
MODEL_FORMAT_VERSION = 1


class SolverError(RuntimeError):
    """Fitting failed (singular design, non-convergent inner solve, ...)."""


@dataclass
class ModelParams:
    """All estimated quantities of a fitted model of a given rank."""

    rank: int
    m: np.ndarray                              # length R; exactly 0 at ordinal positions
    B: np.ndarray                              # P x S predictor weights
    V: np.ndarray                              # R x S orthonormal loadings
    thresholds: dict[str, np.ndarray]          # ordinal response name -> increasing cutpoints
    sigma2: float | None                       # shared numeric residual variance
    quantifications: dict[str, Quantification]
    numeric_stats: dict[str, tuple[float, float]]

    def copy(self) -> "ModelParams":
        return ModelParams(
            rank=self.rank,
            m=self.m.copy(),
            B=self.B.copy(),
            V=self.V.copy(),
            thresholds={k: v.copy() for k, v in self.thresholds.items()},
            sigma2=self.sigma2,
            quantifications=dict(self.quantifications),
            numeric_stats=dict(self.numeric_stats),
        )

    def implied_coefficients(self) -> np.ndarray:
        return self.B @ self.V.T


@dataclass
class FitOptions:
    tolerance: float = 1e-6
    max_iterations: int = 1000
    seed: int = 0
    warm_start: ModelParams | None = None
    step_order: tuple[str, ...] = CANONICAL_STEPS
    count_sigma2: bool = True

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if sorted(self.step_order) != sorted(CANONICAL_STEPS):
            raise ValueError(
                f"step_order must be a permutation of {CANONICAL_STEPS}, got {self.step_order}"
            )


@dataclass
class FitResult:
    params: ModelParams
    nll_trace: np.ndarray
    iterations: int
    converged: bool
    k: int
    warnings: list[str] = field(default_factory=list)

    @property
    def nll(self) -> float:
        return float(self.nll_trace[-1])


def count_parameters(schema: list[VariableSchema], rank: int, count_sigma2: bool = True) -> int:
    """Free-parameter count: (P+R-S)S for the rank-S coefficient factorization,
    C_p - 2 per discrete predictor (mean/variance constraints), one intercept
    per numeric or binary response, C_r - 1 thresholds per ordinal response,
    plus (optionally) the shared residual variance when numeric responses exist.
    """
    predictors = [v for v in schema if v.role == "predictor"]
    responses = [v for v in schema if v.role == "response"]
    if rank < 1 or rank > min(len(predictors), len(responses)):
        raise ValueError(f"rank must lie in 1..min(P, R), got {rank}")
    k = (len(predictors) + len(responses) - rank) * rank
    k += sum(v.n_categories - 2 for v in predictors if v.level != "numeric")
    k += sum(1 for v in responses if v.level in ("numeric", "binary"))
    k += sum(v.n_categories - 1 for v in responses if v.level == "ordinal")
    if count_sigma2 and any(v.level == "numeric" for v in responses):
        k += 1
    return k


# ---------------------------------------------------------------------------
# individual updates
# ---------------------------------------------------------------------------


def _solve_gram(phi: np.ndarray, rhs: np.ndarray, predictor_names: list[str]):
    """Solve (phi'phi) x = rhs with a collinearity diagnostic."""
    gram = phi.T @ phi
    sv = np.linalg.svd(gram, compute_uv=False)
    if sv[-1] < 1e-12 * sv[0]:
        _, _, vt = np.linalg.svd(phi, full_matrices=False)
        null = np.abs(vt[-1])
        names = [predictor_names[i] for i in np.flatnonzero(null > 0.1 * null.max())]
        raise SolverError(f"singular predictor matrix; collinear predictors: {names}")
    return np.linalg.solve(gram, rhs)


def update_weights(z_tilde: np.ndarray, phi: np.ndarray, V: np.ndarray,
                   predictor_names: list[str] | None = None) -> np.ndarray:
    """B = argmin ||z_tilde - phi B V'||^2 for orthonormal V: (phi'phi)^-1 phi'z V."""
    names = predictor_names or [f"x{i}" for i in range(phi.shape[1])]
    return _solve_gram(phi, phi.T @ z_tilde @ V, names)


def update_loadings(z_tilde: np.ndarray, phi: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, bool]:
    """Orthonormal V minimizing ||z_tilde - phi B V'||^2 via the SVD of B'phi'z.

    Returns (V, rank_deficient); on rank deficiency the unused singular
    directions complete V deterministically (LAPACK's completion).
    """
    M = B.T @ phi.T @ z_tilde  # S x R
    P, d, Qt = np.linalg.svd(M, full_matrices=False)
    deficient = bool(np.any(d < 1e-12 * max(d[0], 1e-300)))
    return Qt.T @ P.T, deficient


def update_intercepts(z_tilde: np.ndarray, response_levels: list[str]) -> np.ndarray:
    """Column means of z_tilde at numeric/binary positions; 0 at ordinal ones."""
    m = z_tilde.mean(axis=0)
    for j, level in enumerate(response_levels):
        if level == "ordinal":
            m[j] = 0.0
    return m


def update_sigma2(z: np.ndarray, m: np.ndarray, phi: np.ndarray, B: np.ndarray,
                  V: np.ndarray, numeric_idx: np.ndarray) -> float:
    """Residual variance over numeric response columns, divisor N*R_N - 1."""
    if numeric_idx.size == 0:
        raise SolverError("no numeric responses; sigma2 is not defined")
    resid = z[:, numeric_idx] - m[numeric_idx] - (phi @ B @ V.T)[:, numeric_idx]
    denom = resid.size - 1
    if denom <= 0:
        raise SolverError("too few numeric cells to estimate a residual variance")
    return float((resid**2).sum() / denom)


def _threshold_objective(y: np.ndarray, theta: np.ndarray, t: np.ndarray):
    """NLL, gradient and tridiagonal Hessian in threshold space."""
    C = t.size + 1
    cum = logistic_cdf(t - theta[:, None])                       # N x (C-1)
    padded = np.concatenate([np.zeros((len(theta), 1)), cum, np.ones((len(theta), 1))], axis=1)
    upper = padded[np.arange(len(y)), y]
    lower = padded[np.arange(len(y)), y - 1]
    pi = np.maximum(upper - lower, 1e-12)
    value = float(-np.log(pi).sum())

    f = cum * (1.0 - cum)                                        # logistic pdf at cutpoints
    fprime = f * (1.0 - 2.0 * cum)
    grad = np.zeros(C - 1)
    hess = np.zeros((C - 1, C - 1))
    for c in range(1, C):
        at_c = y == c
        at_c1 = y == c + 1
        fa = f[:, c - 1]
        dfa = fprime[:, c - 1]
        # y == c: t_c is the upper cutpoint of the observed interval
        grad[c - 1] += -(fa[at_c] / pi[at_c]).sum()
        hess[c - 1, c - 1] += (-dfa[at_c] / pi[at_c] + (fa[at_c] / pi[at_c]) ** 2).sum()
        # y == c+1: t_c is the lower cutpoint
        grad[c - 1] += (fa[at_c1] / pi[at_c1]).sum()
        hess[c - 1, c - 1] += (dfa[at_c1] / pi[at_c1] + (fa[at_c1] / pi[at_c1]) ** 2).sum()
        if c < C - 1:
            # observations in category c+1 couple cutpoints c (lower) and c+1 (upper)
            fb = f[:, c]
            cross = -(fa[at_c1] * fb[at_c1] / pi[at_c1] ** 2).sum()
            hess[c - 1, c] += cross
            hess[c, c - 1] += cross
    return value, grad, hess


def _gaps_to_thresholds(gamma: np.ndarray) -> np.ndarray:
    t = np.empty_like(gamma)
    t[0] = gamma[0]
    if gamma.size > 1:
        t[1:] = gamma[0] + np.cumsum(np.exp(gamma[1:]))
    return t


def _thresholds_to_gaps(t: np.ndarray) -> np.ndarray:
    gamma = np.empty_like(t)
    gamma[0] = t[0]
    if t.size > 1:
        gamma[1:] = np.log(np.diff(t))
    return gamma


def update_thresholds(y: np.ndarray, theta: np.ndarray, t0: np.ndarray,
                      tol: float = 1e-8, max_iter: int = 50) -> np.ndarray:
    """Per-response threshold MLE with the canonical part fixed.

    Damped Newton on the log-gap parameterization (t_1 free, subsequent
    gaps positive by construction), analytic gradient/Hessian, step
    halving on NLL increase, converged when the threshold-space gradient
    max-norm drops below tol.
    """
    C = t0.size + 1
    observed = np.unique(y)
    if observed.size < C:
        missing = sorted(set(range(1, C + 1)) - set(observed.tolist()))
        raise SolverError(f"ordinal categories {missing} absent; thresholds unidentifiable")
    gamma = _thresholds_to_gaps(np.asarray(t0, dtype=float))
    t = _gaps_to_thresholds(gamma)
    value, grad_t, hess_t = _threshold_objective(y, theta, t)
    for _ in range(max_iter):
        if np.abs(grad_t).max() < tol:
            return t
        # chain rule to gap space: J[c, 0] = 1, J[c, j] = exp(gamma_j) for 1 <= j <= c
        J = np.zeros((C - 1, C - 1))
        J[:, 0] = 1.0
        for j in range(1, C - 1):
            J[j:, j] = np.exp(gamma[j])
        grad_g = J.T @ grad_t
        hess_g = J.T @ hess_t @ J
        for j in range(1, C - 1):
            hess_g[j, j] += np.exp(gamma[j]) * grad_t[j:].sum()
        ridge = 0.0
        while True:
            try:
                step = np.linalg.solve(hess_g + ridge * np.eye(C - 1), -grad_g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.isfinite(step).all():
                break
            ridge = max(ridge * 10.0, 1e-8)
        # step halving on NLL increase
        scale = 1.0
        for _ in range(40):
            cand_gamma = gamma + scale * step
            cand_t = _gaps_to_thresholds(cand_gamma)
            cand_value, cand_grad, cand_hess = _threshold_objective(y, theta, cand_t)
            if cand_value <= value + 1e-12:
                gamma, t = cand_gamma, cand_t
                value, grad_t, hess_t = cand_value, cand_grad, cand_hess
                break
            scale *= 0.5
        else:
            raise SolverError("threshold update: step halving failed to decrease NLL")
    if np.abs(grad_t).max() < 1e-5:
        # flat likelihood (quasi-separation); accept with the looser criterion
        return t
    raise SolverError(
        f"threshold update did not converge in {max_iter} iterations "
        f"(gradient max-norm {np.abs(grad_t).max():.3g})"
    )


def identify(B: np.ndarray, V: np.ndarray, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotate (B, V) so (phi B)'(phi B) is diagonal with decreasing entries.

    Columns are sign-fixed so each dimension's largest-|.| loading is
    positive; the product B V' is unchanged.
    """
    U = phi @ B
    lam, T = np.linalg.eigh(U.T @ U)
    order = np.argsort(-lam)
    T = T[:, order]
    B_new = B @ T
    V_new = V @ T
    for s in range(V_new.shape[1]):
        r = int(np.argmax(np.abs(V_new[:, s])))
        if V_new[r, s] < 0:
            V_new[:, s] *= -1.0
            B_new[:, s] *= -1.0
    return B_new, V_new


# ---------------------------------------------------------------------------
# starting values and the main loop
# ---------------------------------------------------------------------------


def null_thresholds(y: np.ndarray, n_categories: int) -> np.ndarray:
    """Closed-form thresholds with no structural part: logit of cumulative
    proportions below each cutpoint."""
    counts = np.bincount(y, minlength=n_categories + 1)[1:]
    cum = np.cumsum(counts[:-1]) / counts.sum()
    if np.any(cum <= 0) or np.any(cum >= 1):
        raise SolverError("cannot form null thresholds: empty ordinal category")
    return np.log(cum / (1.0 - cum))


def init_params(dataset: Dataset, rank: int,
                indicators: dict[str, IndicatorMatrix] | None = None
                ) -> tuple[ModelParams, ScaledPredictors, list[str]]:
    """Starting values from an all-numeric rank-S regression.

    Responses are coerced to numeric (ordinal codes as-is, binary 0/1,
    numeric standardized for this step only), discrete predictors start at
    standardized integer codes, and (B, V) come from the truncated SVD of
    the least-squares coefficient matrix.
    """
    predictors = dataset.predictors
    responses = dataset.responses
    if not 1 <= rank <= min(len(predictors), len(responses)):
        raise SolverError(f"rank must lie in 1..{min(len(predictors), len(responses))}, got {rank}")
    if indicators is None:
        indicators = {v.name: build_indicator(dataset, v.name) for v in predictors
                      if v.level != "numeric"}
    scaled = initial_scaling(dataset, indicators)
    fit_warnings: list[str] = []

    y_init = np.empty((dataset.n, len(responses)))
    for j, var in enumerate(responses):
        col = dataset[var.name].astype(float)
        if var.level == "numeric":
            sd = col.std()
            col = (col - col.mean()) / (sd if sd > 0 else 1.0)
        y_init[:, j] = col
    y_centered = y_init - y_init.mean(axis=0)

    phi = scaled.phi
    gram = phi.T @ phi
    sv = np.linalg.svd(gram, compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        gram = gram + 1e-8 * np.eye(gram.shape[0])
        fit_warnings.append("near-singular predictor matrix at start; ridge jitter 1e-8 applied")
    coef = np.linalg.solve(gram, phi.T @ y_centered)  # P x R
    U, d, Wt = np.linalg.svd(coef, full_matrices=False)
    B = U[:, :rank] * d[:rank]
    V = Wt[:rank].T

    m = np.zeros(len(responses))
    thresholds: dict[str, np.ndarray] = {}
    for j, var in enumerate(responses):
        if var.level == "ordinal":
            thresholds[var.name] = null_thresholds(dataset[var.name], var.n_categories)
        else:
            m[j] = float(dataset[var.name].mean())
    sigma2 = 1.0 if any(v.level == "numeric" for v in responses) else None

    params = ModelParams(
        rank=rank, m=m, B=B, V=V, thresholds=thresholds, sigma2=sigma2,
        quantifications=dict(scaled.quantifications), numeric_stats=dict(scaled.numeric_stats),
    )
    return params, scaled, fit_warnings


def _phi_from_params(dataset: Dataset, params: ModelParams,
                     indicators: dict[str, IndicatorMatrix]) -> np.ndarray:
    cols = []
    for var in dataset.predictors:
        if var.level == "numeric":
            mean, sd = params.numeric_stats[var.name]
            cols.append((dataset[var.name] - mean) / sd)
        else:
            cols.append(indicators[var.name].matrix @ params.quantifications[var.name].scores)
    return np.column_stack(cols)


def fit(dataset: Dataset, rank: int, options: FitOptions | None = None) -> FitResult:
    """Fit the rank-constrained mixed-response model by monotone MM iterations."""
    opts = options or FitOptions()
    predictors = dataset.predictors
    responses = dataset.responses
    predictor_names = [v.name for v in predictors]
    response_levels = [v.level for v in responses]
    numeric_idx = dataset.response_indices("numeric")
    ordinal = [(j, v) for j, v in enumerate(responses) if v.level == "ordinal"]
    discrete = [(i, v) for i, v in enumerate(predictors) if v.level != "numeric"]
    indicators = {v.name: build_indicator(dataset, v.name) for _, v in discrete}

    fit_warnings: list[str] = []
    if opts.warm_start is not None:
        params = opts.warm_start.copy()
        if params.rank != rank:
            raise SolverError(f"warm start has rank {params.rank}, requested {rank}")
        phi = _phi_from_params(dataset, params, indicators)
    else:
        params, scaled, fit_warnings = init_params(dataset, rank, indicators)
        phi = scaled.phi

    m, B, V = params.m, params.B, params.V
    thresholds = params.thresholds
    sigma2 = params.sigma2
    quants = params.quantifications
    small_var_warned = False

    total, _ = nll(dataset, m + phi @ B @ V.T, thresholds, sigma2)
    trace = [total]
    converged = False
    iterations = 0

    for iterations in range(1, opts.max_iterations + 1):
        theta = m + phi @ B @ V.T
        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore", SmallResidualVarianceWarning)
            Z, _ = working_response(dataset, theta, thresholds, sigma2)
        if sigma2 is not None and sigma2 < 0.05 and not small_var_warned:
            fit_warnings.append(
                f"estimated residual variance {sigma2:.4g} < 0.05; steps may be very small"
            )
            small_var_warned = True

        for step in opts.step_order:
            if step == "quantifications":
                A = B @ V.T
                resid = Z - m - phi @ A
                for i, var in discrete:
                    a_p = A[i]
                    z_tilde = resid + np.outer(phi[:, i], a_p)
                    quant, scale = update_quantification(
                        z_tilde, a_p, indicators[var.name], var,
                        categories=quants[var.name].categories,
                    )
                    quants[var.name] = quant
                    B[i] *= scale
                    A = B @ V.T
                    phi[:, i] = indicators[var.name].matrix @ quant.scores
                    resid = z_tilde - np.outer(phi[:, i], A[i])
            elif step == "weights":
                B = update_weights(Z - m, phi, V, predictor_names)
            elif step == "loadings":
                V, deficient = update_loadings(Z - m, phi, B)
                if deficient and "rank-deficient loadings update" not in fit_warnings:
                    fit_warnings.append("rank-deficient loadings update")
            elif step == "intercepts":
                m = update_intercepts(Z - phi @ B @ V.T, response_levels)

        theta = m + phi @ B @ V.T
        if numeric_idx.size:
            cand = max(update_sigma2(Z, m, phi, B, V, numeric_idx), 1e-12)
            if cand != sigma2:
                # The N*R_N - 1 divisor is not the NLL-minimizing one, so the
                # plug-in step can overshoot by a whisker when the residual
                # sum grows; keep the previous variance in that case so the
                # NLL trace stays nonincreasing.
                old_total, _ = nll(dataset, theta, thresholds, sigma2)
                new_total, _ = nll(dataset, theta, thresholds, cand)
                if new_total <= old_total:
                    sigma2 = cand
        for j, var in ordinal:
            thresholds[var.name] = update_thresholds(
                dataset[var.name], theta[:, j], thresholds[var.name]
            )

        total, _ = nll(dataset, theta, thresholds, sigma2)
        trace.append(total)
        if trace[-2] - trace[-1] < opts.tolerance:
            converged = True
            break

    B, V = identify(B, V, phi)
    params = ModelParams(
        rank=rank, m=m, B=B, V=V, thresholds=thresholds, sigma2=sigma2,
        quantifications=quants, numeric_stats=params.numeric_stats,
    )
    k = count_parameters(list(dataset.schema), rank, count_sigma2=opts.count_sigma2)
    return FitResult(
        params=params, nll_trace=np.asarray(trace), iterations=iterations,
        converged=converged, k=k, warnings=fit_warnings,
    )


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


@dataclass
class Predictions:
    """Canonical values and per-response predictions for a batch of rows."""

    theta: np.ndarray                          # N x R
    response_names: list[str]
    means: dict[str, np.ndarray]               # numeric responses
    probabilities: dict[str, np.ndarray]       # binary: N; ordinal: N x C
    classes: dict[str, np.ndarray]             # ordinal: predicted category 1..C


def predict(params: ModelParams, new_data: Dataset, unseen: str = "error") -> Predictions:
    """Predictions on new rows using the training-time scaling.

    theta = m + phi' B v_r per response; numeric responses report theta as
    the mean, binary report F(theta), ordinal report category probabilities
    and the class whose threshold interval contains theta.
    """
    phi = scale_new_data(new_data, params.quantifications, params.numeric_stats, unseen)
    theta = params.m + phi @ params.B @ params.V.T
    means: dict[str, np.ndarray] = {}
    probabilities: dict[str, np.ndarray] = {}
    classes: dict[str, np.ndarray] = {}
    for j, var in enumerate(new_data.responses):
        col = theta[:, j]
        if var.level == "numeric":
            means[var.name] = col
        elif var.level == "binary":
            probabilities[var.name] = logistic_cdf(col)
        else:
            t = params.thresholds[var.name]
            probabilities[var.name] = ordinal_category_probs(col, t)
            classes[var.name] = np.searchsorted(t, col, side="right") + 1
    return Predictions(
        theta=theta,
        response_names=[v.name for v in new_data.responses],
        means=means,
        probabilities=probabilities,
        classes=classes,
    )


# ---------------------------------------------------------------------------
# model file I/O (versioned, exact float round-trip)
# ---------------------------------------------------------------------------


def save_model(result: FitResult, dataset_schema: list[VariableSchema], path: str | Path) -> None:
    params = result.params
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "schema_hash": schema_hash(list(dataset_schema)),
        "rank": params.rank,
        "m": params.m.tolist(),
        "B": params.B.tolist(),
        "V": params.V.tolist(),
        "thresholds": {k: v.tolist() for k, v in params.thresholds.items()},
        "sigma2": params.sigma2,
        "quantifications": [
            {
                "variable": q.variable,
                "categories": list(q.categories),
                "scores": q.scores.tolist(),
                "level": q.level,
                "direction": q.direction,
            }
            for q in params.quantifications.values()
        ],
        "numeric_stats": {k: list(v) for k, v in params.numeric_stats.items()},
        "nll": result.nll,
        "nll_trace": result.nll_trace.tolist(),
        "k": result.k,
        "iterations": result.iterations,
        "converged": result.converged,
        "warnings": result.warnings,
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_model(path: str | Path, expected_schema: list[VariableSchema] | None = None) -> FitResult:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise SolverError(f"unsupported model format version {doc.get('format_version')}")
    if expected_schema is not None and doc["schema_hash"] != schema_hash(list(expected_schema)):
        raise SolverError("model file was fitted under a different schema")
    quants = {
        q["variable"]: Quantification(
            variable=q["variable"],
            categories=tuple(q["categories"]),
            scores=np.asarray(q["scores"], dtype=float),
            level=q["level"],
            direction=q["direction"],
        )
        for q in doc["quantifications"]
    }
    params = ModelParams(
        rank=doc["rank"],
        m=np.asarray(doc["m"], dtype=float),
        B=np.asarray(doc["B"], dtype=float),
        V=np.asarray(doc["V"], dtype=float),
        thresholds={k: validate_thresholds(np.asarray(v, dtype=float))
                    for k, v in doc["thresholds"].items()},
        sigma2=doc["sigma2"],
        quantifications=quants,
        numeric_stats={k: (float(v[0]), float(v[1])) for k, v in doc["numeric_stats"].items()},
    )
    return FitResult(
        params=params,
        nll_trace=np.asarray(doc["nll_trace"], dtype=float),
        iterations=doc["iterations"],
        converged=doc["converged"],
        k=doc["k"],
        warnings=list(doc["warnings"]),
    )
