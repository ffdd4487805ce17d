"""Negative log-likelihood terms per response family and MM working responses.

Families: numeric (Gaussian, one shared residual variance), binary
(Bernoulli with logit link), ordinal (cumulative logit with strictly
increasing per-response thresholds and a structurally zero intercept).
Under local independence the total NLL is the sum of per-cell terms, which
is what the quadratic majorization bounds cell by cell.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.special import expit

from .dataset import Dataset

PROB_FLOOR = 1e-12  # floor for category probabilities inside logs
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class LikelihoodError(ValueError):
    """Contract violation (invalid thresholds or variance)."""


class SmallResidualVarianceWarning(UserWarning):
    """Estimated residual variance fell below 0.05; the curvature bound is
    large and the working responses barely move, so convergence may stall."""


def logistic_cdf(eta):
    """Standard logistic CDF, stable over the full float range."""
    return expit(eta)


def validate_thresholds(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size < 1:
        raise LikelihoodError("thresholds must be a non-empty 1-d vector")
    if np.any(np.diff(t) <= 0):
        raise LikelihoodError(f"thresholds must be strictly increasing, got {t}")
    return t


def ordinal_category_probs(theta, t) -> np.ndarray:
    """Category probabilities F(t_c - theta) - F(t_{c-1} - theta).

    theta may be a scalar or an array; the result appends a final axis of
    length C = len(t) + 1.  Probabilities are positive and sum to 1.
    """
    t = validate_thresholds(t)
    theta = np.asarray(theta, dtype=float)
    cum = logistic_cdf(t - theta[..., None])  # F at the C-1 interior cutpoints
    lower = np.concatenate([np.zeros(theta.shape + (1,)), cum], axis=-1)
    upper = np.concatenate([cum, np.ones(theta.shape + (1,))], axis=-1)
    return upper - lower


def expected_latent_prob(y, theta, t) -> np.ndarray:
    """E(p | y, theta, t) for the latent-logistic ordinal model.

    p = F(y* - theta) for the latent y*; conditioning on the observed
    category y (y* censored to [t_{y-1}, t_y)) gives the closed form
    (F(t_y - theta) + F(t_{y-1} - theta)) / 2 with F(t_0) = 0, F(t_C) = 1,
    the integral of F.f over the interval divided by its probability.
    """
    t = validate_thresholds(t)
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=int)
    C = t.size + 1
    if np.any((y < 1) | (y > C)):
        raise LikelihoodError(f"ordinal codes must lie in 1..{C}")
    cum = logistic_cdf(t - theta[..., None])
    padded = np.concatenate(
        [np.zeros(theta.shape + (1,)), cum, np.ones(theta.shape + (1,))], axis=-1
    )  # F(t_c - theta) for c = 0..C
    upper = np.take_along_axis(padded, y[..., None], axis=-1)[..., 0]
    lower = np.take_along_axis(padded, (y - 1)[..., None], axis=-1)[..., 0]
    return 0.5 * (upper + lower)


def response_matrix(dataset: Dataset) -> np.ndarray:
    """Observed responses as an N x R float matrix (codes as stored)."""
    return np.column_stack([dataset[v.name].astype(float) for v in dataset.responses])


def nll(
    dataset: Dataset,
    theta: np.ndarray,
    thresholds: dict[str, np.ndarray],
    sigma2: float | None,
) -> tuple[float, np.ndarray]:
    """Total and per-cell negative log-likelihood at canonical matrix theta.

    theta already includes intercepts.  sigma2 is required iff the dataset
    has numeric responses.  Returns (total, N x R per-cell matrix); the
    per-cell values are what cross-validation sums over held-out rows.
    """
    responses = dataset.responses
    n = dataset.n
    per_cell = np.empty((n, len(responses)))
    for j, var in enumerate(responses):
        col = theta[:, j]
        y = dataset[var.name]
        if var.level == "numeric":
            if sigma2 is None or sigma2 <= 0:
                raise LikelihoodError("sigma2 must be positive with numeric responses")
            resid = y - col
            per_cell[:, j] = 0.5 * resid**2 / sigma2 + 0.5 * np.log(sigma2) + LOG_SQRT_2PI
        elif var.level == "binary":
            q = 2.0 * y - 1.0
            per_cell[:, j] = np.logaddexp(0.0, -q * col)  # -log F(q theta)
        else:
            probs = ordinal_category_probs(col, thresholds[var.name])
            picked = np.take_along_axis(probs, (y - 1)[:, None], axis=1)[:, 0]
            per_cell[:, j] = -np.log(np.maximum(picked, PROB_FLOOR))
    return float(per_cell.sum()), per_cell


def working_response(
    dataset: Dataset,
    theta: np.ndarray,
    thresholds: dict[str, np.ndarray],
    sigma2: float | None,
) -> tuple[np.ndarray, float]:
    """Majorization working responses Z = theta - xi / kappa and the bound kappa.

    Per-cell first derivatives xi of the NLL in theta: (theta - y)/sigma2
    for numeric, F(theta) - y for binary, and 1 - 2 E(p | y, theta, t) for
    ordinal (the expected complete-data score, which equals the
    observed-data score).

    kappa is the largest curvature bound among the families present:
    1/sigma2 for numeric, 1/4 for binary, and 1/2 for ordinal.  The
    ordinal bound must be 1/2, not 1/4: the complete-data NLL has second
    derivative 2 f(y* - theta) <= 1/2, and 1/4 demonstrably fails to
    majorize middle-category terms (so descent would not be guaranteed).
    """
    responses = dataset.responses
    has_numeric = any(v.level == "numeric" for v in responses)
    has_ordinal = any(v.level == "ordinal" for v in responses)
    kappa = 0.25
    if has_ordinal:
        kappa = 0.5
    if has_numeric:
        if sigma2 is None or sigma2 <= 0:
            raise LikelihoodError("sigma2 must be positive with numeric responses")
        if sigma2 < 0.05:
            warnings.warn(
                f"estimated residual variance {sigma2:.4g} < 0.05; the algorithm "
                "may make very small steps",
                SmallResidualVarianceWarning,
                stacklevel=2,
            )
        kappa = max(kappa, 1.0 / sigma2)

    xi = np.empty_like(theta)
    for j, var in enumerate(responses):
        col = theta[:, j]
        y = dataset[var.name]
        if var.level == "numeric":
            xi[:, j] = (col - y) / sigma2
        elif var.level == "binary":
            xi[:, j] = logistic_cdf(col) - y
        else:
            xi[:, j] = 1.0 - 2.0 * expected_latent_prob(y, col, thresholds[var.name])
    return theta - xi / kappa, kappa
