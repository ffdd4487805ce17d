"""Optimal scaling of discrete predictors.

Discrete predictor columns are replaced by per-category scores chosen to
minimize the working least-squares loss, with a monotonicity cone
projection for ordinal variables and a frequency-weighted rescale to mean
0 / variance 1.  The rescale's multiplicative factor is returned to the
caller so it can be folded into the matching row of the weight matrix,
which keeps the working objective exactly invariant under the rescale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, IndicatorMatrix, VariableSchema, standardize

log = logging.getLogger(__name__)


class ScalingError(ValueError):
    """Degenerate quantification problem (zero direction or zero spread)."""


def weighted_monotone_regression(
    values: np.ndarray, weights: np.ndarray, direction: str = "inc"
) -> np.ndarray:
    """Weighted isotonic fit by pool-adjacent-violators.

    Minimizes sum(weights * (values - fitted)**2) over vectors monotone in
    the requested direction ("inc" or "dec").
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape or values.ndim != 1:
        raise ValueError("values and weights must be 1-d and the same length")
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    if direction == "dec":
        return -weighted_monotone_regression(-values, weights, "inc")
    if direction != "inc":
        raise ValueError(f"direction must be 'inc' or 'dec', got {direction!r}")

    # blocks as (weighted mean, total weight, member count)
    means: list[float] = []
    wsum: list[float] = []
    count: list[int] = []
    for v, w in zip(values, weights):
        means.append(float(v))
        wsum.append(float(w))
        count.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m = (means[-2] * wsum[-2] + means[-1] * wsum[-1]) / (wsum[-2] + wsum[-1])
            wsum[-2] += wsum[-1]
            count[-2] += count[-1]
            means[-2] = m
            del means[-1], wsum[-1], count[-1]
    return np.repeat(means, count)


@dataclass(frozen=True)
class Quantification:
    """Per-category scores for one discrete predictor.

    The scored column G_p @ scores has frequency-weighted mean 0 and
    variance 1; ordinal scores are monotone in category order per the
    stored direction.  `categories` records the labels the scores were
    estimated on (a fold may see fewer categories than the full schema).
    """

    variable: str
    categories: tuple[str, ...]
    scores: np.ndarray
    level: str
    direction: str | None = None  # "inc"/"dec", ordinal only

    def score_of(self, label: str) -> float:
        try:
            return float(self.scores[self.categories.index(label)])
        except ValueError:
            raise KeyError(label) from None


@dataclass(frozen=True)
class ScaledPredictors:
    """The N x P matrix of scaled predictor columns plus how it was built."""

    phi: np.ndarray
    quantifications: dict[str, Quantification]
    numeric_stats: dict[str, tuple[float, float]]  # name -> (mean, sd)


def _rescale(w: np.ndarray, counts: np.ndarray) -> tuple[np.ndarray, float]:
    """Center/scale scores so the scored column has mean 0, variance 1.

    Frequency-weighted moments with the population N divisor; returns the
    rescaled scores and the sd that was divided out.
    """
    n = counts.sum()
    mean = float(counts @ w) / n
    centered = w - mean
    sd = float(np.sqrt(counts @ centered**2 / n))
    if sd < 1e-14:
        raise ScalingError("degenerate quantification: zero variance after projection")
    return centered / sd, sd


def update_quantification(
    z_tilde: np.ndarray,
    a_p: np.ndarray,
    indicator: IndicatorMatrix,
    var: VariableSchema,
    categories: tuple[str, ...] | None = None,
) -> tuple[Quantification, float]:
    """One optimal-scaling step for predictor `var`.

    z_tilde is the working residual matrix excluding this predictor's
    contribution; a_p the predictor's row of the implied coefficient
    matrix.  The unconstrained per-category solution is cone-projected for
    ordinal variables (both directions, keeping the better weighted fit,
    ties -> increasing), recentred, and rescaled to unit variance.

    Returns (quantification, scale); the caller must multiply the
    predictor's weight row by `scale` to keep fitted values unchanged.
    """
    counts = indicator.category_counts
    a_norm2 = float(a_p @ a_p)
    if a_norm2 <= 0.0:
        raise ScalingError(f"variable {var.name!r}: zero coefficient direction")
    # (Q'Q)^-1 Q'vec(z), Q = a_p (x) G_p, reduces to a per-category weighted mean
    w_hat = (indicator.matrix.T @ z_tilde @ a_p) / (counts * a_norm2)

    direction = None
    if var.level == "ordinal":
        fit_inc = weighted_monotone_regression(w_hat, counts, "inc")
        fit_dec = weighted_monotone_regression(w_hat, counts, "dec")
        sse_inc = float(counts @ (w_hat - fit_inc) ** 2)
        sse_dec = float(counts @ (w_hat - fit_dec) ** 2)
        if sse_inc <= sse_dec:
            w_hat, direction = fit_inc, "inc"
        else:
            w_hat, direction = fit_dec, "dec"

    scores, scale = _rescale(w_hat, counts)
    quant = Quantification(
        variable=var.name,
        categories=categories if categories is not None else var.categories,
        scores=scores,
        level=var.level,
        direction=direction,
    )
    return quant, scale


def integer_code_quantification(
    indicator: IndicatorMatrix, var: VariableSchema, categories: tuple[str, ...] | None = None
) -> Quantification:
    """Starting quantification: category integer codes, standardized."""
    cats = categories if categories is not None else var.categories
    codes = np.arange(1, len(cats) + 1, dtype=float)
    scores, _ = _rescale(codes, indicator.category_counts)
    return Quantification(
        variable=var.name,
        categories=cats,
        scores=scores,
        level=var.level,
        direction="inc" if var.level == "ordinal" else None,
    )


def apply_scaling(
    column: np.ndarray,
    var: VariableSchema,
    transform: Quantification | tuple[float, float],
    unseen: str = "error",
) -> np.ndarray:
    """Map a raw (coded) column onto its scaled values using training stats.

    Numeric columns use the stored (mean, sd); discrete columns look up
    each label's score.  A category unknown to the training quantification
    raises by default; with unseen="neutral" it maps to 0 (the scaled
    column's training mean) and the substitution is logged.
    """
    if var.level == "numeric":
        mean, sd = transform
        return (np.asarray(column, dtype=float) - mean) / sd
    assert isinstance(transform, Quantification)
    offset = 0 if var.level == "binary" else 1
    labels = [var.categories[int(c) - offset] for c in column]
    phi = np.empty(len(labels))
    n_unseen = 0
    for i, label in enumerate(labels):
        try:
            phi[i] = transform.score_of(label)
        except KeyError:
            if unseen != "neutral":
                raise ScalingError(
                    f"variable {var.name!r}: category {label!r} was not seen in training"
                ) from None
            phi[i] = 0.0
            n_unseen += 1
    if n_unseen:
        log.warning(
            "variable %r: %d value(s) in unseen categories mapped to the neutral score 0.0",
            var.name,
            n_unseen,
        )
    return phi


def initial_scaling(dataset: Dataset, indicators: dict[str, IndicatorMatrix]) -> ScaledPredictors:
    """Starting scaled-predictor matrix: standardized numerics, integer codes."""
    quants: dict[str, Quantification] = {}
    stats: dict[str, tuple[float, float]] = {}
    cols = []
    for var in dataset.predictors:
        if var.level == "numeric":
            z, mean, sd = standardize(dataset[var.name])
            stats[var.name] = (mean, sd)
            cols.append(z)
        else:
            q = integer_code_quantification(indicators[var.name], var)
            quants[var.name] = q
            cols.append(indicators[var.name].matrix @ q.scores)
    return ScaledPredictors(phi=np.column_stack(cols), quantifications=quants, numeric_stats=stats)


def scale_new_data(
    dataset: Dataset,
    quantifications: dict[str, Quantification],
    numeric_stats: dict[str, tuple[float, float]],
    unseen: str = "error",
) -> np.ndarray:
    """Scaled predictor matrix for new rows, using training transformations."""
    cols = []
    for var in dataset.predictors:
        if var.level == "numeric":
            cols.append(apply_scaling(dataset[var.name], var, numeric_stats[var.name]))
        else:
            cols.append(apply_scaling(dataset[var.name], var, quantifications[var.name], unseen))
    return np.column_stack(cols)
