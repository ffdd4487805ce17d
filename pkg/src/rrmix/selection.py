"""Rank selection: parameter counts, information criteria, repeated V-fold CV.

The null model (intercepts and thresholds only) anchors the adjusted
pseudo-R2; AIC/BIC penalize twice the minimized NLL by 2K and log(N)K.
Cross-validation refits on V-1 folds (warm-started from the full-data fit)
and scores held-out per-observation NLL summed over responses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .likelihood import nll
from .rng import substream
from .scaling import Quantification, _rescale, scale_new_data
from .solver import (
    FitOptions,
    FitResult,
    ModelParams,
    SolverError,
    count_parameters,
    fit,
    null_thresholds,
)
from .util import parallel_map

log = logging.getLogger(__name__)

MAX_FOLD_RESAMPLES = 100


class SelectionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# null model and information criteria
# ---------------------------------------------------------------------------


def fit_null(dataset: Dataset, count_sigma2: bool = True) -> FitResult:
    """Closed-form fit with no predictor contribution.

    Numeric responses get their sample mean and a pooled residual variance;
    binary responses the logit of the sample proportion; ordinal responses
    zero intercept and cumulative-proportion thresholds.
    """
    responses = dataset.responses
    P = dataset.n_predictors
    m = np.zeros(len(responses))
    thresholds: dict[str, np.ndarray] = {}
    sq_sum, n_numeric_cells = 0.0, 0
    k = 0
    for j, var in enumerate(responses):
        y = dataset[var.name]
        if var.level == "numeric":
            m[j] = float(y.mean())
            sq_sum += float(((y - m[j]) ** 2).sum())
            n_numeric_cells += len(y)
            k += 1
        elif var.level == "binary":
            p = float(y.mean())
            if p <= 0.0 or p >= 1.0:
                raise SelectionError(
                    f"binary response {var.name!r} is constant; the null intercept diverges"
                )
            m[j] = float(np.log(p / (1.0 - p)))
            k += 1
        else:
            thresholds[var.name] = null_thresholds(y, var.n_categories)
            k += var.n_categories - 1
    sigma2 = None
    if n_numeric_cells:
        sigma2 = sq_sum / (n_numeric_cells - 1)
        if count_sigma2:
            k += 1
    theta = np.tile(m, (dataset.n, 1))
    total, _ = nll(dataset, theta, thresholds, sigma2)
    params = ModelParams(
        rank=0, m=m, B=np.zeros((P, 0)), V=np.zeros((len(responses), 0)),
        thresholds=thresholds, sigma2=sigma2, quantifications={}, numeric_stats={},
    )
    return FitResult(params=params, nll_trace=np.array([total]), iterations=0,
                     converged=True, k=k)


def ic_values(nll_value: float, k: int, n: int, null_nll: float) -> tuple[float, float, float]:
    """(AIC, BIC, adjusted pseudo-R2) from raw ingredients.

    AIC = 2L + 2K; BIC = 2L + log(N) K; R2_a = 1 - (L + K) / L0.
    """
    aic = 2.0 * nll_value + 2.0 * k
    bic = 2.0 * nll_value + np.log(n) * k
    r2a = 1.0 - (nll_value + k) / null_nll
    return aic, bic, r2a


def information_criteria(result: FitResult, null_result: FitResult, n: int
                         ) -> tuple[float, float, float]:
    return ic_values(result.nll, result.k, n, null_result.nll)


@dataclass
class SelectionRow:
    rank: int
    nll: float
    k: int
    aic: float
    bic: float
    r2_adjusted: float


@dataclass
class SelectionReport:
    rows: list[SelectionRow]
    null_nll: float
    chosen: dict[str, int]  # criterion name -> rank

    def as_table(self) -> list[dict]:
        return [
            {"S": r.rank, "NLL": r.nll, "K": r.k, "AIC": r.aic, "BIC": r.bic,
             "R2_adj": r.r2_adjusted}
            for r in self.rows
        ]


def select_rank(dataset: Dataset, ranks: list[int],
                options: FitOptions | None = None) -> tuple[SelectionReport, dict[int, FitResult]]:
    """Fit every candidate rank plus the null model; tabulate fit statistics."""
    opts = options or FitOptions()
    null_result = fit_null(dataset, count_sigma2=opts.count_sigma2)
    fits: dict[int, FitResult] = {}
    rows = []
    for rank in ranks:
        res = fit(dataset, rank, opts)
        fits[rank] = res
        aic, bic, r2a = ic_values(res.nll, res.k, dataset.n, null_result.nll)
        rows.append(SelectionRow(rank, res.nll, res.k, aic, bic, r2a))
    chosen = {
        "aic": rows[int(np.argmin([r.aic for r in rows]))].rank,
        "bic": rows[int(np.argmin([r.bic for r in rows]))].rank,
        "r2_adjusted": rows[int(np.argmax([r.r2_adjusted for r in rows]))].rank,
    }
    return SelectionReport(rows=rows, null_nll=null_result.nll, chosen=chosen), fits


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


@dataclass
class CvReport:
    ranks: list[int]
    means: np.ndarray               # per rank: Eq.-style averaged prediction error
    standard_errors: np.ndarray     # sd over the L*V fold estimates / sqrt(L*V)
    fold_estimates: np.ndarray      # (L*V) x len(ranks)
    chosen_rank_min: int
    chosen_rank_one_se: int
    v_folds: int
    repeats: int
    seed: int
    notes: list[str] = field(default_factory=list)


def _discrete_checks(dataset: Dataset):
    """(variable, required) pairs: responses need every category in training,
    discrete predictors need at least two."""
    checks = []
    for var in dataset.schema:
        if var.level == "numeric":
            continue
        if var.role == "response":
            lo = 0 if var.level == "binary" else 1
            checks.append((var.name, set(range(lo, lo + var.n_categories)), "all"))
        else:
            checks.append((var.name, None, "two"))
    return checks


def _valid_folds(dataset: Dataset, fold_of: np.ndarray, v: int) -> bool:
    checks = _discrete_checks(dataset)
    for f in range(v):
        train = fold_of != f
        if not train.any() or train.all():
            return False
        for name, required, mode in checks:
            observed = set(np.unique(dataset[name][train]).tolist())
            if mode == "all" and observed != required:
                return False
            if mode == "two" and len(observed) < 2:
                return False
    return True


def _assign_folds(dataset: Dataset, v: int, rng: np.random.Generator) -> np.ndarray:
    """Deal rows round-robin after sorting by all discrete response values
    (approximate simultaneous marginal stratification), then fall back to
    uniform shuffles until every training partition covers every category."""
    n = dataset.n
    discrete_resp = [dataset[var.name] for var in dataset.responses if var.level != "numeric"]
    jitter = rng.random(n)
    keys = [jitter] + discrete_resp[::-1]  # lexsort: last key is primary
    order = np.lexsort(keys)
    fold_of = np.empty(n, dtype=int)
    fold_of[order] = np.arange(n) % v
    if _valid_folds(dataset, fold_of, v):
        return fold_of
    for _ in range(MAX_FOLD_RESAMPLES):
        fold_of = rng.permutation(n) % v
        if _valid_folds(dataset, fold_of, v):
            return fold_of
    raise SelectionError(
        f"could not build {v} folds keeping all categories in every training partition"
    )


def _restrict_training(dataset: Dataset, rows: np.ndarray) -> Dataset:
    """Training subset whose discrete-predictor schemas drop unobserved
    categories (codes remapped); response schemas are unchanged."""
    from .dataset import VariableSchema

    cols = {}
    new_schema = []
    for var in dataset.schema:
        col = dataset[var.name][rows]
        if var.role == "predictor" and var.level != "numeric":
            lo = 0 if var.level == "binary" else 1
            observed = np.unique(col)
            if len(observed) < var.n_categories:
                labels = tuple(var.categories[c - lo] for c in observed)
                remap = {c: i + lo for i, c in enumerate(observed.tolist())}
                col = np.asarray([remap[c] for c in col], dtype=int)
                var = VariableSchema(var.name, var.role, var.level, labels)
        new_schema.append(var)
        cols[var.name] = col.copy()
    return Dataset(schema=tuple(new_schema), columns=cols)


def _adapt_warm_start(params: ModelParams, train_ds: Dataset) -> ModelParams:
    """Restrict full-data quantifications to the categories a training fold
    observes, re-standardize against fold frequencies, and rescale the
    matching weight rows."""
    from .dataset import build_indicator

    adapted = params.copy()
    for i, var in enumerate(train_ds.predictors):
        if var.level == "numeric":
            continue
        q = adapted.quantifications[var.name]
        if q.categories == var.categories:
            continue
        keep = [q.categories.index(label) for label in var.categories]
        counts = build_indicator(train_ds, var.name).category_counts
        scores, sd = _rescale(q.scores[keep], counts)
        adapted.quantifications[var.name] = Quantification(
            variable=var.name, categories=var.categories, scores=scores,
            level=q.level, direction=q.direction,
        )
        adapted.B[i] *= sd
    return adapted


def _cv_job(args):
    (train_ds, test_ds, rank, warm, base_opts) = args
    opts = FitOptions(
        tolerance=base_opts.tolerance, max_iterations=base_opts.max_iterations,
        seed=base_opts.seed, warm_start=warm, step_order=base_opts.step_order,
        count_sigma2=base_opts.count_sigma2,
    )
    res = fit(train_ds, rank, opts)
    params = res.params
    phi = scale_new_data(test_ds, params.quantifications, params.numeric_stats,
                         unseen="neutral")
    theta = params.m + phi @ params.implied_coefficients()
    _, per_cell = nll(test_ds, theta, params.thresholds, params.sigma2)
    per_obs = per_cell.sum(axis=1)
    n_unseen = 0
    for var in test_ds.predictors:
        if var.level == "numeric":
            continue
        quant = params.quantifications[var.name]
        lo = 0 if var.level == "binary" else 1
        labels = [var.categories[c - lo] for c in test_ds[var.name]]
        n_unseen += sum(label not in quant.categories for label in labels)
    return float(per_obs.mean()), n_unseen


def cross_validate(
    dataset: Dataset,
    ranks: list[int],
    v_folds: int = 10,
    repeats: int = 10,
    seed: int = 0,
    options: FitOptions | None = None,
    threads: int = 1,
) -> CvReport:
    """L-times-repeated V-fold CV of the held-out prediction error per rank.

    Fold fits are warm-started from the full-data fit of the same rank;
    held-out rows are scored with training-set quantifications, thresholds,
    and variance.  Per-fold estimate: mean over held-out observations of the
    NLL summed across responses.
    """
    if v_folds < 2:
        raise SelectionError("V must be at least 2")
    opts = options or FitOptions()
    full_fits = {rank: fit(dataset, rank, opts) for rank in ranks}

    jobs = []
    for rep in range(repeats):
        fold_of = _assign_folds(dataset, v_folds, substream(seed, "cv", rep))
        for f in range(v_folds):
            train_rows = np.flatnonzero(fold_of != f)
            test_rows = np.flatnonzero(fold_of == f)
            train_ds = _restrict_training(dataset, train_rows)
            test_ds = dataset.subset(test_rows)
            for rank in ranks:
                warm = _adapt_warm_start(full_fits[rank].params, train_ds)
                jobs.append((train_ds, test_ds, rank, warm, opts))

    results = parallel_map(_cv_job, jobs, threads=threads)
    n_cells = repeats * v_folds
    estimates = np.empty((n_cells, len(ranks)))
    total_unseen = 0
    idx = 0
    for cell in range(n_cells):
        for r in range(len(ranks)):
            estimates[cell, r], unseen = results[idx]
            total_unseen += unseen
            idx += 1
    means = estimates.mean(axis=0)
    ses = estimates.std(axis=0, ddof=1) / np.sqrt(n_cells)
    best = int(np.argmin(means))
    threshold = means[best] + ses[best]
    one_se = ranks[int(np.flatnonzero(means <= threshold)[0])]
    notes = []
    if total_unseen:
        notes.append(
            f"{total_unseen} held-out cell(s) had predictor categories unseen in "
            "training; their scaled value was imputed as 0"
        )
        log.info(notes[-1])
    return CvReport(
        ranks=list(ranks), means=means, standard_errors=ses, fold_estimates=estimates,
        chosen_rank_min=ranks[best], chosen_rank_one_se=one_se,
        v_folds=v_folds, repeats=repeats, seed=seed, notes=notes,
    )
