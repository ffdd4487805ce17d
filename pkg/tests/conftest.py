"""Shared builders for test datasets."""

from __future__ import annotations

import numpy as np
import pytest

from rrmix.dataset import Dataset, VariableSchema


def make_dataset(variables: list[tuple[str, str, str, tuple]], columns: dict) -> Dataset:
    """Construct a Dataset directly from coded columns (no CSV round trip)."""
    schema = tuple(
        VariableSchema(name=n, role=r, level=lv, categories=tuple(cats))
        for n, r, lv, cats in variables
    )
    cols = {}
    for var in schema:
        arr = np.asarray(columns[var.name])
        cols[var.name] = arr.astype(float) if var.level == "numeric" else arr.astype(int)
    return Dataset(schema=schema, columns=cols)


def _labels(prefix: str, c: int) -> tuple[str, ...]:
    return tuple(f"{prefix}{i}" for i in range(1, c + 1))


def random_mixed_dataset(
    rng: np.random.Generator,
    n: int = 80,
    n_numeric_pred: int = 2,
    discrete_pred_cats: tuple[int, ...] = (3,),
    response_levels: tuple[str, ...] = ("numeric", "binary", "ordinal"),
    ordinal_categories: int = 4,
    rank: int = 1,
    signal: float = 1.0,
) -> Dataset:
    """Random dataset drawn from a true low-rank mixed-response model.

    Regenerates responses until every declared category is observed, so the
    result always satisfies the load-time invariants.
    """
    variables: list[tuple[str, str, str, tuple]] = []
    columns: dict[str, np.ndarray] = {}
    phi_cols = []
    for i in range(n_numeric_pred):
        name = f"x{i + 1}"
        col = rng.standard_normal(n)
        variables.append((name, "predictor", "numeric", ()))
        columns[name] = col
        phi_cols.append((col - col.mean()) / col.std())
    for i, c in enumerate(discrete_pred_cats):
        name = f"d{i + 1}"
        level = "binary" if c == 2 else ("ordinal" if i % 2 == 0 else "nominal")
        for _ in range(100):
            codes = rng.integers(1, c + 1, size=n)
            if len(np.unique(codes)) == c:
                break
        variables.append((name, "predictor", level, _labels(name.upper(), c)))
        columns[name] = codes if level != "binary" else codes - 1
        scores = np.sort(rng.standard_normal(c)) if level == "ordinal" else rng.standard_normal(c)
        phi = scores[codes - 1]
        phi_cols.append((phi - phi.mean()) / max(phi.std(), 1e-9))

    P = len(phi_cols)
    R = len(response_levels)
    phi = np.column_stack(phi_cols)
    B = rng.standard_normal((P, rank)) * signal
    V = rng.uniform(-1, 1, size=(R, rank))
    theta = phi @ B @ V.T

    def cdf(u):
        return 1.0 / (1.0 + np.exp(-u))

    for j, level in enumerate(response_levels):
        name = f"y{j + 1}"
        col_theta = theta[:, j]
        for _ in range(200):
            if level == "numeric":
                col = col_theta + rng.standard_normal(n)
                variables.append((name, "response", "numeric", ()))
                columns[name] = col
                break
            if level == "binary":
                col = (rng.random(n) < cdf(col_theta)).astype(int)
                if 0 < col.sum() < n:
                    variables.append((name, "response", "binary", ("0", "1")))
                    columns[name] = col
                    break
            else:
                t = np.sort(rng.normal(0.0, 1.2, size=ordinal_categories - 1))
                t = t + np.arange(ordinal_categories - 1) * 1e-3  # strictness
                cum = cdf(t - col_theta[:, None])
                probs = np.diff(np.concatenate([np.zeros((n, 1)), cum, np.ones((n, 1))], axis=1))
                u = rng.random(n)
                col = 1 + (u[:, None] > np.cumsum(probs, axis=1)[:, :-1]).sum(axis=1)
                if len(np.unique(col)) == ordinal_categories:
                    variables.append((name, "response", "ordinal", _labels("c", ordinal_categories)))
                    columns[name] = col
                    break
            col_theta = col_theta * 0.8  # shrink the signal and retry
        else:
            raise RuntimeError("could not realize all response categories")
    return make_dataset(variables, columns)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def eurobarometer_schema() -> list[VariableSchema]:
    """Schema shaped like the survey application: 5 predictors, 7 responses."""
    likert = ("Strongly Disagree", "Disagree", "Agree", "Strongly Agree")
    edu = ("Pre-primary", "Primary", "Low Secondary", "Up Secondary",
           "Post Secondary", "Tertiary", "Bachelor", "Master", "Doctorate")
    return [
        VariableSchema("A", "predictor", "numeric"),
        VariableSchema("PA", "predictor", "ordinal", ("Left", "Center", "Right")),
        VariableSchema("G", "predictor", "binary", ("Male", "Female")),
        VariableSchema("U", "predictor", "ordinal", ("Rural", "Town", "Large Town")),
        VariableSchema("E", "predictor", "ordinal", edu),
        VariableSchema("T", "response", "binary", ("0", "1")),
        VariableSchema("FE", "response", "binary", ("0", "1")),
        VariableSchema("CI", "response", "ordinal", likert),
        VariableSchema("MW", "response", "ordinal", likert),
        VariableSchema("FS", "response", "ordinal", likert),
        VariableSchema("DI", "response", "ordinal", likert),
        VariableSchema("RE", "response", "ordinal", likert),
    ]
