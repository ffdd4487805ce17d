"""Optimal scaling: PAVA, quantification updates, rescale bookkeeping."""

import numpy as np
import pytest

from rrmix.dataset import VariableSchema, build_indicator
from rrmix.scaling import (
    ScalingError,
    apply_scaling,
    integer_code_quantification,
    update_quantification,
    weighted_monotone_regression,
)

from conftest import make_dataset
from oracles import brute_force_monotone


class TestMonotoneRegression:
    def test_already_monotone(self):
        np.testing.assert_array_equal(
            weighted_monotone_regression([1, 2, 3], [1, 1, 1], "inc"), [1, 2, 3]
        )

    def test_pooling_case(self):
        # frozen via the exhaustive level-set oracle
        np.testing.assert_allclose(
            weighted_monotone_regression([3, 1, 2], [1, 1, 1], "inc"), [2, 2, 2]
        )

    def test_decreasing_case(self):
        np.testing.assert_allclose(
            weighted_monotone_regression([1, 2, 3], [1, 1, 1], "dec"), [2, 2, 2]
        )

    def test_matches_brute_force(self, rng):
        for _ in range(60):
            c = int(rng.integers(2, 7))
            v = rng.normal(0, 2, size=c)
            w = rng.uniform(0.2, 5.0, size=c)
            for direction in ("inc", "dec"):
                got = weighted_monotone_regression(v, w, direction)
                want = brute_force_monotone(v, w, direction)
                np.testing.assert_allclose(got, want, atol=1e-10)
                diffs = np.diff(got)
                assert np.all(diffs >= -1e-12) if direction == "inc" else np.all(diffs <= 1e-12)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            weighted_monotone_regression([1, 2], [1, -1], "inc")
        with pytest.raises(ValueError):
            weighted_monotone_regression([1, 2], [1, 1], "sideways")


def _indicator_dataset(codes, cats, level):
    ds = make_dataset(
        [("d", "predictor", level, cats), ("y", "response", "binary", ("0", "1"))],
        {"d": codes, "y": [i % 2 for i in range(len(codes))]},
    )
    return ds, ds.variable("d"), build_indicator(ds, "d")


class TestUpdateQuantification:
    def test_exact_interpolation(self):
        ds, var, ind = _indicator_dataset([1, 2, 3, 1, 2, 3], ("a", "b", "c"), "nominal")
        target = np.array([-1.0, 0.0, 1.0])
        z = (ind.matrix @ target)[:, None]
        quant, scale = update_quantification(z, np.array([1.0]), ind, var)
        # proportional to the target, unit frequency-weighted variance
        np.testing.assert_allclose(quant.scores / quant.scores[2], target / target[2], atol=1e-12)
        phi = ind.matrix @ quant.scores
        assert abs(phi.mean()) < 1e-10 and abs(phi.var() - 1.0) < 1e-10

    def test_ordinal_projection_frozen(self):
        # unconstrained solution (0.5, -0.2, 0.9), equal frequencies: the
        # exhaustive oracle pools the first two at 0.15; after centering and
        # unit-variance rescale the scores are (-1/sqrt(2), -1/sqrt(2), sqrt(2)).
        ds, var, ind = _indicator_dataset([1, 2, 3], ("lo", "mid", "hi"), "ordinal")
        z = (ind.matrix @ np.array([0.5, -0.2, 0.9]))[:, None]
        quant, _ = update_quantification(z, np.array([1.0]), ind, var)
        np.testing.assert_allclose(
            quant.scores, [-1 / np.sqrt(2), -1 / np.sqrt(2), np.sqrt(2)], atol=1e-12
        )
        assert quant.direction == "inc"

    def test_binary_counts_closed_form(self, rng):
        # frequency-weighted moment constraints give (-sqrt(n2/n1), sqrt(n1/n2))
        codes = [0] * 7 + [1] * 3  # binary columns are stored 0/1
        ds, var, ind = _indicator_dataset(codes, ("m", "f"), "binary")
        z = rng.standard_normal((10, 2))
        a = rng.standard_normal(2)
        quant, _ = update_quantification(z, a, ind, var)
        expect = np.array([-np.sqrt(3 / 7), np.sqrt(7 / 3)])
        sign = np.sign(quant.scores[1]) or 1.0
        np.testing.assert_allclose(sign * quant.scores, expect, atol=1e-12)

    def test_zero_direction_errors(self):
        ds, var, ind = _indicator_dataset([1, 2, 1, 2], ("a", "b"), "nominal")
        with pytest.raises(ScalingError, match="direction"):
            update_quantification(np.zeros((4, 2)), np.zeros(2), ind, var)

    def test_degenerate_rescale_errors(self):
        ds, var, ind = _indicator_dataset([1, 2, 1, 2], ("a", "b"), "nominal")
        # working residuals orthogonal to the categories: w_hat is constant
        z = np.ones((4, 1))
        with pytest.raises(ScalingError, match="degenerate"):
            update_quantification(z, np.array([1.0]), ind, var)

    def test_moment_and_order_invariants(self, rng):
        for _ in range(25):
            c = int(rng.integers(2, 6))
            n = int(rng.integers(c + 2, 60))
            codes = np.concatenate([np.arange(1, c + 1), rng.integers(1, c + 1, size=n - c)])
            rng.shuffle(codes)
            ds, var, ind = _indicator_dataset(codes.tolist(), tuple(map(str, range(c))), "ordinal")
            z = rng.standard_normal((n, 3))
            a = rng.standard_normal(3)
            quant, _ = update_quantification(z, a, ind, var)
            phi = ind.matrix @ quant.scores
            assert abs(phi.mean()) < 1e-10
            assert abs(phi.var() - 1.0) < 1e-10
            d = np.diff(quant.scores)
            assert np.all(d >= -1e-12) or np.all(d <= 1e-12)

    def test_never_increases_working_objective(self, rng):
        # descent of || Z - 1 m' - Phi A ||^2 with the scale folded into B
        for _ in range(20):
            n, c, r = 40, 4, 3
            codes = np.concatenate([np.arange(1, c + 1), rng.integers(1, c + 1, size=n - c)])
            ds, var, ind = _indicator_dataset(codes.tolist(), ("a", "b", "cc", "d"), "ordinal")
            start = integer_code_quantification(ind, var)
            phi_other = rng.standard_normal((n, 2))
            B = rng.standard_normal((3, 2))
            V = np.linalg.qr(rng.standard_normal((r, 2)))[0]
            m = rng.standard_normal(r)
            Z = rng.standard_normal((n, r))
            A = B @ V.T
            phi_p = ind.matrix @ start.scores
            phi = np.column_stack([phi_p, phi_other])
            before = np.sum((Z - m - phi @ A) ** 2)
            z_tilde = Z - m - phi_other @ A[1:]
            quant, scale = update_quantification(z_tilde, A[0], ind, var)
            B_new = B.copy()
            B_new[0] *= scale
            phi_new = np.column_stack([ind.matrix @ quant.scores, phi_other])
            after = np.sum((Z - m - phi_new @ B_new @ V.T) ** 2)
            assert after <= before + 1e-10


class TestApplyScaling:
    def test_training_consistency(self, rng):
        codes = [1, 2, 3, 2, 1, 3, 3, 2]
        ds, var, ind = _indicator_dataset(codes, ("a", "b", "c"), "ordinal")
        z = rng.standard_normal((8, 2))
        quant, _ = update_quantification(z, np.array([0.5, -1.0]), ind, var)
        phi = apply_scaling(ds["d"], var, quant)
        np.testing.assert_allclose(phi, ind.matrix @ quant.scores, atol=1e-14)

    def test_numeric_at_training_mean(self):
        var = VariableSchema("x", "predictor", "numeric")
        phi = apply_scaling(np.array([10.0]), var, (10.0, 2.0))
        assert phi[0] == 0.0

    def test_unseen_category_error_and_neutral(self):
        var = VariableSchema("d", "predictor", "ordinal", ("a", "b", "c"))
        from rrmix.scaling import Quantification

        quant = Quantification("d", ("a", "b"), np.array([-1.0, 1.0]), "ordinal", "inc")
        with pytest.raises(ScalingError, match="'c'"):
            apply_scaling(np.array([3]), var, quant)
        phi = apply_scaling(np.array([3, 1]), var, quant, unseen="neutral")
        np.testing.assert_allclose(phi, [0.0, -1.0])

    def test_top_category_stands_out(self):
        # monotone increasing scores: the highest observed category maps to
        # the maximal score
        var = VariableSchema("e", "predictor", "ordinal", tuple("abcdefghi"))
        codes = np.tile(np.arange(1, 10), 5)
        ds, var2, ind = _indicator_dataset(codes.tolist(), tuple("abcdefghi"), "ordinal")
        z = (ind.matrix @ np.linspace(-1, 3, 9) ** 3)[:, None]
        quant, _ = update_quantification(z, np.array([1.0]), ind, var2)
        assert quant.score_of("i") == pytest.approx(quant.scores.max())
        assert quant.scores.argmax() == 8
