"""Bootstrap machinery, alignment, ellipses, contrasts."""

import numpy as np
import pytest

from rrmix.inference import (
    InferenceError,
    align_replicate,
    balanced_bootstrap_indices,
    bootstrap_se,
    category_contrasts,
    confidence_ellipse,
    ellipse_summary,
    implied_coefficients,
    run_bootstrap,
)
from rrmix.solver import FitOptions, fit

from conftest import random_mixed_dataset
from oracles import chi2_quantile_2df


class TestBalancedIndices:
    def test_exact_counts_small(self):
        idx = balanced_bootstrap_indices(3, 2, seed=1)
        assert idx.shape == (2, 3)
        assert np.bincount(idx.ravel(), minlength=3).tolist() == [2, 2, 2]

    def test_exact_counts_large(self):
        idx = balanced_bootstrap_indices(100, 1000, seed=7)
        counts = np.bincount(idx.ravel(), minlength=100)
        assert np.all(counts == 1000)

    def test_seed_reproducibility(self):
        a = balanced_bootstrap_indices(20, 5, seed=3)
        b = balanced_bootstrap_indices(20, 5, seed=3)
        np.testing.assert_array_equal(a, b)
        c = balanced_bootstrap_indices(20, 5, seed=4)
        assert not np.array_equal(a, c)


class TestAlignReplicate:
    def test_sign_flip_restored(self, rng):
        V = np.linalg.qr(rng.standard_normal((5, 2)))[0]
        B = rng.standard_normal((4, 2))
        flipped = (B * np.array([1, -1]), V * np.array([1, -1]))
        B2, V2 = align_replicate((B, V), flipped)
        np.testing.assert_allclose(V2, V, atol=1e-10)
        np.testing.assert_allclose(B2, B, atol=1e-10)

    def test_rotation_undone(self, rng):
        V = np.linalg.qr(rng.standard_normal((6, 2)))[0]
        B = rng.standard_normal((3, 2))
        a = np.deg2rad(45)
        rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        B2, V2 = align_replicate((B, V), (B @ rot, V @ rot))
        np.testing.assert_allclose(V2, V, atol=1e-10)
        np.testing.assert_allclose(B2, B, atol=1e-10)

    def test_product_invariant(self, rng):
        V_ref = np.linalg.qr(rng.standard_normal((5, 2)))[0]
        B_ref = rng.standard_normal((4, 2))
        V_c = np.linalg.qr(rng.standard_normal((5, 2)))[0]
        B_c = rng.standard_normal((4, 2))
        B2, V2 = align_replicate((B_ref, V_ref), (B_c, V_c))
        np.testing.assert_allclose(B2 @ V2.T, B_c @ V_c.T, atol=1e-10)
        np.testing.assert_allclose(V2.T @ V2, np.eye(2), atol=1e-10)


class TestConfidenceEllipse:
    def test_far_cluster_excludes_origin(self, rng):
        pts = np.array([1.0, 1.0]) + 0.01 * rng.standard_normal((50, 2))
        ell, contains = confidence_ellipse(pts, 0.95)
        assert not contains
        np.testing.assert_allclose(ell.center, [1, 1], atol=0.01)

    def test_symmetric_cloud_contains_origin(self, rng):
        pts = rng.standard_normal((200, 2))
        _, contains = confidence_ellipse(pts, 0.95)
        assert contains

    def test_threshold_against_closed_form(self):
        from scipy.stats import chi2

        np.testing.assert_allclose(chi2.ppf(0.95, 2), chi2_quantile_2df(0.95), atol=1e-9)
        np.testing.assert_allclose(chi2_quantile_2df(0.95), 5.9915, atol=1e-4)

    def test_origin_test_matches_monte_carlo(self, rng):
        # direct check: membership of 0 in {x: (x-c)' S^-1 (x-c) <= q}
        from scipy.stats import chi2

        for center_scale in (0.0, 0.5, 1.0, 2.0, 4.0):
            pts = rng.standard_normal((400, 2)) @ np.array([[1.0, 0.3], [0.0, 0.7]])
            pts += center_scale
            ell, contains = confidence_ellipse(pts, 0.95)
            inv = np.linalg.inv(ell.covariance)
            direct = float(ell.center @ inv @ ell.center) <= chi2.ppf(0.95, 2)
            assert contains == direct

    def test_degenerate_covariance_marginal(self, rng):
        base = rng.standard_normal(60)
        pts = np.column_stack([base, 2.0 * base])  # rank 1
        ell, contains = confidence_ellipse(pts, 0.95)
        assert ell.degenerate
        assert contains  # centered rank-1 cloud holds the origin on its axis

    def test_too_few_points(self):
        with pytest.raises(InferenceError):
            confidence_ellipse(np.zeros((5, 2)))


class TestImpliedAndContrasts:
    def test_printed_profile_row(self):
        # first row of the worked implied-coefficient table
        B = np.array([[0.65, -0.13]])
        V = np.array([[-0.36, -0.50]])
        np.testing.assert_allclose(
            implied_coefficients(B, V), [[0.65 * -0.36 + -0.13 * -0.50]], atol=1e-12
        )
        assert implied_coefficients(np.zeros((3, 2)), np.ones((4, 2))).tolist() == \
            np.zeros((3, 4)).tolist()

    def test_identity_loadings_pass_through(self, rng):
        B = rng.standard_normal((3, 3))
        np.testing.assert_allclose(implied_coefficients(B, np.eye(3)), B)

    def test_contrasts_zero_for_baseline_and_monotone(self, rng):
        ds = random_mixed_dataset(
            rng, n=120, n_numeric_pred=1, discrete_pred_cats=(4,),
            response_levels=("binary", "ordinal"), signal=1.4,
        )
        res = fit(ds, 1, FitOptions(tolerance=1e-9))
        labels, table = category_contrasts(res.params, ds)
        assert labels[0] == "x1"
        assert labels[1:] == ["d12", "d13", "d14"]
        quant = res.params.quantifications["d1"]
        if quant.level == "ordinal" and quant.direction is not None:
            mags = np.abs(table[1:]).sum(axis=1)
            order = np.argsort(quant.scores[1:] - quant.scores[0])
            # contrast magnitude grows with the score gap
            gaps = np.abs(quant.scores[1:] - quant.scores[0])
            assert np.all(np.diff(mags[np.argsort(gaps)]) >= -1e-9)

    def test_contrast_against_dummy_ols_special_case(self, rng):
        # with identity quantifications (binary predictor scored at exactly
        # two values), the contrast equals (score2-score1) * implied row
        ds = random_mixed_dataset(
            rng, n=80, n_numeric_pred=1, discrete_pred_cats=(2,),
            response_levels=("binary", "ordinal"),
        )
        res = fit(ds, 1, FitOptions(tolerance=1e-9))
        labels, table = category_contrasts(res.params, ds)
        q = res.params.quantifications["d1"]
        A = res.params.implied_coefficients()
        np.testing.assert_allclose(
            table[labels.index("d12")],
            (q.scores[1] - q.scores[0]) * A[1], atol=1e-12,
        )


def _min_category_count(ds):
    counts = []
    for var in ds.schema:
        if var.level == "numeric":
            continue
        _, c = np.unique(ds[var.name], return_counts=True)
        counts.append(int(c.min()))
    return min(counts) if counts else np.inf


@pytest.fixture(scope="module")
def fitted():
    # resampling-stable dataset: every discrete category well populated
    rng = np.random.default_rng(99)
    while True:
        ds = random_mixed_dataset(
            rng, n=150, n_numeric_pred=2, discrete_pred_cats=(3,),
            response_levels=("binary", "ordinal", "numeric"), rank=2, signal=1.2,
        )
        if _min_category_count(ds) >= 12:
            break
    res = fit(ds, 2, FitOptions(tolerance=1e-10, max_iterations=5000))
    return ds, res


class TestRunBootstrap:
    def test_identity_resample_reproduces_reference(self, fitted):
        ds, res = fitted
        reps = run_bootstrap(ds, res, b_total=1, seed=0,
                             indices=np.arange(ds.n)[None, :],
                             options=FitOptions(tolerance=1e-10, max_iterations=4000))
        p = reps.params[0]
        np.testing.assert_allclose(p.implied_coefficients(),
                                   res.params.implied_coefficients(), atol=1e-6)
        np.testing.assert_allclose(p.m, res.params.m, atol=1e-6)

    def test_replicates_aligned_and_orthonormal(self, fitted):
        ds, res = fitted
        reps = run_bootstrap(ds, res, b_total=30, seed=12,
                             options=FitOptions(tolerance=1e-7))
        assert reps.n_replicates + reps.n_failed == 30
        for p in reps.params:
            np.testing.assert_allclose(p.V.T @ p.V, np.eye(2), atol=1e-8)

    def test_alignment_preserves_products(self, fitted):
        ds, res = fitted
        idx = balanced_bootstrap_indices(ds.n, 5, seed=3)
        raw = []
        for row in idx:
            sub = ds.subset(row)
            raw.append(fit(sub, 2, FitOptions(tolerance=1e-7,
                                              warm_start=res.params)).params)
        reps = run_bootstrap(ds, res, b_total=5, seed=3, indices=idx,
                             options=FitOptions(tolerance=1e-7))
        for raw_p, ali_p in zip(raw, reps.params):
            np.testing.assert_allclose(raw_p.implied_coefficients(),
                                       ali_p.implied_coefficients(), atol=1e-10)

    def test_bootstrap_se_basics(self, fitted):
        ds, res = fitted
        reps = run_bootstrap(ds, res, b_total=25, seed=5,
                             options=FitOptions(tolerance=1e-7))
        se = bootstrap_se(reps, lambda p: p.implied_coefficients())
        assert se.shape == res.params.implied_coefficients().shape
        assert np.all(se >= 0)
        identical = run_bootstrap(ds, res, b_total=2, seed=5,
                                  indices=np.tile(np.arange(ds.n), (2, 1)),
                                  options=FitOptions(tolerance=1e-9, max_iterations=3000))
        se0 = bootstrap_se(identical, lambda p: p.implied_coefficients())
        assert np.all(se0 < 1e-6)

    def test_two_point_se_arithmetic(self):

        from rrmix.inference import BootstrapReplicates
        from rrmix.solver import ModelParams

        def mk(val):
            return ModelParams(rank=1, m=np.array([val]), B=np.ones((1, 1)),
                               V=np.ones((1, 1)), thresholds={}, sigma2=None,
                               quantifications={}, numeric_stats={})

        eps = 0.25
        reps = BootstrapReplicates(params=[mk(1.0 - eps), mk(1.0 + eps)],
                                   indices=np.zeros((2, 1), dtype=int), seed=0, n_failed=0)
        se = bootstrap_se(reps, lambda p: p.m)
        np.testing.assert_allclose(se, eps * np.sqrt(2.0), atol=1e-12)

    def test_unconverged_reference_rejected(self, fitted, rng):
        ds, res = fitted
        bad = fit(ds, 2, FitOptions(tolerance=1e-15, max_iterations=1))
        assert not bad.converged
        with pytest.raises(InferenceError, match="converge"):
            run_bootstrap(ds, bad, b_total=2, seed=0)

    def test_ellipse_summary_names(self, fitted):
        ds, res = fitted
        reps = run_bootstrap(ds, res, b_total=30, seed=2,
                             options=FitOptions(tolerance=1e-7))
        w, l = ellipse_summary(reps, [v.name for v in ds.predictors],
                               [v.name for v in ds.responses])
        assert [e.name for e in w] == ["x1", "x2", "d1"]
        assert [e.name for e in l] == ["y1", "y2", "y3"]
