import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from clustergof.errors import ConfigurationError, DataValidationError, EMConvergenceError, UnsupportedError
from clustergof.mixtures import (
    Dataset,
    MixtureParams,
    MixtureSpec,
    NotPositiveDefiniteError,
    align_labels,
    ar1_correlation,
    bic,
    e_step,
    fit_em,
    load_params,
    log_density,
    log_joint,
    params_from_document,
    params_to_document,
    posterior,
    posteriors,
    sample,
    save_params,
    select_K,
)
from clustergof.kernels import normalize_log_rows


def gauss(means, variances, pi):
    means = np.asarray(means, dtype=float)
    spec = MixtureSpec("gaussian_diagonal", means.shape[0], means.shape[1])
    return spec, MixtureParams(pi, {"means": means, "variances": np.asarray(variances, dtype=float)}).validate(spec)


SYM_SPEC, SYM = gauss([[-1.0], [1.0]], [[1.0], [1.0]], [0.5, 0.5])


def random_model(family, rng, K=3, d=3):
    pi = rng.dirichlet(np.ones(K) * 3)
    if family == "gaussian_diagonal":
        comps = {"means": rng.normal(size=(K, d)), "variances": rng.uniform(0.3, 2.0, (K, d))}
        spec = MixtureSpec(family, K, d)
    elif family == "poisson_product":
        comps = {"rates": rng.uniform(0.5, 6.0, (K, d))}
        spec = MixtureSpec(family, K, d)
    elif family == "bernoulli_product":
        comps = {"probs": rng.uniform(0.1, 0.9, (K, d))}
        spec = MixtureSpec(family, K, d)
    elif family == "multinomial_product":
        cats = (2, 3, 4)[:d]
        P = np.zeros((K, d, max(cats)))
        for j, c in enumerate(cats):
            P[:, j, :c] = rng.dirichlet(np.ones(c) * 2, size=K)
        comps = {"probs": P}
        spec = MixtureSpec(family, K, d, categories=cats)
    elif family == "gaussian_full":
        comps = {"means": rng.normal(size=(K, d)),
                 "covariances": np.stack([ar1_correlation(d, 0.5)] * K)}
        spec = MixtureSpec(family, K, d)
    elif family == "student3_product":
        comps = {"locations": rng.normal(size=(K, d)), "scales": rng.uniform(0.5, 2.0, (K, d))}
        spec = MixtureSpec(family, K, d)
    elif family == "log_gaussian_product":
        comps = {"means": rng.normal(size=(K, d)), "variances": rng.uniform(0.3, 1.0, (K, d))}
        spec = MixtureSpec(family, K, d)
    else:
        comps = {"means": rng.normal(size=(K, d)), "variances": rng.uniform(0.3, 1.0, (K, d)),
                 "correlations": np.stack([ar1_correlation(d, 0.4)] * K)}
        spec = MixtureSpec(family, K, d, marginal="gaussian")
    return spec, MixtureParams(pi, comps).validate(spec)


ALL_FAMILIES = ["gaussian_diagonal", "poisson_product", "bernoulli_product", "multinomial_product",
                "gaussian_full", "student3_product", "log_gaussian_product", "gaussian_copula"]
FIT_FAMILIES = ALL_FAMILIES[:4]


class TestSpec:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            MixtureSpec("gamma", 2, 1)
        with pytest.raises(ConfigurationError):
            MixtureSpec("gaussian_diagonal", 0, 1)
        with pytest.raises(ConfigurationError):
            MixtureSpec("multinomial_product", 2, 2, categories=(2, 1))
        bad_pi = MixtureParams([0.7, 0.4], {"means": [[0], [1]], "variances": [[1], [1]]})
        with pytest.raises(ConfigurationError):
            bad_pi.validate(SYM_SPEC)
        bad_var = MixtureParams([0.5, 0.5], {"means": [[0], [1]], "variances": [[1], [0]]})
        with pytest.raises(ConfigurationError):
            bad_var.validate(SYM_SPEC)

    def test_free_parameters(self):
        assert MixtureSpec("gaussian_diagonal", 1, 1).n_free_parameters() == 2
        spec = MixtureSpec("multinomial_product", 4, 3, categories=(3, 3, 2))
        assert spec.n_free_parameters() == 3 + 4 * (2 + 2 + 1)
        assert MixtureSpec("poisson_product", 3, 6).n_free_parameters() == 2 + 18
        with pytest.raises(UnsupportedError):
            MixtureSpec("student3_product", 2, 2).n_free_parameters()

    def test_non_pd_rejected(self):
        spec = MixtureSpec("gaussian_full", 1, 2)
        bad = MixtureParams([1.0], {"means": [[0, 0]], "covariances": [[[1, 2], [2, 1]]]})
        with pytest.raises(NotPositiveDefiniteError):
            bad.validate(spec)


class TestDensity:
    def test_standard_normal(self):
        spec, params = gauss([[0.0]], [[1.0]], [1.0])
        assert log_density(spec, params, [0.0]) == pytest.approx(-0.9189385, abs=1e-7)

    def test_symmetric_pair(self):
        assert log_density(SYM_SPEC, SYM, [0.0]) == pytest.approx(-1.4189385, abs=1e-7)

    def test_poisson(self):
        spec = MixtureSpec("poisson_product", 1, 1)
        params = MixtureParams([1.0], {"rates": [[2.0]]})
        expect = 3 * math.log(2) - 2 - math.log(6)
        assert log_density(spec, params, [3.0]) == pytest.approx(expect, abs=1e-12)
        # frozen from scipy.stats.poisson.logpmf(3, 2)
        assert expect == pytest.approx(-1.7123179275482192, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            log_density(SYM_SPEC, SYM, [0.0, 1.0])

    def test_vanishing_density_flagged(self):
        spec = MixtureSpec("bernoulli_product", 1, 1)
        params = MixtureParams([1.0], {"probs": [[0.5]]})
        with pytest.warns(RuntimeWarning):
            assert log_density(spec, params, [2.0]) == -math.inf
        with pytest.raises(DataValidationError, match="row 1"):
            posteriors(spec, params, np.array([[1.0], [2.0]]))

    @pytest.mark.parametrize("family", ["gaussian_diagonal", "student3_product", "log_gaussian_product"])
    def test_integrates_to_one_continuous(self, family):
        spec, params = random_model(family, np.random.default_rng(3), K=2, d=1)
        f = lambda x: math.exp(log_density(spec, params, [x]))
        lo = 0.0 if family == "log_gaussian_product" else -np.inf
        total = integrate.quad(f, lo, np.inf, limit=200)[0]
        assert abs(total - 1.0) < 0.005

    def test_sums_to_one_discrete(self):
        rng = np.random.default_rng(4)
        spec, params = random_model("poisson_product", rng, K=2, d=1)
        xs = np.arange(0, 200, dtype=float)[:, None]
        assert abs(np.exp(e_step(spec, params, xs)[1]).sum() - 1.0) < 0.005
        spec, params = random_model("multinomial_product", rng, K=2, d=1)
        xs = np.arange(2, dtype=float)[:, None]
        assert abs(np.exp(e_step(spec, params, xs)[1]).sum() - 1.0) < 1e-12

    def test_gaussian_full_matches_scipy(self):
        from scipy.stats import multivariate_normal

        spec, params = random_model("gaussian_full", np.random.default_rng(5), K=1, d=3)
        x = np.array([0.3, -0.2, 1.0])
        ref = multivariate_normal(params.components["means"][0], params.components["covariances"][0]).logpdf(x)
        assert log_density(spec, params, x) == pytest.approx(ref, abs=1e-12)


class TestPosterior:
    def test_examples(self):
        assert np.allclose(posterior(SYM_SPEC, SYM, [0.0]), [0.5, 0.5], atol=1e-15)
        assert np.allclose(posterior(SYM_SPEC, SYM, [1.0]), [0.1192029, 0.8807971], atol=1e-7)
        spec, params = gauss([[2.0]], [[3.0]], [1.0])
        assert np.array_equal(posterior(spec, params, [17.0]), [1.0])

    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_rows_on_simplex(self, family):
        rng = np.random.default_rng(11)
        for _ in range(5):
            spec, params = random_model(family, rng)
            X = sample(spec, params, 300, rng).X
            post = posteriors(spec, params, X)
            assert np.all(post >= 0)
            assert np.max(np.abs(post.sum(axis=1) - 1.0)) <= 1e-10

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-500, 500))
    def test_argmax_shift_invariant(self, seed, shift):
        rng = np.random.default_rng(seed)
        spec, params = random_model("gaussian_diagonal", rng)
        X = rng.normal(size=(40, 3)) * 2
        L = log_joint(spec, params, X)
        a, _ = normalize_log_rows(np.ascontiguousarray(L))
        b, _ = normalize_log_rows(np.ascontiguousarray(L + shift))
        assert np.array_equal(a.argmax(axis=1), b.argmax(axis=1))
        assert np.allclose(a, b, atol=1e-12)


class TestSample:
    def test_bernoulli_degenerate(self):
        spec = MixtureSpec("bernoulli_product", 1, 1)
        # p = 1 is outside the fitting domain but valid for generation
        params = MixtureParams([1.0], {"probs": [[1.0]]})
        assert np.all(sample(spec, params, 50, np.random.default_rng(0)).X == 1.0)

    def test_label_frequency(self):
        data = sample(SYM_SPEC, SYM, 100_000, np.random.default_rng(1))
        assert abs(np.mean(data.labels == 0) - 0.5) <= 0.005
        assert set(np.unique(data.labels)) == {0, 1}

    def test_copula_independence(self):
        spec = MixtureSpec("gaussian_copula", 1, 4, marginal="gaussian")
        params = MixtureParams([1.0], {"means": np.zeros((1, 4)), "variances": np.ones((1, 4)),
                                       "correlations": ar1_correlation(4, 0.0)[None]})
        n = 20_000
        X = sample(spec, params, n, np.random.default_rng(2)).X
        C = np.corrcoef(X.T)
        assert np.max(np.abs(C[~np.eye(4, dtype=bool)])) <= 3 / math.sqrt(n)

    def test_copula_correlation_and_marginals(self):
        spec = MixtureSpec("gaussian_copula", 1, 3, marginal="log_gaussian")
        params = MixtureParams([1.0], {"means": np.zeros((1, 3)), "variances": np.ones((1, 3)),
                                       "correlations": ar1_correlation(3, 0.75)[None]})
        X = sample(spec, params, 20_000, np.random.default_rng(3)).X
        assert np.all(X > 0)
        C = np.corrcoef(np.log(X).T)
        assert C[0, 1] == pytest.approx(0.75, abs=0.02)
        assert C[0, 2] == pytest.approx(0.5625, abs=0.02)

    def test_student_tails(self):
        spec, params = random_model("student3_product", np.random.default_rng(6), K=1, d=1)
        X = sample(spec, params, 50_000, np.random.default_rng(7)).X[:, 0]
        z = (X - params.components["locations"][0, 0]) / params.components["scales"][0, 0]
        # t_3 has variance 3
        assert np.var(z) == pytest.approx(3.0, rel=0.3)

    def test_dataset_rejects_nonfinite(self):
        with pytest.raises(DataValidationError, match="row 1"):
            Dataset(np.array([[0.0], [np.nan]]))


class TestFit:
    def test_single_component_closed_form(self):
        X = np.random.default_rng(0).normal(3.0, 2.0, size=(500, 2))
        spec = MixtureSpec("gaussian_diagonal", 1, 2)
        fit = fit_em(spec, X, rng=np.random.default_rng(1), n_starts=2)
        assert fit.converged and fit.n_iterations == 1
        assert np.allclose(fit.params.components["means"][0], X.mean(axis=0), atol=1e-12)
        assert np.allclose(fit.params.components["variances"][0], X.var(axis=0), atol=1e-12)

    def test_recovers_means(self):
        # at separation of two standard deviations the MLE itself is often
        # more than 0.1 away from the truth, so this is a fixed-seed check
        rng = np.random.default_rng(0)
        data = sample(SYM_SPEC, SYM, 5000, rng)
        fit = fit_em(SYM_SPEC, data.X, rng=rng, n_starts=5)
        est = fit.params.components["means"]
        perm = align_labels(est, SYM.components["means"])
        assert np.allclose(est[perm], SYM.components["means"], atol=0.1)

    def test_round_trip_proportions(self):
        rng = np.random.default_rng(77)
        spec, params = gauss([[0.0, 0.0], [2.5, 1.5]], [[1, 1], [0.5, 2.0]], [0.3, 0.7])
        data = sample(spec, params, 10_000, rng)
        fit = fit_em(spec, data.X, rng=rng, n_starts=5)
        perm = align_labels(fit.params.components["means"], params.components["means"])
        assert np.allclose(fit.params.proportions[perm], params.proportions, atol=0.05)

    def test_precondition(self):
        with pytest.raises(ConfigurationError):
            fit_em(SYM_SPEC, np.zeros((1, 1)), K=2)
        with pytest.raises(UnsupportedError):
            fit_em(MixtureSpec("student3_product", 2, 1), np.zeros((10, 1)))
        with pytest.raises(DataValidationError):
            fit_em(MixtureSpec("poisson_product", 2, 1), np.full((10, 1), 0.5))

    @pytest.mark.parametrize("family", FIT_FAMILIES)
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_loglik_monotone(self, family, seed):
        rng = np.random.default_rng(100 + seed)
        spec, params = random_model(family, rng, K=3, d=3)
        X = sample(spec, params, 600, rng).X
        try:
            fit = fit_em(spec, X, rng=rng, n_starts=3)
        except EMConvergenceError as err:
            fit = err.best
        assert np.all(np.diff(fit.loglik_trace) >= -1e-8 * np.abs(fit.loglik_trace[1:]))
        assert fit.bic == pytest.approx(bic(fit))

    def test_short_em(self):
        rng = np.random.default_rng(8)
        data = sample(SYM_SPEC, SYM, 2000, rng)
        fit = fit_em(SYM_SPEC, data.X, rng=rng, init_strategy="short_em", n_starts=4)
        assert fit.converged
        assert np.all(np.diff(fit.loglik_trace) >= -1e-8 * abs(fit.loglik))

    def test_no_convergence_carries_best(self):
        rng = np.random.default_rng(9)
        data = sample(SYM_SPEC, SYM, 500, rng)
        with pytest.raises(EMConvergenceError) as info:
            fit_em(SYM_SPEC, data.X, rng=rng, n_starts=2, max_iter=2, tol=1e-15)
        assert info.value.best is not None and not info.value.best.converged

    def test_deterministic_given_rng(self):
        data = sample(SYM_SPEC, SYM, 800, np.random.default_rng(10))
        a = fit_em(SYM_SPEC, data.X, rng=np.random.default_rng(5), n_starts=3)
        b = fit_em(SYM_SPEC, data.X, rng=np.random.default_rng(5), n_starts=3)
        assert np.array_equal(a.params.components["means"], b.params.components["means"])


class TestSelectK:
    @pytest.mark.filterwarnings("ignore:K=")
    def test_single_cluster(self):
        spec = MixtureSpec("gaussian_diagonal", 1, 2)
        chosen = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((400, 2))
            chosen.append(select_K(spec, X, range(1, 4), rng=rng, n_starts=3).spec.K)
        assert np.mean(np.array(chosen) == 1) >= 0.95

    def test_three_clusters(self):
        spec, params = gauss([[0, 0], [6, 0], [0, 6]], np.ones((3, 2)), [1 / 3, 1 / 3, 1 / 3])
        rng = np.random.default_rng(12)
        X = sample(spec, params, 900, rng).X
        fit = select_K(spec, X, [1, 2, 3, 4], rng=rng, n_starts=5)
        assert fit.spec.K == 3
        assert set(fit.bic_table) == {1, 2, 3, 4}
        assert fit.bic == max(fit.bic_table.values())

    def test_empty_range(self):
        with pytest.raises(ConfigurationError):
            select_K(SYM_SPEC, np.zeros((5, 1)), [])


class TestDocuments:
    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_round_trip(self, family, tmp_path):
        spec, params = random_model(family, np.random.default_rng(13))
        path = tmp_path / "m.json"
        save_params(path, spec, params)
        spec2, params2 = load_params(path)
        assert spec2 == spec
        assert np.array_equal(params2.proportions, params.proportions)
        for key, arr in params.components.items():
            assert np.array_equal(params2.components[key], arr)

    def test_rejects_foreign_document(self):
        with pytest.raises(DataValidationError):
            params_from_document({"format": "other"})

    def test_multinomial_ragged(self):
        spec, params = random_model("multinomial_product", np.random.default_rng(14))
        doc = params_to_document(spec, params)
        assert [len(r) for r in doc["components"]["probs"][0]] == [2, 3, 4]


def test_align_labels():
    true = np.array([[0.0], [5.0], [10.0]])
    est = np.array([[10.1], [-0.2], [4.9]])
    perm = align_labels(est, true)
    assert list(perm) == [1, 2, 0]
    assert np.allclose(est[perm], true, atol=0.3)
