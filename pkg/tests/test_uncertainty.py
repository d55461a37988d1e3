import numpy as np
import pytest

from senscalib import (
    CalibrationDataset,
    bootstrap_ensemble,
    build_gram,
    f_moments,
    full_basis,
    variance_objective,
)
from senscalib.exceptions import NonpositiveVariance, ValidationError
from senscalib.uncertainty import ensemble_from_fits


def welford_moments(rows):
    """Streaming covariance oracle (Welford / online update)."""
    n = 0
    mean = np.zeros(rows.shape[1])
    m2 = np.zeros((rows.shape[1], rows.shape[1]))
    for row in rows:
        n += 1
        delta = row - mean
        mean += delta / n
        m2 += np.outer(delta, row - mean)
    return mean, m2 / (n - 1)


def make_ds(n=50, d_z=2, seed=0, y=None):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 1))
    z = rng.normal(size=(n, d_z))
    if y is None:
        y = rng.normal(size=(n, 1))
    return CalibrationDataset(x=x, z=z, y=np.atleast_2d(y).reshape(n, -1))


class TestFeatureMoments:
    def test_constant_only(self):
        ds = make_ds()
        basis = full_basis(ds, (), 1).subset([0])
        m, c = f_moments(basis, ds)
        np.testing.assert_allclose(m, [1.0])
        np.testing.assert_allclose(c, [[0.0]])

    def test_normalized_basis_moments(self):
        ds = make_ds(n=40)
        basis = full_basis(ds, (0, 1), 2)
        m, c = f_moments(basis, ds)
        np.testing.assert_allclose(m[0], 1.0)
        np.testing.assert_allclose(m[1:], 0.0, atol=1e-12)
        # population std 1 means unbiased variance n/(n-1)
        np.testing.assert_allclose(np.diag(c)[1:], ds.n / (ds.n - 1), rtol=1e-10)

    def test_against_streaming_oracle(self):
        from senscalib.basis import design_matrix

        ds = make_ds(n=35, seed=4)
        basis = full_basis(ds, (0, 1), 3)
        m, c = f_moments(basis, ds)
        h = design_matrix(basis, ds.x, ds.z)
        m_oracle, c_oracle = welford_moments(h)
        np.testing.assert_allclose(m, m_oracle, atol=1e-10)
        np.testing.assert_allclose(c, c_oracle, atol=1e-10)


def make_caches(ds, basis, b, seed):
    rng = np.random.default_rng(seed)
    return [build_gram(rng.integers(0, ds.n, ds.n), ds, basis) for _ in range(b)]


class TestBootstrapEnsemble:
    def test_exact_linear_data_no_variability(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(40, 1))
        ds = CalibrationDataset(x=x, z=np.empty((40, 0)), y=3.0 * x + 1.0)
        basis = full_basis(ds, (), 1)
        caches = make_caches(ds, basis, 30, seed=2)
        ens = bootstrap_ensemble(ds, 0, [0, 1], caches)
        assert np.abs(ens.c_beta).max() < 1e-10
        assert ens.mean_theta_sq < 1e-10

    def test_identical_resamples_zero_covariance(self):
        ds = make_ds(n=30, seed=3)
        basis = full_basis(ds, (0,), 2)
        rows = np.arange(ds.n)
        caches = [build_gram(rows, ds, basis), build_gram(rows, ds, basis)]
        ens = bootstrap_ensemble(ds, 0, list(range(basis.k)), caches)
        np.testing.assert_allclose(ens.c_beta, 0.0, atol=1e-18)

    def test_matches_ols_covariance_oracle(self):
        # closed-form OLS covariance: C_beta[1,1] -> sigma^2 [(W^T W)^-1]_{11}
        rng = np.random.default_rng(7)
        n, sigma = 200, 0.7
        w = rng.normal(size=(n, 1))
        v = 1.0 + 2.0 * w[:, 0] + sigma * rng.normal(size=n)
        ds = CalibrationDataset(x=w, z=np.empty((n, 0)), y=v.reshape(-1, 1))
        basis = full_basis(ds, (), 1)
        caches = make_caches(ds, basis, 500, seed=8)
        ens = bootstrap_ensemble(ds, 0, [0, 1], caches)
        from senscalib.basis import design_matrix

        h = design_matrix(basis, ds.x, ds.z)
        oracle = sigma**2 * np.linalg.inv(h.T @ h)[1, 1]
        assert ens.c_beta[1, 1] == pytest.approx(oracle, rel=0.15)

    def test_needs_two_caches(self):
        ds = make_ds(n=20, seed=9)
        basis = full_basis(ds, (), 1)
        with pytest.raises(ValidationError):
            bootstrap_ensemble(ds, 0, [0, 1], [build_gram(np.arange(20), ds, basis)])


class TestVarianceObjective:
    def make_ensemble(self, betas, theta_sq, n_rows=100):
        return ensemble_from_fits(np.asarray(betas, float), np.asarray(theta_sq, float), n_rows)

    def test_zero_cbeta_collapses_to_model_error(self):
        betas = np.tile([1.0, 2.0], (10, 1))
        ens = self.make_ensemble(betas, np.full(10, 0.25))
        rep = variance_objective(np.array([1.0, 0.0]), np.zeros((2, 2)), ens)
        assert rep.v == pytest.approx(0.25)
        assert rep.term_estimation == 0.0
        assert rep.term_robustness == 0.0

    def test_bic_formula(self):
        # n=200, V=1, k=10 -> BIC = 10 log 200
        rng = np.random.default_rng(0)
        betas = rng.normal(size=(50, 10)) * 1e-9
        ens = ensemble_from_fits(betas, np.ones(50), n_rows=200)
        m_f = np.zeros(10)
        rep = variance_objective(m_f, np.zeros((10, 10)), ens)
        assert rep.v == pytest.approx(1.0, rel=1e-9)
        assert rep.bic == pytest.approx(10 * np.log(200), rel=1e-6)

    def test_bic_increases_with_k_at_fixed_v(self):
        rng = np.random.default_rng(1)
        reps = []
        for k in (2, 5, 9):
            betas = rng.normal(size=(40, k)) * 1e-12
            ens = ensemble_from_fits(betas, np.ones(40), n_rows=100)
            reps.append(variance_objective(np.zeros(k), np.zeros((k, k)), ens))
        bics = [r.bic for r in reps]
        assert bics[0] < bics[1] < bics[2]

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        k, b = 6, 80
        betas = rng.normal(size=(b, k))
        theta_sq = rng.uniform(0.1, 0.2, size=b)
        m_f = rng.normal(size=k)
        a = rng.normal(size=(k, k))
        c_f = a @ a.T
        ens = ensemble_from_fits(betas, theta_sq, 50)
        rep = variance_objective(m_f, c_f, ens)
        perm = rng.permutation(k)
        ens_p = ensemble_from_fits(betas[:, perm], theta_sq, 50)
        rep_p = variance_objective(m_f[perm], c_f[np.ix_(perm, perm)], ens_p)
        assert rep.v == pytest.approx(rep_p.v, rel=1e-8)
        assert rep.bic == pytest.approx(rep_p.bic, rel=1e-8)

    def test_terms_nonnegative(self):
        rng = np.random.default_rng(3)
        betas = rng.normal(size=(60, 4))
        ens = ensemble_from_fits(betas, rng.uniform(0, 0.1, 60), 80)
        a = rng.normal(size=(4, 4))
        rep = variance_objective(rng.normal(size=4), a @ a.T, ens)
        assert rep.term_estimation >= 0
        assert rep.term_model_error >= 0
        assert rep.term_robustness >= 0

    def test_nonpositive_variance_raises(self):
        betas = np.tile([1.0, 2.0], (10, 1))
        ens = self.make_ensemble(betas, np.zeros(10))
        with pytest.raises(NonpositiveVariance):
            variance_objective(np.array([1.0, 0.0]), np.zeros((2, 2)), ens)

    def test_appendix_identity_against_nested_mc(self):
        # nested-loop conditional-variance oracle on a linear-Gaussian case:
        # draw W from the training rows, draw (beta_b, theta_b xi) from the
        # ensemble, take Var over the inner draws, average over W
        rng = np.random.default_rng(11)
        n, b = 150, 400
        w = rng.normal(size=(n, 1))
        v = 0.5 + 1.5 * w[:, 0] + 0.4 * rng.normal(size=n)
        ds = CalibrationDataset(x=w, z=np.empty((n, 0)), y=v.reshape(-1, 1))
        basis = full_basis(ds, (), 1)
        caches = make_caches(ds, basis, b, seed=12)
        ens = bootstrap_ensemble(ds, 0, [0, 1], caches)
        m_f, c_f = f_moments(basis, ds)
        rep = variance_objective(m_f, c_f, ens)

        from senscalib.basis import design_matrix

        h = design_matrix(basis, ds.x, ds.z)
        n_outer = 100_000
        idx = rng.integers(0, n, n_outer)
        feats = h[idx]                            # W ~ empirical training rows
        preds = feats @ ens.betas.T               # (n_outer, B)
        xi = rng.standard_normal((n_outer, b))
        draws = preds + ens.thetas * xi
        oracle = draws.var(axis=1, ddof=1).mean()
        assert rep.v == pytest.approx(oracle, rel=0.10)
