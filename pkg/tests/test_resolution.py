import numpy as np
import pytest

from senscalib import CalibrationDataset, fit, full_basis, resolution_curve
from senscalib.exceptions import ValidationError, ZeroModelError


def linear_model(slope=2.0, theta=0.3, n=120, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, size=(n, 1))
    z = rng.uniform(-2, 2, size=(n, 1))
    y = slope * x[:, 0] + 0.5 * z[:, 0] + theta * rng.normal(size=n)
    ds = CalibrationDataset(x=x, z=z, y=y.reshape(-1, 1))
    model = fit(ds, 0, full_basis(ds, (0,), 1))
    return model, ds


class TestResolutionCurve:
    def test_linear_model_constant_curve_matches_analytic(self):
        # Var_zeta = slope^2 delta^2 -> delta = sqrt(k * theta) / |slope|
        model, ds = linear_model()
        curve = resolution_curve(model, ds, j=0, level=3.0, grid_points=7,
                                 n_outer=500, n_inner=20, seed=1)
        # recover the raw-x slope from the normalized x coefficient
        x_row = next(i for i, e in enumerate(model.basis.exponents)
                     if e[0] == 1 and e.sum() == 1)
        slope = model.beta[x_row] / model.basis.norm_std[x_row]
        expected = np.sqrt(3.0 * model.theta) / abs(slope)
        np.testing.assert_allclose(curve.delta, expected, rtol=0.02)
        # every point within 2% of one constant bounds the spread by 4%
        spread = curve.delta.max() - curve.delta.min()
        assert spread < 0.04 * expected

    def test_absent_variable_gives_infinity(self):
        # model fitted with z1 in the basis but data has zero z1 effect:
        # force a model whose z-coefficients are exactly zero
        model, ds = linear_model()
        beta = model.beta.copy()
        z_cols = [i for i, e in enumerate(model.basis.exponents) if e[1] > 0]
        beta[z_cols] = 0.0
        model = type(model)(**{**model.__dict__, "beta": beta})
        curve = resolution_curve(model, ds, j=1, level=3.0, grid_points=3,
                                 n_outer=200, n_inner=10, seed=2)
        assert np.all(np.isinf(curve.delta))

    def test_zero_theta_warns_and_returns_zeros(self):
        model, ds = linear_model()
        model = type(model)(**{**model.__dict__, "theta": 0.0})
        with pytest.warns(ZeroModelError):
            curve = resolution_curve(model, ds, j=0, grid_points=3, seed=3)
        np.testing.assert_array_equal(curve.delta, 0.0)

    def test_reseeding_stability(self):
        model, ds = linear_model(theta=0.2)
        curves = [
            resolution_curve(model, ds, j=0, grid_points=3, n_outer=400,
                             n_inner=16, seed=s).delta
            for s in (10, 11, 12)
        ]
        stack = np.stack(curves)
        spread = stack.std(axis=0)
        # replicate spread stays within a few MC standard errors
        assert np.all(spread / stack.mean(axis=0) < 0.05)

    def test_grid_must_increase(self):
        model, ds = linear_model()
        with pytest.raises(ValidationError):
            resolution_curve(model, ds, j=0, grid=np.array([0.0, 0.0, 1.0]))

    def test_bad_index_rejected(self):
        model, ds = linear_model()
        with pytest.raises(ValidationError):
            resolution_curve(model, ds, j=5)

    def test_metadata(self):
        model, ds = linear_model()
        curve = resolution_curve(model, ds, j=1, level=2.0, grid_points=3,
                                 n_outer=100, n_inner=8, seed=4)
        assert curve.variable == "z1"
        assert curve.level == 2.0
        assert "theta" in curve.threshold_note
