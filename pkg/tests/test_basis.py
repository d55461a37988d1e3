from itertools import product
from math import comb

import numpy as np
import pytest

from senscalib import CalibrationDataset, evaluate, full_basis, partial_derivative
from senscalib.basis import design_derivative, design_matrix, enumerate_exponents
from senscalib.exceptions import DegenerateTerm, ValidationError


def brute_force_exponents(n_vars, degree):
    """Independent enumeration oracle: filter the full exponent lattice."""
    found = [e for e in product(range(degree + 1), repeat=n_vars) if sum(e) <= degree]
    return sorted(found, key=lambda e: (sum(e), e))


def make_ds(n=40, d_x=1, d_z=5, seed=0):
    rng = np.random.default_rng(seed)
    return CalibrationDataset(
        x=rng.normal(size=(n, d_x)),
        z=rng.normal(size=(n, d_z)),
        y=rng.normal(size=(n, 1)),
    )


class TestEnumeration:
    @pytest.mark.parametrize("n_vars,degree", [(1, 1), (2, 3), (6, 3), (5, 3), (3, 4)])
    def test_matches_brute_force(self, n_vars, degree):
        got = enumerate_exponents(n_vars, degree)
        want = brute_force_exponents(n_vars, degree)
        assert got.shape[0] == comb(n_vars + degree, degree)
        assert [tuple(row) for row in got] == want

    def test_count_84_for_benchmark(self):
        ds = make_ds(n=100)
        basis = full_basis(ds, (0, 1, 2, 3, 4), 3)
        assert basis.k == 84 == comb(9, 3)

    def test_count_56_for_two_targets(self):
        ds = make_ds(n=80, d_x=2, d_z=3)
        basis = full_basis(ds, (0, 1, 2), 3)
        assert basis.k == comb(8, 3) == 56

    def test_smallest_basis(self):
        ds = make_ds(d_z=0)
        basis = full_basis(ds, (), 1)
        assert basis.k == 2
        assert basis.exponents.tolist() == [[0], [1]]

    def test_constant_first_and_subset_keeps_order(self):
        ds = make_ds()
        basis = full_basis(ds, (0, 1), 2)
        assert np.all(basis.exponents[0] == 0)
        sub = basis.subset([0, 3, 5])
        np.testing.assert_array_equal(sub.exponents[0], basis.exponents[0])
        np.testing.assert_array_equal(sub.exponents[1], basis.exponents[3])
        np.testing.assert_array_equal(sub.exponents[2], basis.exponents[5])

    def test_subset_requires_constant(self):
        ds = make_ds()
        basis = full_basis(ds, (0,), 2)
        with pytest.raises(ValidationError):
            basis.subset([1, 2])

    def test_degenerate_column_raises(self):
        ds = CalibrationDataset(
            x=np.ones((10, 1)),  # constant target column
            z=np.random.default_rng(0).normal(size=(10, 1)),
            y=np.zeros((10, 1)),
        )
        with pytest.raises(DegenerateTerm):
            full_basis(ds, (0,), 2)


class TestEvaluate:
    def test_constant_only(self):
        ds = make_ds(d_z=0)
        basis = full_basis(ds, (), 1).subset([0])
        np.testing.assert_allclose(evaluate(basis, [0.3], []), [1.0])

    def test_affine_rule(self):
        ds = make_ds(d_z=0)
        basis = full_basis(ds, (), 1)
        # forge stats: mean 0, std 2 on the linear term
        forged = type(basis)(
            alpha=basis.alpha, degree=basis.degree, d_x=basis.d_x,
            exponents=basis.exponents,
            norm_mean=np.array([0.0, 0.0]), norm_std=np.array([1.0, 2.0]),
            var_names=basis.var_names,
        )
        np.testing.assert_allclose(evaluate(forged, [4.0], []), [1.0, 2.0])

    def test_design_matrix_is_normalized_on_train(self):
        ds = make_ds(n=60)
        basis = full_basis(ds, (0, 1, 2), 3)
        h = design_matrix(basis, ds.x, ds.z)
        np.testing.assert_allclose(h[:, 0], 1.0)
        np.testing.assert_allclose(h[:, 1:].mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(h[:, 1:].std(axis=0), 1.0, atol=1e-12)


class TestDerivative:
    def test_linear_term(self):
        ds = make_ds(d_z=0)
        basis = full_basis(ds, (), 1)
        sx = basis.norm_std[1]
        np.testing.assert_allclose(
            partial_derivative(basis, 0, [0.7], []), [0.0, 1.0 / sx]
        )

    def test_power_rule_x_squared(self):
        ds = make_ds(d_z=0)
        basis = full_basis(ds, (), 3)
        row = next(i for i, e in enumerate(basis.exponents) if e[0] == 2)
        d = partial_derivative(basis, 0, [3.0], [])
        assert d[row] == pytest.approx(6.0 / basis.norm_std[row])

    def test_against_central_differences(self):
        # finite-difference oracle, h = 1e-6, relative 1e-6
        ds = make_ds(n=60, d_x=2, d_z=3, seed=3)
        basis = full_basis(ds, (0, 2), 3)
        rng = np.random.default_rng(42)
        h = 1e-6
        for _ in range(50):
            x = rng.uniform(-2, 2, size=2)
            z = rng.uniform(-2, 2, size=3)
            for j in range(2):
                xp, xm = x.copy(), x.copy()
                xp[j] += h
                xm[j] -= h
                fd = (evaluate(basis, xp, z) - evaluate(basis, xm, z)) / (2 * h)
                an = partial_derivative(basis, j, x, z)
                np.testing.assert_allclose(an, fd, rtol=1e-6, atol=1e-6)

    def test_rejects_non_target_index(self):
        ds = make_ds()
        basis = full_basis(ds, (0,), 2)
        with pytest.raises(ValidationError):
            design_derivative(basis, 1, ds.x, ds.z)
