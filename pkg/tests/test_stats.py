import numpy as np
import pytest

from ecodyn.stats import ols, standardize


class TestOls:
    def test_exact_line_recovery(self):
        x = np.linspace(-3, 5, 20)
        design = np.column_stack([np.ones_like(x), x])
        res = ols(design, 2.0 * x + 1.0, names=("intercept", "x"))
        assert res.coefficients == pytest.approx([1.0, 2.0], abs=1e-10)
        assert res.r_squared == pytest.approx(1.0, abs=1e-10)

    def test_orthogonal_predictor_gets_zero_slope(self):
        x = np.array([-1.0, 1.0, -1.0, 1.0])
        y = np.array([1.0, 1.0, -1.0, -1.0])
        res = ols(np.column_stack([np.ones(4), x]), y)
        assert res.coefficients[1] == pytest.approx(0.0, abs=1e-12)

    def test_residuals_orthogonal_to_design(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(40, 3))
        design = np.column_stack([np.ones(40), x])
        y = rng.normal(size=40)
        res = ols(design, y)
        resid = y - design @ res.coefficients
        assert np.abs(design.T @ resid).max() < 1e-10

    def test_monte_carlo_slope_recovery(self):
        # slope 0.9 with n = 69; the estimate should land within three
        # standard errors in at least 99% of seeded replications
        hits = 0
        n_rep = 1000
        for rep in range(n_rep):
            rng = np.random.default_rng(1000 + rep)
            x = rng.normal(size=69)
            y = 0.1 + 0.9 * x + rng.normal(scale=0.5, size=69)
            res = ols(np.column_stack([np.ones(69), x]), y)
            if abs(res.coefficients[1] - 0.9) <= 3.0 * res.standard_errors[1]:
                hits += 1
        assert hits >= 0.99 * n_rep

    def test_standardized_regression_has_zero_intercept(self):
        rng = np.random.default_rng(2)
        x = standardize(rng.normal(size=50))
        y = standardize(0.4 * x + rng.normal(size=50))
        res = ols(np.column_stack([np.ones(50), x]), y)
        assert res.coefficients[0] == pytest.approx(0.0, abs=1e-12)

    def test_rank_deficiency_names_offenders(self):
        x = np.linspace(0, 1, 10)
        design = np.column_stack([np.ones(10), x, 2.0 * x])
        with pytest.raises(ValueError, match="rank deficient"):
            ols(design, x, names=("intercept", "a", "a_twice"))

    def test_needs_more_observations_than_predictors(self):
        with pytest.raises(ValueError):
            ols(np.ones((3, 3)), np.ones(3))

    def test_p_values_sane_for_strong_signal(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=200)
        y = 3.0 * x + rng.normal(scale=0.1, size=200)
        res = ols(np.column_stack([np.ones(200), x]), y)
        assert res.p_values[1] < 1e-10
        assert res.p_values[0] > 0.01


class TestStandardize:
    def test_reference_vector(self):
        assert standardize([1, 2, 3]) == pytest.approx([-1.0, 0.0, 1.0])

    def test_zero_mean_unit_std(self):
        rng = np.random.default_rng(4)
        v = rng.normal(3.0, 2.5, size=101)
        z = standardize(v)
        assert abs(z.mean()) < 1e-12
        assert z.std(ddof=1) == pytest.approx(1.0)

    def test_affine_invariance_up_to_sign(self):
        rng = np.random.default_rng(5)
        v = rng.normal(size=30)
        z = standardize(v)
        assert standardize(3.0 * v - 7.0) == pytest.approx(z)
        assert standardize(-2.0 * v + 1.0) == pytest.approx(-z)

    def test_constant_vector_rejected(self):
        with pytest.raises(ValueError):
            standardize([2.0, 2.0, 2.0])
