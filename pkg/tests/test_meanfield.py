import math

import numpy as np
import pytest
from scipy.stats import poisson

from mfhawkes.grids import NumericsError, uniform_grid
from mfhawkes.meanfield import (MeanPath, MeasureFlow, flux_balance_residual,
                                lawbar, mean_field_law, solve_mean_limit,
                                solve_perturbed_law)
from mfhawkes.model import (AffineClippedRate, ConstantRate, ExponentialKernel,
                            ModelSpec, PiecewiseLinearKernel)
from mfhawkes.tilt import TiltField

BENCH = ModelSpec(ExponentialKernel(1.0, 1.0, 0.9), AffineClippedRate(1.0, 1.0), 0.9)
CONST = ModelSpec(ExponentialKernel(1.0, 1.0, 1.0), ConstantRate(1.0), 1.0)


def test_constant_rate_mean_is_linear():
    m = solve_mean_limit(ModelSpec(ExponentialKernel(1.0, 1.0, 1.0), ConstantRate(2.0), 1.0), 0.01)
    assert np.allclose(m.values, 2.0 * m.times, atol=1e-12)


def test_volterra_benchmark_closed_form():
    # with phi(x) = 1+x and h(t) = e^{-t} the limit mean solves m = t + t^2/2
    m = solve_mean_limit(BENCH, 0.9e-3)
    assert abs(m.values[-1] - 1.305) < 1e-4
    exact = m.times + 0.5 * m.times ** 2
    assert np.max(np.abs(m.values - exact)) < 1e-4


def test_volterra_convergence_order_two():
    # scheme choice: trapezoid quadrature both for the excitation integral
    # and the outer fixed point, observed order ~2 under grid halving
    errors = []
    for dt in (0.9e-3, 0.45e-3, 0.225e-3):
        m = solve_mean_limit(BENCH, dt)
        errors.append(abs(m.values[-1] - 1.305))
    order1 = math.log2(errors[0] / errors[1])
    order2 = math.log2(errors[1] / errors[2])
    assert 1.7 < order1 < 2.3
    assert 1.7 < order2 < 2.3


def test_picard_contraction_ratio():
    m = solve_mean_limit(BENCH, 0.9e-3)
    changes = m.meta["sup_changes"]
    bound = BENCH.stability_product + 0.05
    ratios = [b / a for a, b in zip(changes, changes[1:]) if a > 1e-14]
    assert all(r <= bound for r in ratios)


def test_solver_guards():
    with pytest.raises(ValueError):
        solve_mean_limit(BENCH, 0.2)          # dt > T/10
    with pytest.raises(NumericsError):
        solve_mean_limit(BENCH, 0.9e-3, max_iter=2)


def test_mean_field_law_values():
    zero = MeanPath(uniform_grid(1.0, 0.1), np.zeros(11))
    law = mean_field_law(zero, 5)
    assert np.allclose(law.pmf[:, 0], 1.0)
    assert np.allclose(law.pmf[:, 1:], 0.0)

    m = solve_mean_limit(BENCH, 0.9e-3)
    law = mean_field_law(m, 40)
    assert law.pmf[-1, 0] == pytest.approx(math.exp(-m.values[-1]), abs=1e-12)
    assert law.pmf[-1, 0] == pytest.approx(0.2712, abs=2e-4)
    assert np.max(np.abs(law.means() - m.values)) < 1e-10
    assert law.membership_violation() is None


def test_mean_field_law_deficit_error():
    m = solve_mean_limit(BENCH, 0.9e-3)
    with pytest.raises(NumericsError, match="n_max"):
        mean_field_law(m, 2)


def test_perturbed_zero_tilt_recovers_limit():
    tilt = TiltField.zeros(0.9, 0.9, 0)
    flow = solve_perturbed_law(BENCH, tilt, dt=0.9e-3, n_max=40)
    ref = mean_field_law(solve_mean_limit(BENCH, 0.9e-3), 40)
    assert np.max(np.abs(flow.pmf - ref.pmf)) < 1e-6


def test_perturbed_constant_tilt_poisson():
    # state-independent intensity e^kappa for a constant rate: Poisson(e^k t)
    kappa = math.log(2.0)
    tilt = TiltField.constant(kappa, 1.0, 1.0, 0)
    flow = solve_perturbed_law(CONST, tilt, dt=1e-3, n_max=40)
    exact = poisson.pmf(np.arange(41)[None, :], (math.exp(kappa) * flow.times)[:, None])
    assert np.max(np.abs(flow.pmf - exact)) < 1e-8
    assert flow.membership_violation() is None


def test_perturbed_mass_conservation():
    tilt = TiltField.from_function(lambda t, x: 0.4 * (x <= 1), 0.9, 0.09, 10)
    flow = solve_perturbed_law(BENCH, tilt, dt=0.9e-3, n_max=40)
    row_sums = flow.pmf.sum(axis=1)
    assert abs(row_sums[-1] + flow.meta["leak"] - 1.0) < 1e-12
    assert np.max(np.abs(np.diff(row_sums))) < 1e-8 * 0.9e-3 + flow.meta["leak"] + 1e-12


def test_perturbed_flux_balance():
    tilt = TiltField.from_function(lambda t, x: 0.4 * (x <= 1) - 0.2 * (t > 0.45), 0.9, 0.09, 10)
    flow = solve_perturbed_law(BENCH, tilt, dt=0.9e-3, n_max=40)
    assert flux_balance_residual(flow, BENCH, tilt) < 1e-6
    zero = TiltField.zeros(0.9, 0.9, 0)
    flow0 = solve_perturbed_law(BENCH, zero, dt=0.9e-3, n_max=40)
    assert flux_balance_residual(flow0, BENCH, zero) < 1e-6


def test_perturbed_instability_reported():
    # a huge constant tilt makes the explicit stepper blow up at coarse dt
    tilt = TiltField.constant(6.0, 0.9, 0.9, 0)
    with pytest.raises(NumericsError):
        solve_perturbed_law(BENCH, tilt, dt=0.09, n_max=30)


def test_perturbed_deficit_error():
    tilt = TiltField.constant(1.0, 0.9, 0.9, 0)
    with pytest.raises(NumericsError, match="n_max"):
        solve_perturbed_law(BENCH, tilt, dt=0.9e-3, n_max=3)


def test_lawbar_properties():
    grid = uniform_grid(1.0, 0.1)
    delta0 = MeasureFlow(grid, np.tile(np.eye(6)[0], (11, 1)))
    assert np.allclose(lawbar(delta0).values, 0.0)

    m = solve_mean_limit(BENCH, 0.9e-3)
    law = mean_field_law(m, 40)
    lb = lawbar(law)
    assert np.max(np.abs(lb.values - m.values)) < 1e-9
    assert lb.is_nondecreasing()


def test_measure_flow_membership_checks():
    grid = uniform_grid(1.0, 0.5)
    bad_start = MeasureFlow(grid, np.array([[0.5, 0.5], [1.0, 0.0], [1.0, 0.0]]))
    assert bad_start.membership_violation() is not None
    downward = MeasureFlow(grid, np.array([[1.0, 0.0], [0.2, 0.8], [0.7, 0.3]]))
    assert "downward" in downward.membership_violation()
    ok = MeasureFlow(grid, np.array([[1.0, 0.0], [0.6, 0.4], [0.1, 0.9]]))
    assert ok.membership_violation() is None


def test_zero_kernel_limit():
    kernel = PiecewiseLinearKernel(((0.0, 0.0), (1.0, 0.0)), 1.0)
    m = solve_mean_limit(ModelSpec(kernel, AffineClippedRate(2.0, 1.0), 1.0), 1e-2)
    assert np.allclose(m.values, 2.0 * m.times, atol=1e-12)
