import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfhawkes.model import (AffineClippedRate, AssumptionError, ConstantRate,
                            ExponentialKernel, ModelSpec,
                            PiecewiseLinearKernel, SigmoidalRate, eval_kernel,
                            kernel_l1, model_from_config, validate_model)

TRIANGLE = PiecewiseLinearKernel(((0.0, 1.0), (1.0, 0.0)), horizon=2.0)


def test_eval_kernel_examples():
    assert eval_kernel(ExponentialKernel(1.0, 1.0, 1.0), 0.0) == 1.0
    assert eval_kernel(ExponentialKernel(2.0, 3.0, 1.0), 0.0) == 3.0
    assert eval_kernel(TRIANGLE, 0.5) == 0.5


def test_eval_kernel_domain():
    with pytest.raises(ValueError):
        eval_kernel(ExponentialKernel(1.0, 1.0, 1.0), -0.1)
    with pytest.raises(ValueError):
        eval_kernel(ExponentialKernel(1.0, 1.0, 1.0), 1.5)


def test_kernel_l1_closed_forms():
    # full mass of a unit exponential over a long window
    assert kernel_l1(ExponentialKernel(1.0, 1.0, 50.0), 50.0) == pytest.approx(1.0, abs=1e-12)
    # antiderivative of e^{-t} over [0, 0.9]
    assert kernel_l1(ExponentialKernel(1.0, 1.0, 1.0), 0.9) == pytest.approx(1.0 - math.exp(-0.9), abs=1e-12)
    # triangle area
    assert kernel_l1(TRIANGLE, 1.0) == pytest.approx(0.5, abs=1e-12)
    assert kernel_l1(TRIANGLE, 2.0) == pytest.approx(0.5, abs=1e-12)  # zero past support
    assert kernel_l1(TRIANGLE, 0.5) == pytest.approx(0.375, abs=1e-12)


@pytest.mark.parametrize("kernel", [
    ExponentialKernel(1.0, 1.0, 2.0),
    ExponentialKernel(2.5, 0.7, 2.0),
    ExponentialKernel(0.0, 0.4, 2.0),
    TRIANGLE,
    PiecewiseLinearKernel(((0.0, 0.2), (0.5, 1.0), (1.5, 0.3), (1.8, 0.0)), horizon=2.0),
])
def test_kernel_l1_matches_quadrature(kernel):
    ts = np.arange(0.0, 2.0 + 1e-4, 1e-4)
    numeric = np.trapezoid(kernel.value(ts), ts)
    exact = kernel_l1(kernel, 2.0)
    assert exact == pytest.approx(numeric, rel=1e-6)


def test_kernel_deriv_bound():
    assert ExponentialKernel(2.0, 3.0, 1.0).deriv_sup == 6.0
    assert TRIANGLE.deriv_sup == 1.0


def test_rate_floors_and_lipschitz():
    assert ConstantRate(2.0).lipschitz == 0.0
    assert ConstantRate(2.0).floor == 2.0
    r = AffineClippedRate(1.0, 1.5)
    assert r.lipschitz == 1.5
    assert r.floor == 1.0            # defaults to a
    r2 = AffineClippedRate(-1.0, 2.0, floor_value=0.25)
    assert r2.floor == 0.25
    s = SigmoidalRate(0.5, 2.5, slope=2.0, center=1.0)
    assert s.lipschitz == pytest.approx((2.5 - 0.5) * 2.0 / 4.0)
    assert s.floor == pytest.approx(s.value(0.0))


@pytest.mark.parametrize("rate", [
    ConstantRate(1.3),
    AffineClippedRate(1.0, 1.0),
    AffineClippedRate(-0.5, 0.8, floor_value=0.2),
    SigmoidalRate(0.5, 2.5, slope=2.0, center=1.0),
])
def test_rate_floor_and_lipschitz_sampled(rate):
    rng = np.random.default_rng(0)
    xs = rng.uniform(0.0, 50.0, size=10_000)
    ys = rng.uniform(0.0, 50.0, size=10_000)
    vx, vy = rate.value(xs), rate.value(ys)
    assert np.all(vx >= rate.floor - 1e-12)
    assert np.all(np.abs(vx - vy) <= rate.lipschitz * np.abs(xs - ys) + 1e-12)


@given(st.floats(0.0, 100.0), st.floats(0.0, 100.0))
@settings(max_examples=200)
def test_affine_rate_lipschitz_property(x, y):
    rate = AffineClippedRate(0.5, 2.0, floor_value=0.3)
    assert abs(rate.value(x) - rate.value(y)) <= 2.0 * abs(x - y) + 1e-12
    assert rate.value(x) >= rate.floor


def test_validate_model_examples():
    # constant rate: zero lipschitz, any kernel passes
    report = validate_model(ModelSpec(ExponentialKernel(1.0, 1.0, 50.0), ConstantRate(1.0), 50.0))
    assert report.passed
    assert report.check("subcriticality").value == 0.0

    m = ModelSpec(ExponentialKernel(1.0, 1.0, 0.9), AffineClippedRate(1.0, 1.0), 0.9)
    report = validate_model(m)
    assert report.passed
    assert report.check("subcriticality").value == pytest.approx(0.5934, abs=1e-3)

    bad = ModelSpec(ExponentialKernel(1.0, 1.0, 50.0), AffineClippedRate(1.0, 2.0), 50.0)
    report = validate_model(bad)
    assert not report.passed
    assert not report.check("subcriticality").passed
    assert report.check("subcriticality").value == pytest.approx(2.0, abs=1e-3)
    with pytest.raises(AssumptionError, match="subcriticality"):
        bad.require_valid()


def test_validate_model_floor_and_kernel_sign():
    no_floor = ModelSpec(ExponentialKernel(1.0, 0.1, 1.0),
                         AffineClippedRate(0.0, 0.5, floor_value=0.0), 1.0)
    report = validate_model(no_floor)
    assert not report.check("intensity_floor").passed

    signed = ModelSpec(PiecewiseLinearKernel(((0.0, 1.0), (1.0, -0.5)), 1.0),
                       ConstantRate(1.0), 1.0)
    assert not validate_model(signed).check("kernel_regularity").passed


def test_model_config_round_trip():
    m = ModelSpec(ExponentialKernel(1.5, 0.8, 0.9), AffineClippedRate(1.0, 1.0), 0.9)
    assert model_from_config(m.to_config()) == m
    m2 = ModelSpec(PiecewiseLinearKernel(((0.0, 1.0), (1.0, 0.0)), 2.0),
                   SigmoidalRate(0.5, 2.0, 1.0, 0.3), 1.0)
    assert model_from_config(m2.to_config()) == m2
