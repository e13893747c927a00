"""Analytic primitives: gauge, dilations, bubble, finite-difference operator."""

import math

import numpy as np
import pytest

from crflow.heisenberg import (
    KAPPA_DELTA,
    ORIGIN,
    BubbleSpec,
    HeisenbergPoint,
    bubble_residual,
    bubble_value,
    calibrate_kappa_delta,
    continuum_sublaplacian,
    dilate,
    koranyi_gauge,
)


def rand_points(rng, count, scale=2.0):
    pts = []
    for _ in range(count):
        z = complex(rng.uniform(-scale, scale), rng.uniform(-scale, scale))
        pts.append(HeisenbergPoint(z, rng.uniform(-scale**2, scale**2)))
    return pts


class TestGauge:
    def test_origin(self):
        assert koranyi_gauge(ORIGIN) == 0.0

    def test_unit_point(self):
        assert koranyi_gauge(HeisenbergPoint(1 + 0j, 0.0)) == 1.0

    def test_plugin_value(self):
        # |z|^4 = |1+i|^4 = 4, so rho = (9 + 4)^{1/4}
        p = HeisenbergPoint(1 + 1j, 3.0)
        assert koranyi_gauge(p) == pytest.approx(13.0**0.25, rel=1e-15)

    def test_homogeneity(self):
        rng = np.random.default_rng(3)
        for p in rand_points(rng, 20):
            delta = rng.uniform(0.1, 10.0)
            assert koranyi_gauge(dilate(delta, p)) == pytest.approx(
                delta * koranyi_gauge(p), rel=1e-12
            )

    def test_positive_away_from_origin(self):
        assert koranyi_gauge(HeisenbergPoint(0j, 1e-8)) > 0.0


class TestDilate:
    def test_identity(self):
        p = HeisenbergPoint(0.3 + 0.4j, -0.7)
        q = dilate(1.0, p)
        assert q.z == p.z and q.s == p.s

    def test_formula(self):
        q = dilate(2.0, HeisenbergPoint(1 + 0j, 1.0))
        assert q.z == 2.0 and q.s == 4.0

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            dilate(0.0, ORIGIN)
        with pytest.raises(ValueError):
            dilate(-1.0, ORIGIN)


class TestBubble:
    def test_center_value(self):
        assert bubble_value(BubbleSpec(), ORIGIN) == pytest.approx(1.0, rel=1e-15)

    def test_axis_value(self):
        val = bubble_value(BubbleSpec(), HeisenbergPoint(0j, 1.0))
        assert val == pytest.approx(2.0**-0.5, rel=1e-14)

    def test_dilation_covariance_exact(self):
        # delta^n U^mu(T_delta p) = U^{mu/delta}(p), exact to rounding
        rng = np.random.default_rng(11)
        for p in rand_points(rng, 30):
            delta = rng.uniform(0.2, 5.0)
            mu = rng.uniform(0.2, 5.0)
            lhs = delta * bubble_value(BubbleSpec(scale=mu), dilate(delta, p))
            rhs = bubble_value(BubbleSpec(scale=mu / delta), p)
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))

    def test_positivity_and_decay(self):
        rng = np.random.default_rng(5)
        mu = 1.7
        spec = BubbleSpec(scale=mu)
        for _ in range(10):
            # points at gauge >= 1e3: U * gauge^{2n} -> mu^n within 1%
            direction = rng.uniform(0.2, 1.0)
            rho = rng.uniform(1e3, 1e4)
            p = HeisenbergPoint(complex(rho * direction**0.5, 0.0),
                                (rho**4 * (1 - direction**2)) ** 0.5)
            val = bubble_value(spec, p)
            assert val > 0.0
            assert val * koranyi_gauge(p) ** 2 == pytest.approx(mu, rel=0.01)

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            BubbleSpec(scale=0.0)
        with pytest.raises(ValueError):
            BubbleSpec(dimension=0)


class TestContinuumSublaplacian:
    def test_constant_kernel(self):
        val = continuum_sublaplacian(lambda p: 3.5, HeisenbergPoint(0.3 + 1j, 0.2), 1e-3)
        assert abs(val) < 1e-8

    def test_x_squared(self):
        # X^2 x^2 = 2, Y^2 x^2 = 0, so Delta x^2 = 2 kappa everywhere
        rng = np.random.default_rng(7)
        for p in rand_points(rng, 5):
            val = continuum_sublaplacian(lambda q: q.z.real**2, p, 1e-4)
            assert val == pytest.approx(2.0 * KAPPA_DELTA, abs=1e-6)

    def test_bubble_residual_second_order(self):
        rng = np.random.default_rng(19)
        pts = rand_points(rng, 10, scale=1.2)
        spec = BubbleSpec(scale=1.3)
        hs = (2e-2, 1e-2, 5e-3)
        maxres = [max(abs(bubble_residual(spec, p, h)) for p in pts) for h in hs]
        assert maxres[0] / maxres[1] >= 3.5
        assert maxres[1] / maxres[2] >= 3.5

    def test_calibration_recovers_kappa(self):
        assert calibrate_kappa_delta() == pytest.approx(KAPPA_DELTA, rel=1e-6)
