"""Curvature, normalization factor, stepping, and run-level diagnostics."""

import math

import numpy as np
import pytest

from crflow import flow
from crflow.flow import (
    FlowState,
    ProjectionInfeasibleError,
    StepSizeError,
    diagnostics,
    dt_stability,
    lambda_of,
    necessity_identities,
    normalize_to_constraint,
    step,
    webster_scalar,
)
from crflow.manifold import build_model


@pytest.fixture(scope="module")
def flat16():
    return build_model(16, 16, 16)


@pytest.fixture(scope="module")
def positive16():
    return build_model(16, 16, 16, yamabe_sign="positive", r0=2.0)


def constant_state(model, f, c=None):
    u = np.ones(model.shape) if c is None else np.full(model.shape, c)
    return FlowState(model, normalize_to_constraint(model, u, f), f)


class TestWebsterScalar:
    def test_flat_constant(self, flat16):
        R = webster_scalar(flat16, np.full(flat16.shape, 2.3))
        assert np.max(np.abs(R)) < 1e-12

    def test_synthetic_constant(self, positive16):
        c = 1.7
        R = webster_scalar(positive16, np.full(positive16.shape, c))
        assert np.allclose(R, 2.0 * c ** (-2.0 / positive16.n), atol=1e-12)

    def test_conformal_covariance(self, positive16):
        rng = np.random.default_rng(5)
        u = 1.0 + 0.3 * rng.uniform(size=positive16.shape)
        c = 1.9
        lhs = webster_scalar(positive16, c * u)
        rhs = c ** (-2.0 / positive16.n) * webster_scalar(positive16, u)
        assert np.allclose(lhs, rhs, rtol=1e-12)

    def test_rejects_nonpositive(self, flat16):
        u = np.ones(flat16.shape)
        u[2, 2, 2] = -1.0
        with pytest.raises(ValueError):
            webster_scalar(flat16, u)


class TestLambda:
    def test_flat_yamabe_zero(self, flat16):
        f = np.ones(flat16.shape)
        assert lambda_of(flat16, np.full(flat16.shape, 0.8), f) == pytest.approx(0.0, abs=1e-12)

    def test_synthetic_constant(self, positive16):
        f = np.ones(positive16.shape)
        c = 1.3
        assert lambda_of(positive16, np.full(positive16.shape, c), f) == pytest.approx(
            2.0 * c ** (-2.0 / positive16.n), rel=1e-12
        )

    def test_scaling_law(self, positive16):
        rng = np.random.default_rng(8)
        f = 1.0 + 0.2 * rng.uniform(size=positive16.shape)
        u = 1.0 + 0.4 * rng.uniform(size=positive16.shape)
        c = 2.4
        assert lambda_of(positive16, c * u, f) == pytest.approx(
            c ** (-2.0 / positive16.n) * lambda_of(positive16, u, f), rel=1e-12
        )


class TestStep:
    def test_stationary_fixed_point(self, flat16):
        # f == 1, flat, constant u: R == 0 == lambda f, projection beta = 1
        f = np.ones(flat16.shape)
        st = constant_state(flat16, f)
        new = step(st, 1e-4)
        assert np.allclose(new.u, st.u, rtol=1e-14)

    def test_uniform_euler_projection(self, positive16):
        # constants commute with the update: the result is again the
        # constraint-normalized constant
        f = np.ones(positive16.shape)
        st = constant_state(positive16, f)
        new = step(st, 1e-4)
        assert np.max(new.u) - np.min(new.u) < 1e-14
        assert abs(new.constraint_defect) < 1e-12

    def test_constraint_projection_exact(self, flat16):
        rng = np.random.default_rng(13)
        f = 1.0 + 0.3 * rng.uniform(size=flat16.shape)
        u = 1.0 + 0.4 * rng.uniform(size=flat16.shape)
        st = FlowState(flat16, normalize_to_constraint(flat16, u, f), f)
        for _ in range(5):
            st = step(st, dt_stability(st))
            assert abs(st.constraint_defect) <= 1e-12

    def test_positivity_guard(self, flat16):
        rng = np.random.default_rng(14)
        f = np.ones(flat16.shape)
        u = 1.0 + 0.9 * rng.uniform(size=flat16.shape)
        st = FlowState(flat16, normalize_to_constraint(flat16, u, f), f)
        with pytest.raises(StepSizeError):
            step(st, 1e3)

    def test_projection_infeasible_error(self, flat16):
        f = -np.ones(flat16.shape)
        with pytest.raises(ProjectionInfeasibleError):
            normalize_to_constraint(flat16, np.ones(flat16.shape), f)

    def test_energy_decrease_and_dissipation_rate(self):
        # Richardson in dt: the measured -dE/dt approaches n*F2 at first order
        model = build_model(16, 16, 16)
        rng = np.random.default_rng(15)
        f = 1.0 + 0.2 * np.cos(2 * np.pi * np.broadcast_to(model.y, model.shape))
        u = 1.0 + 0.25 * rng.uniform(size=model.shape)
        st0 = FlowState(model, normalize_to_constraint(model, u, f), f)
        base_dt = dt_stability(st0, c_cfl=0.2)
        errs = []
        for fac in (1.0, 0.5, 0.25):
            dt = base_dt * fac
            new = step(st0, dt)
            rate = -(new.energy() - st0.energy()) / dt
            target = model.n * st0.fp_norm(2.0)
            errs.append(abs(rate / target - 1.0))
            assert new.energy() <= st0.energy()
        assert errs[-1] < 0.05
        assert errs[0] > errs[-1]


class TestDiagnostics:
    def test_constant_flat(self, flat16):
        f = np.ones(flat16.shape)
        st = constant_state(flat16, f)
        d = diagnostics(st)
        assert d.energy == pytest.approx(0.0, abs=1e-10)
        assert d.dissipation == pytest.approx(0.0, abs=1e-10)
        assert d.F2 == pytest.approx(0.0, abs=1e-10)
        assert d.volume > 0

    def test_energy_operator_identity(self, positive16):
        # E = int R u^{2+2/n} dv equals the quadratic form of the conformal
        # operator by discrete self-adjointness
        rng = np.random.default_rng(16)
        f = np.ones(positive16.shape)
        u = 1.0 + 0.3 * rng.uniform(size=positive16.shape)
        st = FlowState(positive16, u, f)
        quad_form = positive16.inner(u, positive16.conformal_sublaplacian(u))
        assert st.energy() == pytest.approx(quad_form, rel=1e-12)

    def test_energy_lambda_gap_bound(self, positive16):
        # |E - lambda| <= sqrt(F2 * vol): Cauchy-Schwarz with the unit
        # constraint, discretely exact up to rounding
        rng = np.random.default_rng(17)
        f = 1.0 + 0.1 * rng.uniform(size=positive16.shape)
        u = 1.0 + 0.3 * rng.uniform(size=positive16.shape)
        st = FlowState(positive16, normalize_to_constraint(positive16, u, f), f)
        d = diagnostics(st)
        assert abs(d.energy - d.lam) <= math.sqrt(d.F2 * d.volume) + 1e-10


class TestRun:
    def test_yamabe_converges_immediately(self, flat16):
        f = np.ones(flat16.shape)
        st = constant_state(flat16, f)
        res = flow.run(st, t_max=1.0, tol_converged=1e-6)
        assert res.classification == "converged"
        assert res.final_state.t == 0.0

    def test_short_run_invariants(self):
        model = build_model(16, 16, 16)
        y = np.broadcast_to(model.y, model.shape)
        f = np.cos(2 * np.pi * y) - 0.05
        rng = np.random.default_rng(19)
        # f-correlated profile keeps int f u^4 dv positive
        u = 1.2 + 0.5 * np.cos(2 * np.pi * y) + 0.05 * rng.uniform(size=model.shape)
        st = FlowState(model, normalize_to_constraint(model, u, f), f)
        res = flow.run(st, t_max=0.05, c_cfl=0.5, tol_converged=1e-30, sample_interval=0.01)
        assert res.classification == "timeout"
        assert np.max(np.abs(res.step_defect)) <= 1e-12
        assert np.max(np.diff(res.step_energy)) <= 1e-10
        # volume floor: vol >= 1/sup f (mechanical from the constraint)
        assert np.all(res.step_volume >= 1.0 / float(np.max(f)) - 1e-9)
        # curvature floor vs gamma proxy
        assert np.all(res.step_min_dev >= res.step_gamma - 1e-9)
        # F2 one-sided growth bound with the empirical constants
        df2 = np.diff(res.step_F2) / res.step_dt[1:]
        bound = (model.n + 1) * res.lambda0_emp * float(np.max(f)) * res.step_F2[1:] + 1e-8
        assert np.all(df2 <= bound)

    def test_necessity_identity_fields(self, positive16):
        f = np.ones(positive16.shape)
        st = constant_state(positive16, f)
        ident = necessity_identities(st)
        assert set(ident) == {
            "int_f_u_power", "int_f_u_power_scale", "int_f", "gradient_side",
        }
        # flat constant state has lambda = 0: the identity is flagged nan
        flat = build_model(8, 8, 8)
        st0 = constant_state(flat, np.ones(flat.shape))
        assert math.isnan(necessity_identities(st0)["gradient_side"])
