"""Normalized prescribed-curvature conformal flow on a discrete model manifold.

State is the positive conformal factor u on the grid; the evolving contact
form is u^{2/n} times the background.  Its scalar curvature is

    R = u^{-1-2/n} ( -(2+2/n) Delta u + R0 u ),

and the flow is the constrained descent

    du/dt = -(n/2) (R - lambda(t) f) u,
    lambda(t) = int f R dv_theta / int f^2 dv_theta,

where dv_theta = u^{2+2/n} dv.  With this lambda the continuous flow keeps
int f u^{2+2/n} dv = 1 exactly; the discrete explicit-Euler step drifts at
O(dt^2), so every step is followed by the exact multiplicative projection
u <- beta u with beta = (int f u^{2+2/n} dv)^{-n/(2n+2)}.

The energy E(u) = int ((2+2/n)|grad u|^2 + R0 u^2) dv is non-increasing with
dissipation rate -n int (R - lambda f)^2 dv_theta = -n F_2; both are tracked
at every step, together with the F_p norms, the curvature floor, and the
empirical proxies for the non-explicit constants (running max |lambda|,
finite-difference |lambda'|, and the curvature lower bound assembled from
them).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .manifold import ManifoldModel, _as_values


class StepSizeError(RuntimeError):
    """Positivity lost during a raw update; retry with a smaller dt."""


class ProjectionInfeasibleError(RuntimeError):
    """int f u^{2+2/n} dv <= 0 after the raw update: flow left the constraint cone."""


def webster_scalar(model: ManifoldModel, u) -> np.ndarray:
    """Scalar curvature of the conformal form: u^{-1-2/n}(-(2+2/n) Delta u + R0 u)."""
    uv = _as_values(u, model)
    if np.any(uv <= 0.0):
        raise ValueError("conformal factor must be positive")
    n = model.n
    return model.conformal_sublaplacian(uv) * uv ** (-1.0 - 2.0 / n)


def lambda_of(model: ManifoldModel, u, f) -> float:
    """Normalization factor lambda = int f R dv_theta / int f^2 dv_theta."""
    R = webster_scalar(model, u)
    return _lambda_from_curvature(model, _as_values(u, model), _as_values(f, model), R)


def _lambda_from_curvature(model, u, f, R) -> float:
    w = u ** (2.0 + 2.0 / model.n) * model.node_weight
    denom = float(np.sum(f * f * w))
    if denom <= 0.0:
        raise ValueError("int f^2 dv_theta vanishes; lambda undefined")
    return float(np.sum(f * R * w)) / denom


@dataclass(frozen=True)
class FlowState:
    """Immutable snapshot (u, t) of the flow on a fixed model with landscape f."""

    model: ManifoldModel
    u: np.ndarray
    f: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "u", _as_values(self.u, self.model))
        object.__setattr__(self, "f", _as_values(self.f, self.model))
        if np.any(self.u <= 0.0):
            raise ValueError("conformal factor must be positive")
        m = self.model
        u_conf = self.u ** (2.0 + 2.0 / m.n)
        R = m.conformal_sublaplacian(self.u) * self.u ** (-1.0 - 2.0 / m.n)
        w = u_conf * m.node_weight
        denom = float(np.sum(self.f * self.f * w))
        if denom <= 0.0:
            raise ValueError("int f^2 dv_theta vanishes; lambda undefined")
        lam = float(np.sum(self.f * R * w)) / denom
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "u_conf", u_conf)
        object.__setattr__(self, "lam", lam)

    @property
    def constraint_defect(self) -> float:
        return self.model.integrate_wrt(self.f, self.u) - 1.0

    def energy(self) -> float:
        # E(u) = int R u^{2+2/n} dv, discretely identical to the gradient form
        # by self-adjointness of the stencil.
        return self.model.integrate_wrt(self.R, self.u)

    def fp_norm(self, p: float) -> float:
        dev = np.abs(self.R - self.lam * self.f)
        return self.model.integrate_wrt(dev**p, self.u)


def normalize_to_constraint(model: ManifoldModel, u, f) -> np.ndarray:
    """Scale u > 0 so that int f u^{2+2/n} dv = 1 exactly."""
    uv = _as_values(u, model)
    mass = model.integrate_wrt(f, uv)
    if mass <= 0.0:
        raise ProjectionInfeasibleError("int f u^{2+2/n} dv <= 0; cannot normalize")
    n = model.n
    return uv * mass ** (-n / (2.0 * n + 2.0))


def dt_stability(state: FlowState, c_cfl: float = 0.2) -> float:
    """Parabolic step bound: c_cfl h_min^2 / ((2+2/n) max u^{-2/n})."""
    m = state.model
    hmin = min(m.hx, m.hy, m.hs)
    n = m.n
    diffusivity = (2.0 + 2.0 / n) * float(np.min(state.u)) ** (-2.0 / n)
    return c_cfl * hmin * hmin / diffusivity


def step(state: FlowState, dt: float) -> FlowState:
    """One explicit Euler step followed by exact constraint projection."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    m = state.model
    n = m.n
    raw = state.u - (n / 2.0) * dt * (state.R - state.lam * state.f) * state.u
    if np.any(raw <= 0.0):
        raise StepSizeError("positivity lost; halve dt")
    u_new = normalize_to_constraint(m, raw, state.f)
    return FlowState(m, u_new, state.f, t=state.t + dt)


@dataclass
class FlowDiagnostics:
    """Scalar diagnostics of a flow state (one CSV row's worth)."""

    t: float
    lam: float
    energy: float
    dissipation: float
    volume: float
    F2: float
    F4: float
    Fp: dict
    min_R_minus_lambda_f: float
    lambda_dot: float
    min_u: float
    max_u: float
    sobolev_norm_u: float
    gamma_proxy: float = math.nan


def diagnostics(
    state: FlowState,
    p_list: tuple = (2.0, 4.0),
    lambda_dot: float = math.nan,
    gamma_proxy: float = math.nan,
) -> FlowDiagnostics:
    """All scalar diagnostics; F_p computed for the configured exponent list."""
    m = state.model
    dev = state.R - state.lam * state.f
    fp = {p: state.fp_norm(p) for p in p_list}
    f2 = fp.get(2.0, state.fp_norm(2.0))
    return FlowDiagnostics(
        t=state.t,
        lam=state.lam,
        energy=state.energy(),
        dissipation=-m.n * f2,
        volume=m.integrate_wrt(np.ones(m.shape), state.u),
        F2=f2,
        F4=fp.get(4.0, math.nan),
        Fp=fp,
        min_R_minus_lambda_f=float(np.min(dev)),
        lambda_dot=lambda_dot,
        min_u=float(np.min(state.u)),
        max_u=float(np.max(state.u)),
        sobolev_norm_u=m.sobolev_norm(state.u),
        gamma_proxy=gamma_proxy,
    )


def pde_residual(state: FlowState) -> float:
    """sup-norm residual of the stationary equation, relative to sup u.

    || -(2+2/n) Delta u + R0 u - lambda f u^{1+2/n} ||_inf / ||u||_inf.
    """
    m = state.model
    res = m.conformal_sublaplacian(state.u) - state.lam * state.f * state.u ** (1.0 + 2.0 / m.n)
    return float(np.max(np.abs(res)) / np.max(np.abs(state.u)))


def necessity_identities(state: FlowState) -> dict:
    """The two integral identities a solution must satisfy in the flat mode.

    A positive solution of -(2+2/n) Delta v = f v^{1+2/n} obeys
      (a) int f v^{1+2/n} dv = 0,
      (b) int f dv = -(2+2/n)(1+2/n) int v^{-2-2/n} |grad v|^2 dv.
    The flow variable solves the lambda-normalized equation, so both are
    evaluated on the rescaled solution v = lambda^{n/2} u; for (a) the
    rescaling cancels, for (b) it contributes the 1/lambda factor below.
    The gradient is the independent central-difference one, not the operator
    pairing, so (b) is a genuine cross-check rather than an algebraic echo
    of the stationary equation.
    """
    m = state.model
    n = m.n
    u = state.u
    lhs_a = float(np.sum(state.f * u ** (1.0 + 2.0 / n)) * m.node_weight)
    scale_a = float(np.sum(np.abs(state.f) * u ** (1.0 + 2.0 / n)) * m.node_weight)
    int_f = m.integrate(state.f)
    grad2 = m.gradient_squared(u)
    grad_integral = float(np.sum(u ** (-2.0 - 2.0 / n) * grad2) * m.node_weight)
    if state.lam != 0.0:
        rhs_b = -(2.0 + 2.0 / n) * (1.0 + 2.0 / n) / state.lam * grad_integral
    else:
        rhs_b = math.nan  # the identity presumes a positive-lambda solution
    return {
        "int_f_u_power": lhs_a,
        "int_f_u_power_scale": scale_a,
        "int_f": int_f,
        "gradient_side": rhs_b,
    }


class GammaProxy:
    """Empirical curvature floor from running maxima of |lambda| and |lambda'|.

    gamma = min( -L0 sup|f|, inf(R(0) - lambda(0) f),
                 -sqrt((4/3)(L0^2 (sup f)^2 + L1 sup|f|)) ),
    with L0 = running max |lambda|, L1 = running max |lambda'|.
    """

    def __init__(self, state0: FlowState):
        self.sup_f = float(np.max(state0.f))
        self.sup_abs_f = float(np.max(np.abs(state0.f)))
        self.initial_floor = float(np.min(state0.R - state0.lam * state0.f))
        self.lambda0 = abs(state0.lam)
        self.lambda1 = 0.0

    def update(self, lam: float, lam_dot: float):
        self.lambda0 = max(self.lambda0, abs(lam))
        if math.isfinite(lam_dot):
            self.lambda1 = max(self.lambda1, abs(lam_dot))

    def value(self) -> float:
        third = -math.sqrt(
            (4.0 / 3.0) * (self.lambda0**2 * self.sup_f**2 + self.lambda1 * self.sup_abs_f)
        )
        return min(-self.lambda0 * self.sup_abs_f, self.initial_floor, third)


@dataclass
class RunResult:
    classification: str
    final_state: FlowState
    samples: list
    fits: list
    step_t: np.ndarray
    step_energy: np.ndarray
    step_F2: np.ndarray
    step_lambda: np.ndarray
    step_defect: np.ndarray
    step_dt: np.ndarray
    step_min_dev: np.ndarray
    step_gamma: np.ndarray
    step_volume: np.ndarray
    lambda0_emp: float
    lambda1_emp: float
    gamma_proxy: float
    wall_time: float
    final_residual: float


def run(
    state0: FlowState,
    t_max: float = 10.0,
    c_cfl: float = 0.2,
    tol_converged: float = 1e-6,
    residual_tol: Optional[float] = None,
    tol_eps: float = 0.0,
    sample_interval: float = 0.05,
    p_list: tuple = (2.0, 4.0),
    fitter: Optional[Callable[[FlowState], object]] = None,
    max_steps: int = 20_000_000,
) -> RunResult:
    """March the flow until convergence, concentration, infeasibility, or t_max.

    `fitter`, when given, is called at sample times and should return an
    object with attributes (alpha, eps, center_coords, residual_norm) or None;
    concentration is declared when the fitted eps drops below tol_eps.
    Per-step scalars (energy, F2, lambda, constraint defect, curvature floor)
    are recorded for the monotonicity and growth-bound checks.
    """
    t_start = time.perf_counter()
    state = state0
    gamma = GammaProxy(state0)

    hist = {k: [] for k in ("t", "E", "F2", "lam", "defect", "dt", "mindev", "gamma", "vol")}
    samples: list[FlowDiagnostics] = []
    fits: list = []
    classification = "timeout"
    next_sample = state.t
    lam_dot = math.nan

    def record_sample(st: FlowState):
        diag = diagnostics(st, p_list=p_list, lambda_dot=lam_dot, gamma_proxy=gamma.value())
        samples.append(diag)
        fits.append(fitter(st) if fitter is not None else None)

    model = state0.model
    weight = model.node_weight

    def scalars(st: FlowState) -> dict:
        # one fused pass over the state: every per-step metric from u, R
        u_conf = st.u_conf
        dev = st.R - st.lam * st.f
        return {
            "E": float(np.sum(st.R * u_conf) * weight),
            "F2": float(np.sum(dev * dev * u_conf) * weight),
            "vol": float(np.sum(u_conf) * weight),
            "defect": float(np.sum(st.f * u_conf) * weight) - 1.0,
            "mindev": float(np.min(dev)),
        }

    steps = 0
    cur = scalars(state)
    while steps < max_steps:
        if state.t + 1e-14 >= next_sample:
            record_sample(state)
            next_sample += sample_interval
            fit = fits[-1]
            if fit is not None and tol_eps > 0.0 and getattr(fit, "eps", np.inf) < tol_eps:
                classification = "concentrating"
                break

        if cur["F2"] < tol_converged and (
            residual_tol is None or pde_residual(state) <= residual_tol
        ):
            classification = "converged"
            break
        if state.t >= t_max:
            classification = "timeout"
            break

        dt = dt_stability(state, c_cfl)
        new_state = None
        while dt > 1e-15:
            try:
                new_state = step(state, dt)
                break
            except StepSizeError:
                dt *= 0.5
            except ProjectionInfeasibleError:
                classification = "infeasible"
                break
        if classification == "infeasible":
            break
        if new_state is None:
            raise RuntimeError("step size underflow: positivity could not be preserved")

        lam_dot = (new_state.lam - state.lam) / dt
        gamma.update(new_state.lam, lam_dot)
        cur = scalars(new_state)
        hist["t"].append(new_state.t)
        hist["E"].append(cur["E"])
        hist["F2"].append(cur["F2"])
        hist["lam"].append(new_state.lam)
        hist["defect"].append(cur["defect"])
        hist["dt"].append(dt)
        hist["mindev"].append(cur["mindev"])
        hist["gamma"].append(gamma.value())
        hist["vol"].append(cur["vol"])
        state = new_state
        steps += 1

    if not samples or samples[-1].t < state.t - 1e-14:
        record_sample(state)

    return RunResult(
        classification=classification,
        final_state=state,
        samples=samples,
        fits=fits,
        step_t=np.array(hist["t"]),
        step_energy=np.array(hist["E"]),
        step_F2=np.array(hist["F2"]),
        step_lambda=np.array(hist["lam"]),
        step_defect=np.array(hist["defect"]),
        step_dt=np.array(hist["dt"]),
        step_min_dev=np.array(hist["mindev"]),
        step_gamma=np.array(hist["gamma"]),
        step_volume=np.array(hist["vol"]),
        lambda0_emp=gamma.lambda0,
        lambda1_emp=gamma.lambda1,
        gamma_proxy=gamma.value(),
        wall_time=time.perf_counter() - t_start,
        final_residual=pde_residual(state),
    )
