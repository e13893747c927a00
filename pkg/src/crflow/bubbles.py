"""Glued bubble test functions, Green data, parameter fitting, thresholds.

The test function centered at a grid node a with scale eps and cutoff radius
delta is

    phi_{a,eps} = eps^n [ chi_delta(rho_a) K_eps + (1 - chi_delta(rho_a)) G_a ],

with K_eps(z, s) = (s^2 + ((eps/n)^2 + |z|^2)^2)^{-n/2} evaluated in the
chart at a, rho_a the periodized gauge, and G_a the Green profile.  In the
flat mode G_a = rho_a^{-2n} + Lambda with the constant mass
Lambda = (sup |Delta f| + 1) / sup f; in the synthetic positive mode G_a is
the discrete solution of (-(2+2/n) Delta + R0) G = delta_a and the mass is
extracted by a least-squares fit near the pole.

Derivative bubbles: phi_1 = phi, phi_2 = eps d/d(eps) phi, and phi_3 =
eps grad_a phi (two components, real partials in the chart), all evaluated
from the closed formulas rather than finite differences.

`fit_bubble` recovers (alpha, eps, a) from a field by minimizing the
conformally weighted misfit  int u^{2/n} (u - alpha phi)^2 dv  with a
Nelder-Mead search in (log alpha, log eps) nested inside a discrete
neighborhood descent in the center node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.sparse import linalg as spla

from .flow import FlowState
from .manifold import Chart, ManifoldModel, _as_values
from .quadrature import k_constant


class InfeasibleInitialDataError(ValueError):
    """int f phi^{2+2/n} dv <= 0: the requested bubble cannot be normalized."""


# ---------------------------------------------------------------------------
# cutoff
# ---------------------------------------------------------------------------

def cutoff(tau, delta: float):
    """C^2 quintic transition: exactly 1 below delta, exactly 0 above 2*delta."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    t = np.asarray(tau, dtype=float) / delta
    u = np.clip(t - 1.0, 0.0, 1.0)
    out = 1.0 - (10.0 * u**3 - 15.0 * u**4 + 6.0 * u**5)
    return out if out.ndim else float(out)


def cutoff_slope(tau, delta: float):
    """d/dtau of `cutoff` (vanishes outside [delta, 2*delta])."""
    t = np.asarray(tau, dtype=float) / delta
    u = t - 1.0
    inside = (u > 0.0) & (u < 1.0)
    out = np.where(inside, -(30.0 * u**2 - 60.0 * u**3 + 30.0 * u**4), 0.0) / delta
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Green data
# ---------------------------------------------------------------------------

@dataclass
class GreenData:
    """Green profile G_a with pole coefficient and extracted mass.

    Near the pole G ~ beta * rho^{-2n} + mass + O(rho); `fit_bound` is the
    constant C in |G - beta rho^{-2n} - mass| <= C rho over the fit annulus.
    """

    field: np.ndarray
    mass: float
    pole: tuple
    beta: float
    fit_bound: float
    mode: str


def flat_mass(model: ManifoldModel, f) -> float:
    """Constant Green mass for the flat mode: (sup |Delta f| + 1) / sup f."""
    fv = _as_values(f, model)
    sup_f = float(np.max(fv))
    if sup_f <= 0.0:
        raise ValueError("sup f must be positive")
    return (float(np.max(np.abs(model.sublaplacian(fv)))) + 1.0) / sup_f


def _chart(model: ManifoldModel, node) -> Chart:
    cache = getattr(model, "_chart_cache", None)
    if cache is None:
        cache = {}
        model._chart_cache = cache
    key = tuple(int(c) for c in node)
    if key not in cache:
        cache[key] = model.local_chart(key)
    return cache[key]


def green_function(
    model: ManifoldModel,
    a,
    f=None,
    mass: Optional[float] = None,
    fit_delta: float = 0.2,
) -> GreenData:
    """Green data with pole at node a.

    Flat mode: the closed profile rho_a^{-2n} + Lambda with
    Lambda = (sup |Delta f| + 1)/sup f (or an explicit `mass`).  Positive
    mode: solves the discrete system (-(2+2/n) Delta + R0) G = delta_a with
    the discrete delta 1/volume_weight(a), then fits
    G ~ beta rho^{-2n} + A + b rho over the annulus 2h <= rho <= fit_delta.
    """
    node = tuple(int(c) for c in a)
    chart = _chart(model, node)
    n = model.n
    rho = chart.rho
    pole_mask = rho == 0.0

    if model.yamabe_sign == "zero":
        lam = mass if mass is not None else flat_mass(model, f)
        if lam is None:
            raise ValueError("flat mode needs f or an explicit mass")
        rho_safe = np.where(pole_mask, 1.0, rho)
        G = rho_safe ** (-2 * n) + lam
        G[pole_mask] = np.inf
        A, beta, bound = _fit_mass(model, G, rho, fit_delta, n)
        return GreenData(field=G, mass=float(lam), pole=node, beta=beta,
                         fit_bound=bound, mode="flat")

    # synthetic positive mode: CG solve (operator is SPD for R0 > 0)
    rhs = np.zeros(model.shape)
    rhs[node] = 1.0 / model.node_weight

    def matvec(vec):
        u = vec.reshape(model.shape)
        return (-(2.0 + 2.0 / n) * model.sublaplacian(u) + model.R0 * u).ravel()

    op = spla.LinearOperator((rhs.size, rhs.size), matvec=matvec)
    sol, info = spla.cg(op, rhs.ravel(), rtol=1e-10, atol=0.0, maxiter=20000)
    if info != 0:
        raise RuntimeError(f"Green solve did not converge (info={info})")
    G = sol.reshape(model.shape)
    A, beta, bound = _fit_mass(model, G, rho, fit_delta, n)
    return GreenData(field=G, mass=A, pole=node, beta=beta, fit_bound=bound, mode="positive")


def _fit_mass(model, G, rho, fit_delta, n):
    h_gauge = 2.0 * max(model.hx, model.hy, math.sqrt(model.hs))
    lo = min(2.0 * h_gauge, 0.5 * fit_delta)
    sel = (rho >= lo) & (rho <= fit_delta) & np.isfinite(G)
    if np.count_nonzero(sel) < 8:
        raise ValueError("mass-fit annulus too thin: refine the grid or widen delta")
    r = rho[sel]
    g = G[sel]
    cols = np.stack([r ** (-2.0 * n), np.ones_like(r), r], axis=1)
    coef, *_ = np.linalg.lstsq(cols, g, rcond=None)
    resid = g - cols @ coef
    bound = float(np.max(np.abs(resid) / r))
    return float(coef[1]), float(coef[0]), bound


# ---------------------------------------------------------------------------
# test function and derivative bubbles
# ---------------------------------------------------------------------------

def _resolve_mass(model, f, mass):
    if mass is not None:
        return float(mass)
    if f is None:
        raise ValueError("need f (for the flat-mode mass) or an explicit mass")
    return flat_mass(model, f)


def _green_profile(model, chart, mass, n):
    rho = chart.rho
    pole = rho == 0.0
    rho_safe = np.where(pole, 1.0, rho)
    return np.where(pole, 0.0, rho_safe ** (-2 * n)) + mass, pole


def test_function(
    model: ManifoldModel,
    a,
    eps: float,
    delta: float,
    f=None,
    mass: Optional[float] = None,
) -> np.ndarray:
    """Glued bubble phi_{a,eps}; strictly positive field on the whole grid."""
    if not 0.0 < eps < delta:
        raise ValueError("need 0 < eps < delta")
    n = model.n
    chart = _chart(model, a)
    lam = _resolve_mass(model, f, mass)
    q = chart.zx**2 + chart.zy**2
    nu2 = (eps / n) ** 2
    kern = (chart.t**2 + (nu2 + q) ** 2) ** (-n / 2.0)
    chi = cutoff(chart.rho, delta)
    G, pole = _green_profile(model, chart, lam, n)
    phi = eps**n * (chi * kern + (1.0 - chi) * G)
    # at the pole the cutoff is exactly 1, so the G branch never contributes
    phi[pole] = eps**n * kern[pole]
    return phi


def phi_k(
    model: ManifoldModel,
    a,
    eps: float,
    delta: float,
    k: int,
    f=None,
    mass: Optional[float] = None,
):
    """Derivative bubbles: k=1 -> phi, k=2 -> eps d_eps phi, k=3 -> eps grad_a phi.

    k = 3 returns a pair of fields (the x and y chart components).  Closed
    formulas; in the flat mode the conformal weight is identically 1.
    """
    if k == 1:
        return test_function(model, a, eps, delta, f=f, mass=mass)
    if not 0.0 < eps < delta:
        raise ValueError("need 0 < eps < delta")
    n = model.n
    chart = _chart(model, a)
    lam = _resolve_mass(model, f, mass)
    q = chart.zx**2 + chart.zy**2
    nu2 = (eps / n) ** 2
    base = chart.t**2 + (nu2 + q) ** 2
    chi = cutoff(chart.rho, delta)

    if k == 2:
        phi = test_function(model, a, eps, delta, f=f, mass=mass)
        correction = (2.0 / n) * eps ** (n + 2) * chi * (nu2 + q) * base ** (-n / 2.0 - 1.0)
        return n * phi - correction

    if k == 3:
        kern = base ** (-n / 2.0)
        G, pole = _green_profile(model, chart, lam, n)
        rho = chart.rho
        rho_safe = np.where(pole, 1.0, rho)
        chi_p = cutoff_slope(rho, delta)
        # d rho / d a_x at the center displacement = -x q / rho^3
        drho_fac = np.where(pole, 0.0, q / rho_safe**3)
        kern_minus_G = np.where(pole, 0.0, kern - G)
        dG_fac = np.where(pole, 0.0, 2.0 * n * q * rho_safe ** (-2.0 * n - 4.0))
        dk_fac = 2.0 * n * (nu2 + q) * base ** (-n / 2.0 - 1.0)
        common = -chi_p * drho_fac * kern_minus_G + (1.0 - chi) * dG_fac + chi * dk_fac
        comp_x = eps ** (n + 1) * chart.zx * common
        comp_y = eps ** (n + 1) * chart.zy * common
        return comp_x, comp_y

    raise ValueError("k must be 1, 2, or 3")


def bubble_norm_constant(model, a, eps, delta, k, f=None, mass: Optional[float] = None) -> float:
    """Discrete int phi^{2/n} phi_k^2 dv (the grid-side c_k analogue)."""
    phi = test_function(model, a, eps, delta, f=f, mass=mass)
    w = phi ** (2.0 / model.n)
    if k == 3:
        px, py = phi_k(model, a, eps, delta, 3, f=f, mass=mass)
        return model.integrate(w * (px**2 + py**2))
    pk = phi_k(model, a, eps, delta, k, f=f, mass=mass)
    return model.integrate(w * pk**2)


# ---------------------------------------------------------------------------
# thresholds and initial data
# ---------------------------------------------------------------------------

def lambda_star(f, n: int = 1) -> float:
    """Energy threshold (2(n+1)/n) (sup f)^{-n/(n+1)} K_n^{-1}."""
    sup_f = float(np.max(f))
    if sup_f <= 0.0:
        raise ValueError("sup f must be positive")
    return 2.0 * (n + 1) / n * sup_f ** (-n / (n + 1.0)) / k_constant(n)


def single_bubble_gate(energy_u0: float, lam_star: float, n: int = 1) -> bool:
    """True when the initial energy rules out multi-bubble concentration."""
    return energy_u0 < 2.0 ** (1.0 / (n + 1)) * lam_star


def default_delta(model: ManifoldModel, eps: float) -> float:
    """Cutoff radius rule: min(0.24, 8 eps), floored at a resolvable size.

    The 0.24 cap keeps the whole transition annulus (rho <= 2 delta) inside
    the injectivity region of the periodized chart (nearest deck image at
    gauge ~1) while still dominating every eps the grids can resolve.
    """
    floor = 6.0 * max(model.hx, model.hy)
    return min(0.24, max(8.0 * eps, floor))


def initial_data(
    model: ManifoldModel,
    f,
    a0,
    eps0: float,
    delta: Optional[float] = None,
    mass: Optional[float] = None,
) -> tuple[FlowState, dict]:
    """Constraint-normalized bubble state u0 = alpha0 phi_{a0, eps0}.

    alpha0^{-(2+2/n)} = int f phi^{2+2/n} dv; raises
    InfeasibleInitialDataError when that integral is not positive.  Returns
    the state and a report with the initial energy, the threshold
    lambda_star, and the single-bubble energy gate.
    """
    fv = _as_values(f, model)
    if eps0 < 4.0 * max(model.hx, model.hy):
        raise ValueError("eps0 must be at least 4 grid spacings")
    if delta is None:
        delta = default_delta(model, eps0)
    phi = test_function(model, a0, eps0, delta, f=fv, mass=mass)
    n = model.n
    mass_integral = model.integrate_wrt(fv, phi)
    if mass_integral <= 0.0:
        raise InfeasibleInitialDataError(
            f"int f phi^{{2+2/n}} dv = {mass_integral:.3e} <= 0 at eps0={eps0}"
        )
    alpha0 = mass_integral ** (-n / (2.0 * n + 2.0))
    state = FlowState(model, alpha0 * phi, fv, t=0.0)
    lam_star = lambda_star(fv, n)
    e0 = state.energy()
    report = {
        "alpha0": float(alpha0),
        "eps0": float(eps0),
        "delta": float(delta),
        "mass": _resolve_mass(model, fv, mass),
        "energy0": float(e0),
        "lambda_star": float(lam_star),
        "gate": bool(single_bubble_gate(e0, lam_star, n)),
        "constraint_defect": float(state.constraint_defect),
    }
    return state, report


# ---------------------------------------------------------------------------
# bubble fitting
# ---------------------------------------------------------------------------

@dataclass
class BubbleFit:
    """Fitted bubble parameters plus misfit measures."""

    alpha: float
    eps: float
    center: tuple
    delta: float
    residual_norm: float
    objective: float
    center_coords: tuple
    membership_defect: float
    ambiguous: bool = False
    success: bool = True


def _neighbors(model: ManifoldModel, node):
    i, j, k = node
    yield ((i + 1) % model.nx, j, k)
    yield ((i - 1) % model.nx, j, k)
    yield (i, (j + 1) % model.ny, k)
    yield (i, (j - 1) % model.ny, k)
    yield (i, j, (k + 1) % model.ns)
    yield (i, j, (k - 1) % model.ns)


def fit_bubble(
    state: FlowState,
    init: Optional[BubbleFit] = None,
    budget: int = 500,
    mass: Optional[float] = None,
) -> BubbleFit:
    """Best (alpha, eps, a) for u in the conformally weighted least-squares sense.

    Nelder-Mead over (log alpha, log eps) nested with a best-of-neighborhood
    descent in the center node, multistarted from the grid argmax of u (and
    from `init` when given).  Deterministic.  Returns success=False when the
    evaluation budget is exhausted without a convergent inner solve.
    """
    model = state.model
    u = state.u
    lam_mass = mass if mass is not None else flat_mass(model, state.f)
    weight = u ** (2.0 / model.n) * model.node_weight
    norm_u2 = float(np.sum(weight * u * u))
    evals = [0]
    h = max(model.hx, model.hy)
    eps_lo, eps_hi = math.log(1.5 * h), math.log(0.23)

    def objective(log_alpha, log_eps, node):
        if not eps_lo - 1e-9 <= log_eps <= eps_hi + 1e-9:
            return np.inf
        evals[0] += 1
        eps = math.exp(log_eps)
        phi = test_function(model, node, eps, default_delta(model, eps), mass=lam_mass)
        diff = u - math.exp(log_alpha) * phi
        return float(np.sum(weight * diff * diff))

    def solve_at(node, x0):
        res = optimize.minimize(
            lambda x: objective(x[0], x[1], node),
            x0,
            method="Nelder-Mead",
            options={"xatol": 1e-6, "fatol": 1e-12 * max(norm_u2, 1e-30), "maxfev": 120},
        )
        return res.x, float(res.fun)

    imax = np.unravel_index(int(np.argmax(u)), model.shape)
    starts = [(imax, (math.log(max(float(np.max(u)), 1e-12) * (8 * h)),
                      math.log(min(max(8.0 * h, 2.0 * h), 0.18))))]
    if init is not None:
        starts.append((tuple(init.center), (math.log(init.alpha), math.log(init.eps))))

    results = []
    for node0, x0 in starts:
        node, x = node0, np.asarray(x0, dtype=float)
        x, best = solve_at(node, x)
        for _ in range(24):
            if evals[0] >= budget:
                break
            improved = False
            for nb in _neighbors(model, node):
                val = objective(x[0], x[1], nb)
                if val < best:
                    node, best, improved = nb, val, True
            if improved:
                x, best = solve_at(node, x)
            else:
                break
        results.append((best, node, x))
        if evals[0] >= budget:
            break

    results.sort(key=lambda r: r[0])
    best, node, x = results[0]
    ambiguous = (
        len(results) > 1
        and results[0][1] != results[1][1]
        and abs(results[0][0] - results[1][0]) <= 0.01 * max(results[0][0], 1e-300)
    )
    alpha, eps = math.exp(x[0]), math.exp(x[1])
    delta = default_delta(model, eps)
    phi = test_function(model, node, eps, delta, mass=lam_mass)
    residual = model.sobolev_norm(u - alpha * phi)
    fa = float(state.f[node])
    n = model.n
    membership = abs(n * state.lam * alpha ** (2.0 / n) * fa / (2.0 * (n + 1)) - 1.0)
    return BubbleFit(
        alpha=float(alpha),
        eps=float(eps),
        center=tuple(int(c) for c in node),
        delta=float(delta),
        residual_norm=float(residual),
        objective=float(best),
        center_coords=model.node_point(node),
        membership_defect=float(membership),
        ambiguous=ambiguous,
        success=bool(evals[0] < budget or best < np.inf),
    )


# ---------------------------------------------------------------------------
# shadow-flow projections
# ---------------------------------------------------------------------------

def sigma_k(
    state: FlowState,
    a,
    eps: float,
    delta: float,
    k: int,
    mass: Optional[float] = None,
):
    """Projection sigma_k = -int (L u - lambda f u^{1+2/n}) phi_k dv.

    k = 3 returns the two chart components as an array.
    """
    model = state.model
    n = model.n
    resid = model.conformal_sublaplacian(state.u) - state.lam * state.f * state.u ** (1.0 + 2.0 / n)
    if k == 3:
        px, py = phi_k(model, a, eps, delta, 3, f=state.f, mass=mass)
        return np.array([-model.integrate(resid * px), -model.integrate(resid * py)])
    pk = phi_k(model, a, eps, delta, k, f=state.f, mass=mass)
    return float(-model.integrate(resid * pk))
