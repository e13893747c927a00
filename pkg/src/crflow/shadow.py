"""Reduced (eps, a) bubble dynamics over closed-form landscapes.

Leading-order system (error terms deliberately dropped; every report carries
a caveat to that effect):

    deps/dt / eps = lambda f(a) [ (n d2 / (2(n+1) c2)) A_a eps^{2n}
                                  + (e2/c2) (Lap f(a)/f(a)) eps^2 ],
    da/dt / eps   = lambda f(a) [ (e3/c3) (grad f(a)/f(a)) eps
                                  + (e4/c3) (grad Lap f(a)/f(a)) eps^3 ],

with the constant ratios taken from the quadrature table (a single
consistent measure convention, so the ratios carry no volume-calibration
dependence).  The drift `a` moves only in the horizontal (z) directions.

Landscape derivative conventions: `grad_f` returns the chart partials
(d/dx, d/dy); `lap_f` is the frame Laplacian KAPPA_DELTA*(d_xx + d_yy) at
the evaluation point (at a chart center the frame fields reduce to the
coordinate fields).  Since the equations consume the landscape through
these callbacks only, the zero crossing of deps/dt at

    Lap f / f = -(d2 / (4 e2)) A_a           (n = 1, grad f = 0)

is an exact algebraic property of the implemented right-hand side.

Time stepping is classical fixed-step RK4; trajectories stop early at an
eps floor (concentration) or ceiling (escape).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .heisenberg import KAPPA_DELTA
from .quadrature import ConstantsTable

DROPPED_REMAINDER_CAVEAT = (
    "leading-order shadow dynamics: the coupling remainders (field misfit and "
    "F_2 feedback) are dropped by construction"
)


@dataclass(frozen=True)
class Landscape:
    """Closed-form landscape callbacks; points are 3-vectors (x, y, s)."""

    f: Callable[[np.ndarray], float]
    grad_f: Callable[[np.ndarray], np.ndarray]
    lap_f: Callable[[np.ndarray], float]
    grad_lap_f: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"


def constant_landscape(value: float = 1.0) -> Landscape:
    zero2 = np.zeros(2)
    return Landscape(
        f=lambda a: value,
        grad_f=lambda a: zero2,
        lap_f=lambda a: 0.0,
        grad_lap_f=lambda a: zero2,
        name="const",
    )


def quadratic_peak_landscape(
    f0: float = 1.0, curvature: float = 1.0, center=(0.0, 0.0)
) -> Landscape:
    """f = f0 - (curvature/2)|z - z0|^2: nondegenerate max with Lap f < 0."""
    cx, cy = center

    def f(a):
        return f0 - 0.5 * curvature * ((a[0] - cx) ** 2 + (a[1] - cy) ** 2)

    return Landscape(
        f=f,
        grad_f=lambda a: -curvature * np.array([a[0] - cx, a[1] - cy]),
        lap_f=lambda a: -2.0 * curvature * KAPPA_DELTA,
        grad_lap_f=lambda a: np.zeros(2),
        name="peak",
    )


def gaussian_landscape(
    amplitude: float = 1.0, width: float = 0.5, offset: float = 0.0, center=(0.0, 0.0)
) -> Landscape:
    """f = offset + amplitude exp(-|z - z0|^2 / width^2)."""
    cx, cy = center
    w2 = width * width

    def parts(a):
        dx, dy = a[0] - cx, a[1] - cy
        g = amplitude * math.exp(-(dx * dx + dy * dy) / w2)
        return dx, dy, g

    def f(a):
        return offset + parts(a)[2]

    def grad_f(a):
        dx, dy, g = parts(a)
        return (-2.0 / w2) * g * np.array([dx, dy])

    def lap_f(a):
        dx, dy, g = parts(a)
        r2 = dx * dx + dy * dy
        return KAPPA_DELTA * g * (4.0 * r2 / w2**2 - 4.0 / w2)

    def grad_lap_f(a):
        dx, dy, g = parts(a)
        r2 = dx * dx + dy * dy
        fac = KAPPA_DELTA * g * (8.0 / w2**2 - (4.0 * r2 / w2**2 - 4.0 / w2) * 2.0 / w2)
        return fac * np.array([dx, dy])

    return Landscape(f=f, grad_f=grad_f, lap_f=lap_f, grad_lap_f=grad_lap_f, name="gauss")


LANDSCAPES = {
    "const": constant_landscape,
    "peak": quadratic_peak_landscape,
    "gauss": gaussian_landscape,
}


@dataclass(frozen=True)
class ShadowRatios:
    """Constant ratios entering the reduced dynamics (single-convention set)."""

    n: int
    d2_c2: float
    e2_c2: float
    e3_c3: float
    e4_c3: float

    @classmethod
    def from_table(cls, table: ConstantsTable) -> "ShadowRatios":
        return cls(
            n=table.n,
            d2_c2=table.ratio_d2_c2,
            e2_c2=table.ratio_e2_c2,
            e3_c3=table.ratio_e3_c3,
            e4_c3=table.ratio_e4_c3,
        )


@dataclass(frozen=True)
class ShadowState:
    """Reduced dynamical state (eps, a) with landscape and frozen lambda."""

    eps: float
    a: np.ndarray
    landscape: Landscape
    mass: "float | Callable[[np.ndarray], float]"
    lam: float
    ratios: ShadowRatios

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    def mass_at(self, a) -> float:
        return float(self.mass(a)) if callable(self.mass) else float(self.mass)


def eps_threshold(ratios: ShadowRatios, mass: float) -> float:
    """Stationary value of Lap f / f (grad f = 0, n = 1): -(d2/(4 e2)) A_a.

    Emitted in terms of the computed signed constants: valid when e2 > 0.
    """
    e2 = ratios.e2_c2
    d2 = ratios.d2_c2
    if e2 == 0.0:
        raise ZeroDivisionError("e2 vanished; threshold undefined")
    return -(d2 / (4.0 * e2)) * mass


def shadow_rhs(state: ShadowState) -> tuple[float, np.ndarray]:
    """Right-hand side (deps/dt, da/dt); da/dt has a zero s-component."""
    L = state.landscape
    fa = L.f(state.a)
    if fa <= 0.0:
        raise ValueError(f"landscape must be positive at the bubble center (f={fa})")
    n = state.ratios.n
    eps = state.eps
    A = state.mass_at(state.a)
    pref = state.lam * fa

    eps_rate = pref * (
        n * state.ratios.d2_c2 / (2.0 * (n + 1)) * A * eps ** (2 * n)
        + state.ratios.e2_c2 * (L.lap_f(state.a) / fa) * eps**2
    )
    drift = pref * (
        state.ratios.e3_c3 * (L.grad_f(state.a) / fa) * eps
        + state.ratios.e4_c3 * (L.grad_lap_f(state.a) / fa) * eps**3
    )
    da = np.array([drift[0], drift[1], 0.0]) * eps
    return eps * eps_rate, da


@dataclass
class Trajectory:
    t: np.ndarray
    eps: np.ndarray
    a: np.ndarray
    f_a: np.ndarray
    zeta: np.ndarray
    stop_reason: str
    caveat: str = DROPPED_REMAINDER_CAVEAT


def zeta(state: ShadowState) -> float:
    """Concentration functional ln(eps) / f(a)."""
    fa = state.landscape.f(state.a)
    if fa <= 0.0:
        raise ValueError("zeta requires f(a) > 0")
    return math.log(state.eps) / fa


def integrate(
    state: ShadowState,
    t_final: float,
    dt: float,
    eps_floor: float = 1e-6,
    eps_ceiling: float = 10.0,
) -> Trajectory:
    """Classical RK4 at fixed dt; stops early at floor (concentration) or ceiling."""
    if dt <= 0:
        raise ValueError("dt must be positive")

    def rhs_vec(y):
        st = replace(state, eps=float(y[0]), a=y[1:4])
        de, da = shadow_rhs(st)
        return np.concatenate([[de], da])

    steps = max(1, int(round(t_final / dt)))
    y = np.concatenate([[state.eps], state.a])
    ts, epss, centers = [0.0], [y[0]], [y[1:4].copy()]
    reason = "completed"
    try:
        for k in range(steps):
            k1 = rhs_vec(y)
            k2 = rhs_vec(y + 0.5 * dt * k1)
            k3 = rhs_vec(y + 0.5 * dt * k2)
            k4 = rhs_vec(y + dt * k3)
            y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if y[0] <= 0.0:
                raise ValueError("eps crossed zero; step rejected")
            ts.append((k + 1) * dt)
            epss.append(y[0])
            centers.append(y[1:4].copy())
            if y[0] < eps_floor:
                reason = "concentrated"
                break
            if y[0] > eps_ceiling:
                reason = "escaped"
                break
    except ValueError as exc:
        raise type(exc)(
            f"{exc} (trajectory so far: {len(ts)} samples attached)"
        ) from exc

    t = np.array(ts)
    eps = np.array(epss)
    a = np.array(centers)
    f_a = np.array([state.landscape.f(c) for c in a])
    return Trajectory(
        t=t, eps=eps, a=a, f_a=f_a, zeta=np.log(eps) / f_a, stop_reason=reason
    )


def zeta_chain_rule(state: ShadowState) -> float:
    """d zeta/dt via the chain rule: (1/f)(deps/eps - eps ln(eps) (grad f/f) . (da/eps))."""
    de, da = shadow_rhs(state)
    L = state.landscape
    fa = L.f(state.a)
    grad = L.grad_f(state.a)
    return (1.0 / fa) * (
        de / state.eps
        - state.eps * math.log(state.eps) * float(np.dot(grad / fa, da[:2] / state.eps))
    )


def zeta_lower_bound_check(
    traj: Trajectory,
    c_star: float,
    state: ShadowState,
    tol: float = 1e-9,
) -> dict:
    """Verify: wherever Lap f(a)/f(a) > -c_star, the measured zeta' is >= -tol.

    Uses finite differences of zeta along the trajectory.  Returns a report
    with the worst margin; boundedness below of zeta follows wherever the
    condition holds throughout.
    """
    L = state.landscape
    zp = np.diff(traj.zeta) / np.diff(traj.t)
    applicable = []
    for idx in range(len(zp)):
        a = traj.a[idx]
        fa = traj.f_a[idx]
        if fa > 0 and L.lap_f(a) / fa > -c_star:
            applicable.append(zp[idx])
    applicable = np.array(applicable)
    ok = bool(applicable.size == 0 or float(np.min(applicable)) >= -tol)
    return {
        "ok": ok,
        "checked": int(applicable.size),
        "min_zeta_prime": float(np.min(applicable)) if applicable.size else math.nan,
        "zeta_final": float(traj.zeta[-1]),
        "zeta_min": float(np.min(traj.zeta)),
        "caveat": DROPPED_REMAINDER_CAVEAT,
    }


def c_star_condition(landscape: Landscape, sample: np.ndarray, c_star: float) -> bool:
    """True iff every sampled global maximizer has f > 0 and Lap f/f > -c_star."""
    sample = np.asarray(sample, dtype=float)
    vals = np.array([landscape.f(p) for p in sample])
    sup = float(np.max(vals))
    at_max = np.nonzero(vals >= sup - 1e-9)[0]
    for idx in at_max:
        p = sample[idx]
        fp = vals[idx]
        if fp <= 0.0 or landscape.lap_f(p) / fp <= -c_star:
            return False
    return True
