"""Discrete compact CR model manifolds.

The base geometry is the Heisenberg nilmanifold: the quotient of the
polarized Heisenberg group (group law (x,y,s)*(x',y',s') = (x+x', y+y',
s+s'+x y')) by its integer lattice, realized on the fundamental domain
[-1/2,1/2) x [0,1)^2 with identifications

    (x, y, s) ~ (x+1, y, s+y),   (x, y+1, s),   (x, y, s+1).

The left-invariant horizontal frame X = d/dx, Y = d/dy + x d/ds descends to
the quotient, so the sub-Laplacian

    Delta = KAPPA_DELTA (X^2 + Y^2)
          = KAPPA_DELTA (d_xx + d_yy + 2x d_ys + x^2 d_ss)

is discretized with second-order stencils whose only boundary subtlety is the
s-shift at the x-gluing; requiring N_y | N_s keeps that shift grid-aligned,
so no interpolation is ever needed.  The resulting operator is exactly
symmetric with respect to the uniform volume weights, negative semidefinite,
and annihilates constants; all three are probed at build time.

Two resolution facts drive grid and placement choices downstream.  First, a
gauge-isotropic feature of scale eps has normal-coordinate width eps^2 in the
t-direction while the s-spacing contributes 4 h_s of t per node, so resolving
bubbles requires N_s >> N_x (roughly h_s ~ eps^2/16 against h_x ~ eps/8).
Second, the stencil realizes the Y^2 term through the expanded form above,
whose cross-term cancellation is numerically stiff where the coefficient x is
large: a feature of scale eps centered at x_c is cleanly resolved only when
|x_c| is at most O(eps).  Concentrated fields should therefore be centered
near x = 0 (the seam of the twisted gluing sits at x = +-1/2, as far from
that sweet spot as possible).

Charts: the polarized model maps onto the standard frame convention of
:mod:`crflow.heisenberg` through the group isomorphism

    Phi(x, y, s) = (x, y, 2xy - 4s),

which carries X, Y to the standard fields exactly and has Jacobian
|det| = 4.  `local_chart` composes a left translation (center to origin)
with Phi and minimizes the Koranyi gauge over deck translates, giving global
normal coordinates around any node.

Volume normalization: node weights are VOLUME_SCALE * h_x h_y h_s with
VOLUME_SCALE = kappa_v * |det D Phi| = 16 * 4 = 64, so that chart-pushed
integrals land in the same Sobolev-consistent convention as the quadrature
module (the one in which the bubble saturates the sharp inequality with
constant K_1).  This is what makes energy levels on the manifold directly
comparable with the threshold lambda_*.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .heisenberg import KAPPA_DELTA, HeisenbergPoint

#: kappa_v (=16 at n=1) times the polarized->standard chart Jacobian (=4).
VOLUME_SCALE = 64.0

_CERT_TOL = 1e-12


@dataclass
class ScalarField:
    """Grid function on a ManifoldModel; integration uses the model weights."""

    values: np.ndarray
    model: "ManifoldModel"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.model.shape:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid {self.model.shape}"
            )

    def __array__(self, dtype=None):
        return self.values if dtype is None else self.values.astype(dtype)


def _as_values(field, model) -> np.ndarray:
    if isinstance(field, ScalarField):
        if field.model is not model:
            raise ValueError("field belongs to a different model")
        return field.values
    arr = np.asarray(field, dtype=float)
    if arr.shape != model.shape:
        raise ValueError(f"field shape {arr.shape} does not match grid {model.shape}")
    return arr


class ManifoldModel:
    """Immutable discrete model manifold (flat or synthetic-positive mode)."""

    def __init__(self, nx: int, ny: int, ns: int, yamabe_sign: str = "zero", r0=None):
        if yamabe_sign not in ("zero", "positive"):
            raise ValueError("yamabe_sign must be 'zero' or 'positive'")
        if min(nx, ny, ns) < 4:
            raise ValueError("grid must have at least 4 nodes per direction")
        if ns % ny != 0:
            raise ValueError(
                f"N_s={ns} must be an integer multiple of N_y={ny} "
                "(twisted x-gluing must land on grid nodes)"
            )
        self.n = 1
        self.shape = (nx, ny, ns)
        self.nx, self.ny, self.ns = nx, ny, ns
        self.hx, self.hy, self.hs = 1.0 / nx, 1.0 / ny, 1.0 / ns
        self.twist = ns // ny
        self.yamabe_sign = yamabe_sign

        # x spans [-1/2, 1/2): the twisted seam then sits at x = +-1/2, so the
        # Y-stencil coefficient stays small near x = 0 where concentrated
        # fields should be centered (the cross-term stiffness for a feature of
        # gauge scale eps grows like |x_center| / eps, see module docstring).
        self.x = (np.arange(nx) * self.hx - 0.5)[:, None, None]
        self.y = (np.arange(ny) * self.hy)[None, :, None]
        self.s = (np.arange(ns) * self.hs)[None, None, :]

        self.node_weight = VOLUME_SCALE * self.hx * self.hy * self.hs
        self.volume_weights = np.full(self.shape, self.node_weight)
        self.total_volume = float(self.volume_weights.sum())

        if yamabe_sign == "zero":
            if r0 is not None and np.any(np.asarray(r0) != 0.0):
                raise ValueError("zero mode requires R0 identically 0")
            self.R0 = np.zeros(self.shape)
        else:
            if r0 is None:
                raise ValueError("positive mode requires a background curvature field")
            r0 = np.broadcast_to(np.asarray(r0, dtype=float), self.shape).copy()
            if np.any(r0 <= 0.0):
                raise ValueError("positive mode requires R0 > 0 everywhere")
            self.R0 = r0

        # Gather indices for the twisted x-wrap: crossing x=1 shifts s by -y.
        j = np.arange(ny)[:, None]
        k = np.arange(ns)[None, :]
        self._wrap_minus = (k - j * self.twist) % ns
        self._wrap_plus = (k + j * self.twist) % ns
        self._jj = np.broadcast_to(j, (ny, ns))

        self._certify()

    # -- twisted shifts ---------------------------------------------------

    def shift_x(self, u: np.ndarray, step: int) -> np.ndarray:
        """Translate the field one node along the +x or -x frame flow."""
        v = np.empty_like(u)
        if step == +1:
            v[:-1] = u[1:]
            v[-1] = u[0][self._jj, self._wrap_minus]
        elif step == -1:
            v[1:] = u[:-1]
            v[0] = u[-1][self._jj, self._wrap_plus]
        else:
            raise ValueError("step must be +-1")
        return v

    # -- operators ---------------------------------------------------------

    def sublaplacian(self, field) -> np.ndarray:
        """Second-order stencil for Delta = KAPPA_DELTA (X^2 + Y^2)."""
        u = _as_values(field, self)
        hx2, hy2, hs2 = self.hx**2, self.hy**2, self.hs**2

        dxx = (self.shift_x(u, +1) - 2.0 * u + self.shift_x(u, -1)) / hx2
        up_y, dn_y = np.roll(u, -1, axis=1), np.roll(u, 1, axis=1)
        up_s, dn_s = np.roll(u, -1, axis=2), np.roll(u, 1, axis=2)
        dyy = (up_y - 2.0 * u + dn_y) / hy2
        dss = (up_s - 2.0 * u + dn_s) / hs2
        ds_c = (up_s - dn_s) / (2.0 * self.hs)
        dys = (np.roll(ds_c, -1, axis=1) - np.roll(ds_c, 1, axis=1)) / (2.0 * self.hy)

        return KAPPA_DELTA * (dxx + dyy + 2.0 * self.x * dys + self.x**2 * dss)

    def gradient_squared(self, field) -> np.ndarray:
        """Frame-paired |grad_H u|^2 = KAPPA_DELTA ((Xu)^2 + (Yu)^2), central differences."""
        u = _as_values(field, self)
        xu = (self.shift_x(u, +1) - self.shift_x(u, -1)) / (2.0 * self.hx)
        dy = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) / (2.0 * self.hy)
        ds = (np.roll(u, -1, axis=2) - np.roll(u, 1, axis=2)) / (2.0 * self.hs)
        yu = dy + self.x * ds
        return KAPPA_DELTA * (xu * xu + yu * yu)

    def conformal_sublaplacian(self, field) -> np.ndarray:
        """L u = -(2+2/n) Delta u + R0 u."""
        u = _as_values(field, self)
        return -(2.0 + 2.0 / self.n) * self.sublaplacian(u) + self.R0 * u

    # -- integration -------------------------------------------------------

    def integrate(self, field) -> float:
        """Volume integral with the background weights."""
        return float(np.sum(_as_values(field, self)) * self.node_weight)

    def integrate_wrt(self, field, u) -> float:
        """Integral against the conformal volume u^{2+2/n} dv; requires u > 0."""
        uv = _as_values(u, self)
        if np.any(uv <= 0.0):
            raise ValueError("conformal factor must be positive")
        fv = _as_values(field, self)
        return float(np.sum(fv * uv ** (2.0 + 2.0 / self.n)) * self.node_weight)

    def inner(self, a, b) -> float:
        """Volume-weighted inner product."""
        return float(np.sum(_as_values(a, self) * _as_values(b, self)) * self.node_weight)

    def sobolev_norm(self, field) -> float:
        """Discrete S_1^2 norm: ( int ((2+2/n)|grad u|^2 + u^2) dv )^{1/2}.

        The gradient term is evaluated through the operator pairing
        <u, -Delta u>, which is discretely exact under the symmetric stencil.
        """
        u = _as_values(field, self)
        grad2 = -self.inner(u, self.sublaplacian(u))
        return float(np.sqrt(max((2.0 + 2.0 / self.n) * grad2, 0.0) + self.inner(u, u)))

    # -- charts -------------------------------------------------------------

    def node_point(self, node) -> tuple[float, float, float]:
        i, j, k = node
        return (i * self.hx - 0.5, j * self.hy, k * self.hs)

    def local_chart(self, node) -> "Chart":
        """Normal coordinates centered at a grid node (see Chart)."""
        return Chart(self, node)

    # -- build-time certificates --------------------------------------------

    def _certify(self):
        rng = np.random.default_rng(1234)
        ones = np.ones(self.shape)
        lap1 = self.sublaplacian(ones)
        if np.max(np.abs(lap1)) > _CERT_TOL:
            raise AssertionError("sub-Laplacian does not annihilate constants")
        u = rng.standard_normal(self.shape)
        w = rng.standard_normal(self.shape)
        lhs = self.inner(self.sublaplacian(u), w)
        rhs = self.inner(u, self.sublaplacian(w))
        scale = max(1.0, abs(lhs), abs(rhs))
        if abs(lhs - rhs) > 1e-9 * scale:
            raise AssertionError("sub-Laplacian is not symmetric")
        for probe in (u, w, u + 0.3 * w):
            if self.inner(probe, self.sublaplacian(probe)) > 1e-9 * self.inner(probe, probe):
                raise AssertionError("sub-Laplacian is not negative semidefinite")


def normal_coordinates(center_xyz, x, y, s):
    """Standard-frame normal coordinates of points (x, y, s) around a center.

    For each point the deck translate closest to the center in Koranyi gauge
    is selected over the lattice identifications
    (x, y, s) ~ (x+a, y+b, s+c+a*y), a, b, c integers; the winner is left-
    translated to put the center at the origin and pushed through the
    polarized->standard isomorphism Phi(x, y, s) = (x, y, 2xy - 4s).
    Returns (zx, zy, t, rho) arrays of the input shape.
    """
    xa, ya, sa = center_xyz
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)

    # reduce to the fundamental domain first (x in [-1/2,1/2), y, s in [0,1))
    # so the +-1 deck search below always brackets the closest translate;
    # the x-reduction carries the twist s -> s - k*y.
    kx = np.floor(x + 0.5)
    x = x - kx
    s = s - kx * y
    y = y - np.floor(y)
    s = s - np.floor(s)

    best = None
    for a in (-1, 0, 1):
        for b in (-1, 0, 1):
            qx = x + a - xa
            qy = y + b - ya
            # s-part of the deck image (x+a, y+b, s+c+a*y) after the left
            # translation carrying the center to the origin, with the integer
            # s-shift c still free.
            qs0 = s + a * y - sa - xa * qy
            t0 = 2.0 * qx * qy - 4.0 * qs0
            for dc in (-1.0, 0.0, 1.0):
                c = np.round(t0 / 4.0) + dc
                t = t0 - 4.0 * c
                gauge4 = t * t + (qx * qx + qy * qy) ** 2
                if best is None:
                    best = [gauge4.copy(), qx.copy(), qy.copy(), t.copy()]
                else:
                    mask = gauge4 < best[0]
                    best[0][mask] = gauge4[mask]
                    best[1][mask] = qx[mask]
                    best[2][mask] = qy[mask]
                    best[3][mask] = t[mask]

    return best[1], best[2], best[3], best[0] ** 0.25


class Chart:
    """Normal coordinates around a center node, for every node of the grid.

    Coordinates (zx, zy, t) are standard-frame Heisenberg coordinates with
    the center at the origin; the left-invariant frame is carried exactly
    onto the standard one, and `rho` is the periodized gauge.
    """

    def __init__(self, model: ManifoldModel, node):
        self.model = model
        self.center = tuple(int(c) for c in node)
        self.zx, self.zy, self.t, self.rho = normal_coordinates(
            model.node_point(self.center),
            np.broadcast_to(model.x, model.shape),
            np.broadcast_to(model.y, model.shape),
            np.broadcast_to(model.s, model.shape),
        )

    def point(self, node) -> HeisenbergPoint:
        i, j, k = node
        return HeisenbergPoint(complex(self.zx[i, j, k], self.zy[i, j, k]), float(self.t[i, j, k]))

    def gauge(self, node) -> float:
        i, j, k = node
        return float(self.rho[i, j, k])


def build_model(
    nx: int,
    ny: int,
    ns: int,
    yamabe_sign: str = "zero",
    r0: "np.ndarray | float | Callable | None" = None,
) -> ManifoldModel:
    """Construct a model; r0 may be a scalar, array, or callable of (x, y, s)."""
    if callable(r0):
        grid = ManifoldModel(nx, ny, ns)  # flat helper for coordinates
        r0 = r0(np.broadcast_to(grid.x, grid.shape),
                np.broadcast_to(grid.y, grid.shape),
                np.broadcast_to(grid.s, grid.shape))
    return ManifoldModel(nx, ny, ns, yamabe_sign=yamabe_sign, r0=r0)
