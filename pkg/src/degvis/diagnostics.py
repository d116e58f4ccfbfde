"""Quantities estimated by the a priori theory, computed from simulation states."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import DomainError, StructuralError
from .grid import SimState, d2dx2, ddx, trapezoid
from .model import (
    coefficients_f,
    gronwall_closed_form,
    j_coefficients,
    mu,
    mu_eps,
    potential_bound_constants,
    pressure,
    pressure_deriv,
)

HK_ORDER = 4


def active_potential(model, eps, state):
    """``w = -p(rho) + mu_eps(rho) u_x`` on every node (solver stencil for ``u_x``)."""
    dudx = ddx(state.u, state.grid.dx)
    return -pressure(model, state.rho) + mu_eps(model, eps, state.rho) * dudx


def relative_pressure(model, a, b):
    """Convexity gap ``p(a) - p(b) - p'(b) (a - b)``."""
    return pressure(model, a) - pressure(model, b) - pressure_deriv(model, b) * (a - b)


def bd_energies(model, eps, state, background):
    """Relative energy ``E1`` and its Bresch-Desjardins counterpart ``E2``."""
    x, dx = state.grid.x, state.grid.dx
    rho, u = state.rho, state.u
    rbar, ubar = background.rho(x), background.u(x)
    rel_p = relative_pressure(model, rho, rbar)
    du = u - ubar
    e1 = trapezoid(rho * du**2 + rel_p, dx)
    drift = mu_eps(model, eps, rho) / rho**2 * ddx(rho, dx)
    e2 = trapezoid(rho * (du + drift) ** 2 + rel_p, dx)
    return e1, e2


def hk_seminorms(field_values, dx, k=HK_ORDER):
    """``[|f|_{H^0}, ..., |f|_{H^k}]`` from j-th differences, trapezoid-integrated."""
    f = np.asarray(field_values, dtype=float)
    if not 0 <= k <= HK_ORDER:
        raise DomainError(f"k must lie in 0..{HK_ORDER}, got {k}")
    if f.ndim != 1 or f.size < 2 * k + 1:
        raise StructuralError(f"need at least {2 * k + 1} nodes for order {k}, got {f.size}")
    out = np.empty(k + 1)
    for j in range(k + 1):
        dj = np.diff(f, n=j) / dx**j if j else f
        out[j] = math.sqrt(trapezoid(dj * dj, dx))
    return out


def discrete_hk_norm(field_values, grid, k):
    return float(np.sqrt(np.sum(hk_seminorms(field_values, grid.dx, k) ** 2)))


def w_equation_terms(model, eps, rho, u, w, dx):
    """Right side of the active-potential equation evaluated on interior nodes 2..N-2."""
    mu_e = mu_eps(model, eps, rho)
    wx = ddx(w, dx)
    wxx = d2dx2(w, dx)
    rx = ddx(rho, dx)
    f1, f2, f3 = coefficients_f(model, eps, rho)
    rhs = mu_e / rho * wxx - (u + mu_e * rx / rho**2) * wx + f1 * w - f2 * w**2 + f3
    return rhs[2:-2]


def w_equation_residual(model, eps, state_prev, state_next):
    """Discrete L2 norm of the active-potential equation residual between two states.

    The time derivative is the difference quotient over ``state_next.t -
    state_prev.t``; the spatial side uses the averaged (midpoint) state.
    """
    if state_prev.grid != state_next.grid:
        raise StructuralError("states live on different grids")
    dt = state_next.t - state_prev.t
    if not dt > 0.0:
        raise StructuralError(f"states must be time-ordered, got dt={dt}")
    dx = state_prev.grid.dx
    w0 = active_potential(model, eps, state_prev)
    w1 = active_potential(model, eps, state_next)
    rho = 0.5 * (state_prev.rho + state_next.rho)
    u = 0.5 * (state_prev.u + state_next.u)
    resid = (w1 - w0)[2:-2] / dt - w_equation_terms(model, eps, rho, u, 0.5 * (w0 + w1), dx)
    return math.sqrt(dx * float(np.sum(resid * resid)))


@dataclass(frozen=True)
class GronwallEnvelope:
    times: np.ndarray
    values: np.ndarray
    C_gamma: float
    theta: float
    eps: float
    closed_form: float
    explicit_estimate: float


def linear_comparison_solution(j1, j2, y0, times):
    """``y(t) = e^{A(t)} (y0 + int_0^t J2 e^{-A})``, ``A = int_0^t J1``, by cumulative trapezoid."""
    t = np.asarray(times, dtype=float)
    j1 = np.asarray(j1, dtype=float)
    j2 = np.asarray(j2, dtype=float)
    if j1.shape != t.shape or j2.shape != t.shape:
        raise StructuralError("coefficient series and times must align")
    h = np.diff(t)
    a = np.concatenate(([0.0], np.cumsum(0.5 * h * (j1[1:] + j1[:-1]))))
    g = j2 * np.exp(-a)
    b = np.concatenate(([0.0], np.cumsum(0.5 * h * (g[1:] + g[:-1]))))
    return np.exp(a) * (y0 + b)


def gronwall_envelope(model, eps, wM_initial, rhoM, times):
    """Solution of ``y' = J1(rhoM) y + J2(rhoM)``, ``y(t0) = wM_initial`` by trapezoid quadrature.

    ``closed_form`` is ``C_gamma * eps**theta`` for the horizon ``times[-1] - times[0]``
    and ``explicit_estimate`` the intermediate explicit estimate it is derived from.
    """
    t = np.asarray(times, dtype=float)
    r = np.asarray(rhoM, dtype=float)
    if t.ndim != 1 or r.shape != t.shape or t.size < 1:
        raise StructuralError("rhoM and times must be 1-D arrays of equal length")
    if np.any(np.diff(t) <= 0.0):
        raise DomainError("times must be strictly increasing")
    if np.any(~(r > 0.0)):
        raise DomainError("densities must be positive")
    j1, j2 = j_coefficients(model, eps, r)
    values = linear_comparison_solution(np.atleast_1d(j1), np.atleast_1d(j2), wM_initial, t)
    horizon = float(t[-1] - t[0]) if t.size > 1 else 0.0
    _, c_gamma = potential_bound_constants(model, horizon if horizon > 0.0 else 1.0)
    return GronwallEnvelope(
        times=t, values=values, C_gamma=c_gamma, theta=model.theta, eps=eps,
        closed_form=c_gamma * eps**model.theta,
        explicit_estimate=gronwall_closed_form(model, eps, horizon),
    )


@dataclass(frozen=True)
class FloorCheck:
    passed: bool
    worst_margin: float
    worst_time: float | None
    margins: np.ndarray
    sharp_margins: np.ndarray | None = None


def density_floor_ode_check(model, eps, rhoM, wM, times, C_gamma, delta_1, tol=0.0):
    """Check ``rho_m' >= -rho_m**(1+gamma-alpha) - C_gamma delta_1**theta rho_m**(1-alpha)``.

    ``rho_m'`` is the difference quotient between consecutive entries and the
    right side is evaluated at the interval average. When ``wM`` is given the
    sharper intermediate bound ``-rho_m (p(rho_m) + wM) / mu_eps(rho_m)``
    is also reported (informational).
    """
    t = np.asarray(times, dtype=float)
    r = np.asarray(rhoM, dtype=float)
    if r.shape != t.shape:
        raise StructuralError("rhoM and times must align")
    if t.size < 2:
        return FloorCheck(True, math.inf, None, np.empty(0))
    g, a = model.gamma, model.alpha
    dt = np.diff(t)
    lhs = np.diff(r) / dt
    rm = 0.5 * (r[1:] + r[:-1])
    rhs = -(rm ** (1.0 + g - a)) - C_gamma * delta_1**model.theta * rm ** (1.0 - a)
    margins = lhs - rhs
    sharp = None
    if wM is not None:
        w = np.asarray(wM, dtype=float)
        if w.shape != t.shape:
            raise StructuralError("wM and times must align")
        wm = 0.5 * (w[1:] + w[:-1])
        sharp = lhs + rm * (pressure(model, rm) + wm) / mu_eps(model, eps, rm)
    k = int(np.argmin(margins))
    worst = float(margins[k])
    return FloorCheck(bool(worst >= -tol), worst, float(t[k]), margins, sharp)


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    min_rho: float
    argmin_rho_x: float
    max_rho: float
    sup_w: float
    argmax_w_x: float
    rho_at_argmax_w: float
    w_at_argmin_rho: float
    bd_energy_1: float
    bd_energy_2: float
    hk_rho: tuple
    hk_u: tuple
    w_residual_l2: float
    mu_max_rel_deviation: float
    mass: float
    boundary_inflow: float

    @property
    def hk_norms(self):
        return np.array(self.hk_rho + self.hk_u)

    @property
    def h4_rho(self):
        return float(np.sqrt(np.sum(np.square(self.hk_rho))))

    @property
    def h4_u(self):
        return float(np.sqrt(np.sum(np.square(self.hk_u))))


def record_columns(k=HK_ORDER):
    cols = []
    for f in fields(DiagnosticsRecord):
        if f.name == "hk_rho":
            cols += [f"hk_rho_{j}" for j in range(k + 1)]
        elif f.name == "hk_u":
            cols += [f"hk_u_{j}" for j in range(k + 1)]
        else:
            cols.append(f.name)
    return cols


def record_to_row(rec):
    row = []
    for f in fields(DiagnosticsRecord):
        v = getattr(rec, f.name)
        if isinstance(v, tuple):
            row.extend(float(x) for x in v)
        else:
            row.append(float(v))
    return row


def record_from_row(values, k=HK_ORDER):
    values = [float(v) for v in values]
    kw, i = {}, 0
    for f in fields(DiagnosticsRecord):
        if f.name in ("hk_rho", "hk_u"):
            kw[f.name] = tuple(values[i:i + k + 1])
            i += k + 1
        else:
            kw[f.name] = values[i]
            i += 1
    return DiagnosticsRecord(**kw)


def snapshot_record(model, eps, state, background, prev=None):
    x, dx = state.grid.x, state.grid.dx
    rho, u = state.rho, state.u
    w = active_potential(model, eps, state)
    i_min = int(np.argmin(rho))
    i_w = int(np.argmax(w))
    e1, e2 = bd_energies(model, eps, state, background)
    mu_e = mu_eps(model, eps, rho)
    mu_0 = mu(model, rho)
    resid = w_equation_residual(model, eps, prev, state) if prev is not None else math.nan
    return DiagnosticsRecord(
        t=float(state.t),
        min_rho=float(rho[i_min]),
        argmin_rho_x=float(x[i_min]),
        max_rho=float(np.max(rho)),
        sup_w=float(w[i_w]),
        argmax_w_x=float(x[i_w]),
        rho_at_argmax_w=float(rho[i_w]),
        w_at_argmin_rho=float(w[i_min]),
        bd_energy_1=e1,
        bd_energy_2=e2,
        hk_rho=tuple(float(v) for v in hk_seminorms(rho - background.rho(x), dx)),
        hk_u=tuple(float(v) for v in hk_seminorms(u - background.u(x), dx)),
        w_residual_l2=resid,
        mu_max_rel_deviation=float(np.max(np.abs(mu_e - mu_0) / mu_0)),
        mass=state.mass(),
        boundary_inflow=float(state.boundary_inflow),
    )


@dataclass
class Recorder:
    """Observer producing one ``DiagnosticsRecord`` per snapshot."""

    model: object
    eps: float
    background: object
    _prev: SimState | None = field(default=None, repr=False)

    def __call__(self, state):
        rec = snapshot_record(self.model, self.eps, state, self.background, self._prev)
        self._prev = state.copy()
        return rec
