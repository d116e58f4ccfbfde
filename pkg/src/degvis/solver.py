"""Method-of-lines integration of the regularized system on a truncated domain.

Density obeys the conservative continuity equation with a central flux,
velocity the primitive momentum equation

    u_t = -u u_x - p'(rho) rho_x / rho + (mu_eps(rho) u_x)_x / rho,

with the viscous term a three-point flux using face-averaged ``mu_eps``.
Boundary nodes stay pinned to their initial (far-field) values.

Time stepping is SSP-RK3 in Shu-Osher form. In the ``implicit`` treatment
each forward-Euler stage advances convection and pressure explicitly and then
solves the viscous term by backward Euler (tridiagonal system, ``mu_eps``
frozen at the stage start).
"""
from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.linalg import solve_banded

from .errors import DomainError, PositivityLossError, UserAbort
from .grid import SimState
from .model import GasModel, mu_eps

TREATMENTS = ("explicit", "implicit")

# weights of the three stage tendencies in the SSP-RK3 update
_STAGE_WEIGHTS = (1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0)


@dataclass(frozen=True)
class SolverConfig:
    eps: float
    end_time: float
    snapshot_interval: float
    cfl_number: float = 0.5
    diffusion_number: float = 0.4
    viscous_treatment: str = "implicit"

    def __post_init__(self):
        if not (0.0 < self.eps < 1.0):
            raise DomainError(f"eps must lie in (0, 1), got {self.eps}")
        if not (0.0 < self.cfl_number <= 1.0):
            raise DomainError(f"cfl_number must lie in (0, 1], got {self.cfl_number}")
        if not (self.diffusion_number > 0.0):
            raise DomainError(f"diffusion_number must be positive, got {self.diffusion_number}")
        if not (self.end_time > 0.0 and math.isfinite(self.end_time)):
            raise DomainError(f"end_time must be positive, got {self.end_time}")
        if not (0.0 < self.snapshot_interval <= self.end_time):
            raise DomainError(
                f"snapshot_interval must lie in (0, end_time], got {self.snapshot_interval}")
        if self.viscous_treatment not in TREATMENTS:
            raise DomainError(
                f"viscous_treatment must be one of {TREATMENTS}, got {self.viscous_treatment!r}")

    def to_dict(self):
        return asdict(self)


def _check_positive(rho, t, state=None):
    ok = rho > 0.0
    if not ok.all():
        i = int(np.argmin(np.where(np.isnan(rho), -np.inf, rho)))
        raise PositivityLossError(i, t, state=state, value=float(rho[i]))


def mass_flux(rho, u):
    """Central face flux ``(rho u)_{i+1/2}``, one entry per cell."""
    m = rho * u
    return 0.5 * (m[:-1] + m[1:])


def _convective_rhs(model, rho, u, dx, flux):
    drho = np.zeros_like(rho)
    du = np.zeros_like(u)
    drho[1:-1] = -(flux[1:] - flux[:-1]) / dx
    r = rho[1:-1]
    du[1:-1] = (
        -u[1:-1] * (u[2:] - u[:-2]) / (2.0 * dx)
        - model.gamma * r ** (model.gamma - 2.0) * (rho[2:] - rho[:-2]) / (2.0 * dx)
    )
    return drho, du


def _face_mu(model, eps, rho):
    m = mu_eps(model, eps, rho)
    return 0.5 * (m[:-1] + m[1:])


def _viscous_rhs(mu_face, rho, u, dx):
    out = np.zeros_like(u)
    q = mu_face * (u[1:] - u[:-1])
    out[1:-1] = (q[1:] - q[:-1]) / (dx * dx * rho[1:-1])
    return out


def semidiscrete_rhs(model: GasModel, cfg: SolverConfig, state: SimState):
    """Tendencies ``(drho/dt, du/dt)``; boundary nodes get zero."""
    rho, u, dx = state.rho, state.u, state.grid.dx
    _check_positive(rho, state.t, state)
    flux = mass_flux(rho, u)
    drho, du = _convective_rhs(model, rho, u, dx, flux)
    du += _viscous_rhs(_face_mu(model, cfg.eps, rho), rho, u, dx)
    return drho, du


def stable_dt(model: GasModel, cfg: SolverConfig, state: SimState):
    rho, u, dx = state.rho, state.u, state.grid.dx
    c = np.sqrt(model.gamma * rho ** (model.gamma - 1.0))
    speed = float(np.max(np.abs(u) + c))
    dt = cfg.cfl_number * dx / speed
    if cfg.viscous_treatment == "explicit":
        ratio = float(np.min(rho / mu_eps(model, cfg.eps, rho)))
        dt = min(dt, cfg.diffusion_number * dx * dx * ratio)
    return dt


def _implicit_viscous(mu_face, rho, u, dx, dt):
    """Backward-Euler increment ``delta`` with ``(I - dt V) delta = dt V u``."""
    rhs = dt * _viscous_rhs(mu_face, rho, u, dx)[1:-1]
    if not rhs.any():
        return np.zeros_like(u)
    scale = dt / (dx * dx * rho[1:-1])
    lo = scale * mu_face[:-1]
    hi = scale * mu_face[1:]
    n = rhs.size
    ab = np.empty((3, n))
    ab[0, 1:] = -hi[:-1]
    ab[0, 0] = 0.0
    ab[1] = 1.0 + lo + hi
    ab[2, :-1] = -lo[1:]
    ab[2, -1] = 0.0
    delta = np.zeros_like(u)
    delta[1:-1] = solve_banded((1, 1), ab, rhs, overwrite_ab=True, overwrite_b=True,
                               check_finite=False)
    return delta


def _euler_stage(model, cfg, rho, u, dx, dt, t):
    """One forward-Euler stage; returns new (rho, u) and the boundary inflow rate."""
    flux = mass_flux(rho, u)
    drho, du = _convective_rhs(model, rho, u, dx, flux)
    mu_face = _face_mu(model, cfg.eps, rho)
    rho_new = rho + dt * drho
    _check_positive(rho_new, t + dt)
    if cfg.viscous_treatment == "explicit":
        u_new = u + dt * (du + _viscous_rhs(mu_face, rho, u, dx))
    else:
        u_star = u + dt * du
        u_new = u_star + _implicit_viscous(mu_face, rho_new, u_star, dx, dt)
    return rho_new, u_new, float(flux[0] - flux[-1])


def step(model: GasModel, cfg: SolverConfig, state: SimState, dt=None) -> SimState:
    """Advance one SSP-RK3 step of size ``dt`` (default: ``stable_dt``)."""
    if dt is None:
        dt = stable_dt(model, cfg, state)
    dx = state.grid.dx
    rho0, u0 = state.rho, state.u
    _check_positive(rho0, state.t, state)
    try:
        r1, v1, b0 = _euler_stage(model, cfg, rho0, u0, dx, dt, state.t)
        r, v, b1 = _euler_stage(model, cfg, r1, v1, dx, dt, state.t)
        r2 = rho0 + 0.25 * (r - rho0)
        v2 = u0 + 0.25 * (v - u0)
        _check_positive(r2, state.t + 0.5 * dt)
        r, v, b2 = _euler_stage(model, cfg, r2, v2, dx, dt, state.t)
        rho = rho0 + (2.0 / 3.0) * (r - rho0)
        u = u0 + (2.0 / 3.0) * (v - u0)
        _check_positive(rho, state.t + dt)
    except PositivityLossError as exc:
        exc.state = state
        raise
    w0, w1, w2 = _STAGE_WEIGHTS
    inflow = state.boundary_inflow + dt * (w0 * b0 + w1 * b1 + w2 * b2)
    return SimState(state.t + dt, rho, u, state.grid, inflow, state.steps + 1)


def advance(model, cfg, state, t_target, dt_override=None):
    """Step until ``t_target`` is reached exactly (the last steps are clipped)."""
    s = state
    while s.t < t_target:
        dt = dt_override if dt_override is not None else stable_dt(model, cfg, s)
        remaining = t_target - s.t
        if dt >= remaining:
            dt = remaining
        elif 2.0 * dt > remaining:
            dt = 0.5 * remaining
        s = step(model, cfg, s, dt)
        if dt == remaining:
            s.t = t_target
    return s


def snapshot_times(cfg: SolverConfig):
    k = int(math.floor(cfg.end_time / cfg.snapshot_interval * (1.0 + 1e-12)))
    times = [i * cfg.snapshot_interval for i in range(k + 1)]
    if cfg.end_time - times[-1] > 1e-12 * cfg.end_time:
        times.append(cfg.end_time)
    else:
        times[-1] = cfg.end_time
    return times


@dataclass
class RunReport:
    model: dict
    config: dict
    grid: dict
    status: str
    message: str = ""
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    failure_state: SimState | None = None
    final_state: SimState | None = None
    steps: int = 0
    wall_time: float = 0.0
    initial: dict = field(default_factory=dict)

    @property
    def completed(self):
        return self.status == "completed"

    @property
    def eps(self):
        return self.config["eps"]

    @property
    def times(self):
        return [r.t for r in self.records]


def initial_state(data):
    return SimState(0.0, data.rho0.copy(), data.u0.copy(), data.grid)


def run(model: GasModel, cfg: SolverConfig, data, observers=None, keep_snapshots=False):
    """Integrate to ``cfg.end_time`` calling observers at each snapshot time.

    Each observer is called as ``observer(state)``; non-None results are
    collected into ``report.records``. If ``observers`` is None a diagnostics
    recorder is installed. An observer may raise ``UserAbort`` to stop.
    """
    if observers is None:
        from .diagnostics import Recorder
        observers = [Recorder(model, cfg.eps, data.background)]
    report = RunReport(
        model=model.to_dict(), config=cfg.to_dict(),
        grid={"half_length": data.grid.half_length, "cells": data.grid.cells},
        status="running",
        initial={"family": data.family, "kappa0_lower": data.kappa0_lower,
                 "kappa0_upper": data.kappa0_upper},
    )
    state = initial_state(data)
    start = _time.perf_counter()

    def observe(s):
        for obs in observers:
            rec = obs(s)
            if rec is not None:
                report.records.append(rec)
        if keep_snapshots:
            report.snapshots.append(s.copy())

    try:
        _check_positive(state.rho, 0.0, state)
        times = snapshot_times(cfg)
        observe(state)
        for t_next in times[1:]:
            state = advance(model, cfg, state, t_next)
            observe(state)
        report.status = "completed"
    except PositivityLossError as exc:
        report.status = "positivity-loss"
        report.message = str(exc)
        report.failure_state = exc.state
    except UserAbort as exc:
        report.status = "user-abort"
        report.message = str(exc)
    report.final_state = state
    report.steps = state.steps
    report.wall_time = _time.perf_counter() - start
    return report
