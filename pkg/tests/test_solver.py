import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degvis import solver
from degvis.errors import DomainError, PositivityLossError, UserAbort
from degvis.grid import Grid1D, SimState
from degvis.model import GasModel, theory_bounds
from degvis.profiles import FarFieldStates, make_initial_family
from degvis.solver import (
    SolverConfig,
    advance,
    initial_state,
    run,
    semidiscrete_rhs,
    snapshot_times,
    stable_dt,
    step,
)

SW = GasModel(2.0, 1.0)
FF = FarFieldStates(1.2, 0.8, 0.2, -0.2)


def cfg(eps=0.1, T=0.1, interval=None, **kw):
    return SolverConfig(eps=eps, end_time=T, snapshot_interval=interval or T, **kw)


def pulse(n=256, L=8.0, **kw):
    kw.setdefault("velocity_amplitude", 1.0)
    kw.setdefault("rho_amplitude", -0.2)
    kw.setdefault("width", 1.0)
    return make_initial_family("compressive-pulse", SW, Grid1D(L, n), FF, **kw)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(eps=0.0), dict(eps=1.0), dict(cfl_number=0.0),
                                    dict(cfl_number=1.5), dict(diffusion_number=0.0),
                                    dict(viscous_treatment="magic")])
    def test_rejects(self, kw):
        base = dict(eps=0.1, end_time=1.0, snapshot_interval=0.5)
        base.update(kw)
        with pytest.raises(DomainError):
            SolverConfig(**base)

    def test_interval_not_above_end_time(self):
        with pytest.raises(DomainError):
            SolverConfig(eps=0.1, end_time=1.0, snapshot_interval=2.0)


def test_constant_state_zero_tendency():
    g = Grid1D(4.0, 64)
    s = SimState(0.0, np.full(65, 0.7), np.zeros(65), g)
    dr, du = semidiscrete_rhs(SW, cfg(), s)
    assert not dr.any() and not du.any()


@given(st.floats(0.1, 3.0), st.floats(-2.0, 2.0), st.floats(0.01, 0.99))
@settings(max_examples=40, deadline=None)
def test_uniform_velocity_zero_tendency(rho, v, eps):
    g = Grid1D(4.0, 32)
    s = SimState(0.0, np.full(33, rho), np.full(33, v), g)
    dr, du = semidiscrete_rhs(SW, cfg(eps=eps), s)
    assert not dr.any() and not du.any()


def _manufactured_error(n, model, eps):
    L = 4.0
    g = Grid1D(L, n)
    x = g.x
    rho = 1.0 + 0.1 * np.sin(x)
    u = 0.1 * np.cos(x)
    rx, ux, uxx = 0.1 * np.cos(x), -0.1 * np.sin(x), -0.1 * np.cos(x)
    # eps small enough that the physical viscosity branch is active on [0.9, 1.1]
    a, gm = model.alpha, model.gamma
    m, dm = rho**a, a * rho ** (a - 1.0)
    exact_r = -(rx * u + rho * ux)
    exact_u = -u * ux - gm * rho ** (gm - 1.0) * rx / rho + (dm * rx * ux + m * uxx) / rho
    dr, du = semidiscrete_rhs(model, cfg(eps=eps), SimState(0.0, rho, u, g))
    inner = slice(1, -1)
    e_r = np.sqrt(g.dx * np.sum((dr - exact_r)[inner] ** 2))
    e_u = np.sqrt(g.dx * np.sum((du - exact_u)[inner] ** 2))
    return e_r, e_u


@pytest.mark.parametrize("model", [SW, GasModel(1.4, 0.7), GasModel(1.6, 1.6)])
def test_manufactured_spatial_operator_second_order(model):
    errs = [_manufactured_error(n, model, 1e-3) for n in (64, 128, 256, 512)]
    for k in range(2):
        orders = [math.log2(errs[i][k] / errs[i + 1][k]) for i in range(3)]
        assert all(1.9 <= o <= 2.1 for o in orders), orders


def test_stable_dt_hand_values():
    g = Grid1D(4.0, 64)
    s = SimState(0.0, np.ones(65), np.zeros(65), g)
    c = cfg(cfl_number=0.5, diffusion_number=0.4)
    assert stable_dt(SW, c, s) == pytest.approx(0.5 * g.dx / math.sqrt(2.0), rel=1e-15)
    ce = cfg(cfl_number=0.5, diffusion_number=0.4, viscous_treatment="explicit")
    assert stable_dt(SW, ce, s) == pytest.approx(min(0.5 * g.dx / math.sqrt(2), 0.4 * g.dx**2),
                                                 rel=1e-15)
    g2 = g.refine()
    s2 = SimState(0.0, np.ones(129), np.zeros(129), g2)
    assert stable_dt(SW, c, s2) == pytest.approx(0.5 * stable_dt(SW, c, s), rel=1e-15)


def test_stable_dt_eps_branch_scaling():
    g = Grid1D(4.0, 64)
    eps, rho = 0.5, 1e-3
    s = SimState(0.0, np.full(65, rho), np.zeros(65), g)
    ce = cfg(eps=eps, viscous_treatment="explicit", diffusion_number=0.4)
    expected = 0.4 * g.dx**2 * rho ** (1.0 - SW.alpha_star) / eps
    assert stable_dt(SW, ce, s) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("treatment", ["implicit", "explicit"])
def test_constant_state_exact_fixed_point(treatment):
    g = Grid1D(4.0, 64)
    s = SimState(0.0, np.full(65, 1.3), np.full(65, 0.4), g)
    c = cfg(viscous_treatment=treatment)
    for dt in (1e-4, 0.01, 0.3):
        out = step(SW, c, s, dt)
        assert np.array_equal(out.rho, s.rho) and np.array_equal(out.u, s.u)


def test_step_deterministic():
    d = pulse()
    s = initial_state(d)
    c = cfg()
    a, b = step(SW, c, s), step(SW, c, s)
    assert np.array_equal(a.rho, b.rho) and np.array_equal(a.u, b.u) and a.t == b.t


def test_boundary_nodes_pinned():
    d = pulse()
    s = advance(SW, cfg(), initial_state(d), 0.05)
    assert (s.rho[0], s.rho[-1], s.u[0], s.u[-1]) == (1.2, 0.8, 0.2, -0.2)


def test_snapshot_times_exact():
    c = SolverConfig(eps=0.1, end_time=1.0, snapshot_interval=0.1)
    times = snapshot_times(c)
    assert times == [k * 0.1 for k in range(10)] + [1.0]
    c3 = SolverConfig(eps=0.1, end_time=0.3, snapshot_interval=0.1)
    r = run(SW, c3, pulse(128))
    assert r.times == snapshot_times(c3) == [0.0, 0.1, 0.2, 0.3]


def test_background_exact_equal_far_fields_steady():
    g = Grid1D(4.0, 128)
    d = make_initial_family("background-exact", SW, g, FarFieldStates(0.9, 0.9, -0.3, -0.3))
    r = run(SW, SolverConfig(eps=0.1, end_time=0.5, snapshot_interval=0.1), d)
    assert r.completed
    assert {rec.min_rho for rec in r.records} == {0.9}


@pytest.mark.parametrize("treatment", ["implicit", "explicit"])
def test_mass_balance_per_snapshot(treatment):
    d = pulse(256)
    r = run(SW, SolverConfig(eps=0.1, end_time=0.5, snapshot_interval=0.1,
                             viscous_treatment=treatment), d)
    m0 = r.records[0].mass
    for rec in r.records:
        assert abs(rec.mass - m0 - rec.boundary_inflow) <= 1e-13 * m0


def test_headline_density_floor():
    d = pulse(1024)
    tb = theory_bounds(SW, 1.0, d.kappa0_lower)
    r = run(SW, SolverConfig(eps=0.1, end_time=1.0, snapshot_interval=0.1), d)
    assert r.completed
    assert min(rec.min_rho for rec in r.records) >= tb.kappa_T


def test_run_deterministic():
    d = pulse(128)
    c = SolverConfig(eps=0.1, end_time=0.2, snapshot_interval=0.1)
    a, b = run(SW, c, d), run(SW, c, d)
    assert a.records == b.records


def _losing_data():
    g = Grid1D(4.0, 256)
    return make_initial_family("expansive-pulse", SW, g, FarFieldStates(1e-3, 1e-3),
                               velocity_amplitude=80.0, width=0.5, enforce_mono=False)


def test_positivity_loss_raises_with_location():
    d = _losing_data()
    c = SolverConfig(eps=0.01, end_time=0.5, snapshot_interval=0.5)
    with pytest.raises(PositivityLossError) as exc:
        advance(SW, c, initial_state(d), 0.5)
    e = exc.value
    assert 0 < e.node < 256 and 0 < e.time < 0.5
    assert e.state is not None and np.all(e.state.rho > 0)


def test_positivity_loss_recorded_in_report():
    r = run(SW, SolverConfig(eps=0.01, end_time=0.5, snapshot_interval=0.01), _losing_data())
    assert r.status == "positivity-loss"
    assert r.failure_state is not None
    assert len(r.records) >= 2  # partial results kept


def test_nonpositive_state_rejected():
    g = Grid1D(4.0, 32)
    rho = np.ones(33)
    rho[5] = -1.0
    with pytest.raises(PositivityLossError) as exc:
        semidiscrete_rhs(SW, cfg(), SimState(0.0, rho, np.zeros(33), g))
    assert exc.value.node == 5


def test_user_abort():
    calls = []

    def obs(state):
        calls.append(state.t)
        if state.t > 0.15:
            raise UserAbort("enough")

    r = run(SW, SolverConfig(eps=0.1, end_time=0.5, snapshot_interval=0.1), pulse(64),
            observers=[obs])
    assert r.status == "user-abort"
    assert calls == pytest.approx([0.0, 0.1, 0.2])


def test_implicit_converges_to_explicit_in_time():
    # the implicit viscous split is first order in dt
    d = pulse(256)
    T = 0.1
    ref = advance(SW, cfg(T=T, viscous_treatment="explicit"), initial_state(d), T)
    diffs = []
    for cfl in (0.4, 0.2, 0.1):
        a = advance(SW, cfg(T=T, cfl_number=cfl), initial_state(d), T)
        diffs.append(np.max(np.abs(a.u - ref.u)))
    assert diffs[0] < 0.02
    assert diffs[0] / diffs[1] > 1.6 and diffs[1] / diffs[2] > 1.6


def _self_convergence(monkeypatch=None):
    levels = []
    amp = None
    for n in (128, 256, 512):
        d = pulse(n) if amp is None else pulse(n, velocity_amplitude=amp, enforce_mono=False)
        amp = d.params["effective_amplitude"]
        levels.append(advance(SW, cfg(T=0.1, viscous_treatment="explicit"), initial_state(d), 0.1))
    diffs = []
    for c, f in zip(levels[:-1], levels[1:]):
        diffs.append(math.sqrt(c.grid.dx * np.sum((c.rho - f.rho[::2]) ** 2)))
    return math.log2(diffs[0] / diffs[1])


def test_self_convergence_second_order():
    assert 1.8 <= _self_convergence() <= 2.2


def test_first_order_flux_mutation_detected(monkeypatch):
    def upwind(rho, u):
        m = rho * u
        return np.where(0.5 * (u[:-1] + u[1:]) >= 0.0, m[:-1], m[1:])

    monkeypatch.setattr(solver, "mass_flux", upwind)
    order = _self_convergence()
    assert 0.7 <= order <= 1.3
