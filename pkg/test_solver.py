import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from errors import DivergenceError, DomainError, ParameterError
from models import GridField, RunConfig
from solver import PerturbationSolver, from_physical, physical_time, self_similar_time, to_physical
from spectral_engine import hermite_h

LINEAR_ONLY = dict(include_V=False, include_B=False, include_G=False, include_R=False)


def _start(solver: PerturbationSolver, s0: float, s_end: float, f) -> GridField:
    return GridField.from_function(f, s0, solver.required_half_width(s_end), solver.cfg.dy)


def _center(field: GridField) -> float:
    return float(field.values[(field.n - 1) // 2])


# ── dynamics ─────────────────────────────────

def test_flat_data_follows_the_scalar_ode(params):
    cfg = RunConfig(dy=0.1, dt_safety=0.1, frame="constant", include_G=False, ds_out=0.1, snapshot_every=1)
    solver = PerturbationSolver(params, cfg)
    c = 0.05
    v0 = _start(solver, 2.0, 3.0, lambda y: np.full_like(y, c))
    traj = solver.run(v0, 3.0)

    kappa, p = params.kappa, params.p
    ode = solve_ivp(lambda s, v: -v / (p - 1.0) + (kappa + v) ** p - kappa ** p,
                    (2.0, 3.0), [c], rtol=1e-11, atol=1e-14)
    assert traj.snapshots[-1].s == pytest.approx(3.0, abs=1e-9)
    assert _center(traj.snapshots[-1]) == pytest.approx(float(ode.y[0, -1]), rel=1e-5)


def test_linear_modes_grow_at_their_eigenvalues(params):
    cfg = RunConfig(dy=0.1, dt_safety=0.1, ds_out=0.1, **LINEAR_ONLY)
    solver = PerturbationSolver(params, cfg)
    v0 = _start(solver, 2.0, 3.0, lambda y: hermite_h(0, y) + hermite_h(1, y) + hermite_h(2, y))
    traj = solver.run(v0, 3.0)

    first, last = traj.series[0], traj.series[-1]
    assert last.s == pytest.approx(3.0, abs=1e-9)
    assert last.v0 / first.v0 == pytest.approx(math.e, rel=1e-4)
    assert last.v1 / first.v1 == pytest.approx(math.exp(0.5), rel=1e-4)
    assert last.v2 / first.v2 == pytest.approx(1.0, rel=1e-4)


def _manufactured_error(params, dy: float) -> float:
    # v = (1 + s/2) e^{-y²/2}, forced through `source`
    def exact(y, s):
        return (1.0 + 0.5 * s) * np.exp(-y * y / 2.0)

    def source(y, s):
        g = np.exp(-y * y / 2.0)
        return 0.5 * g - (1.0 + 0.5 * s) * 1.5 * y * y * g

    cfg = RunConfig(dy=dy, ds_out=0.5, **LINEAR_ONLY)
    solver = PerturbationSolver(params, cfg, source=source)
    v0 = _start(solver, 2.0, 2.5, lambda y: exact(y, 2.0))
    final = solver.run(v0, 2.5).snapshots[-1]
    window = np.abs(final.y) <= 5.0
    return float(np.max(np.abs(final.values - exact(final.y, final.s))[window]))


def test_spatial_order_is_two(params):
    errors = [_manufactured_error(params, dy) for dy in (0.2, 0.1, 0.05)]
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    for order in orders:
        assert 1.8 <= order <= 2.2


def test_gradient_regularization_does_not_move_the_solution(params):
    finals = []
    for eps in (1e-10, 1e-12):
        solver = PerturbationSolver(params, RunConfig(dy=0.2, ds_out=0.1, eps_grad=eps))
        v0 = _start(solver, 15.0, 15.5, lambda y: 1e-3 * np.exp(-y * y / 8.0))
        finals.append(solver.run(v0, 15.5).snapshots[-1].values)
    assert finals[0].shape == finals[1].shape
    assert np.max(np.abs(finals[0] - finals[1])) <= 1e-6 * np.max(np.abs(finals[1]))


def test_divergence_keeps_the_partial_run(params):
    cfg = RunConfig(dy=0.2, frame="constant", include_G=False, ds_out=0.05, snapshot_every=1,
                    blowup_guard=10.0)
    solver = PerturbationSolver(params, cfg)
    v0 = _start(solver, 2.0, 6.0, lambda y: np.full_like(y, 1.0))
    with pytest.raises(DivergenceError) as info:
        solver.run(v0, 6.0)
    partial = info.value.trajectory
    assert partial is not None and len(partial.series) >= 1
    assert partial.snapshots[-1].s <= info.value.s


# ── domain and arguments ─────────────────────

def test_domain_growth_pads_with_zeros(params):
    solver = PerturbationSolver(params, RunConfig(dy=0.1))
    v = GridField.from_function(lambda y: np.exp(-y * y), 2.0, solver.required_half_width(2.0), 0.1)
    grown = solver.fit_domain(v, 4.0, 5.0)
    assert grown.half_width >= solver.required_half_width(5.0) - 0.1
    pad = (grown.n - v.n) // 2
    assert np.array_equal(grown.values[pad:pad + v.n], v.values)
    assert np.all(grown.values[:pad] == 0.0)


def test_frozen_domain_is_refused(params):
    solver = PerturbationSolver(params, RunConfig(dy=0.1, domain_growth=False))
    v = GridField.from_function(lambda y: np.exp(-y * y), 2.0, solver.required_half_width(2.0), 0.1)
    with pytest.raises(DomainError):
        solver.fit_domain(v, 4.0, 5.0)


def test_bad_time_arguments(params):
    solver = PerturbationSolver(params, RunConfig(dy=0.1))
    v = GridField.on_grid(2.0, solver.required_half_width(2.0), 0.1)
    with pytest.raises(ParameterError):
        solver.run(v, 2.0)
    with pytest.raises(ParameterError):
        solver.step(v, ds=0.0)


def test_boundary_stays_at_zero(params):
    solver = PerturbationSolver(params, RunConfig(dy=0.1))
    v = GridField.from_function(lambda y: np.full_like(y, 1e-3), 2.0, solver.required_half_width(2.0), 0.1)
    out = solver.step(v)
    assert out.values[0] == 0.0 and out.values[-1] == 0.0
    assert out.s > v.s


# ── variable changes ─────────────────────────

def test_time_maps():
    assert physical_time(0.0, 1.0) == 0.0
    assert self_similar_time(physical_time(3.0, 1.0), 1.0) == pytest.approx(3.0, abs=1e-12)
    with pytest.raises(ParameterError):
        self_similar_time(1.0, 1.0)


def test_flat_profile_maps_to_the_ode_blowup(params):
    s, T = 2.0, 1.0
    w = GridField.from_function(lambda y: np.full_like(y, params.kappa), s, 10.0, 0.1)
    snap = to_physical(w, T, params)
    tau = math.exp(-s)
    assert snap.t == pytest.approx(T - tau)
    assert np.allclose(snap.u, params.kappa * tau ** -0.25, rtol=1e-14)
    assert snap.x[-1] == pytest.approx(10.0 * math.sqrt(tau))

    back = from_physical(snap, T, params, dy=0.1)
    assert back.s == pytest.approx(s, abs=1e-12)
    assert np.allclose(back.values, params.kappa, rtol=1e-12)


def test_physical_window_is_enforced(params):
    w = GridField.from_function(lambda y: np.zeros_like(y), 2.0, 10.0, 0.1)
    with pytest.raises(DomainError):
        to_physical(w, 1.0, params, x=np.array([0.0, 5.0]))
