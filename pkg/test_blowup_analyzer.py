import math

import numpy as np
import pytest

from blowup_analyzer import (
    alpha_window, estimate_blowup, final_profile, gradient_blowup_diagnostic, perturbed_initial_data,
    physical_trajectory, profile_convergence_error, solve_t0, stability_experiment, t0_residual,
)
from errors import BisectionError, FitRejectedError, ParameterError
from models import GridField, PhysicalSnapshot, PhysicalTrajectory, RunConfig, Trajectory
from monitor_engine import shrink_params
from profile_engine import profile_derivatives, profile_phi0
from shooting_engine import initial_psi


def _ode_blowup(params, T=1.0, peak=0.3) -> PhysicalTrajectory:
    """u = κ(T-t)^{-1/4}(1 + 0.1 e^{-(x-peak)²}): sup-norm follows the flat ODE law."""
    x = np.linspace(-1.0, 1.0, 201)
    shape = 1.0 + 0.1 * np.exp(-(x - peak) ** 2)
    snaps = [PhysicalSnapshot(t=T - math.exp(-s), x=x, u=params.kappa * math.exp(s / 4.0) * shape)
             for s in np.linspace(2.0, 6.0, 30)]
    return PhysicalTrajectory(T=T, snapshots=snaps)


# ── blow-up estimate ─────────────────────────

def test_estimate_on_exact_ode_data(params):
    est = estimate_blowup(_ode_blowup(params), params)
    assert est.T_est == pytest.approx(1.0, abs=1e-10)
    assert est.rate_exponent == pytest.approx(-0.25, abs=1e-8)
    assert est.accepted
    assert est.a_est == pytest.approx(0.3, abs=0.01)


def test_decaying_data_is_rejected(params):
    x = np.linspace(-1.0, 1.0, 11)
    snaps = [PhysicalSnapshot(t=t, x=x, u=np.full_like(x, 1.0 / (1.0 + t))) for t in np.linspace(0, 1, 10)]
    with pytest.raises(FitRejectedError):
        estimate_blowup(PhysicalTrajectory(T=2.0, snapshots=snaps), params)


def test_estimate_needs_three_snapshots(params):
    phys = _ode_blowup(params)
    short = PhysicalTrajectory(T=phys.T, snapshots=phys.snapshots[:2])
    with pytest.raises(FitRejectedError):
        estimate_blowup(short, params)


# ── single point ─────────────────────────────

def test_t0_solves_the_parabolic_boundary(params):
    t0 = solve_t0(0.1, 10.0, 1.0, params)
    assert 0.0 <= t0 < 1.0
    assert t0_residual(0.1, 10.0, 1.0, t0, params) <= 1e-10


def test_t0_rejects_origin_and_far_points(params):
    with pytest.raises(ParameterError):
        solve_t0(0.0, 4.0, 1.0, params)
    with pytest.raises(BisectionError):
        solve_t0(100.0, 4.0, 1.0, params)


# ── final profile ────────────────────────────

def test_final_profile_on_its_own_model(params):
    g = np.geomspace(1e-7, 0.9, 400)
    x = np.concatenate([-g[::-1], g])
    ax = np.abs(x)
    argument = params.b * ax ** 2 / (2.0 * np.abs(np.log(ax))) ** (2.0 * params.beta)
    snap = PhysicalSnapshot(t=1.0 - math.exp(-30.0), x=x, u=argument ** -0.25)
    report = final_profile(PhysicalTrajectory(T=1.0, snapshots=[snap]), params)

    assert report.decades >= 1.0
    assert report.fit.slope == pytest.approx(-0.25, abs=1e-10)
    assert all(r["ratio"] == pytest.approx(1.0, rel=1e-10) for r in report.rows)


def test_final_profile_needs_a_decade(params):
    g = np.geomspace(1e-7, 0.9, 50)
    x = np.concatenate([-g[::-1], g])
    snap = PhysicalSnapshot(t=1.0 - math.exp(-30.0), x=x, u=np.ones_like(x))
    with pytest.raises(FitRejectedError):
        final_profile(PhysicalTrajectory(T=1.0, snapshots=[snap]), params, z_min=1e4)


# ── profile and gradient diagnostics ─────────

def test_profile_error_vanishes_on_the_profile(params):
    s = 40.0
    w = GridField.from_function(lambda y: profile_phi0(y / s ** params.beta, params), s, 100.0, 0.1)
    err = profile_convergence_error(w, s, params)
    assert err.sup_error == 0.0
    assert err.predicted_order == pytest.approx(0.25)
    wrong = profile_convergence_error(w, s, params, beta_override=0.5)
    assert wrong.sup_error > 0.1


def test_alpha_window(params):
    assert alpha_window(params, 2.45) == pytest.approx(0.475)
    with pytest.raises(ParameterError):
        gradient_blowup_diagnostic(Trajectory(s0=10.0), params, alpha=0.6, gamma=2.45)


# ── perturbations and variable change ────────

def test_bump_and_translation(params):
    s0 = 15.0
    psi = initial_psi(0.0, 0.0, s0, 20.0, params, 120.0, 0.2)
    bump = perturbed_initial_data("bump", 1e-3, psi, params)
    assert bump.values[(bump.n - 1) // 2] == pytest.approx(1e-3)

    eps = 1e-3
    moved = perturbed_initial_data("translation", eps, psi, params)
    inner = np.abs(psi.y) <= 50.0
    expected = -eps * profile_derivatives(psi.y, s0, params)[0]
    assert np.max(np.abs(moved.values - expected)[inner]) <= 1e-2 * np.max(np.abs(expected[inner]))
    assert moved.values[0] == 0.0 and moved.values[-1] == 0.0

    with pytest.raises(ParameterError):
        perturbed_initial_data("rotation", 1e-3, psi, params)


def test_physical_trajectory_starts_at_zero_and_dedupes(params):
    v = GridField.from_function(lambda y: np.zeros_like(y), 10.0, 20.0, 0.1)
    traj = Trajectory(s0=10.0, snapshots=[v, v.with_values(v.values.copy())])
    phys = physical_trajectory(traj, params, frame="constant")
    assert len(phys.snapshots) == 1
    assert phys.snapshots[0].t == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(phys.snapshots[0].u, params.kappa * math.exp(2.5), rtol=1e-12)


def test_translation_moves_the_blowup_point_by_eps(params):
    cfg = RunConfig(dy=0.2, ds_out=0.05, snapshot_every=1)
    eps_list = [1e-2, 1e-3]
    report = stability_experiment(params, cfg, shrink_params(params, 20.0, 0.05), 15.0, 0.5, 0.0, 0.0, eps_list)

    assert report.rows[0]["kind"] == "base"
    translation = [r for r in report.rows if r["kind"] == "translation"]
    assert sorted(r["eps"] for r in translation) == sorted(eps_list)
    for row in translation:
        assert abs(row["da_y0"] - row["eps"]) <= cfg.dy

    assert set(report.monotone) == {"bump", "translation"}
    assert all(set(cols) == {"dT", "da_y0"} for cols in report.monotone.values())
    assert report.verdict == {"bump": True, "translation": True}
