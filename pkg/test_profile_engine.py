import math

import numpy as np
import pytest

from errors import ParameterError
from profile_engine import (
    derive_constants, inner_constants, inner_expansion_ode, profile_derivatives, profile_ds_from_dy,
    profile_phi, profile_phi0, rest_expansion,
)
from linearization_engine import rest_R


# ── constants ────────────────────────────────

def test_exponents_are_exact(params):
    assert params.q == pytest.approx(5.0 / 3.0, abs=1e-15)
    assert params.beta == pytest.approx(0.75, abs=1e-15)
    assert params.kappa == pytest.approx(2.0 ** -0.5, abs=1e-15)
    assert 2.0 * params.beta * (params.q - 1.0) == pytest.approx(1.0, abs=1e-15)


def test_profile_constants_p5(params):
    assert params.b == pytest.approx(13.5, abs=0.1)
    assert params.a == pytest.approx(1.19, abs=0.01)


def test_q_moment_matches_gamma_closed_form(params):
    closed = 2.0 ** (params.q + 1.0) * math.gamma((params.q + 1.0) / 2.0)
    assert params.q_moment == pytest.approx(closed, rel=1e-10)


def test_inner_constants_reproduce_b_and_a(params):
    c0, c2, B = inner_constants(params)
    assert c0 > 0 and c2 > 0
    assert params.b == pytest.approx(B * (params.p - 1.0) ** 2 / params.kappa, rel=1e-10)
    assert params.a == pytest.approx(2.0 * B, rel=1e-10)


@pytest.mark.parametrize("p", [4.0, 7.0, 9.0])
def test_other_exponents_derive(p):
    params = derive_constants(p, 1.0)
    assert params.beta == pytest.approx((p + 1.0) / (2.0 * (p - 1.0)))
    assert params.b > 0 and params.a > 0


def test_rejects_p_at_most_three():
    with pytest.raises(ParameterError, match="requires p > 3"):
        derive_constants(2.5, 1.0)
    with pytest.raises(ParameterError):
        derive_constants(3.0, 1.0)


def test_rejects_bad_mu_and_K():
    with pytest.raises(ParameterError):
        derive_constants(5.0, 0.0)
    with pytest.raises(ParameterError):
        derive_constants(5.0, 1.0, K=5.0)


# ── profile ──────────────────────────────────

def test_phi0_values(params):
    assert float(profile_phi0(0.0, params)) == pytest.approx(params.kappa, rel=1e-15)
    assert float(profile_phi0(1.0, params)) == pytest.approx((4.0 + params.b) ** -0.25, rel=1e-14)
    z = 1e6
    assert float(profile_phi0(z, params)) * (params.b * z * z) ** 0.25 == pytest.approx(1.0, rel=1e-6)


def test_phi_shift(params):
    s = 100.0
    assert float(profile_phi(0.0, s, params)) == pytest.approx(params.kappa + params.a * s ** -1.5, rel=1e-14)
    y = np.linspace(-30.0, 30.0, 61)
    shift = profile_phi(y, s, params) - profile_phi0(y / s ** params.beta, params)
    assert np.allclose(shift, params.a / s ** 1.5, rtol=1e-10, atol=0)


def test_phi_rejects_nonpositive_time(params):
    with pytest.raises(ParameterError):
        profile_phi(0.0, 0.0, params)


def test_derivatives_against_finite_differences(params):
    y, s = 3.0, 50.0
    d_y, d_yy, d_s = profile_derivatives(y, s, params)
    h = 1e-4
    fd_y = (profile_phi(y + h, s, params) - profile_phi(y - h, s, params)) / (2 * h)
    fd_s = (profile_phi(y, s + h, params) - profile_phi(y, s - h, params)) / (2 * h)
    k = 1e-3
    fd_yy = (profile_phi(y + k, s, params) - 2 * profile_phi(y, s, params) + profile_phi(y - k, s, params)) / k ** 2
    assert float(d_y) == pytest.approx(float(fd_y), rel=1e-6)
    assert float(d_s) == pytest.approx(float(fd_s), rel=1e-6)
    assert float(d_yy) == pytest.approx(float(fd_yy), rel=1e-5)


def test_gradient_vanishes_at_center_and_scales(params):
    d_y, _, _ = profile_derivatives(0.0, 10.0, params)
    assert float(d_y) == 0.0
    scaled = []
    for s in (10.0, 100.0, 1e3, 1e4):
        y = np.linspace(-10.0, 10.0, 4001) * s ** params.beta
        scaled.append(float(np.max(np.abs(profile_derivatives(y, s, params)[0]))) * s ** params.beta)
    assert max(scaled) / min(scaled) < 1.0 + 1e-9


def test_transport_form_of_time_derivative(params):
    y = np.linspace(-40.0, 40.0, 81)
    _, _, d_s = profile_derivatives(y, 30.0, params)
    assert np.allclose(profile_ds_from_dy(y, 30.0, params), d_s, rtol=1e-12, atol=1e-18)


# ── inner expansion ──────────────────────────

def test_slaved_inner_expansion_tracks_the_law(params):
    s0 = 10.0
    series = inner_expansion_ode(params, s0, 1e6, -params.B_inner / s0 ** (2.0 * params.beta))
    assert series.slaved
    assert np.all(series.w2 < 0)
    assert np.all(np.diff(series.w2) >= 0)
    assert abs(series.w2_ratio[-1] - 1.0) < 0.06


def test_inner_expansion_rejects_empty_interval(params):
    with pytest.raises(ParameterError):
        inner_expansion_ode(params, 10.0, 10.0, -0.01)


def test_rest_expansion_matches_rest_near_center(params):
    s = 1e4
    y = np.linspace(-0.03, 0.03, 121) * s ** params.beta
    exact = rest_R(y, s, params)
    approx = rest_expansion(y, s, params)
    assert np.max(np.abs(exact - approx)) <= 0.1 * np.max(np.abs(exact))
