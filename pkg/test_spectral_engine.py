import math

import numpy as np
import pytest

from errors import DomainError, QuadratureError
from models import GridField
from spectral_engine import (
    SQRT_4PI, Quadrature, abs_moment, abs_moment_closed_form, chi0, hermite_h, inner_product_rho,
    moment_rows, orthogonality_rows, project_mode, project_modes, truncation_chi,
)


def test_hermite_polynomials():
    y = np.linspace(-5.0, 5.0, 41)
    assert np.allclose(hermite_h(2, y), y ** 2 - 2.0)
    assert float(hermite_h(3, 0.0)) == 0.0
    assert np.allclose(hermite_h(4, y), y ** 4 - 12.0 * y ** 2 + 12.0)


def test_quadrature_has_unit_mass():
    quad = Quadrature.gauss_hermite()
    assert quad.integrate(lambda y: np.ones_like(y)) == pytest.approx(1.0, abs=1e-13)
    assert quad.integrate(lambda y: y ** 2) == pytest.approx(2.0, rel=1e-12)


def test_quadrature_rejects_negative_weights():
    with pytest.raises(ValueError):
        Quadrature(nodes=np.array([-1.0, 1.0]), weights=np.array([1.5, -0.5]), degree=1)


def test_quadrature_rejects_undefined_integrand():
    quad = Quadrature.gauss_hermite(32)
    with pytest.raises(QuadratureError):
        quad.integrate(lambda y: np.where(y > 0, np.nan, 1.0))


def test_weighted_inner_products():
    h1 = lambda y: hermite_h(1, y)
    h2 = lambda y: hermite_h(2, y)
    assert inner_product_rho(h2, h2) == pytest.approx(8.0, abs=1e-10)
    assert inner_product_rho(lambda y: h2(y) ** 2, h2) == pytest.approx(64.0, abs=1e-9)
    assert inner_product_rho(h1, h2) == pytest.approx(0.0, abs=1e-12)


def test_grid_inner_product_matches_quadrature():
    f = lambda y: np.sin(0.3 * y) + np.cos(0.1 * y) ** 2
    h2 = lambda y: hermite_h(2, y)
    field = GridField.from_function(f, 0.0, 40.0, 0.05)
    assert inner_product_rho(field, h2) == pytest.approx(inner_product_rho(f, h2), abs=1e-6)
    assert inner_product_rho(field, field) == pytest.approx(inner_product_rho(f, f), abs=1e-6)


def test_orthogonality_table_within_tolerance():
    rows = orthogonality_rows(8)
    assert len(rows) == 81
    assert max(r["error"] for r in rows) <= 1e-8


def test_moment_identities():
    rows = moment_rows([4.0, 5.0, 7.0, 9.0])
    by_kind = {r["kind"]: r for r in rows}
    assert by_kind["moment_h2_sq"]["error"] <= 1e-8
    assert by_kind["moment_h2_cube"]["error"] <= 1e-8
    for p in (4, 5, 7, 9):
        assert by_kind[f"q_moment_identity_p{p}"]["error"] <= 1e-6


def test_abs_moment_against_closed_form():
    for power in (5.0 / 3.0, 1.5, 2.0, 3.3):
        assert abs_moment(power) * SQRT_4PI == pytest.approx(abs_moment_closed_form(power), rel=1e-10)


# ── truncation ──────────────────────────────

@pytest.mark.parametrize("profile", ["mollifier", "smoothstep"])
def test_chi0_shape(profile):
    r = np.linspace(0.0, 3.0, 3001)
    values = chi0(r, profile)
    assert np.all(values[r <= 1.0] == 1.0)
    assert np.all(values[r >= 2.0] == 0.0)
    assert np.all(np.diff(values) <= 1e-15)


def test_truncation_values_and_lipschitz(params):
    s = 20.0
    scale = params.K * s ** params.beta
    assert float(truncation_chi(0.0, s, params)) == 1.0
    assert float(truncation_chi(3.0 * scale, s, params)) == 0.0
    y = np.linspace(0.0, 3.0 * scale, 20001)
    slope = np.max(np.abs(np.diff(truncation_chi(y, s, params)))) / (y[1] - y[0])
    assert slope * scale <= 4.0


# ── mode decomposition ─────────────────────

def test_first_mode_is_recovered(params):
    s = 10.0
    field = GridField.from_function(lambda y: hermite_h(1, y), s, 2.0 * params.K * s ** params.beta + 1.0, 0.05)
    decomp = project_modes(field, s, params)
    assert decomp.v1 == pytest.approx(1.0, abs=1e-8)
    assert abs(decomp.v0) <= 1e-10
    assert abs(decomp.v2) <= 1e-10


def test_decomposition_reconstructs_the_truncated_field(params):
    s = 10.0
    field = GridField.from_function(lambda y: np.sin(0.3 * y) + np.cos(0.1 * y) ** 2, s,
                                    2.0 * params.K * s ** params.beta + 1.0, 0.05)
    decomp = project_modes(field, s, params)
    y = field.y
    chi = truncation_chi(y, s, params)
    rebuilt = decomp.v0 + decomp.v1 * y + decomp.v2 * hermite_h(2, y) + decomp.v_minus.values
    assert np.max(np.abs(field.values * chi - rebuilt)) <= 1e-10
    assert np.allclose(decomp.v_e.values + field.values * chi, field.values, atol=1e-14)


def test_projection_is_idempotent(params):
    s = 10.0
    half_width = 2.0 * params.K * s ** params.beta + 1.0
    field = GridField.from_function(lambda y: np.sin(0.3 * y) + np.cos(0.1 * y) ** 2, s, half_width, 0.05)
    first = project_modes(field, s, params)
    modes = GridField.from_function(
        lambda y: first.v0 + first.v1 * y + first.v2 * hermite_h(2, y), s, half_width, 0.05)
    second = project_modes(modes, s, params)
    assert (second.v0, second.v1, second.v2) == pytest.approx((first.v0, first.v1, first.v2), abs=1e-10)
    for m in range(3):
        assert abs(project_mode(first.v_minus.values, field.y, m)) <= 1e-10


def test_decomposition_needs_the_cutoff_support(params):
    s = 10.0
    field = GridField.on_grid(s, params.K * s ** params.beta, 0.1)
    with pytest.raises(DomainError):
        project_modes(field, s, params)


def test_zero_field_decomposes_to_zero(params):
    s = 15.0
    field = GridField.on_grid(s, 2.0 * params.K * s ** params.beta, 0.1)
    decomp = project_modes(field, s, params)
    assert decomp.v0 == decomp.v1 == decomp.v2 == 0.0
    assert decomp.norm_e == 0.0 and decomp.norm_minus_weighted == 0.0
    assert math.isfinite(decomp.s)
