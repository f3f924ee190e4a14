import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from errors import DomainError, ParameterError
from models import GridField
from semigroup_engine import (
    apply_semigroup, check_regularization, eigenaction_rows, kernel_eval, kernel_value, semigroup_law_rows,
)


# ── kernel ───────────────────────────────────

@pytest.mark.parametrize("theta", [0.1, 1.0, 3.0])
def test_kernel_mass_is_e_theta(theta):
    x = np.linspace(-40.0, 40.0, 16001)
    mass = trapezoid(kernel_value(theta, 2.0, x), x)
    assert mass == pytest.approx(math.exp(theta), rel=1e-10)


def test_kernel_positive_and_symmetric():
    y = np.linspace(-5.0, 5.0, 11)
    x = np.linspace(-7.0, 7.0, 15)
    k = kernel_value(0.7, y[:, None], x[None, :])
    assert np.all(k > 0)
    assert np.allclose(k, kernel_value(0.7, -y[:, None], -x[None, :]), rtol=1e-14)


def test_kernel_rejects_nonpositive_theta():
    with pytest.raises(ParameterError):
        kernel_eval(0.0)
    with pytest.raises(ParameterError):
        apply_semigroup(-0.5, GridField.on_grid(0.0, 10.0, 0.1))


# ── action ───────────────────────────────────

def test_zero_time_is_identity():
    r = GridField.from_function(np.cos, 0.0, 10.0, 0.1)
    out = apply_semigroup(0.0, r)
    assert np.array_equal(out.values, r.values)


def test_constant_grows_like_e_theta():
    r = GridField.from_function(lambda y: np.ones_like(y), 0.0, 40.0, 0.05)
    out = apply_semigroup(1.0, r, out_half_width=10.0)
    assert np.allclose(out.values, math.e, rtol=1e-10)


def test_short_grid_is_refused():
    r = GridField.from_function(lambda y: np.ones_like(y), 0.0, 5.0, 0.05)
    with pytest.raises(DomainError):
        apply_semigroup(3.0, r)


def test_polynomial_growth_at_the_edge_is_refused():
    r = GridField.from_function(lambda y: 1.0 + np.abs(y) ** 3, 0.0, 12.0, 0.05)
    with pytest.raises(DomainError):
        apply_semigroup(1.0, r, out_half_width=10.0)


def test_compact_input_needs_no_tail():
    r = GridField.from_function(lambda y: np.clip(1.0 - y ** 2, 0.0, None) ** 2, 0.0, 3.0, 0.05)
    out = apply_semigroup(3.0, r)
    assert out.n == r.n
    assert np.all(out.values >= 0.0)
    assert np.max(out.values) <= math.exp(3.0)


def test_eigenaction_table():
    rows = eigenaction_rows([0.1, 1.0, 3.0], max_mode=4)
    assert len(rows) == 15
    assert max(r["error"] for r in rows) <= 1e-6


def test_semigroup_law_table():
    rows = semigroup_law_rows([(0.5, 0.5), (1.0, 2.0)])
    assert max(r["error"] for r in rows) <= 1e-8


def test_semigroup_law_with_a_long_inner_step():
    # the intermediate field is still visible at the grid edge
    rows = semigroup_law_rows([(0.1, 3.0)])
    assert rows[0]["theta"] == pytest.approx(3.1)
    assert rows[0]["error"] <= 1e-8


# ── regularization ───────────────────────────

def test_regularization_on_polynomial_input():
    r = GridField.from_function(lambda y: 1.0 + np.abs(y) ** 3, 0.0, 40.0, 0.05)
    report = check_regularization(1.0, r, poly_power=3.0, out_half_width=10.0)
    assert report.monotone
    for value in (report.C_poly, report.C_poly_gradient, report.C_poly_smoothing, report.C_gradient):
        assert math.isfinite(value) and value > 0


def test_sup_estimate_on_bounded_input():
    r = GridField.from_function(np.cos, 0.0, 40.0, 0.05)
    report = check_regularization(1.0, r, out_half_width=10.0)
    assert report.C_sup <= 1.0 + 1e-9
