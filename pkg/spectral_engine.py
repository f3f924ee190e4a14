"""
Spectral Engine
Gaussian-weighted analysis in L²_ρ
- Measure ρ(y) = e^{-y²/4}/√(4π) and its Gauss–Hermite quadrature
- Hermite eigenbasis h_m of the drift-Laplacian (h₀=1, h₁=y, h₂=y²-2)
- Smooth truncation χ(y,s) = χ₀(|y|/(K s^β))
- Five-component mode decomposition v = v₀h₀ + v₁h₁ + v₂h₂ + v₋ + v_e
"""

import logging
import math
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.integrate import trapezoid
from scipy.special import gamma as gamma_fn
from scipy.special import roots_genlaguerre, roots_hermite

from errors import DomainError, QuadratureError
from models import GridField, ModeDecomposition, ModelParams

logger = logging.getLogger(__name__)

SQRT_4PI = math.sqrt(4.0 * math.pi)
LAGUERRE_NODES = 64


# ─────────────────────────────────────────────
# MEASURE + QUADRATURE
# ─────────────────────────────────────────────

def rho(y) -> np.ndarray:
    return np.exp(-np.asarray(y, dtype=float) ** 2 / 4.0) / SQRT_4PI


class Quadrature(BaseModel):
    """Gauss–Hermite rule for ∫ f ρ dy: nodes y = 2t, weights w/√π from the standard e^{-t²} rule."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    nodes: np.ndarray
    weights: np.ndarray
    degree: int                       # polynomials up to this degree are exact
    target: str = "rho"

    @model_validator(mode="after")
    def _check_mass(self):
        if np.any(self.weights < 0):
            raise ValueError("quadrature weights must be non-negative")
        mass = float(np.sum(self.weights))
        if abs(mass - 1.0) > 1e-12:
            raise ValueError(f"quadrature mass {mass!r} differs from 1")
        return self

    @classmethod
    def gauss_hermite(cls, n: int = 256) -> "Quadrature":
        return _cached_gauss_hermite(n)

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        values = np.asarray(f(self.nodes), dtype=float) * np.ones_like(self.nodes)
        if not np.all(np.isfinite(values)):
            raise QuadratureError("integrand undefined at a quadrature node")
        return float(np.sum(self.weights * values))


@lru_cache(maxsize=8)
def _cached_gauss_hermite(n: int) -> Quadrature:
    t, w = roots_hermite(n)
    # unit mass
    return Quadrature(nodes=2.0 * t, weights=w / np.sum(w), degree=2 * n - 1)


def abs_moment(power: float, factor: Optional[Callable[[np.ndarray], np.ndarray]] = None,
               nodes: int = LAGUERRE_NODES) -> float:
    """
    ∫ |y|^power · factor(y) ρ(y) dy for an even factor.
    Substituting t = y²/4 turns it into a generalized Gauss–Laguerre integral with
    α = (power-1)/2, exact when factor is a polynomial in y².
    """
    t, w = roots_genlaguerre(nodes, (power - 1.0) / 2.0)
    vals = np.ones_like(t) if factor is None else np.asarray(factor(2.0 * np.sqrt(t)), dtype=float)
    return float(2.0 ** (power + 1.0) * np.sum(w * vals) / SQRT_4PI)


def abs_moment_closed_form(power: float) -> float:
    """∫ |y|^power e^{-y²/4} dy = 2^{power+1} Γ((power+1)/2)."""
    return float(2.0 ** (power + 1.0) * gamma_fn((power + 1.0) / 2.0))


# ─────────────────────────────────────────────
# HERMITE BASIS
# ─────────────────────────────────────────────

def hermite_h(m: int, y) -> np.ndarray:
    """h_m via h_{k+1} = y h_k - 2k h_{k-1}; ∫ h_n h_m ρ = 2^n n! δ_nm."""
    if m < 0:
        raise ValueError("Hermite index must be non-negative")
    y = np.asarray(y, dtype=float)
    h_prev = np.ones_like(y)
    if m == 0:
        return h_prev
    h = y.copy()
    for k in range(1, m):
        h_prev, h = h, y * h - 2.0 * k * h_prev
    return h


def hermite_norm_sq(m: int) -> float:
    return float(2 ** m * math.factorial(m))


def hermite_k(m: int, y) -> np.ndarray:
    """Dual basis k_m = h_m / ‖h_m‖²."""
    return hermite_h(m, y) / hermite_norm_sq(m)


# ─────────────────────────────────────────────
# INNER PRODUCTS
# ─────────────────────────────────────────────

FieldLike = Union[GridField, Callable[[np.ndarray], np.ndarray]]


def _grid_values(f: FieldLike, y: np.ndarray) -> np.ndarray:
    if isinstance(f, GridField):
        return f.values
    return np.asarray(f(y), dtype=float) * np.ones_like(y)


def inner_product_rho(f: FieldLike, g: FieldLike, quad: Optional[Quadrature] = None) -> float:
    """
    ∫ f g ρ dy. Two callables go through Gauss–Hermite quadrature; as soon as one side
    is a GridField the trapezoid rule on that grid is used.
    """
    grid = f if isinstance(f, GridField) else g if isinstance(g, GridField) else None
    if grid is None:
        quad = quad or Quadrature.gauss_hermite()
        return quad.integrate(lambda y: np.asarray(f(y)) * np.asarray(g(y)))

    if isinstance(f, GridField) and isinstance(g, GridField) and f.n != g.n:
        raise QuadratureError("grid fields live on different grids", n_f=f.n, n_g=g.n)

    y = grid.y
    integrand = _grid_values(f, y) * _grid_values(g, y)
    if not np.all(np.isfinite(integrand)):
        raise QuadratureError("integrand undefined at a grid node")
    return float(trapezoid(integrand * rho(y), y))


def project_mode(values: np.ndarray, y: np.ndarray, m: int) -> float:
    """P_m(f) = ∫ f k_m ρ dy by the trapezoid rule on the grid."""
    return float(trapezoid(values * hermite_k(m, y) * rho(y), y))


# ─────────────────────────────────────────────
# TRUNCATION
# ─────────────────────────────────────────────

def _mollifier_tail(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def chi0(r, profile: str = "mollifier") -> np.ndarray:
    """Non-increasing cutoff: 1 on [0,1], 0 on [2,∞)."""
    r = np.abs(np.asarray(r, dtype=float))
    if profile == "mollifier":
        up = _mollifier_tail(2.0 - r)
        down = _mollifier_tail(r - 1.0)
        return up / (up + down)
    if profile == "smoothstep":
        x = np.clip(r - 1.0, 0.0, 1.0)
        return 1.0 - x ** 3 * (10.0 - 15.0 * x + 6.0 * x ** 2)
    raise ValueError(f"unknown chi profile '{profile}'")


def truncation_chi(y, s: float, params: ModelParams, doubled: bool = False) -> np.ndarray:
    """χ(y,s) = χ₀(|y|/(K s^β)); the doubled variant evaluates χ(2y,s)."""
    if s <= 0:
        raise ValueError("s must be positive")
    scale = params.K * s ** params.beta
    y = np.asarray(y, dtype=float)
    factor = 2.0 if doubled else 1.0
    return chi0(factor * np.abs(y) / scale, params.chi_profile)


def chi_support(s: float, params: ModelParams) -> float:
    return 2.0 * params.K * s ** params.beta


# ─────────────────────────────────────────────
# MODE DECOMPOSITION
# ─────────────────────────────────────────────

def project_modes(v: GridField, s: float, params: ModelParams) -> ModeDecomposition:
    if v.half_width < chi_support(s, params):
        raise DomainError(
            "grid does not contain the support of the cutoff",
            half_width=v.half_width, support=chi_support(s, params), s=s,
        )
    if not np.all(np.isfinite(v.values)):
        raise QuadratureError("field has non-finite samples", s=s)

    y = v.y
    chi = truncation_chi(y, s, params)
    vb = v.values * chi

    coeffs = [project_mode(vb, y, m) for m in range(3)]
    v_minus = vb - sum(c * hermite_h(m, y) for m, c in enumerate(coeffs))
    v_e = v.values * (1.0 - chi)

    return ModeDecomposition(
        s=s,
        v0=coeffs[0],
        v1=coeffs[1],
        v2=coeffs[2],
        v_minus=v.with_values(v_minus, s=s),
        v_e=v.with_values(v_e, s=s),
        norm_minus_weighted=float(np.max(np.abs(v_minus) / (1.0 + np.abs(y) ** 3))),
        norm_e=float(np.max(np.abs(v_e))),
    )


# ─────────────────────────────────────────────
# CHECK TABLES
# ─────────────────────────────────────────────

def orthogonality_rows(max_index: int = 8, quad: Optional[Quadrature] = None) -> List[Dict]:
    """
    Rows (n, m, computed, exact, error) of ∫ h_n h_m ρ. The error column is relative to
    ‖h_n‖‖h_m‖ so entries of size 2^8·8! are judged on the same footing as the small ones.
    """
    quad = quad or Quadrature.gauss_hermite()
    rows = []
    for n in range(max_index + 1):
        for m in range(max_index + 1):
            computed = quad.integrate(lambda y: hermite_h(n, y) * hermite_h(m, y))
            exact = hermite_norm_sq(n) if n == m else 0.0
            scale = math.sqrt(hermite_norm_sq(n) * hermite_norm_sq(m))
            rows.append({
                "kind": "orthogonality", "n": n, "m": m,
                "computed": computed, "exact": exact,
                "error": abs(computed - exact) / scale,
            })
    return rows


def moment_rows(ps: List[float], quad: Optional[Quadrature] = None) -> List[Dict]:
    """∫h₂²ρ = 8, ∫h₂³ρ = 64, and ∫|y|^q(y²-2)ρ = 2q∫|y|^qρ for each p."""
    quad = quad or Quadrature.gauss_hermite()
    rows = []
    second = quad.integrate(lambda y: hermite_h(2, y) ** 2)
    third = quad.integrate(lambda y: hermite_h(2, y) ** 3)
    rows.append({"kind": "moment_h2_sq", "n": 2, "m": 2, "computed": second, "exact": 8.0,
                 "error": abs(second - 8.0)})
    rows.append({"kind": "moment_h2_cube", "n": 2, "m": 3, "computed": third, "exact": 64.0,
                 "error": abs(third - 64.0)})

    for p in ps:
        q = 2.0 * p / (p + 1.0)
        lhs = abs_moment(q, lambda y: y ** 2 - 2.0)
        rhs = 2.0 * q * abs_moment(q)
        rows.append({"kind": f"q_moment_identity_p{p:g}", "n": 2, "m": -1, "computed": lhs,
                     "exact": rhs, "error": abs(lhs - rhs) / abs(rhs)})
    return rows
