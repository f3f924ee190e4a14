"""
Profile Engine — model constants and the explicit intermediate profile
- derive_constants: (p, μ, K) → q, β, κ, b, a and the inner-expansion constants
- φ₀(z) = (p-1+bz²)^{-1/(p-1)} and φ(y,s) = φ₀(y/s^β) + a/s^{2β}
- Closed-form derivatives of φ in y and s
- Inner two-mode expansion ODE and the small-z expansion of the rest term
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.integrate import solve_ivp

from errors import ParameterError, QuadratureError
from models import ModelParams
from spectral_engine import SQRT_4PI, abs_moment, abs_moment_closed_form

logger = logging.getLogger(__name__)

DIM = 1
MOMENT_RTOL = 1e-10


# ─────────────────────────────────────────────
# CONSTANTS
# ─────────────────────────────────────────────

def derive_constants(p: float, mu: float, K: float = 6.0, chi_profile: str = "mollifier") -> ModelParams:
    """Build the full constant tuple; the q-moment is computed by quadrature and checked against Γ."""
    if p <= 3:
        raise ParameterError(
            f"p={p} rejected: the profile construction requires p > 3 (beta < 1); "
            "it breaks down when beta >= 1",
            p=p,
        )
    if mu <= 0:
        raise ParameterError(f"mu={mu} rejected: the gradient coefficient must be positive", mu=mu)
    if K < 6:
        raise ParameterError(f"K={K} rejected: the truncation constant must be at least 6", K=K)

    N = DIM
    q = 2.0 * p / (p + 1.0)
    beta = (p + 1.0) / (2.0 * (p - 1.0))
    kappa = (1.0 / (p - 1.0)) ** (1.0 / (p - 1.0))

    # ∫|y|^q e^{-y²/4} dy, quadrature against the closed form
    q_moment = abs_moment(q) * SQRT_4PI
    closed = abs_moment_closed_form(q)
    rel = abs(q_moment - closed) / closed
    if rel > MOMENT_RTOL:
        raise QuadratureError(
            f"q-moment quadrature disagrees with the closed form (relative {rel:.3e})",
            quadrature=q_moment, closed_form=closed,
        )

    b = (
        0.5 * (p - 1.0) ** ((p - 2.0) / (p - 1.0))
        * ((4.0 * math.pi) ** (N / 2.0) * (p + 1.0) ** 2 * N / (p * q_moment)) ** ((p + 1.0) / (p - 1.0))
        * mu ** (-(p + 1.0) / (p - 1.0))
    )
    a = 2.0 * N * b * kappa / (p - 1.0) ** 2

    c0_tilde, c2_tilde, B_inner = _inner_constants(q, mu, q_moment / SQRT_4PI, N)

    params = ModelParams(
        p=p, mu=mu, dim=N, K=K, chi_profile=chi_profile,
        q=q, beta=beta, kappa=kappa, b=b, a=a,
        q_moment=q_moment, c0_tilde=c0_tilde, c2_tilde=c2_tilde, B_inner=B_inner,
    )
    logger.debug(f"[Params] p={p} mu={mu}: q={q:.6f} beta={beta:.6f} b={b:.6f} a={a:.6f}")
    return params


def _inner_constants(q: float, mu: float, moment_rho: float, N: int) -> Tuple[float, float, float]:
    c0 = mu * 2.0 ** q * moment_rho
    # ∫|y|^q(|y|²-2N)ρ = 2q∫|y|^qρ
    c2 = mu * 2.0 ** q * 2.0 * q * moment_rho / (8.0 * N)
    B = ((q - 1.0) * abs(c2)) ** (-1.0 / (q - 1.0))
    return c0, c2, B


def inner_constants(params: ModelParams) -> Tuple[float, float, float]:
    """(c̃₀, c̃₂, B) of the inner expansion."""
    return params.c0_tilde, params.c2_tilde, params.B_inner


# ─────────────────────────────────────────────
# PROFILE
# ─────────────────────────────────────────────

def _check_time(s) -> None:
    if np.any(np.asarray(s) <= 0):
        raise ParameterError("self-similar time s must be positive")


def profile_phi0(z, params: ModelParams) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return (params.p - 1.0 + params.b * z ** 2) ** (-1.0 / (params.p - 1.0))


def profile_phi(y, s: float, params: ModelParams) -> np.ndarray:
    _check_time(s)
    z = np.asarray(y, dtype=float) / s ** params.beta
    return profile_phi0(z, params) + params.a / s ** (2.0 * params.beta)


def profile_derivatives(y, s: float, params: ModelParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(∂_yφ, ∂_yyφ, ∂_sφ) in closed form."""
    _check_time(s)
    p, b, beta, a = params.p, params.b, params.beta, params.a
    sb = s ** beta
    z = np.asarray(y, dtype=float) / sb
    phi0 = profile_phi0(z, params)
    phi0_p = phi0 ** p

    d_y = -(2.0 * b / ((p - 1.0) * sb)) * z * phi0_p
    d_yy = (2.0 * b / ((p - 1.0) * sb ** 2)) * (-phi0_p + (2.0 * b * p / (p - 1.0)) * z ** 2 * phi0 ** (2.0 * p - 1.0))
    d_s = (2.0 * beta * b / ((p - 1.0) * s)) * z ** 2 * phi0_p - 2.0 * beta * a / s ** (2.0 * beta + 1.0)
    return d_y, d_yy, d_s


def profile_ds_from_dy(y, s: float, params: ModelParams) -> np.ndarray:
    """∂_sφ = -(βy/s)∂_yφ - 2βa/s^{2β+1}, the transport form of the time derivative."""
    d_y, _, _ = profile_derivatives(y, s, params)
    beta = params.beta
    return -(beta * np.asarray(y, dtype=float) / s) * d_y - 2.0 * beta * params.a / s ** (2.0 * beta + 1.0)


# ─────────────────────────────────────────────
# INNER EXPANSION
# ─────────────────────────────────────────────

class InnerExpansionSeries(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    s: np.ndarray
    w0: np.ndarray
    w2: np.ndarray
    w2_ratio: np.ndarray          # |w̄₂| s^{2β} / B
    w0_model: np.ndarray          # -c̃₀ B^q / s^{2β+1}
    slaved: bool


def inner_expansion_ode(
    params: ModelParams,
    s0: float,
    s1: float,
    w2_init: float,
    w0_init: Optional[float] = None,
    n_out: int = 200,
) -> InnerExpansionSeries:
    """
    Integrate the truncated two-mode system for (w̄₀, w̄₂).
    With w0_init=None the unstable mode is slaved to its quasi-static value
    w̄₀ = -(4p/κ) w̄₂² - c̃₀|w̄₂|^q and only the w̄₂ equation is integrated.
    """
    if s1 <= s0:
        raise ParameterError("inner expansion needs s1 > s0")
    p, kappa, q = params.p, params.kappa, params.q
    c0, c2, B = inner_constants(params)
    N = params.dim

    def slaved_w0(w2):
        return -(p / (2.0 * kappa)) * 8.0 * N * w2 ** 2 - c0 * np.abs(w2) ** q

    def rhs_full(_s, state):
        w0, w2 = state
        dw0 = w0 + p / (2.0 * kappa) * (w0 ** 2 + 8.0 * N * w2 ** 2) + c0 * abs(w2) ** q
        dw2 = p / kappa * (w0 * w2 + 4.0 * w2 ** 2) + c2 * abs(w2) ** q
        return [dw0, dw2]

    def rhs_slaved(_s, state):
        w2 = state[0]
        return [p / kappa * (slaved_w0(w2) * w2 + 4.0 * w2 ** 2) + c2 * abs(w2) ** q]

    s_eval = np.geomspace(s0, s1, n_out)
    if w0_init is None:
        sol = solve_ivp(rhs_slaved, (s0, s1), [w2_init], t_eval=s_eval, rtol=1e-10, atol=1e-16)
        w2 = sol.y[0]
        w0 = slaved_w0(w2)
    else:
        sol = solve_ivp(rhs_full, (s0, s1), [w0_init, w2_init], t_eval=s_eval,
                        method="LSODA", rtol=1e-10, atol=1e-16)
        w0, w2 = sol.y[0], sol.y[1]
    if not sol.success:
        logger.warning(f"[Params] inner expansion integration stopped early: {sol.message}")

    s = sol.t
    beta = params.beta
    return InnerExpansionSeries(
        s=s,
        w0=w0,
        w2=w2,
        w2_ratio=np.abs(w2) * s ** (2.0 * beta) / B,
        w0_model=-c0 * B ** q / s ** (2.0 * beta + 1.0),
        slaved=w0_init is None,
    )


def rest_expansion(y, s: float, params: ModelParams) -> np.ndarray:
    """
    Leading small-z expansion of the rest term: the constant, z², |z|^q and a² pieces.
    The constant piece (a - 2bκ/(p-1)²)/s^{2β} vanishes for the derived a.
    """
    _check_time(s)
    p, b, a, kappa, beta, q, mu = params.p, params.b, params.a, params.kappa, params.beta, params.q, params.mu
    y = np.asarray(y, dtype=float)
    s2b = s ** (2.0 * beta)
    z = y / s ** beta
    slope = 2.0 * b * kappa / (p - 1.0) ** 2

    constant = (a - slope) / s2b + 2.0 * beta * a / (s2b * s) + p * a ** 2 / (2.0 * kappa * s2b ** 2)
    quadratic = (6.0 * p * b ** 2 * kappa / (p - 1.0) ** 4 - p * a * b / (p - 1.0) ** 2) * z ** 2 / s2b
    transport = -(beta * slope / s) * z ** 2
    gradient = mu * slope ** q * np.abs(z) ** q / s ** (beta * q)
    return constant + quadratic + transport + gradient
