"""
Monitor Engine
Shrinking-set diagnostics
- γ selection inside its admissible window
- V_A(s) membership: five component ratios |quantity| / bound
- minimal trap size and sup-norm constant of a decomposition
- mode-ODE residuals along a trajectory (4th-order differencing, step-halving check)
- inner-expansion law of the second mode of w - κ
"""

import logging
import math
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from errors import CadenceError, ParameterError
from models import (
    COMPONENT_ORDER, GridField, MembershipReport, ModeDecomposition, ModeSample, ModelParams,
    ShrinkParams, Trajectory,
)
from profile_engine import profile_phi
from spectral_engine import project_mode, truncation_chi

logger = logging.getLogger(__name__)


# ─────────────────────────────────────────────
# SHRINKING SET
# ─────────────────────────────────────────────

def gamma_window(params: ModelParams):
    return 3.0 * params.beta, min(5.0 * params.beta - 1.0, 2.0 * params.beta + 1.0)


def choose_gamma(params: ModelParams, epsilon: float) -> float:
    lo, hi = gamma_window(params)
    if not (0.0 < epsilon < hi - lo):
        raise ParameterError(
            f"gamma_epsilon={epsilon} outside (0, {hi - lo:.6g}); the admissible gamma window is ({lo:.6g}, {hi:.6g})",
            epsilon=epsilon,
        )
    return hi - epsilon


def shrink_params(params: ModelParams, A: float, epsilon: float) -> ShrinkParams:
    try:
        return ShrinkParams(A=A, gamma=choose_gamma(params, epsilon), epsilon_gamma=epsilon, beta=params.beta)
    except ValueError as e:
        raise ParameterError(f"invalid trap parameters: {e}", A=A) from e


def component_bounds(shrink: ShrinkParams, s: float) -> Dict[str, float]:
    A, gamma, beta = shrink.A, shrink.gamma, shrink.beta
    mode = A / s ** (2.0 * beta + 1.0)
    return {
        "e": A * A / s ** (gamma - 3.0 * beta),
        "minus": A / s ** gamma,
        "2": math.sqrt(A) / s ** (4.0 * beta - 1.0),
        "0": mode,
        "1": mode,
    }


def _quantities(decomp: ModeDecomposition) -> Dict[str, float]:
    return {
        "e": decomp.norm_e,
        "minus": decomp.norm_minus_weighted,
        "2": abs(decomp.v2),
        "0": abs(decomp.v0),
        "1": abs(decomp.v1),
    }


def check_membership(decomp: ModeDecomposition, shrink: ShrinkParams, s: float) -> MembershipReport:
    if s < 1.0:
        raise ParameterError(f"membership needs s >= 1, got {s}")
    bounds = component_bounds(shrink, s)
    quantities = _quantities(decomp)
    slack = {c: quantities[c] / bounds[c] for c in COMPONENT_ORDER}
    # max() keeps the first maximum, so ties resolve in component order
    worst = max(COMPONENT_ORDER, key=lambda c: slack[c])
    return MembershipReport(in_set=all(r <= 1.0 for r in slack.values()), slack=slack, worst=worst)


def first_violator(report: MembershipReport) -> Optional[str]:
    """The exiting component: the first of e, minus, 2, 0, 1 whose ratio exceeds 1."""
    for c in COMPONENT_ORDER:
        if report.slack[c] > 1.0:
            return c
    return None


def minimal_trap_size(decomp: ModeDecomposition, shrink: ShrinkParams, s: float) -> float:
    """Smallest A ≥ 1 for which the decomposition passes membership (γ kept fixed)."""
    gamma, beta = shrink.gamma, shrink.beta
    candidates = [
        math.sqrt(decomp.norm_e * s ** (gamma - 3.0 * beta)),
        decomp.norm_minus_weighted * s ** gamma,
        (abs(decomp.v2) * s ** (4.0 * beta - 1.0)) ** 2,
        abs(decomp.v0) * s ** (2.0 * beta + 1.0),
        abs(decomp.v1) * s ** (2.0 * beta + 1.0),
    ]
    return max(1.0, *candidates)


def sup_norm_constant(field: GridField, shrink: ShrinkParams, s: float) -> float:
    """‖v‖∞ s^{γ-3β} / A²; bounded for every member of V_A(s)."""
    return field.sup_norm() * s ** (shrink.gamma - 3.0 * shrink.beta) / shrink.A ** 2


# ─────────────────────────────────────────────
# MODE ODE RESIDUALS
# ─────────────────────────────────────────────

class ModeResiduals(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    s: np.ndarray
    r0: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    derivative_error: Dict[str, float]

    def sup(self) -> Dict[str, float]:
        return {k: float(np.max(getattr(self, k))) for k in ("r0", "r1", "r2")}


def _derivative(f: np.ndarray, h: float, stride: int) -> np.ndarray:
    """4th-order centered derivative with spacing stride·h, valid on f[2·stride : -2·stride]."""
    k = stride
    n = f.size
    c = slice(2 * k, n - 2 * k)
    return (-f[4 * k:] + 8.0 * f[3 * k:n - k] - 8.0 * f[k:n - 3 * k] + f[:n - 4 * k]) / (12.0 * k * h), c


def mode_ode_residuals(series: List[ModeSample], params: ModelParams,
                       rtol: float = 1e-2, atol: float = 1e-14) -> ModeResiduals:
    """
    Scaled residuals s^{2β+1}|v₀'-v₀|, s^{2β+1}|v₁'-½v₁|, s^{4β}|v₂'+(2β+1)v₂/s|.
    v_m' is differenced at the stored cadence and again at twice the spacing; the run is
    rejected when the two disagree by more than rtol·max|v_m'| + atol.
    """
    if len(series) < 9:
        raise CadenceError(f"need at least 9 samples for differencing, got {len(series)}")
    s = np.array([row.s for row in series])
    h = float(np.median(np.diff(s)))
    if np.max(np.abs(np.diff(s) - h)) > 1e-9 * max(1.0, h):
        raise CadenceError("samples are not equally spaced in s")

    beta = params.beta
    window = slice(4, s.size - 4)
    s_w = s[window]
    derivatives = {}
    errors = {}
    for name in ("v0", "v1", "v2"):
        f = np.array([getattr(row, name) for row in series])
        fine, c_fine = _derivative(f, h, 1)
        coarse, c_coarse = _derivative(f, h, 2)
        fine = fine[(window.start - c_fine.start):(window.start - c_fine.start) + s_w.size]
        coarse = coarse[(window.start - c_coarse.start):(window.start - c_coarse.start) + s_w.size]
        error = float(np.max(np.abs(fine - coarse)))
        limit = rtol * float(np.max(np.abs(fine))) + atol
        if error > limit:
            raise CadenceError(
                f"cadence too coarse for d{name}/ds: step-halving gap {error:.3e} exceeds {limit:.3e}",
                mode=name, gap=error, limit=limit,
            )
        derivatives[name] = fine
        errors[name] = error

    v = {name: np.array([getattr(row, name) for row in series])[window] for name in ("v0", "v1", "v2")}
    return ModeResiduals(
        s=s_w,
        r0=s_w ** (2.0 * beta + 1.0) * np.abs(derivatives["v0"] - v["v0"]),
        r1=s_w ** (2.0 * beta + 1.0) * np.abs(derivatives["v1"] - 0.5 * v["v1"]),
        r2=s_w ** (4.0 * beta) * np.abs(derivatives["v2"] + (2.0 * beta + 1.0) * v["v2"] / s_w),
        derivative_error=errors,
    )


# ─────────────────────────────────────────────
# INNER EXPANSION
# ─────────────────────────────────────────────

class InnerExpansionReport(BaseModel):
    s: List[float]
    w2: List[float]
    ratio: List[float]          # |w̄₂| s^{2β} / B
    negative: bool
    increasing: bool


def inner_expansion_check(fields: List[GridField], params: ModelParams, frame: str = "profile") -> InnerExpansionReport:
    """w̄₂(s) = P₂((w - κ)χ) for each perturbation snapshot v, with w = φ + v."""
    s_list, w2_list, ratios = [], [], []
    for v in fields:
        y = v.y
        base = params.kappa if frame == "constant" else profile_phi(y, v.s, params)
        w_bar = (v.values + base - params.kappa) * truncation_chi(y, v.s, params)
        w2 = project_mode(w_bar, y, 2)
        s_list.append(v.s)
        w2_list.append(w2)
        ratios.append(abs(w2) * v.s ** (2.0 * params.beta) / params.B_inner)

    w2_arr = np.array(w2_list)
    return InnerExpansionReport(
        s=s_list,
        w2=w2_list,
        ratio=ratios,
        negative=bool(np.all(w2_arr < 0)),
        increasing=bool(np.all(np.diff(w2_arr) >= 0)),
    )


def monitor_table(trajectory: Trajectory, params: ModelParams, shrink: ShrinkParams,
                  residuals: Optional[ModeResiduals] = None) -> List[Dict[str, float]]:
    """One row per output step: component slacks plus the mode-ODE residuals where defined."""
    lookup = {}
    if residuals is not None:
        for s, r0, r1, r2 in zip(residuals.s, residuals.r0, residuals.r1, residuals.r2):
            lookup[round(float(s), 9)] = (r0, r1, r2)

    rows = []
    for row in trajectory.series:
        bounds = component_bounds(shrink, row.s)
        r = lookup.get(round(row.s, 9), (math.nan, math.nan, math.nan))
        rows.append({
            "s": row.s,
            "slack_e": row.norm_e / bounds["e"],
            "slack_minus": row.norm_minus_weighted / bounds["minus"],
            "slack_0": abs(row.v0) / bounds["0"],
            "slack_1": abs(row.v1) / bounds["1"],
            "slack_2": abs(row.v2) / bounds["2"],
            "r0": float(r[0]),
            "r1": float(r[1]),
            "r2": float(r[2]),
        })
    return rows
