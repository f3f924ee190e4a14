"""
Blow-up Analyzer
Physical-variable diagnostics on solver trajectories:
- blow-up time / point / rate estimation
- profile convergence against φ₀(y/s^β) (and a wrong-β comparison)
- gradient growth along y = s^α
- single-point criterion around x₀ ≠ 0
- final profile u*(x) against its logarithmic model
- empirical stability of (T, a) under small perturbations of the data
"""

import logging
import math
from concurrent.futures import Executor
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from errors import BisectionError, DivergenceError, DomainError, FitRejectedError, ParameterError
from fitting import LineFit, MultiFit, fit_line, fit_loglog, fit_multi
from models import (
    BlowupEstimate, GridField, ModelParams, PhysicalSnapshot, PhysicalTrajectory, RunConfig,
    ShrinkParams, Trajectory,
)
from monitor_engine import gamma_window
from profile_engine import profile_phi, profile_phi0
from shooting_engine import initial_psi
from solver import PerturbationSolver, full_solution, to_physical

logger = logging.getLogger(__name__)

FIT_TOL = 1e-2
RATE_TOL = 0.02


# ─────────────────────────────────────────────
# PHYSICAL TRAJECTORIES
# ─────────────────────────────────────────────

def physical_trajectory(trajectory: Trajectory, params: ModelParams, T: Optional[float] = None,
                        frame: str = "profile") -> PhysicalTrajectory:
    """Snapshots of u(x,t); T defaults to e^{-s₀} so that t starts at 0."""
    T = math.exp(-trajectory.s0) if T is None else T
    seen = set()
    snapshots = []
    for v in sorted(trajectory.snapshots, key=lambda f: f.s):
        if v.s in seen:
            continue
        seen.add(v.s)
        snapshots.append(to_physical(full_solution(v, params, frame), T, params))
    return PhysicalTrajectory(T=T, snapshots=snapshots)


def coverage(snapshot: PhysicalSnapshot) -> float:
    return float(min(-snapshot.x[0], snapshot.x[-1]))


# ─────────────────────────────────────────────
# BLOW-UP TIME, POINT, RATE
# ─────────────────────────────────────────────

def _peak_location(x: np.ndarray, u: np.ndarray) -> float:
    """argmax |u| refined by the parabola through the three nodes around it."""
    f = np.abs(u)
    i = int(np.argmax(f))
    if i == 0 or i == f.size - 1:
        return float(x[i])
    denom = f[i - 1] - 2.0 * f[i] + f[i + 1]
    if denom == 0.0:
        return float(x[i])
    h = 0.5 * (x[i + 1] - x[i - 1])
    return float(x[i] + 0.5 * h * (f[i - 1] - f[i + 1]) / denom)


def estimate_blowup(phys: PhysicalTrajectory, params: ModelParams, tail_points: int = 20,
                    fit_tol: float = FIT_TOL, rate_tol: float = RATE_TOL) -> BlowupEstimate:
    """
    T_est from the line through ‖u(t)‖∞^{-(p-1)} over the last `tail_points` snapshots
    (exact for the spatially constant solution), rate from log‖u‖∞ against log(T_est - t).
    """
    p = params.p
    snaps = phys.snapshots[-tail_points:]
    if len(snaps) < 3:
        raise FitRejectedError(f"need at least 3 snapshots to estimate blow-up, got {len(snaps)}")

    t = np.array([sn.t for sn in snaps])
    M = np.array([float(np.max(np.abs(sn.u))) for sn in snaps])
    g = M ** (-(p - 1.0))
    line = fit_line(t, g)
    if line.slope >= 0:
        raise FitRejectedError("sup-norm is not growing; no blow-up trend to extrapolate")
    residual = line.residual / float(np.mean(np.abs(g)))
    if residual > fit_tol:
        raise FitRejectedError(f"blow-up time fit residual {residual:.3e} exceeds {fit_tol:.1e}",
                               residual=residual)
    T_est = -line.intercept / line.slope

    remaining = T_est - t
    keep = remaining > 0
    if keep.sum() < 3:
        raise FitRejectedError("estimated blow-up time precedes the data")
    rate = fit_loglog(remaining[keep], M[keep]).slope

    expected = -1.0 / (p - 1.0)
    estimate = BlowupEstimate(
        T_est=float(T_est),
        a_est=_peak_location(snaps[-1].x, snaps[-1].u),
        rate_exponent=float(rate),
        fit_residual=residual,
        accepted=abs(rate - expected) <= rate_tol * abs(expected),
    )
    logger.info(f"[Analysis] T_est={estimate.T_est:.10e} a_est={estimate.a_est:.3e} "
                f"rate={estimate.rate_exponent:.5f} (expected {expected:.5f})")
    return estimate


# ─────────────────────────────────────────────
# PROFILE CONVERGENCE
# ─────────────────────────────────────────────

class ProfileError(BaseModel):
    s: float
    sup_error: float
    gradient_error: float
    weighted_error: float          # sup |w - φ₀| / (1+|y|³)
    beta_used: float
    predicted_order: float


def profile_convergence_error(w: GridField, s: float, params: ModelParams,
                              beta_override: Optional[float] = None) -> ProfileError:
    """Distance of w(·,s) to φ₀(y/s^β); beta_override swaps the scaling exponent (e.g. ½)."""
    p = params.p
    beta = params.beta if beta_override is None else beta_override
    y = w.y
    diff = w.values - profile_phi0(y / s ** beta, params)
    return ProfileError(
        s=s,
        sup_error=float(np.max(np.abs(diff))),
        gradient_error=float(np.max(np.abs(np.gradient(diff, w.dy)))),
        weighted_error=float(np.max(np.abs(diff) / (1.0 + np.abs(y) ** 3))),
        beta_used=beta,
        predicted_order=min(2.0 / (p - 1.0), (p - 3.0) / (2.0 * (p - 1.0))),
    )


def profile_error_series(trajectory: Trajectory, params: ModelParams, beta_override: Optional[float] = None,
                         frame: str = "profile") -> List[ProfileError]:
    return [
        profile_convergence_error(full_solution(v, params, frame), v.s, params, beta_override)
        for v in trajectory.snapshots
    ]


# ─────────────────────────────────────────────
# GRADIENT GROWTH
# ─────────────────────────────────────────────

class GradientBlowupReport(BaseModel):
    alpha: float
    rows: List[Dict[str, float]]
    fit: LineFit                     # log|∂_y w(s^α,s)| against log s
    expected_exponent: float         # α - 2β
    phi_limit: float                 # 2bκ/(p-1)²
    bounded_ratio: float             # max/min of |∂_y w| s^{2β-α}
    physical_fit: Optional[MultiFit] = None
    expected_physical: Dict[str, float]


def alpha_window(params: ModelParams, gamma: float) -> float:
    beta = params.beta
    return min(2.0 * beta - 1.0, (gamma - 2.0 * beta) / 2.0)


def gradient_blowup_diagnostic(trajectory: Trajectory, params: ModelParams, alpha: float,
                               gamma: Optional[float] = None, frame: str = "profile") -> GradientBlowupReport:
    p, beta = params.p, params.beta
    gamma = gamma_window(params)[1] - 1e-9 if gamma is None else gamma
    upper = alpha_window(params, gamma)
    if not (0.0 < alpha < upper):
        raise ParameterError(f"alpha={alpha} outside the window (0, {upper:.6g})", alpha=alpha)

    rows = []
    for v in trajectory.snapshots:
        s = v.s
        y_alpha = s ** alpha
        if y_alpha >= v.half_width:
            continue
        w = full_solution(v, params, frame)
        grad = float(CubicSpline(w.y, w.values)(y_alpha, 1))
        rows.append({
            "s": s,
            "y_alpha": y_alpha,
            "grad_w": grad,
            "scaled": abs(grad) * s ** (2.0 * beta - alpha),
            "log_grad_u": math.log(abs(grad)) + s * (1.0 / (p - 1.0) + 0.5) if grad != 0 else -math.inf,
        })
    if len(rows) < 3:
        raise FitRejectedError("too few snapshots for the gradient growth fit", snapshots=len(rows))

    s_arr = np.array([r["s"] for r in rows])
    grads = np.array([r["grad_w"] for r in rows])
    scaled = np.array([r["scaled"] for r in rows])
    fit = fit_loglog(s_arr, grads)

    physical_fit = None
    # log|∇u| = c + e₁ log(T-t) + e₂ log|log(T-t)| with T - t = e^{-s}
    try:
        physical_fit = fit_multi([-s_arr, np.log(s_arr)], [r["log_grad_u"] for r in rows])
    except FitRejectedError as e:
        logger.warning(f"[Analysis] physical gradient fit skipped: {e.message}")

    return GradientBlowupReport(
        alpha=alpha,
        rows=rows,
        fit=fit,
        expected_exponent=alpha - 2.0 * beta,
        phi_limit=2.0 * params.b * params.kappa / (p - 1.0) ** 2,
        bounded_ratio=float(np.max(scaled) / np.min(scaled)) if np.min(scaled) > 0 else math.inf,
        physical_fit=physical_fit,
        expected_physical={"log_T_minus_t": -0.5 - 1.0 / (p - 1.0), "log_log": alpha - 2.0 * beta},
    )


# ─────────────────────────────────────────────
# SINGLE-POINT CRITERION
# ─────────────────────────────────────────────

class SinglePointReport(BaseModel):
    x0: float
    K0: float
    t0: float
    t0_residual: float
    threshold: Optional[float] = None      # sup over the local window, None without samples past t₀
    threshold_samples: int = 0
    local_growth: float
    global_growth: float
    local_sup: float
    local_gradient_sup: float
    covered_snapshots: int
    signature: bool                         # u, ∇u stay put at x₀ while the sup grows
    K0_scan: List[Dict[str, Optional[float]]] = []


def solve_t0(x0: float, K0: float, T: float, params: ModelParams) -> float:
    """t₀ with |x₀| = K₀√(T-t₀)|log(T-t₀)|^β, by bisection in σ = -log(T-t₀)."""
    if x0 == 0:
        raise ParameterError("x0 = 0 is the blow-up point; the criterion needs x0 != 0")
    beta = params.beta

    def f(sigma):
        return K0 * math.exp(-sigma / 2.0) * sigma ** beta - abs(x0)

    lo = max(-math.log(T), 2.0 * beta)
    hi = lo + 400.0
    if f(lo) < 0:
        raise BisectionError(f"no t0 in [0, T): |x0|={abs(x0):.3e} is too far out for K0={K0}",
                             x0=x0, K0=K0)
    try:
        sigma = brentq(f, lo, hi, xtol=1e-15, rtol=4.5e-16, maxiter=500)
    except (ValueError, RuntimeError) as e:
        raise BisectionError(f"bisection for t0 failed: {e}", x0=x0, K0=K0) from e
    t0 = T - math.exp(-sigma)
    if not (0.0 <= t0 < T):
        raise BisectionError(f"t0={t0} left [0, T)", x0=x0, K0=K0)
    return t0


def t0_residual(x0: float, K0: float, T: float, t0: float, params: ModelParams) -> float:
    tau = T - t0
    return abs(K0 * math.sqrt(tau) * abs(math.log(tau)) ** params.beta - abs(x0))


def _threshold(phys: PhysicalTrajectory, params: ModelParams, x0: float, t0: float):
    """sup over snapshots past t₀ of (1-τ)^{1/(p-1)} sup_{|ξ|<1} (|U| + √(1-τ)|∂_ξU|)."""
    p = params.p
    tau0 = phys.T - t0
    root = math.sqrt(tau0)
    amplitude = tau0 ** (1.0 / (p - 1.0))
    xi = np.linspace(-1.0, 1.0, 41)[1:-1]
    best, samples = None, 0
    for sn in phys.snapshots:
        if sn.t < t0:
            continue
        x = x0 + xi * root
        if np.max(np.abs(x)) > coverage(sn):
            continue
        spline = CubicSpline(sn.x, sn.u)
        U = amplitude * spline(x)
        dU = amplitude * root * spline(x, 1)
        tau = (sn.t - t0) / tau0
        value = (1.0 - tau) ** (1.0 / (p - 1.0)) * float(np.max(np.abs(U) + math.sqrt(1.0 - tau) * np.abs(dU)))
        best = value if best is None else max(best, value)
        samples += 1
    return best, samples


def default_x0(phys: PhysicalTrajectory, fraction: float) -> float:
    return fraction * coverage(phys.snapshots[-1])


def single_point_check(phys: PhysicalTrajectory, params: ModelParams, x0: float, K0: float,
                       K0_scan: Optional[List[float]] = None) -> SinglePointReport:
    t0 = solve_t0(x0, K0, phys.T, params)
    threshold, samples = _threshold(phys, params, x0, t0)

    covered = [sn for sn in phys.snapshots if abs(x0) <= coverage(sn)]
    if not covered:
        raise DomainError(f"x0={x0:.3e} is not resolved by any snapshot", x0=x0)
    local_u = np.array([abs(float(CubicSpline(sn.x, sn.u)(x0))) for sn in covered])
    local_du = np.array([abs(float(CubicSpline(sn.x, sn.u)(x0, 1))) for sn in covered])
    sup_u = np.array([float(np.max(np.abs(sn.u))) for sn in covered])
    local_growth = float(np.max(local_u) / local_u[0])
    global_growth = float(sup_u[-1] / sup_u[0])

    scan = []
    for k in K0_scan or []:
        try:
            t0_k = solve_t0(x0, k, phys.T, params)
            value, n = _threshold(phys, params, x0, t0_k)
            scan.append({"K0": k, "t0": t0_k, "threshold": value, "samples": float(n)})
        except BisectionError as e:
            logger.warning(f"[Analysis] K0={k}: {e.message}")
            scan.append({"K0": k, "t0": None, "threshold": None, "samples": 0.0})

    return SinglePointReport(
        x0=x0, K0=K0, t0=t0,
        t0_residual=t0_residual(x0, K0, phys.T, t0, params),
        threshold=threshold, threshold_samples=samples,
        local_growth=local_growth, global_growth=global_growth,
        local_sup=float(np.max(local_u)), local_gradient_sup=float(np.max(local_du)),
        covered_snapshots=len(covered),
        signature=local_growth < global_growth,
        K0_scan=scan,
    )


# ─────────────────────────────────────────────
# FINAL PROFILE
# ─────────────────────────────────────────────

class FinalProfileReport(BaseModel):
    rows: List[Dict[str, float]]
    fit: LineFit                   # log u* against log(bx²/(2|log x|)^{2β})
    expected_slope: float
    gradient_fit: LineFit          # log|∂_x u*| against log x
    expected_gradient_slope: float
    decades: float
    mu0_underpredicts: bool


def final_profile(phys: PhysicalTrajectory, params: ModelParams, x: Optional[np.ndarray] = None,
                  z_min: float = 1.0) -> FinalProfileReport:
    """
    u* ≈ u(·, t_last) on x > 0 where the profile has formed (z = y/s^β ≥ z_min) and the
    logarithm is large enough (|log x| ≥ 1); needs a decade of such x.
    """
    p, b, beta = params.p, params.b, params.beta
    last = phys.snapshots[-1]
    tau = phys.T - last.t
    s = -math.log(tau)
    x_lo = z_min * s ** beta * math.sqrt(tau)
    x_hi = min(coverage(last), math.exp(-1.0))

    spline = CubicSpline(last.x, last.u)
    xs = last.x if x is None else np.asarray(x, dtype=float)
    xs = xs[(xs >= x_lo) & (xs <= x_hi)]
    decades = math.log10(xs[-1] / xs[0]) if xs.size >= 2 else 0.0
    if decades < 1.0:
        raise FitRejectedError(f"final profile needs a decade of usable x, got {decades:.2f}",
                               x_lo=x_lo, x_hi=x_hi)

    u = spline(xs)
    du = spline(xs, 1)
    log_x = np.abs(np.log(xs))
    argument = b * xs ** 2 / (2.0 * log_x) ** (2.0 * beta)
    model = argument ** (-1.0 / (p - 1.0))
    mu0 = (xs ** 2 / log_x) ** (-1.0 / (p - 1.0))

    fit = fit_loglog(argument, u)
    gradient_fit = fit_loglog(xs, du)
    mu0_ratio = u / mu0
    rows = [
        {"x": float(a), "u_star": float(c), "model": float(m), "ratio": float(c / m),
         "mu0_model": float(m0), "mu0_ratio": float(r0), "grad_u_star": float(g)}
        for a, c, m, m0, r0, g in zip(xs, u, model, mu0, mu0_ratio, du)
    ]
    return FinalProfileReport(
        rows=rows,
        fit=fit,
        expected_slope=-1.0 / (p - 1.0),
        gradient_fit=gradient_fit,
        expected_gradient_slope=-(p + 1.0) / (p - 1.0),
        decades=decades,
        mu0_underpredicts=bool(mu0_ratio[0] > mu0_ratio[-1]),
    )


# ─────────────────────────────────────────────
# STABILITY
# ─────────────────────────────────────────────

# a symmetric bump moves T, a translation moves the blow-up point
PRIMARY_DRIFT = {"bump": "dT", "translation": "da_y0"}


class StabilityReport(BaseModel):
    base: BlowupEstimate
    rows: List[Dict[str, Union[float, str]]]
    monotone: Dict[str, Dict[str, bool]]     # kind -> drift column -> non-increasing as ε shrinks
    verdict: Dict[str, bool]                 # kind -> monotone in the drift that kind moves


def perturbed_initial_data(kind: str, eps: float, psi: GridField, params: ModelParams) -> GridField:
    """ψ plus a smooth bump ε e^{-y²/8}, or the full solution φ + ψ translated by ε in y."""
    y = psi.y
    if kind == "bump":
        return psi.with_values(psi.values + eps * np.exp(-y ** 2 / 8.0))
    if kind == "translation":
        phi = profile_phi(y, psi.s, params)
        shifted = CubicSpline(y, phi + psi.values)(y - eps) - phi
        shifted[0] = shifted[-1] = 0.0
        return psi.with_values(shifted)
    raise ParameterError(f"unknown perturbation '{kind}'")


def _perturbed_run(kind: str, eps: float, d0: float, d1: float, s0: float, window: float,
                   shrink: ShrinkParams, params: ModelParams, cfg: RunConfig, tail_points: int) -> BlowupEstimate:
    # the tail fit needs dense snapshots near the end of the run
    cfg = cfg.model_copy(update={"snapshot_every": min(cfg.snapshot_every, 10)})
    solver = PerturbationSolver(params, cfg)
    psi = initial_psi(d0, d1, s0, shrink.A, params, solver.required_half_width(s0), cfg.dy)
    v0 = perturbed_initial_data(kind, eps, psi, params) if eps != 0.0 else psi
    try:
        trajectory = solver.run(v0, s0 + window)
    except DivergenceError as e:
        logger.info(f"[Analysis] {kind} eps={eps:g}: guard crossed at s={e.s:.4f}")
        trajectory = e.trajectory
    phys = physical_trajectory(trajectory, params)
    return estimate_blowup(phys, params, tail_points)


def _row_task(args) -> BlowupEstimate:
    return _perturbed_run(*args)


def stability_experiment(params: ModelParams, cfg: RunConfig, shrink: ShrinkParams, s0: float,
                         window: float, d0: float, d1: float, eps_list: List[float],
                         tail_points: int = 20, executor: Optional[Executor] = None) -> StabilityReport:
    """Drift of (T_est, a_est) for bump and translation perturbations of size ε; a in units of y at s₀."""
    common = (d0, d1, s0, window, shrink, params, cfg, tail_points)
    tasks = [("bump", 0.0, *common)]
    tasks += [(kind, eps, *common) for kind in ("bump", "translation") for eps in eps_list]
    if executor is not None:
        estimates = list(executor.map(_row_task, tasks))
    else:
        estimates = [_row_task(t) for t in tasks]

    base = estimates[0]
    y_unit = math.exp(s0 / 2.0)
    rows = [{"kind": "base", "eps": 0.0, "T_est": base.T_est, "a_est_y0": base.a_est * y_unit,
             "dT": 0.0, "dT_rel": 0.0, "da_y0": 0.0}]
    for task, est in zip(tasks[1:], estimates[1:]):
        rows.append({
            "kind": task[0],
            "eps": task[1],
            "T_est": est.T_est,
            "a_est_y0": est.a_est * y_unit,
            "dT": abs(est.T_est - base.T_est),
            "dT_rel": abs(est.T_est - base.T_est) / base.T_est,
            "da_y0": abs(est.a_est - base.a_est) * y_unit,
        })

    monotone: Dict[str, Dict[str, bool]] = {}
    for kind in PRIMARY_DRIFT:
        ordered = sorted((r for r in rows if r["kind"] == kind), key=lambda r: -r["eps"])
        monotone[kind] = {
            column: all(a[column] >= b[column] for a, b in zip(ordered, ordered[1:]))
            for column in ("dT", "da_y0")
        }
    verdict = {kind: monotone[kind][column] for kind, column in PRIMARY_DRIFT.items()}
    return StabilityReport(base=base, rows=rows, monotone=monotone, verdict=verdict)
