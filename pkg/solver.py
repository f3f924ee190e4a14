"""
Perturbation Solver
Method-of-lines integrator for ∂_s v = (ℒ + V)v + B(v) + G(v) + R on a symmetric,
growing 1D grid:
- second-order centered Δ; centered drift -½y∂_y v, upwinded beyond |y| > 4/dy
- regularized |∂_y v|^q inside G
- explicit two-stage Runge–Kutta (Heun), Dirichlet v = 0 at the edges
- zero-padded domain growth following L(s) = c_L K s^β
Also the self-similar ↔ physical change of variables.
"""

import logging
import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from errors import DivergenceError, DomainError, ParameterError
from linearization_engine import ProfileFrame, gradient_G
from models import (
    GridField, ModeDecomposition, ModeSample, ModelParams, PhysicalSnapshot, RunConfig, Trajectory,
)
from profile_engine import profile_phi
from spectral_engine import project_modes

logger = logging.getLogger(__name__)

# observer(s, decomposition, field) -> True to stop the run
Observer = Callable[[float, ModeDecomposition, GridField], Optional[bool]]
SourceTerm = Callable[[np.ndarray, float], np.ndarray]
SnapshotHook = Callable[[GridField, Trajectory], None]


class PerturbationSolver:
    """
    Time stepper for the perturbation v = w - φ.
    `source` adds an extra forcing f(y, s); it is used for manufactured solutions.
    """

    def __init__(self, params: ModelParams, cfg: RunConfig, source: Optional[SourceTerm] = None):
        self.params = params
        self.cfg = cfg
        self.source = source

    # ── spatial operator ────────────────────────

    def required_half_width(self, s: float) -> float:
        return self.cfg.domain_factor * self.params.K * s ** self.params.beta

    def time_step(self, half_width: float) -> float:
        dy = self.cfg.dy
        diffusive = self.cfg.dt_safety * dy * dy
        advective = self.cfg.cfl_advection * dy / (0.5 * half_width)
        return min(diffusive, advective)

    def rhs(self, v: np.ndarray, y: np.ndarray, s: float) -> np.ndarray:
        cfg = self.cfg
        dy = cfg.dy
        out = np.zeros_like(v)

        lap = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (dy * dy)
        centered = (v[2:] - v[:-2]) / (2.0 * dy)
        yi = y[1:-1]
        backward = (v[1:-1] - v[:-2]) / dy
        forward = (v[2:] - v[1:-1]) / dy
        upwind = np.where(yi > 0, backward, forward)
        drift_grad = np.where(np.abs(yi) * dy <= 4.0, centered, upwind)

        inner = v[1:-1]
        total = lap - 0.5 * yi * drift_grad + inner

        if cfg.frame == "profile" and (cfg.include_V or cfg.include_B or cfg.include_G or cfg.include_R):
            frame = ProfileFrame.build(yi, s, self.params)
        elif cfg.frame == "constant":
            frame = ProfileFrame.build(yi, s, self.params, kind="constant")
        else:
            frame = None

        if frame is not None:
            if cfg.include_V:
                total += frame.V * inner
            if cfg.include_B:
                p = self.params.p
                w = frame.phi + inner
                total += np.abs(w) ** (p - 1.0) * w - frame.phi ** p - p * frame.phi ** (p - 1.0) * inner
            if cfg.include_G:
                total += gradient_G(frame.grad_phi, centered, self.params, cfg.eps_grad)
            if cfg.include_R:
                total += frame.R
        if self.source is not None:
            total += self.source(yi, s)

        out[1:-1] = total
        return out

    # ── time stepping ────────────────────────

    def _advance(self, values: np.ndarray, y: np.ndarray, s: float, ds: float) -> np.ndarray:
        k1 = self.rhs(values, y, s)
        k2 = self.rhs(values + ds * k1, y, s + ds)
        out = values + 0.5 * ds * (k1 + k2)
        out[0] = 0.0
        out[-1] = 0.0

        sup = float(np.max(np.abs(out))) if np.all(np.isfinite(out)) else math.inf
        if sup > self.cfg.blowup_guard:
            raise DivergenceError("perturbation left the blow-up guard", s=s + ds, sup=sup)
        return out

    def step(self, v: GridField, ds: Optional[float] = None) -> GridField:
        """One Heun step from v.s to v.s + ds; the edges stay at zero."""
        ds = self.time_step(v.half_width) if ds is None else ds
        if ds <= 0:
            raise ParameterError("time step must be positive")
        return v.with_values(self._advance(v.values, v.y, v.s, ds), s=v.s + ds)

    def fit_domain(self, v: GridField, s_check: float, s_ahead: float) -> GridField:
        """Zero-pad v to L(s_ahead) when it no longer covers L(s_check)."""
        needed = self.required_half_width(s_check)
        if v.half_width >= needed:
            return v
        if not self.cfg.domain_growth:
            raise DomainError("domain too small for the cutoff support", half_width=v.half_width,
                              required=needed, s=s_check)
        grown = GridField.on_grid(v.s, self.required_half_width(s_ahead), v.dy)
        pad = (grown.n - v.n) // 2
        values = np.zeros(grown.n)
        values[pad:pad + v.n] = v.values
        logger.debug(f"[Solver] domain grown {v.half_width:.2f} -> {grown.half_width:.2f} at s={v.s:.4f}")
        return grown.with_values(values)

    def sample(self, v: GridField):
        decomp = project_modes(v, v.s, self.params)
        row = ModeSample(
            s=v.s, v0=decomp.v0, v1=decomp.v1, v2=decomp.v2,
            norm_minus_weighted=decomp.norm_minus_weighted,
            norm_e=decomp.norm_e, sup_v=v.sup_norm(),
        )
        return decomp, row

    def run(
        self,
        v0: GridField,
        s_end: float,
        observers: Sequence[Observer] = (),
        trajectory: Optional[Trajectory] = None,
        keep_snapshots: bool = True,
        on_snapshot: Optional[SnapshotHook] = None,
    ) -> Trajectory:
        """
        Integrate from v0.s to s_end, sampling the mode decomposition every ds_out.
        Passing the `trajectory` that v0 was checkpointed from continues it; output
        times are always trajectory.s0 + i·ds_out.
        """
        cfg = self.cfg
        if s_end <= v0.s:
            raise ParameterError(f"s_end={s_end} must exceed the start time {v0.s}")

        resumed = trajectory is not None and len(trajectory.series) > 0
        if trajectory is None:
            trajectory = Trajectory(s0=v0.s)
        v = self.fit_domain(v0, v0.s, v0.s + 1.0)

        def emit(field: GridField) -> bool:
            decomp, row = self.sample(field)
            trajectory.series.append(row)
            if (len(trajectory.series) - 1) % cfg.snapshot_every == 0:
                if keep_snapshots:
                    trajectory.snapshots.append(field)
                if on_snapshot is not None:
                    on_snapshot(field, trajectory)
            stop = False
            for observer in observers:
                stop = bool(observer(field.s, decomp, field)) or stop
            return stop

        if not resumed and emit(v):
            trajectory.stopped_early = True
            return trajectory

        n_out = int(math.floor((s_end - trajectory.s0) / cfg.ds_out + 1e-9))
        out_step = len(trajectory.series) - 1
        logger.info(f"[Solver] run s={v.s:.4f} -> {s_end:.4f}, L={v.half_width:.2f}, n={v.n}")

        try:
            while out_step < n_out:
                s_base = trajectory.s0 + out_step * cfg.ds_out
                s_target = s_base + cfg.ds_out
                v = self.fit_domain(v, s_target, s_target + 1.0)
                n_sub = int(math.ceil(cfg.ds_out / self.time_step(v.half_width)))
                ds = cfg.ds_out / n_sub
                y = v.y
                values = v.values
                for j in range(n_sub):
                    values = self._advance(values, y, s_base + j * ds, ds)
                v = v.with_values(values, s=s_target)
                out_step += 1
                if emit(v):
                    trajectory.stopped_early = True
                    logger.info(f"[Solver] stopped by observer at s={v.s:.4f}")
                    break
        except DivergenceError as e:
            # the partial run stays available for blow-up estimation
            if keep_snapshots and (not trajectory.snapshots or trajectory.snapshots[-1].s != v.s):
                trajectory.snapshots.append(v)
            e.trajectory = trajectory
            raise

        if keep_snapshots and trajectory.snapshots and trajectory.snapshots[-1].s != v.s:
            trajectory.snapshots.append(v)
        return trajectory


# ─────────────────────────────────────────────
# VARIABLE CHANGES
# ─────────────────────────────────────────────

def full_solution(v: GridField, params: ModelParams, frame: str = "profile") -> GridField:
    """w = φ + v (or κ + v in the constant frame)."""
    base = params.kappa if frame == "constant" else profile_phi(v.y, v.s, params)
    return v.with_values(v.values + base)


def physical_time(s: float, T: float) -> float:
    return T - math.exp(-s)


def self_similar_time(t: float, T: float) -> float:
    if t >= T:
        raise ParameterError(f"t={t} rejected: the change of variables needs t < T={T}")
    return -math.log(T - t)


def to_physical(w: GridField, T: float, params: ModelParams, x: Optional[np.ndarray] = None) -> PhysicalSnapshot:
    """
    u(x,t) = (T-t)^{-1/(p-1)} w(x/√(T-t), s) at t = T - e^{-s}. Without x the samples sit at
    x = y√(T-t); with x, w is cubic-interpolated at y = x/√(T-t).
    """
    t = physical_time(w.s, T)
    tau = T - t
    amplitude = tau ** (-1.0 / (params.p - 1.0))
    if x is None:
        return PhysicalSnapshot(t=t, x=w.y * math.sqrt(tau), u=amplitude * w.values)
    x = np.asarray(x, dtype=float)
    y = x / math.sqrt(tau)
    if np.max(np.abs(y)) > w.half_width:
        raise DomainError("requested x lies outside the computed window", t=t,
                          x_max=float(np.max(np.abs(x))), covered=w.half_width * math.sqrt(tau))
    return PhysicalSnapshot(t=t, x=x, u=amplitude * CubicSpline(w.y, w.values)(y))


def from_physical(u: PhysicalSnapshot, T: float, params: ModelParams, dy: float,
                  half_width: Optional[float] = None) -> GridField:
    """w(y,s) = (T-t)^{1/(p-1)} u(y√(T-t), t) on a symmetric grid with spacing dy."""
    s = self_similar_time(u.t, T)
    tau = T - u.t
    root = math.sqrt(tau)
    covered = float(min(-u.x[0], u.x[-1])) / root
    half_width = covered if half_width is None else half_width
    grid = GridField.on_grid(s, math.floor(half_width / dy + 1e-9) * dy, dy)
    if grid.half_width > covered + 1e-12:
        raise DomainError("physical samples do not cover the requested window",
                          covered=covered, half_width=grid.half_width)
    values = tau ** (1.0 / (params.p - 1.0)) * CubicSpline(u.x, u.u)(grid.y * root)
    return grid.with_values(values)
