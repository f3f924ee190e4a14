"""
Shooting Engine
Two-parameter initial data and the topological search
- ψ(y) = (A/s₀^{2β+1})(d₀h₀ + d₁h₁)χ(2y, s₀)
- one shot: solve from ψ, watch V_A(s) membership, record the exit
- search: recursive quadrant subdivision of [-2,2]² keeping a child whose
  corner exit signs of (v₀, v₁) still cover all four sign quadrants
"""

import logging
import math
from concurrent.futures import Executor
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from errors import DegreeLostError, DivergenceError, DomainError, ParameterError
from models import GridField, ModelParams, RunConfig, SearchLevel, SearchResult, ShotResult, ShrinkParams
from monitor_engine import check_membership, first_violator, minimal_trap_size
from solver import PerturbationSolver
from spectral_engine import truncation_chi

logger = logging.getLogger(__name__)

SEARCH_BOX = (-2.0, 2.0, -2.0, 2.0)
QUADRANTS: Tuple[Tuple[int, int], ...] = ((-1, -1), (1, -1), (-1, 1), (1, 1))
QUADRANT_NAMES = {(-1, -1): "SW", (1, -1): "SE", (-1, 1): "NW", (1, 1): "NE"}
BLOWUP_COMPONENT = "blowup-guard"


# ─────────────────────────────────────────────
# INITIAL DATA
# ─────────────────────────────────────────────

def initial_psi(d0: float, d1: float, s0: float, A: float, params: ModelParams,
                half_width: float, dy: float) -> GridField:
    support = params.K * s0 ** params.beta
    if half_width < support:
        raise DomainError("domain too small for the initial data support",
                          half_width=half_width, support=support, s0=s0)
    field = GridField.on_grid(s0, half_width, dy)
    y = field.y
    amplitude = A / s0 ** (2.0 * params.beta + 1.0)
    values = amplitude * (d0 + d1 * y) * truncation_chi(y, s0, params, doubled=True)
    return field.with_values(values)


# ─────────────────────────────────────────────
# ONE SHOT
# ─────────────────────────────────────────────

class _ExitWatch:
    """Observer recording the first membership failure; keeps one extra step when it happens at s₀."""

    def __init__(self, shrink: ShrinkParams, s0: float):
        self.shrink = shrink
        self.s0 = s0
        self.history: List[Tuple[float, float, float]] = []
        self.exit: Optional[Tuple[str, float]] = None
        self.minimal_A = 1.0
        self.extra_step = False

    def __call__(self, s, decomp, field) -> bool:
        self.history.append((s, decomp.v0, decomp.v1))
        if self.extra_step:
            return True
        report = check_membership(decomp, self.shrink, s)
        if report.in_set:
            self.minimal_A = max(self.minimal_A, minimal_trap_size(decomp, self.shrink, s))
            return False
        self.exit = (first_violator(report), s)
        if len(self.history) == 1:
            self.extra_step = True
            return False
        return True


def evaluate_shot(d0: float, d1: float, s0: float, window: float, shrink: ShrinkParams,
                  params: ModelParams, cfg: RunConfig) -> ShotResult:
    lo0, hi0, lo1, hi1 = SEARCH_BOX
    if not (lo0 <= d0 <= hi0 and lo1 <= d1 <= hi1):
        raise ParameterError(f"shot ({d0:g}, {d1:g}) lies outside the search box", d0=d0, d1=d1, box=SEARCH_BOX)
    solver = PerturbationSolver(params, cfg)
    psi = initial_psi(d0, d1, s0, shrink.A, params, solver.required_half_width(s0), cfg.dy)
    watch = _ExitWatch(shrink, s0)
    window_end = s0 + window

    diverged = False
    try:
        solver.run(psi, window_end, observers=[watch], keep_snapshots=False)
    except DivergenceError as e:
        diverged = True
        logger.debug(f"[Shooting] ({d0:+.6f},{d1:+.6f}) hit the guard at s={e.s:.4f}")

    beta = params.beta
    history = watch.history
    if watch.exit is None and not diverged:
        logger.debug(f"[Shooting] ({d0:+.6f},{d1:+.6f}) confined on the whole window")
        return ShotResult(d0=d0, d1=d1, s0=s0, window_end=window_end, s_exit=window_end,
                          confined_window=window, minimal_A=watch.minimal_A)

    if watch.exit is not None:
        component, s_exit = watch.exit
    else:
        component, s_exit = BLOWUP_COMPONENT, history[-1][0]
    idx = next(i for i, h in enumerate(history) if h[0] == s_exit)
    _, v0, v1 = history[idx]
    scale = s_exit ** (2.0 * beta + 1.0) / shrink.A
    exit_values = (v0 * scale, v1 * scale)
    exit_signs = (int(np.sign(v0)), int(np.sign(v1)))

    derivative = None
    transverse = None
    if component in ("0", "1") and len(history) >= 2:
        m = int(component)
        if idx > 0:
            before, after = history[idx - 1], history[idx]
        else:
            before, after = history[0], history[1]
        slope = (after[1 + m] - before[1 + m]) / (after[0] - before[0])
        omega = exit_signs[m]
        derivative = omega * slope
        transverse = derivative > 0

    logger.debug(f"[Shooting] ({d0:+.6f},{d1:+.6f}) exit via {component} at s={s_exit:.4f} signs={exit_signs}")
    return ShotResult(
        d0=d0, d1=d1, s0=s0, window_end=window_end, s_exit=s_exit,
        exit_component=component, exit_values=exit_values, exit_signs=exit_signs,
        exit_derivative=derivative, transverse_ok=transverse,
        confined_window=s_exit - s0, minimal_A=watch.minimal_A,
    )


def _shot_task(args) -> ShotResult:
    return evaluate_shot(*args)


# ─────────────────────────────────────────────
# TOPOLOGICAL SEARCH
# ─────────────────────────────────────────────

def quadrants_covered(shot: ShotResult) -> Set[Tuple[int, int]]:
    """Sign quadrants a corner vouches for; a zero sign counts for both sides, a confined shot for all."""
    if shot.confined:
        return set(QUADRANTS)
    options = [(-1, 1) if sign == 0 else (sign,) for sign in shot.exit_signs]
    return {(a, b) for a in options[0] for b in options[1]}


def _children(rect: Tuple[float, float, float, float]):
    lo0, hi0, lo1, hi1 = rect
    m0, m1 = 0.5 * (lo0 + hi0), 0.5 * (lo1 + hi1)
    return {
        "SW": (lo0, m0, lo1, m1),
        "SE": (m0, hi0, lo1, m1),
        "NW": (lo0, m0, m1, hi1),
        "NE": (m0, hi0, m1, hi1),
    }


def _corners(rect):
    lo0, hi0, lo1, hi1 = rect
    return [(lo0, lo1), (hi0, lo1), (lo0, hi1), (hi0, hi1)]


def _center(rect) -> Tuple[float, float]:
    return 0.5 * (rect[0] + rect[1]), 0.5 * (rect[2] + rect[3])


class ShotCache:
    """Shots keyed by (d₀, d₁); missing ones are evaluated in a fixed order, optionally on an executor."""

    def __init__(self, s0: float, window: float, shrink: ShrinkParams, params: ModelParams,
                 cfg: RunConfig, executor: Optional[Executor] = None):
        self.args = (s0, window, shrink, params, cfg)
        self.executor = executor
        self.shots: Dict[Tuple[float, float], ShotResult] = {}

    def evaluate(self, points: Sequence[Tuple[float, float]]) -> List[ShotResult]:
        missing = [pt for pt in dict.fromkeys(points) if pt not in self.shots]
        tasks = [(pt[0], pt[1], *self.args) for pt in missing]
        if self.executor is not None and len(tasks) > 1:
            results = list(self.executor.map(_shot_task, tasks))
        else:
            results = [_shot_task(t) for t in tasks]
        for pt, shot in zip(missing, results):
            self.shots[pt] = shot
        return [self.shots[pt] for pt in points]

    def best(self) -> Optional[ShotResult]:
        if not self.shots:
            return None
        return max(self.shots.values(), key=lambda shot: shot.confined_window)


def topological_search(s0: float, window: float, shrink: ShrinkParams, params: ModelParams,
                       cfg: RunConfig, depth: int, executor: Optional[Executor] = None) -> SearchResult:
    if depth <= 0:
        return SearchResult(center=_center(SEARCH_BOX))

    cache = ShotCache(s0, window, shrink, params, cfg, executor)
    rect = SEARCH_BOX
    levels: List[SearchLevel] = []
    best_window = 0.0

    for level in range(depth):
        lo0, hi0, lo1, hi1 = rect
        m0, m1 = _center(rect)
        stencil = [(d0, d1) for d1 in (lo1, m1, hi1) for d0 in (lo0, m0, hi0)]
        shots = cache.evaluate(stencil)
        center_shot = cache.shots[(m0, m1)]
        best_window = max(best_window, max(shot.confined_window for shot in shots))

        qualifying = []
        for name, child in _children(rect).items():
            corner_shots = [cache.shots[c] for c in _corners(child)]
            covered = set().union(*(quadrants_covered(shot) for shot in corner_shots))
            if covered == set(QUADRANTS):
                qualifying.append((sum(shot.confined_window for shot in corner_shots), name, child))

        if not qualifying:
            raise DegreeLostError(
                f"no sub-rectangle keeps all four sign quadrants at depth {level}",
                depth=level, rectangle=rect,
                stencil=[{"d0": shot.d0, "d1": shot.d1, "component": shot.exit_component,
                          "signs": shot.exit_signs} for shot in shots],
            )

        # ties keep the first child in SW, SE, NW, NE order
        top = max(score for score, _, _ in qualifying)
        _, chosen, child = next(entry for entry in qualifying if entry[0] == top)

        levels.append(SearchLevel(
            depth=level, rectangle=rect, center_window=center_shot.confined_window,
            best_window=best_window, chosen_quadrant=chosen, shots=shots,
        ))
        logger.info(
            f"[Shooting] depth {level}: center ({m0:+.6f},{m1:+.6f}) window {center_shot.confined_window:.3f}, "
            f"best {best_window:.3f}, next {chosen}"
        )
        rect = child

    center = _center(rect)
    final_shot = cache.evaluate([center])[0]
    best = cache.best()
    if best is None or final_shot.confined_window >= best.confined_window:
        best = final_shot
    logger.info(f"[Shooting] search done: center ({center[0]:+.6f},{center[1]:+.6f}), "
                f"best window {best.confined_window:.3f}")
    return SearchResult(center=center, best=best, levels=levels)
