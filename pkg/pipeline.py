"""
Blow-up Laboratory Pipeline
Orchestrates the nine commands:
1. constants        (derived model constants)
2. spectral-check   (Hermite orthogonality, moment identities)
3. semigroup-check  (kernel eigenaction, semigroup law, smoothing constants)
4. residual-study   (rest-term cancellation, V·v decay, inner expansion)
5. simulate         (one trajectory from ψ(d₀, d₁), checkpointed)
6. shoot            (topological search for (d₀, d₁))
7. monitor          (shrinking-set slacks and mode-ODE residuals of a trajectory)
8. analyze          (physical-variable claims)
9. stability        (drift of T and a under perturbed data)
Every command writes its tables plus one manifest.json into its output directory.
"""

import asyncio
import functools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

import blowup_analyzer as analysis
from config_io import (
    key_value_dump, load_trajectory, package_versions, read_checkpoint, resolve,
    save_trajectory, write_checkpoint, write_csv, write_json, write_manifest,
)
from errors import ConfigError, DivergenceError, LabError, ParameterError
from linearization_engine import rest_R, residual_study, vv_membership_study
from models import GridField, LabConfig, Manifest, RunConfig, Trajectory
from monitor_engine import (
    check_membership, inner_expansion_check, minimal_trap_size, mode_ode_residuals, monitor_table,
    sup_norm_constant,
)
from profile_engine import inner_expansion_ode, profile_phi, rest_expansion
from semigroup_engine import check_regularization, eigenaction_rows, semigroup_law_rows
from shooting_engine import QUADRANTS, initial_psi, topological_search
from solver import PerturbationSolver
from spectral_engine import (
    SQRT_4PI, Quadrature, abs_moment, abs_moment_closed_form, moment_rows, orthogonality_rows, project_modes,
)

logger = logging.getLogger(__name__)

COMMANDS = (
    "constants", "spectral-check", "semigroup-check", "residual-study",
    "simulate", "shoot", "monitor", "analyze", "stability",
)
MOMENT_PS = [4.0, 5.0, 7.0, 9.0]
SEMIGROUP_PAIRS = [(0.5, 0.5), (1.0, 2.0), (0.1, 3.0)]
# analyses near the blow-up time need denser snapshots than a plain run
ANALYSIS_SNAPSHOT_EVERY = 10


class LabPipeline:

    def __init__(self, config: LabConfig, out_dir: Path, threads: int = 1, resume: bool = False):
        self.config = config
        self.out_dir = Path(out_dir)
        self.threads = max(1, threads)
        self.resume = resume
        self.outputs: List[str] = []
        self._handlers = {
            "constants": self._constants,
            "spectral-check": self._spectral_check,
            "semigroup-check": self._semigroup_check,
            "residual-study": self._residual_study,
            "simulate": self._simulate,
            "shoot": self._shoot,
            "monitor": self._monitor,
            "analyze": self._analyze,
            "stability": self._stability,
        }

    async def run_command(self, name: str) -> int:
        """Run one command; returns the process exit code (0, or the error family's code)."""
        if name not in self._handlers:
            raise ConfigError(f"unknown command '{name}'")

        started = datetime.now(timezone.utc).isoformat()
        clock = time.perf_counter()
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.outputs = []
        status, error, code = "success", None, 0
        params = shrink = None

        try:
            # ── STEP 1: Resolve constants and trap parameters ──────────
            params, run, shrink, options = resolve(self.config)
            logger.info(f"[Pipeline] {name}: p={params.p:g} mu={params.mu:g} config {self.config.config_hash[:12]}")

            # ── STEP 2: Run the command ──────────────────────────────
            await self._handlers[name](params, run, shrink, options)
        except LabError as e:
            logger.error(f"[{e.tag}] {e.message}")
            status, error, code = "failed", e.to_dict(), e.exit_code
        except ValueError as e:
            # validators and argument checks outside the LabError families
            err = ParameterError(str(e), raised=type(e).__name__)
            logger.error(f"[{err.tag}] {err.message}")
            status, error, code = "failed", err.to_dict(), err.exit_code

        # ── STEP 3: Manifest ─────────────────────────────────────
        manifest = Manifest(
            command=name,
            config_hash=self.config.config_hash,
            versions=package_versions(),
            params=params.model_dump() if params is not None else {"p": self.config.p, "mu": self.config.mu},
            run=self.config.run.model_dump(),
            shrink=shrink.model_dump() if shrink is not None else {},
            options=self.config.options.model_dump(),
            wall_clock_seconds=time.perf_counter() - clock,
            started_at=started,
            outputs=sorted(self.outputs),
            status=status,
            error=error,
        )
        write_manifest(self.out_dir, manifest)
        logger.info(f"[Pipeline] {name} {status} in {manifest.wall_clock_seconds:.2f}s -> {self.out_dir}")
        return code

    # ── helpers ────────────────────────────────────────────

    def _csv(self, name: str, rows, columns=None):
        write_csv(self.out_dir / name, rows, columns)
        self.outputs.append(name)

    def _json(self, name: str, payload):
        write_json(self.out_dir / name, payload)
        self.outputs.append(name)

    def _pool(self) -> Optional[ProcessPoolExecutor]:
        return ProcessPoolExecutor(max_workers=self.threads) if self.threads > 1 else None

    async def _offload(self, fn, *args, **kwargs):
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(None, functools.partial(fn, *args, **kwargs))

    def _trajectory_run(self, params, run: RunConfig, shrink, options, directory: Path) -> Trajectory:
        """Solve from ψ(d₀, d₁) over the window, checkpointing at every snapshot."""
        solver = PerturbationSolver(params, run)
        s0, s_end = options.s0, options.s0 + options.window
        trajectory = None
        v0 = initial_psi(options.d0, options.d1, s0, shrink.A, params, solver.required_half_width(s0), run.dy)

        if self.resume:
            restored = read_checkpoint(directory, self.config.config_hash)
            if restored is not None:
                v0, trajectory = restored
                logger.info(f"[Pipeline] resuming from checkpoint at s={v0.s:.4f}")
                if v0.s >= s_end - 1e-12:
                    return trajectory

        def checkpoint(field: GridField, traj: Trajectory):
            write_checkpoint(directory, field, traj, self.config.config_hash)

        try:
            trajectory = solver.run(v0, s_end, trajectory=trajectory, on_snapshot=checkpoint)
        except DivergenceError as e:
            if e.trajectory is not None:
                save_trajectory(directory, e.trajectory)
            raise
        save_trajectory(directory, trajectory)
        return trajectory

    # ─────────────────────────────────────────────
    # COMMANDS
    # ─────────────────────────────────────────────

    async def _constants(self, params, run, shrink, options):
        values: Dict[str, Any] = params.model_dump()
        values.update({"gamma": shrink.gamma, "A": shrink.A, "identity_2beta_q_minus_1": 2.0 * params.beta * (params.q - 1.0)})
        text = key_value_dump(values)
        (self.out_dir / "constants.txt").write_text(text, encoding="utf-8")
        self.outputs.append("constants.txt")
        self._json("constants.json", values)
        print(text, end="")

    async def _spectral_check(self, params, run, shrink, options):
        quad = Quadrature.gauss_hermite(run.quad_nodes)
        rows = orthogonality_rows(options.spectral_max_index, quad) + moment_rows(MOMENT_PS, quad)

        quadrature = abs_moment(params.q) * SQRT_4PI
        closed = abs_moment_closed_form(params.q)
        rows.append({"kind": "q_moment_closed_form", "n": -1, "m": -1, "computed": quadrature,
                     "exact": closed, "error": abs(quadrature - closed) / closed})
        identity = 2.0 * params.beta * (params.q - 1.0)
        rows.append({"kind": "identity_2beta_q_minus_1", "n": -1, "m": -1, "computed": identity,
                     "exact": 1.0, "error": abs(identity - 1.0)})
        self._csv("spectral_check.csv", rows, ["kind", "n", "m", "computed", "exact", "error"])

        orthogonality = max(r["error"] for r in rows if r["kind"] == "orthogonality")
        logger.info(f"[Spectral] max orthogonality error {orthogonality:.3e}")
        self._json("spectral_summary.json", {
            "quad_nodes": quad.nodes.size,
            "max_orthogonality_error": orthogonality,
            "max_moment_error": max(r["error"] for r in rows if r["kind"].startswith("moment_h2")),
            "max_q_identity_error": max(r["error"] for r in rows if r["kind"].startswith("q_moment_identity")),
        })

    async def _semigroup_check(self, params, run, shrink, options):
        rows = await self._offload(eigenaction_rows, options.thetas, options.max_mode)
        rows += semigroup_law_rows(SEMIGROUP_PAIRS)
        self._csv("semigroup_check.csv", rows, ["kind", "m", "theta", "error"])

        r = GridField.from_function(lambda y: np.cos(y) / (1.0 + y ** 2), 0.0, 40.0, 0.05)
        reports = [check_regularization(theta, r, out_half_width=10.0).model_dump() for theta in options.thetas]
        self._csv("regularization.csv", reports)
        worst = max(row["error"] for row in rows if row["kind"] == "eigenaction")
        logger.info(f"[Semigroup] max eigenaction error {worst:.3e}")

    async def _residual_study(self, params, run, shrink, options):
        s_values = list(np.geomspace(options.residual_s_min, options.residual_s_max, options.residual_points))
        s_far = list(np.geomspace(options.residual_far_s_min, options.residual_far_s_max, options.residual_points))
        study = await self._offload(residual_study, params, s_values)
        far = await self._offload(residual_study, params, s_far)
        self._csv("residual_study.csv", study.rows)
        self._csv("residual_study_far.csv", far.rows)
        vv = vv_membership_study(params, shrink.A, s_values)
        self._csv("vv_study.csv", vv.rows)
        self._json("residual_fits.json", {
            "rest": {k: {"fit": f, "expected": study.expected[k]} for k, f in study.fits.items()},
            "rest_far": {k: {"fit": f, "expected": far.expected[k]} for k, f in far.fits.items()},
            "vv": {k: {"fit": f, "expected": vv.expected[k]} for k, f in vv.fits.items()},
        })

        s_check = options.residual_s_max
        y = np.linspace(-0.5, 0.5, 101) * s_check ** params.beta
        self._csv("rest_expansion.csv", [
            {"y": yi, "z": yi / s_check ** params.beta, "R": r, "expansion": e}
            for yi, r, e in zip(y, rest_R(y, s_check, params), rest_expansion(y, s_check, params))
        ])

        s_start = options.residual_s_min
        series = inner_expansion_ode(params, s_start, 1e3 * s_start, -params.B_inner / s_start ** (2.0 * params.beta))
        self._csv("inner_expansion_ode.csv", [
            {"s": s, "w0": w0, "w2": w2, "w2_ratio": r, "w0_model": m}
            for s, w0, w2, r, m in zip(series.s, series.w0, series.w2, series.w2_ratio, series.w0_model)
        ])

    async def _simulate(self, params, run, shrink, options):
        directory = self.out_dir / "trajectory"
        trajectory = await self._offload(self._trajectory_run, params, run, shrink, options, directory)
        self.outputs += [f"trajectory/{name}" for name in _listing(directory)]
        last = trajectory.series[-1]
        self._json("simulate_summary.json", {
            "s0": trajectory.s0, "s_end": last.s, "samples": len(trajectory.series),
            "snapshots": len(trajectory.snapshots), "sup_v": last.sup_v,
        })

    async def _shoot(self, params, run, shrink, options):
        pool = self._pool()
        try:
            result = await self._offload(topological_search, options.s0, options.window, shrink, params, run,
                                         options.depth, executor=pool)
        finally:
            if pool is not None:
                pool.shutdown()

        rows = []
        for level in result.levels:
            for shot in level.shots:
                rows.append({
                    "depth": level.depth, "d0": shot.d0, "d1": shot.d1, "s_exit": shot.s_exit,
                    "exit_component": shot.exit_component or "none",
                    "exit_v0": shot.exit_values[0], "exit_v1": shot.exit_values[1],
                    "sign_v0": shot.exit_signs[0], "sign_v1": shot.exit_signs[1],
                    "exit_derivative": shot.exit_derivative if shot.exit_derivative is not None else math.nan,
                    "transverse_ok": shot.transverse_ok, "confined_window": shot.confined_window,
                    "minimal_A": shot.minimal_A,
                })
        self._csv("shots.csv", rows)

        exits = [r for r in rows if r["exit_component"] != "none"]
        best = result.best
        self._json("shoot_log.json", {
            "center": result.center,
            "best": best,
            "levels": [level.model_dump(exclude={"shots"}) for level in result.levels],
            "exits_through_expanding_modes_only": all(r["exit_component"] in ("0", "1") for r in exits),
            "all_exits_transverse": all(r["transverse_ok"] is True for r in exits if r["exit_component"] in ("0", "1")),
            "quadrants": [list(q) for q in QUADRANTS],
        })
        if best is not None:
            logger.info(f"[Shooting] best shot ({best.d0:+.8f},{best.d1:+.8f}) confined {best.confined_window:.3f}")

    async def _monitor(self, params, run, shrink, options):
        if options.trajectory_dir is None:
            raise ConfigError("monitor needs trajectory_dir pointing at a simulate output")
        trajectory = load_trajectory(Path(options.trajectory_dir))
        residuals = mode_ode_residuals(trajectory.series, params)
        self._csv("monitor.csv", monitor_table(trajectory, params, shrink, residuals),
                  ["s", "slack_e", "slack_minus", "slack_0", "slack_1", "slack_2", "r0", "r1", "r2"])

        report = inner_expansion_check(trajectory.snapshots, params, run.frame)
        self._csv("inner_expansion_check.csv", [
            {"s": s, "w2": w2, "ratio": r} for s, w2, r in zip(report.s, report.w2, report.ratio)
        ])

        snapshot_rows = []
        for v in trajectory.snapshots:
            decomp = project_modes(v, v.s, params)
            membership = check_membership(decomp, shrink, v.s)
            snapshot_rows.append({
                "s": v.s, "in_set": membership.in_set, "worst": membership.worst,
                "minimal_A": minimal_trap_size(decomp, shrink, v.s),
                "sup_norm_constant": sup_norm_constant(v, shrink, v.s),
            })
        self._csv("membership.csv", snapshot_rows)
        self._json("monitor_summary.json", {
            "residual_sup": residuals.sup(),
            "derivative_error": residuals.derivative_error,
            "confined": all(row["in_set"] for row in snapshot_rows),
            "w2_negative": report.negative,
            "w2_increasing": report.increasing,
        })

    async def _analyze(self, params, run, shrink, options):
        if options.trajectory_dir is not None:
            trajectory = load_trajectory(Path(options.trajectory_dir))
        else:
            dense = run.model_copy(update={"snapshot_every": min(run.snapshot_every, ANALYSIS_SNAPSHOT_EVERY)})
            trajectory = await self._offload(self._trajectory_run, params, dense, shrink, options,
                                             self.out_dir / "trajectory")
            self.outputs += [f"trajectory/{name}" for name in _listing(self.out_dir / "trajectory")]

        frame = run.frame
        phys = analysis.physical_trajectory(trajectory, params, frame=frame)
        estimate = analysis.estimate_blowup(phys, params, options.tail_points)
        summary: Dict[str, Any] = {"blowup": estimate, "expected_rate": -1.0 / (params.p - 1.0), "errors": {}}

        def section(name, fn):
            try:
                return fn()
            except LabError as e:
                logger.warning(f"[Analysis] {name} skipped: {e.message}")
                summary["errors"][name] = e.to_dict()
                return None

        # profile convergence, with the wrong-β comparison alongside
        right = analysis.profile_error_series(trajectory, params, frame=frame)
        wrong = analysis.profile_error_series(trajectory, params, beta_override=0.5, frame=frame)
        self._csv("profile_error.csv", [
            {"s": a.s, "sup_error": a.sup_error, "gradient_error": a.gradient_error,
             "weighted_error": a.weighted_error, "sup_error_half_scaling": b.sup_error}
            for a, b in zip(right, wrong)
        ])
        summary["profile"] = {
            "decreasing": bool(all(x.sup_error >= y.sup_error for x, y in zip(right, right[1:]))),
            "wrong_beta_non_decreasing": bool(all(x.sup_error <= y.sup_error for x, y in zip(wrong, wrong[1:]))),
            "predicted_order": right[0].predicted_order if right else None,
            "w_center_over_kappa": _center_ratio(trajectory, params, frame),
        }

        residuals = section("mode_residuals", lambda: mode_ode_residuals(trajectory.series, params))
        if residuals is not None:
            summary["mode_residual_sup"] = residuals.sup()

        gradient = section("gradient_blowup", lambda: analysis.gradient_blowup_diagnostic(
            trajectory, params, options.alpha, shrink.gamma, frame))
        if gradient is not None:
            self._csv("gradient_blowup.csv", gradient.rows)
            summary["gradient_blowup"] = gradient.model_dump(exclude={"rows"})

        x0 = options.x0 if options.x0 is not None else analysis.default_x0(phys, options.x0_fraction)
        single = section("single_point", lambda: analysis.single_point_check(
            phys, params, x0, options.K0, options.K0_scan))
        if single is not None:
            self._csv("single_point_scan.csv", single.K0_scan, ["K0", "t0", "threshold", "samples"])
            summary["single_point"] = single.model_dump(exclude={"K0_scan"})

        final = section("final_profile", lambda: analysis.final_profile(phys, params, z_min=options.profile_z_min))
        if final is not None:
            self._csv("final_profile.csv", final.rows,
                      ["x", "u_star", "model", "ratio", "mu0_model", "mu0_ratio", "grad_u_star"])
            summary["final_profile"] = final.model_dump(exclude={"rows"})

        self._json("analyze.json", summary)

    async def _stability(self, params, run, shrink, options):
        pool = self._pool()
        try:
            report = await self._offload(
                analysis.stability_experiment, params, run, shrink, options.s0, options.window,
                options.d0, options.d1, options.stability_eps, options.tail_points, executor=pool,
            )
        finally:
            if pool is not None:
                pool.shutdown()
        self._csv("stability.csv", report.rows, ["kind", "eps", "T_est", "dT", "dT_rel", "a_est_y0", "da_y0"])
        self._json("stability.json", {"base": report.base, "monotone": report.monotone,
                                      "verdict": report.verdict, "dy": run.dy})


def _listing(directory: Path) -> List[str]:
    return sorted(str(p.relative_to(directory)) for p in Path(directory).rglob("*") if p.is_file())


def _center_ratio(trajectory: Trajectory, params, frame: str) -> Optional[float]:
    """w(0, s_end)/κ at the last snapshot."""
    if not trajectory.snapshots:
        return None
    v = trajectory.snapshots[-1]
    m = (v.n - 1) // 2
    base = params.kappa if frame == "constant" else float(profile_phi(0.0, v.s, params))
    return (v.values[m] + base) / params.kappa
