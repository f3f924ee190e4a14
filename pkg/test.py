"""
Acceptance Runner — run the laboratory campaigns and print one verdict per criterion
Usage: python test.py [--quick]
Saves one JSON record per criterion to the test_results/ directory.
--quick swaps the headline campaigns (6-9) for config_store/quick.conf; their verdicts
are then smoke checks only.
"""

import asyncio
import json
import math
import os
import sys
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp

from config_io import parse_lab_config
from models import GridField, RunConfig
from pipeline import LabPipeline
from profile_engine import derive_constants
from solver import PerturbationSolver
from spectral_engine import hermite_h

RUNS = Path("runs") / "acceptance"
NO_ENV = {}

# Create output directory
os.makedirs("test_results", exist_ok=True)


def save(number: int, name: str, passed: bool, details: dict):
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    filename = f"test_results/test_{number}_{timestamp}.json"
    record = {"criterion": number, "name": name, "passed": passed, "details": details, "timestamp": timestamp}
    with open(filename, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2, ensure_ascii=False, default=str)
    print(f"{'✅' if passed else '❌'} {name}")
    print(f"💾 Saved to: {filename}")
    return passed


async def command(name: str, text: str, out: str, environ=None) -> tuple:
    print(f"\n{'='*60}")
    print(f"RUN: {name} -> {RUNS / out}")
    print('='*60)
    config = parse_lab_config(text, NO_ENV if environ is None else environ)
    out_dir = RUNS / out
    code = await LabPipeline(config, out_dir, threads=config.options.threads).run_command(name)
    if code != 0:
        print(f"❌ {name} exited with code {code}")
    return code, out_dir


def read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


# ─────────────────────────────────────────────
# SOLVER VERIFICATION (criterion 5)
# ─────────────────────────────────────────────

def _center(field: GridField) -> float:
    return float(field.values[(field.n - 1) // 2])


def scalar_ode_check(params) -> dict:
    cfg = RunConfig(dy=0.1, dt_safety=0.05, frame="constant", include_G=False, ds_out=0.1, snapshot_every=10)
    solver = PerturbationSolver(params, cfg)
    s0, s1, c = 2.0, 7.0, 1e-4
    v0 = GridField.from_function(lambda y: np.full_like(y, c), s0, solver.required_half_width(s1), cfg.dy)
    final = solver.run(v0, s1).snapshots[-1]
    kappa, p = params.kappa, params.p
    ode = solve_ivp(lambda s, v: -v / (p - 1.0) + (kappa + v) ** p - kappa ** p, (s0, s1), [c],
                    rtol=1e-12, atol=1e-16)
    exact = float(ode.y[0, -1])
    return {"computed": _center(final), "exact": exact, "rel_error": abs(_center(final) - exact) / abs(exact)}


def eigenmode_check(params) -> dict:
    cfg = RunConfig(dy=0.1, dt_safety=0.05, ds_out=0.1, include_V=False, include_B=False,
                    include_G=False, include_R=False)
    solver = PerturbationSolver(params, cfg)
    v0 = GridField.from_function(lambda y: hermite_h(0, y) + hermite_h(1, y) + hermite_h(2, y), 2.0,
                                 solver.required_half_width(3.0), cfg.dy)
    series = solver.run(v0, 3.0).series
    first, last = series[0], series[-1]
    errors = {
        "v0": abs(last.v0 / first.v0 - math.e) / math.e,
        "v1": abs(last.v1 / first.v1 - math.exp(0.5)) / math.exp(0.5),
        "v2": abs(last.v2 / first.v2 - 1.0),
    }
    return {"rel_errors": errors, "max": max(errors.values())}


def spatial_order_check(params) -> dict:
    def exact(y, s):
        return (1.0 + 0.5 * s) * np.exp(-y * y / 2.0)

    def source(y, s):
        g = np.exp(-y * y / 2.0)
        return 0.5 * g - (1.0 + 0.5 * s) * 1.5 * y * y * g

    errors = []
    for dy in (0.2, 0.1, 0.05):
        cfg = RunConfig(dy=dy, ds_out=0.5, include_V=False, include_B=False, include_G=False, include_R=False)
        solver = PerturbationSolver(params, cfg, source=source)
        v0 = GridField.from_function(lambda y: exact(y, 2.0), 2.0, solver.required_half_width(2.5), dy)
        final = solver.run(v0, 2.5).snapshots[-1]
        window = np.abs(final.y) <= 5.0
        errors.append(float(np.max(np.abs(final.values - exact(final.y, final.s))[window])))
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    return {"errors": errors, "orders": orders}


def eps_grad_check(params) -> dict:
    finals = []
    for eps in (1e-10, 1e-12):
        cfg = RunConfig(dy=0.2, ds_out=0.1, eps_grad=eps)
        solver = PerturbationSolver(params, cfg)
        v0 = GridField.from_function(lambda y: 1e-3 * np.exp(-y * y / 8.0), 15.0,
                                     solver.required_half_width(15.5), cfg.dy)
        finals.append(solver.run(v0, 15.5).snapshots[-1].values)
    rel = float(np.max(np.abs(finals[0] - finals[1])) / np.max(np.abs(finals[1])))
    return {"rel_difference": rel}


# ─────────────────────────────────────────────
# CRITERIA
# ─────────────────────────────────────────────

async def run_all_tests(quick: bool = False):
    print("\n" + "="*60)
    print("🚀 STARTING ACCEPTANCE RUNS - Blow-up Laboratory")
    print("="*60)
    print("📁 Results will be saved to: test_results/")
    print("="*60)

    campaign = Path("config_store") / ("quick.conf" if quick else "headline.conf")
    campaign_text = campaign.read_text(encoding="utf-8")
    verdicts = {}

    # ── TEST 1: Spectral identities ─────────────────────────
    _, out = await command("spectral-check", "", "spectral")
    summary = read_json(out / "spectral_summary.json")
    verdicts[1] = save(1, "Spectral identities", (
        summary["max_orthogonality_error"] <= 1e-8
        and summary["max_moment_error"] <= 1e-8
        and summary["max_q_identity_error"] <= 1e-6
    ), summary)

    # ── TEST 2: Constant pipeline ───────────────────────────
    table = pd.read_csv(out / "spectral_check.csv", float_precision="round_trip")
    closed = table[table["kind"] == "q_moment_closed_form"]["error"].iloc[0]
    identity = table[table["kind"] == "identity_2beta_q_minus_1"]["error"].iloc[0]
    params = derive_constants(5.0, 1.0)
    exact = abs(params.q - 5.0 / 3.0) <= 1e-15 and abs(params.beta - 0.75) <= 1e-15
    print(f"📐 b={params.b:.6f} a={params.a:.6f} kappa={params.kappa:.6f}")
    verdicts[2] = save(2, "Constant pipeline", closed <= 1e-10 and identity <= 1e-15 and exact,
                       {"closed_form_error": closed, "identity_error": identity, "b": params.b, "a": params.a})

    # ── TEST 3: Semigroup eigenaction ───────────────────────
    _, out = await command("semigroup-check", "", "semigroup")
    table = pd.read_csv(out / "semigroup_check.csv", float_precision="round_trip")
    eigen = float(table[table["kind"] == "eigenaction"]["error"].max())
    law = float(table[table["kind"] == "semigroup_law"]["error"].max())
    print(f"🔁 eigenaction {eigen:.3e} | semigroup law {law:.3e}")
    verdicts[3] = save(3, "Semigroup eigenaction", eigen <= 1e-6 and law <= 1e-8,
                       {"eigenaction": eigen, "semigroup_law": law})

    # ── TEST 4: Residual cancellation ───────────────────────
    _, out = await command("residual-study", "", "residual")
    fits = read_json(out / "residual_fits.json")
    rows = pd.read_csv(out / "residual_study.csv", float_precision="round_trip")
    slopes = {
        "R2": fits["rest"]["R2"]["fit"]["slope"],
        "R0_far": fits["rest_far"]["R0"]["fit"]["slope"],
        "R2_b_far": fits["rest_far"]["R2_b"]["fit"]["slope"],
    }
    expected = {
        "R2": fits["rest"]["R2"]["expected"],
        "R0_far": fits["rest_far"]["R0"]["expected"],
        "R2_b_far": fits["rest_far"]["R2_b"]["expected"],
    }
    r1 = float(rows["R1"].abs().max())
    for key in slopes:
        print(f"📉 {key}: slope {slopes[key]:.4f} (expected {expected[key]:.4f})")
    verdicts[4] = save(4, "Residual cancellation", (
        all(abs(slopes[k] - expected[k]) <= 0.1 for k in slopes) and r1 <= 1e-12
    ), {"slopes": slopes, "expected": expected, "R1_max": r1})

    # ── TEST 5: Solver verification ─────────────────────────
    print(f"\n{'='*60}\nRUN: solver verification\n{'='*60}")
    scalar = scalar_ode_check(params)
    modes = eigenmode_check(params)
    order = spatial_order_check(params)
    eps = eps_grad_check(params)
    print(f"🧮 scalar ODE {scalar['rel_error']:.3e} | eigenmodes {modes['max']:.3e} | "
          f"orders {order['orders']} | eps_grad {eps['rel_difference']:.3e}")
    verdicts[5] = save(5, "Solver verification", (
        scalar["rel_error"] <= 1e-6 and modes["max"] <= 1e-5
        and all(1.8 <= o <= 2.2 for o in order["orders"]) and eps["rel_difference"] < 1e-6
    ), {"scalar_ode": scalar, "eigenmodes": modes, "spatial_order": order, "eps_grad": eps})

    # ── TEST 6: Shooting ────────────────────────────────────
    _, out = await command("shoot", campaign_text, "shoot")
    log = read_json(out / "shoot_log.json")
    options = parse_lab_config(campaign_text, NO_ENV).options
    best = log["best"] or {}
    windows = [level["best_window"] for level in log["levels"]]
    confined = best.get("confined_window", 0.0) >= options.window - 1e-9
    print(f"🎯 center {log['center']} | best window {best.get('confined_window')}")
    verdicts[6] = save(6, "Shooting", (
        confined
        and all(a <= b for a, b in zip(windows, windows[1:]))
        and log["exits_through_expanding_modes_only"]
        and log["all_exits_transverse"]
    ), {"center": log["center"], "best": best, "level_windows": windows})

    # ── TEST 7 + 8: Profile, rate and physical claims ───────
    environ = {"BLOWUP_LAB_SHOT_LOG": str(out / "shoot_log.json")}
    _, out = await command("analyze", campaign_text, "analyze", environ)
    result = read_json(out / "analyze.json")
    profile = result["profile"]
    center_ratio = profile.get("w_center_over_kappa")
    print(f"📈 profile decreasing {profile['decreasing']} | w(0)/kappa {center_ratio}")
    verdicts[7] = save(7, "Profile and rate", (
        profile["decreasing"]
        and profile["wrong_beta_non_decreasing"]
        and center_ratio is not None and abs(center_ratio - 1.0) <= 0.05
        and "mode_residual_sup" in result
    ), {"profile": profile, "mode_residual_sup": result.get("mode_residual_sup"), "errors": result["errors"]})

    p = params.p
    blowup = result["blowup"]
    final = result.get("final_profile") or {}
    gradient = result.get("gradient_blowup") or {}
    single = result.get("single_point") or {}
    rate_ok = abs(blowup["rate_exponent"] + 1.0 / (p - 1.0)) <= 0.02 / (p - 1.0)
    final_ok = bool(final) and abs(final["fit"]["slope"] - final["expected_slope"]) <= 0.1 * abs(final["expected_slope"])
    gradient_ok = bool(gradient) and (
        abs(gradient["fit"]["slope"] - gradient["expected_exponent"]) <= 0.1 * abs(gradient["expected_exponent"])
    )
    single_ok = bool(single) and single["signature"]
    print(f"💥 rate {blowup['rate_exponent']:.5f} | final slope {final.get('fit', {}).get('slope')} | "
          f"gradient slope {gradient.get('fit', {}).get('slope')} | single point {single.get('signature')}")
    verdicts[8] = save(8, "Physical-variable claims", rate_ok and final_ok and gradient_ok and single_ok, {
        "blowup": blowup, "final_profile": final, "gradient_blowup": gradient, "single_point": single,
    })

    # ── TEST 9: Stability ───────────────────────────────────
    _, out = await command("stability", campaign_text, "stability", environ)
    stability = read_json(out / "stability.json")
    table = pd.read_csv(out / "stability.csv", float_precision="round_trip")
    translation = table[table["kind"] == "translation"]
    a_drift_ok = bool(((translation["da_y0"] - translation["eps"]).abs() <= stability["dy"]).all())
    print(f"🧪 monotone {stability['verdict']} | translation a-drift within dy: {a_drift_ok}")
    verdicts[9] = save(9, "Stability", all(stability["verdict"].values()) and a_drift_ok,
                       {"monotone": stability["monotone"], "rows": table.to_dict(orient="records")})

    # ── TEST 10: Reproducibility ────────────────────────────
    identical = True
    compared = []
    for run in ("first", "second"):
        await command("spectral-check", "", f"repro_{run}")
    first, second = RUNS / "repro_first", RUNS / "repro_second"
    for path in sorted(first.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            twin = second / path.relative_to(first)
            same = twin.exists() and path.read_bytes() == twin.read_bytes()
            identical = identical and same
            compared.append({"file": str(path.relative_to(first)), "identical": same})
    verdicts[10] = save(10, "Reproducibility", identical and bool(compared), {"files": compared})

    print("\n" + "="*60)
    passed = sum(verdicts.values())
    print(f"{'✅' if passed == len(verdicts) else '⚠️ '} {passed}/{len(verdicts)} CRITERIA PASSED")
    print("📁 Results saved to: test_results/")
    print("="*60)
    return passed == len(verdicts)


if __name__ == "__main__":
    ok = asyncio.run(run_all_tests(quick="--quick" in sys.argv))
    sys.exit(0 if ok else 1)
