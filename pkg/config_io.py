"""
Config & IO — key=value configuration, manifests, CSV tables and trajectory directories
- parse_config: plain key=value text, '#' comments, BLOWUP_LAB_<KEY> environment overrides
- config hash: SHA-256 of the canonical sorted key=value text
- CSV via pandas at 17 significant digits
- trajectory directories written by `simulate` and read back by `monitor` / `analyze`
- checkpoints for resumable runs
"""

import hashlib
import json
import logging
import os
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from errors import ConfigError, ParameterError
from models import CommandOptions, GridField, LabConfig, Manifest, ModeSample, ModelParams, RunConfig, ShrinkParams, Trajectory
from monitor_engine import shrink_params
from profile_engine import derive_constants

logger = logging.getLogger(__name__)

LAB_VERSION = "1.0.0"
ENV_PREFIX = "BLOWUP_LAB_"
FLOAT_FORMAT = "%.17g"

MODEL_KEYS = ("p", "mu", "K", "chi_profile", "A", "gamma_epsilon")
RUN_KEYS = tuple(RunConfig.model_fields)
OPTION_KEYS = tuple(CommandOptions.model_fields)
ALL_KEYS = MODEL_KEYS + RUN_KEYS + OPTION_KEYS
LIST_KEYS = {k for k, f in CommandOptions.model_fields.items() if isinstance(f.default, list)}
# runtime knobs that never change an output byte
UNHASHED_KEYS = {"threads", "resume"}

SERIES_COLUMNS = list(ModeSample.model_fields)


# ─────────────────────────────────────────────
# PARSING
# ─────────────────────────────────────────────

def _read_lines(text: str) -> Tuple[Dict[str, str], Dict[str, int]]:
    values: Dict[str, str] = {}
    lines: Dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got '{line}'", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in ALL_KEYS:
            raise ConfigError(f"unknown key '{key}'", line=number)
        if key in values:
            raise ConfigError(f"duplicate key '{key}' (first set on line {lines[key]})", line=number)
        values[key] = value
        lines[key] = number
    return values, lines


def _coerce(key: str, value: str, line: Optional[int]) -> Any:
    if key in LIST_KEYS:
        try:
            return [float(item) for item in value.split(",") if item.strip()]
        except ValueError:
            raise ConfigError(f"'{key}' expects a comma-separated list of numbers, got '{value}'", line=line)
    if key in ("x0", "trajectory_dir", "shot_log") and value.lower() in ("", "none"):
        return None
    return value


def _apply_environment(values: Dict[str, str], lines: Dict[str, int], environ: Mapping[str, str]) -> None:
    for key in ALL_KEYS:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            logger.info(f"[Config] {key} overridden by {name}")
            values[key] = environ[name]
            lines.pop(key, None)


def _raise_validation(e: ValidationError, lines: Dict[str, int]):
    first = e.errors()[0]
    key = str(first["loc"][0]) if first["loc"] else None
    line = lines.get(key) if key else None
    message = f"{key}: {first['msg']}" if key else first["msg"]
    if first["type"].endswith("_parsing") or first["type"] in ("literal_error", "bool_type"):
        raise ConfigError(message, line=line)
    raise ParameterError(message, key=key)


def parse_lab_config(text: str, environ: Optional[Mapping[str, str]] = None) -> LabConfig:
    """Typed configuration with defaults filled in and the config hash computed."""
    environ = os.environ if environ is None else environ
    values, lines = _read_lines(text)
    _apply_environment(values, lines, environ)
    typed = {key: _coerce(key, value, lines.get(key)) for key, value in values.items()}

    try:
        run = RunConfig(**{k: v for k, v in typed.items() if k in RUN_KEYS})
        options = CommandOptions(**{k: v for k, v in typed.items() if k in OPTION_KEYS})
        lab = LabConfig(**{k: v for k, v in typed.items() if k in MODEL_KEYS}, run=run, options=options)
    except ValidationError as e:
        _raise_validation(e, lines)

    if options.shot_log is not None:
        given = [key for key in ("d0", "d1") if key in typed]
        if given:
            raise ConfigError(f"set either shot_log or {'/'.join(given)}, not both", line=lines.get(given[0]))
        d0, d1 = read_shot_center(Path(options.shot_log))
        lab = lab.model_copy(update={"options": options.model_copy(update={"d0": d0, "d1": d1})})
        logger.info(f"[Config] d0={d0:+.10f} d1={d1:+.10f} from {options.shot_log}")
    return lab.model_copy(update={"config_hash": config_hash(lab)})


def read_shot_center(path: Path) -> Tuple[float, float]:
    """Final search center of a shoot run."""
    try:
        log = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read shot log {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"shot log {path} is not valid JSON: {e}")
    center = log.get("center") if isinstance(log, dict) else None
    if not isinstance(center, list) or len(center) != 2:
        raise ConfigError(f"shot log {path} has no two-component center")
    try:
        return float(center[0]), float(center[1])
    except (TypeError, ValueError):
        raise ConfigError(f"shot log {path} has a non-numeric center", center=center)


def resolve(lab: LabConfig) -> Tuple[ModelParams, RunConfig, ShrinkParams, CommandOptions]:
    """Constraint checks happen in the constructors; their ParameterError passes through."""
    params = derive_constants(lab.p, lab.mu, lab.K, lab.chi_profile)
    shrink = shrink_params(params, lab.A, lab.gamma_epsilon)
    return params, lab.run, shrink, lab.options


def parse_config(text: str, environ: Optional[Mapping[str, str]] = None) -> Tuple[ModelParams, RunConfig, ShrinkParams, CommandOptions]:
    return resolve(parse_lab_config(text, environ))


def load_config(path: Optional[str], environ: Optional[Mapping[str, str]] = None) -> LabConfig:
    if path is None:
        return parse_lab_config("", environ)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    except UnicodeDecodeError:
        raise ConfigError(f"config file {path} is not UTF-8")
    return parse_lab_config(text, environ)


# ─────────────────────────────────────────────
# CANONICAL TEXT + HASH
# ─────────────────────────────────────────────

def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, list):
        return ",".join(_format_value(float(v)) for v in value)
    if value is None:
        return "none"
    return str(value)


def flat_values(lab: LabConfig) -> Dict[str, Any]:
    flat = {k: getattr(lab, k) for k in MODEL_KEYS}
    flat.update(lab.run.model_dump())
    flat.update(lab.options.model_dump())
    return flat


def canonical_text(lab: LabConfig) -> str:
    flat = flat_values(lab)
    return "".join(f"{k}={_format_value(flat[k])}\n" for k in sorted(flat) if k not in UNHASHED_KEYS)


def config_hash(lab: LabConfig) -> str:
    return hashlib.sha256(canonical_text(lab).encode("utf-8")).hexdigest()


def key_value_dump(values: Mapping[str, Any]) -> str:
    return "".join(f"{k}={_format_value(v)}\n" for k, v in values.items())


# ─────────────────────────────────────────────
# OUTPUT FILES
# ─────────────────────────────────────────────

def package_versions() -> Dict[str, str]:
    versions = {"blowup-lab": LAB_VERSION}
    for name in ("numpy", "scipy", "pandas", "scikit-learn", "pydantic", "python-dotenv"):
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def write_csv(path: Path, rows: List[Dict[str, Any]], columns: Optional[List[str]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="nan")
    return path


def read_csv(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise ConfigError(f"missing file {path}")


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return _jsonable(obj.model_dump())
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(payload), f, indent=2, ensure_ascii=False)
    return path


def write_manifest(out_dir: Path, manifest: Manifest) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    return path


# ─────────────────────────────────────────────
# TRAJECTORY DIRECTORIES
# ─────────────────────────────────────────────

def _snapshot_name(index: int) -> str:
    return f"snapshot_{index:05d}.csv"


def save_trajectory(directory: Path, trajectory: Trajectory) -> List[str]:
    """snapshots/index.csv, snapshots/snapshot_NNNNN.csv (y, v) and timeseries.csv."""
    directory = Path(directory)
    index_rows = []
    written = []
    for i, field in enumerate(trajectory.snapshots):
        name = _snapshot_name(i)
        write_csv(directory / "snapshots" / name, [{"y": y, "v": v} for y, v in zip(field.y, field.values)])
        index_rows.append({"index": i, "s": field.s, "half_width": field.half_width, "dy": field.dy,
                           "nodes": field.n, "file": name})
        written.append(f"snapshots/{name}")
    write_csv(directory / "snapshots" / "index.csv", index_rows,
              columns=["index", "s", "half_width", "dy", "nodes", "file"])
    write_csv(directory / "timeseries.csv", [row.model_dump() for row in trajectory.series], columns=SERIES_COLUMNS)
    write_json(directory / "trajectory.json", {"s0": trajectory.s0, "stopped_early": trajectory.stopped_early})
    return ["snapshots/index.csv", *written, "timeseries.csv", "trajectory.json"]


def load_trajectory(directory: Path) -> Trajectory:
    directory = Path(directory)
    meta_path = directory / "trajectory.json"
    if not meta_path.exists():
        raise ConfigError(f"{directory} is not a trajectory directory (no trajectory.json)")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))

    index = read_csv(directory / "snapshots" / "index.csv")
    snapshots = []
    for _, entry in index.iterrows():
        table = read_csv(directory / "snapshots" / entry["file"])
        snapshots.append(GridField(s=float(entry["s"]), half_width=float(entry["half_width"]),
                                   dy=float(entry["dy"]), values=table["v"].to_numpy(dtype=float)))
    series_table = read_csv(directory / "timeseries.csv")
    series = [ModeSample(**{k: float(row[k]) for k in SERIES_COLUMNS}) for _, row in series_table.iterrows()]
    logger.info(f"[IO] loaded trajectory: {len(snapshots)} snapshots, {len(series)} samples")
    return Trajectory(s0=float(meta["s0"]), snapshots=snapshots, series=series,
                      stopped_early=bool(meta.get("stopped_early", False)))


# ─────────────────────────────────────────────
# CHECKPOINTS
# ─────────────────────────────────────────────

CHECKPOINT_FILE = "checkpoint.npz"


def write_checkpoint(directory: Path, field: GridField, trajectory: Trajectory, config_hash_value: str) -> None:
    directory = Path(directory)
    save_trajectory(directory, trajectory)
    np.savez(directory / CHECKPOINT_FILE, values=field.values, s=field.s, half_width=field.half_width,
             dy=field.dy, config_hash=config_hash_value)
    logger.debug(f"[IO] checkpoint at s={field.s:.4f}")


def read_checkpoint(directory: Path, config_hash_value: str) -> Optional[Tuple[GridField, Trajectory]]:
    """The last checkpoint of a run with the same config hash; None when there is none."""
    path = Path(directory) / CHECKPOINT_FILE
    if not path.exists():
        return None
    with np.load(path) as data:
        stored = str(data["config_hash"])
        if stored != config_hash_value:
            raise ConfigError(f"checkpoint in {directory} belongs to config {stored[:12]}, not {config_hash_value[:12]}")
        field = GridField(s=float(data["s"]), half_width=float(data["half_width"]), dy=float(data["dy"]),
                          values=np.array(data["values"], dtype=float))
    trajectory = load_trajectory(directory)
    # drop samples written after the checkpointed field
    trajectory.series = [row for row in trajectory.series if row.s <= field.s + 1e-12]
    trajectory.snapshots = [snap for snap in trajectory.snapshots if snap.s <= field.s + 1e-12]
    trajectory.stopped_early = False
    return field, trajectory
