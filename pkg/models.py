"""
Pydantic Models — domain types of the blow-up laboratory
Every value that flows between engines is one of these models.
"""

import math
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# ─────────────────────────────────────────────
# MODEL CONSTANTS
# ─────────────────────────────────────────────

class ModelParams(BaseModel):
    """Constant tuple governing every formula. Built by `profile_engine.derive_constants`."""

    model_config = ConfigDict(frozen=True)

    p: float
    mu: float
    dim: int = 1
    K: float = 6.0
    chi_profile: Literal["mollifier", "smoothstep"] = "mollifier"
    q: float
    beta: float
    kappa: float
    b: float
    a: float
    q_moment: float            # ∫ |y|^q e^{-y²/4} dy
    c0_tilde: float
    c2_tilde: float
    B_inner: float

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.dim != 1:
            raise ValueError("only dim = 1 is supported")
        if self.b <= 0 or self.a <= 0 or self.kappa <= 0:
            raise ValueError("b, a and kappa must be positive")
        return self

    def perturbed(self, b_factor: float = 1.0, a_factor: float = 1.0) -> "ModelParams":
        """Copy with b and/or a scaled; used by the cancellation-sensitivity studies."""
        return self.model_copy(update={"b": self.b * b_factor, "a": self.a * a_factor})


class ShrinkParams(BaseModel):
    """Trap size A and exponent gamma of the shrinking set V_A(s)."""

    model_config = ConfigDict(frozen=True)

    A: float = Field(ge=1.0)
    gamma: float
    epsilon_gamma: float
    beta: float

    @model_validator(mode="after")
    def _check_gamma_window(self):
        lo = 3 * self.beta
        hi = min(5 * self.beta - 1, 2 * self.beta + 1)
        if not (lo < self.gamma < hi):
            raise ValueError(f"gamma={self.gamma} outside the window ({lo}, {hi})")
        return self


# ─────────────────────────────────────────────
# RUN CONFIGURATION
# ─────────────────────────────────────────────

class RunConfig(BaseModel):
    """Discretization, tolerances and domain growth policy of the solver."""

    model_config = ConfigDict(frozen=True)

    dy: float = Field(default=0.1, gt=0)
    dt_safety: float = Field(default=0.25, gt=0, le=0.5)
    cfl_advection: float = Field(default=0.9, gt=0, le=1.0)
    eps_grad: float = Field(default=1e-10, ge=0)
    bc: Literal["dirichlet"] = "dirichlet"
    domain_factor: float = Field(default=2.5, ge=2.0)     # L(s) = c_L K s^beta
    domain_growth: bool = True
    ds_out: float = Field(default=0.01, gt=0)
    snapshot_every: int = Field(default=100, ge=1)     # in output steps
    blowup_guard: float = Field(default=1e8, gt=0)
    frame: Literal["profile", "constant"] = "profile"
    include_V: bool = True
    include_B: bool = True
    include_G: bool = True
    include_R: bool = True
    quad_nodes: int = Field(default=256, ge=16)


# ─────────────────────────────────────────────
# GRID DATA
# ─────────────────────────────────────────────

class GridField(BaseModel):
    """Samples of a function of y on the symmetric uniform grid y_j = (j - m) dy, |y| <= half_width."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    s: float
    half_width: float
    dy: float = Field(gt=0)
    values: np.ndarray

    @model_validator(mode="after")
    def _check_shape(self):
        n = self.node_count(self.half_width, self.dy)
        if self.values.shape != (n,):
            raise ValueError(f"values has shape {self.values.shape}, grid needs ({n},)")
        return self

    @staticmethod
    def node_count(half_width: float, dy: float) -> int:
        return 2 * int(round(half_width / dy)) + 1

    @classmethod
    def on_grid(cls, s: float, half_width: float, dy: float, values: Optional[np.ndarray] = None) -> "GridField":
        """Snap half_width up to a multiple of dy and build the field (zeros when no values)."""
        m = int(math.ceil(half_width / dy - 1e-9))
        n = 2 * m + 1
        if values is None:
            values = np.zeros(n)
        return cls(s=s, half_width=m * dy, dy=dy, values=np.asarray(values, dtype=float))

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], s: float, half_width: float, dy: float) -> "GridField":
        field = cls.on_grid(s, half_width, dy)
        return field.with_values(np.asarray(f(field.y), dtype=float) * np.ones(field.n))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def y(self) -> np.ndarray:
        m = (self.n - 1) // 2
        return self.dy * (np.arange(self.n) - m)

    def with_values(self, values: np.ndarray, s: Optional[float] = None) -> "GridField":
        return GridField(s=self.s if s is None else s, half_width=self.half_width, dy=self.dy, values=values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


class ModeDecomposition(BaseModel):
    """Five-component split v = v0 h0 + v1 h1 + v2 h2 + v_minus + v_e at time s."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    s: float
    v0: float
    v1: float
    v2: float
    v_minus: GridField
    v_e: GridField
    norm_minus_weighted: float
    norm_e: float


class ModeSample(BaseModel):
    """One row of a trajectory time series."""

    s: float
    v0: float
    v1: float
    v2: float
    norm_minus_weighted: float
    norm_e: float
    sup_v: float


class Trajectory(BaseModel):
    """Output of a solver run: periodic snapshots plus the per-output-step time series."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    s0: float
    snapshots: List[GridField] = []
    series: List[ModeSample] = []
    stopped_early: bool = False

    def series_arrays(self) -> Dict[str, np.ndarray]:
        keys = ModeSample.model_fields.keys()
        return {k: np.array([getattr(row, k) for row in self.series]) for k in keys}


# ─────────────────────────────────────────────
# MONITOR / SHOOTING
# ─────────────────────────────────────────────

COMPONENT_ORDER: Tuple[str, ...] = ("e", "minus", "2", "0", "1")


class MembershipReport(BaseModel):
    in_set: bool
    slack: Dict[str, float]          # |quantity| / bound per component
    worst: str


class ShotResult(BaseModel):
    d0: float
    d1: float
    s0: float
    window_end: float
    s_exit: float
    exit_component: Optional[str] = None    # None when confined on the whole window
    exit_values: Tuple[float, float] = (0.0, 0.0)   # (v0, v1) scaled by s^{2β+1}/A
    exit_signs: Tuple[int, int] = (0, 0)
    exit_derivative: Optional[float] = None  # ω v_m'(s_exit) for exits via 0 or 1
    transverse_ok: Optional[bool] = None
    confined_window: float
    minimal_A: float = 1.0

    @property
    def confined(self) -> bool:
        return self.exit_component is None


class SearchLevel(BaseModel):
    depth: int
    rectangle: Tuple[float, float, float, float]     # (d0_lo, d0_hi, d1_lo, d1_hi)
    center_window: float
    best_window: float
    chosen_quadrant: Optional[str] = None
    shots: List[ShotResult] = []


class SearchResult(BaseModel):
    center: Tuple[float, float]
    best: Optional[ShotResult] = None
    levels: List[SearchLevel] = []


# ─────────────────────────────────────────────
# SEMIGROUP
# ─────────────────────────────────────────────

class KernelEval(BaseModel):
    """Prefactor and Gaussian scale of the kernel of e^{θℒ} at a fixed θ > 0."""

    model_config = ConfigDict(frozen=True)

    theta: float = Field(gt=0)
    prefactor: float
    scale: float

    @model_validator(mode="after")
    def _check_consistency(self):
        one_minus = -math.expm1(-self.theta)
        expected_pref = math.exp(self.theta) / math.sqrt(4 * math.pi * one_minus)
        if abs(self.prefactor - expected_pref) > 1e-14 * expected_pref:
            raise ValueError("prefactor inconsistent with theta")
        if abs(self.scale - 4 * one_minus) > 1e-14 * 4 * one_minus:
            raise ValueError("scale inconsistent with theta")
        return self


# ─────────────────────────────────────────────
# PHYSICAL VARIABLES
# ─────────────────────────────────────────────

class PhysicalSnapshot(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    t: float
    x: np.ndarray
    u: np.ndarray


class PhysicalTrajectory(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    T: float
    snapshots: List[PhysicalSnapshot] = []


class BlowupEstimate(BaseModel):
    T_est: float
    a_est: float
    rate_exponent: float
    fit_residual: float
    accepted: bool


# ─────────────────────────────────────────────
# CONFIG / MANIFEST
# ─────────────────────────────────────────────

class CommandOptions(BaseModel):
    """Everything a command needs besides the model, run and trap parameters."""

    s0: float = Field(default=15.0, gt=1.0)
    window: float = Field(default=8.0, gt=0)
    depth: int = Field(default=12, ge=0)
    d0: float = 0.0
    d1: float = 0.0
    alpha: float = 0.2
    K0: float = 4.0
    K0_scan: List[float] = [2.0, 3.0, 4.0, 5.0, 6.0]
    x0: Optional[float] = None          # physical point; None means x0_fraction of the final coverage
    x0_fraction: float = 0.5
    profile_z_min: float = 1.0
    tail_points: int = Field(default=20, ge=3)
    thetas: List[float] = [0.1, 1.0, 3.0]
    max_mode: int = Field(default=4, ge=0)
    spectral_max_index: int = Field(default=8, ge=0)
    residual_s_min: float = 50.0
    residual_s_max: float = 800.0
    residual_points: int = Field(default=9, ge=3)
    residual_far_s_min: float = 1e5          # ladder where the s^{-(2β+1)} terms dominate
    residual_far_s_max: float = 1e7
    stability_eps: List[float] = [1e-2, 1e-3, 1e-4]
    trajectory_dir: Optional[str] = None
    shot_log: Optional[str] = None      # shoot_log.json whose center replaces d0, d1
    threads: int = Field(default=1, ge=1)
    resume: bool = False


class LabConfig(BaseModel):
    """Resolved configuration: raw model inputs plus typed run/trap/command settings."""

    p: float = 5.0
    mu: float = 1.0
    K: float = 6.0
    chi_profile: Literal["mollifier", "smoothstep"] = "mollifier"
    A: float = 20.0
    gamma_epsilon: float = 0.05
    run: RunConfig = RunConfig()
    options: CommandOptions = CommandOptions()
    config_hash: str = ""


class Manifest(BaseModel):
    command: str
    config_hash: str
    versions: Dict[str, str]
    params: Dict[str, Any]
    run: Dict[str, Any]
    shrink: Dict[str, Any] = {}
    options: Dict[str, Any] = {}
    wall_clock_seconds: float
    started_at: str
    outputs: List[str] = []
    status: str = "success"
    error: Optional[Dict[str, Any]] = None
