"""Experiment configuration files.

Configs are YAML (or JSON, which YAML also parses) with explicit units in the
field names. Every angle is in degrees at this boundary and converted to
radians when the scenario is built.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .array import ArrayGeometry
from .channel import SPEED_OF_LIGHT, LinkBudget
from .codebook import EvolutionParams
from .sim import CodebookSpec, ScenarioConfig, Trajectory
from .tracking import TrnConfig


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScenarioSection(_Section):
    ap_position_m: tuple[float, float] = (5.0, 0.0)
    ap_elements: int = Field(64, ge=1)
    element_spacing_wavelengths: float = Field(0.5, gt=0)
    sta_elements: int = Field(1, ge=1)
    waypoints_m: list[tuple[float, float]] = Field(
        default_factory=lambda: [(2.0, 1.0), (8.0, 1.0), (8.0, 4.0), (2.0, 4.0)], min_length=2)
    speed_mps: float = Field(1.39, gt=0)
    loops: int = Field(2, ge=1)
    static: bool = False
    static_position_m: tuple[float, float] | None = None
    dt_s: float = Field(0.01, gt=0)
    pause_during_sweep: bool = False


class LinkSection(_Section):
    tx_power_dbm: float = 10.0
    noise_power_dbm: float = -84.0
    carrier_frequency_ghz: float = Field(60.0, gt=0)
    path_loss_exponent: float = Field(2.0, gt=0)


class CodebookSection(_Section):
    kind: Literal["pencil", "wide"] = "wide"
    beamwidth_deg: float | None = Field(None, gt=0, lt=180)
    n_beams: int | None = Field(None, ge=1)
    beta1: float = Field(2.0, ge=0)
    beta2: float = Field(2.0, ge=0)
    grid_step_deg: float = Field(0.25, gt=0)
    population_size: int = Field(100, ge=2)
    stagnation_limit: int = Field(200, ge=1)
    eta_max: float = Field(1e5, gt=1)
    per_center: bool = False
    file: str | None = None

    @model_validator(mode="after")
    def _needs_width(self):
        if self.kind == "wide" and self.beamwidth_deg is None and self.file is None:
            raise ValueError("beamwidth_deg is required for a wide codebook")
        return self


class TrackingSection(_Section):
    n_particles: int = Field(500, ge=1)
    p_continuous: float = Field(0.98, ge=0, le=1)
    theta_dot_max_dps: float = Field(56.0, gt=0)
    sigma_gamma_db: float = Field(1.0, gt=0)
    snr_noise_db: float = Field(0.5, ge=0)
    trn_interval_s: float = Field(0.020, gt=0)
    drop_threshold_db: float = Field(3.0, gt=0)
    calibrated: bool = True
    beam_policy: Literal["nearest", "max_gain"] = "nearest"
    offset_drift_db: float = Field(0.15, ge=0)
    fallback: Literal["reference", "predicted", "both"] = "predicted"
    lookahead_steps: float = Field(1.0, ge=0)
    steer_guard: bool = True


class SweepSection(_Section):
    beamwidths_deg: list[float] = Field(default_factory=lambda: [5.0, 10.0, 15.0, 20.0, 30.0])
    with_pf: bool = True


class ExperimentConfig(_Section):
    seed: int = Field(0, ge=0)
    mode: Literal["trn", "pf"] = "trn"
    scenario: ScenarioSection = ScenarioSection()
    link: LinkSection = LinkSection()
    codebook: CodebookSection
    tracking: TrackingSection = TrackingSection()
    sweep: SweepSection = SweepSection()

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def parse_config(data) -> ExperimentConfig:
    """Validate a mapping, raising ConfigError that names the first bad field."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    # an absent codebook section still has to state its beamwidth
    data = {**data, "codebook": data.get("codebook") or {}}
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"]
        if err["type"] == "value_error" and "beamwidth_deg" in msg:
            loc = f"{loc}.beamwidth_deg" if loc != "<root>" else "beamwidth_deg"
        raise ConfigError(loc, msg) from None


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML/JSON: {exc}") from None
    return parse_config(data)


def with_overrides(cfg: ExperimentConfig, seed: int | None = None,
                   mode: str | None = None) -> ExperimentConfig:
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if mode is not None:
        updates["mode"] = mode
    return parse_config({**cfg.model_dump(), **updates}) if updates else cfg


def codebook_spec(cfg: ExperimentConfig, beamwidth_deg: float | None = None) -> CodebookSpec:
    c = cfg.codebook
    width = beamwidth_deg if beamwidth_deg is not None else (c.beamwidth_deg or 15.0)
    evo = EvolutionParams(c.population_size, c.stagnation_limit, c.eta_max, cfg.seed)
    return CodebookSpec(kind=c.kind, beamwidth=float(np.deg2rad(width)), n_beams=c.n_beams,
                        beta1=c.beta1, beta2=c.beta2, grid_step=float(np.deg2rad(c.grid_step_deg)),
                        evolution=evo, per_center=c.per_center)


def scenario_config(cfg: ExperimentConfig) -> ScenarioConfig:
    """Build the simulator config; scenario-level validation errors name their field."""
    s, lk, tr = cfg.scenario, cfg.link, cfg.tracking
    try:
        traj = Trajectory(tuple(map(tuple, s.waypoints_m)), s.speed_mps, s.loops)
    except ValueError as exc:
        raise ConfigError("scenario.waypoints_m", str(exc)) from None
    try:
        budget = LinkBudget(lk.tx_power_dbm, lk.noise_power_dbm,
                            SPEED_OF_LIGHT / (lk.carrier_frequency_ghz * 1e9), lk.path_loss_exponent)
    except ValueError as exc:
        raise ConfigError("link", str(exc)) from None
    try:
        spec = codebook_spec(cfg)
    except ValueError as exc:
        raise ConfigError("codebook", str(exc)) from None
    try:
        return ScenarioConfig(
            ap_position=tuple(s.ap_position_m),
            ap_geometry=ArrayGeometry(s.ap_elements, s.element_spacing_wavelengths),
            sta_geometry=ArrayGeometry(s.sta_elements, s.element_spacing_wavelengths),
            trajectory=traj,
            static=s.static,
            static_position=None if s.static_position_m is None else tuple(s.static_position_m),
            budget=budget,
            codebook=spec,
            mode=cfg.mode,
            n_particles=tr.n_particles,
            p_continuous=tr.p_continuous,
            theta_dot_max=float(np.deg2rad(tr.theta_dot_max_dps)),
            sigma_gamma_db=tr.sigma_gamma_db,
            snr_noise_db=tr.snr_noise_db,
            trn=TrnConfig(tr.trn_interval_s, tr.drop_threshold_db),
            dt_s=s.dt_s,
            pause_during_sweep=s.pause_during_sweep,
            calibrated=tr.calibrated,
            beam_policy=tr.beam_policy,
            offset_drift_db=tr.offset_drift_db,
            pf_fallback=tr.fallback,
            lookahead=tr.lookahead_steps,
            steer_guard=tr.steer_guard,
            rng_seed=cfg.seed,
        )
    except ValueError as exc:
        msg = str(exc)
        where = ("scenario.static_position_m" if "static_position" in msg
                 else "scenario.waypoints_m" if "trajectory" in msg else "scenario")
        raise ConfigError(where, msg) from None
