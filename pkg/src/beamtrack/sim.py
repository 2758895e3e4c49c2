"""Scenario engine: STA trajectory, LOS link evolution and the tracking loop."""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .array import ArrayGeometry
from .channel import SNR_FLOOR_DB, LinkBudget, los_channel, path_gain, snr_db
from .codebook import (Codebook, EvolutionParams, FitnessParams, pencil_codebook,
                       wide_codebook)
from .tracking import BeamTracker, Mode, MotionModel, TrnConfig, trn_sweep

log = logging.getLogger(__name__)

DEFAULT_WAYPOINTS = ((2.0, 1.0), (8.0, 1.0), (8.0, 4.0), (2.0, 4.0))


@dataclass(frozen=True)
class Trajectory:
    """Closed polygon walked at constant speed, ``loops`` times."""

    waypoints: tuple[tuple[float, float], ...] = DEFAULT_WAYPOINTS
    speed_mps: float = 1.39
    loops: int = 2

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(tuple(map(float, p)) for p in self.waypoints))
        if len(self.waypoints) < 2:
            raise ValueError("trajectory needs at least 2 waypoints")
        if not self.speed_mps > 0:
            raise ValueError("speed_mps must be positive")
        if self.loops < 1:
            raise ValueError("loops must be >= 1")
        if not self.perimeter > 0:
            raise ValueError("trajectory has zero length")

    @property
    def _vertices(self) -> np.ndarray:
        pts = np.array(self.waypoints)
        return np.vstack([pts, pts[:1]])

    @property
    def perimeter(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self._vertices, axis=0).T)))

    @property
    def duration(self) -> float:
        return self.loops * self.perimeter / self.speed_mps


def position_at(traj: Trajectory, t_s) -> np.ndarray:
    """Position(s) in meters at time(s) ``t_s``; shape (2,) or (len(t_s), 2)."""
    t = np.asarray(t_s, dtype=float)
    if np.any(t < 0) or np.any(t > traj.duration * (1 + 1e-12)):
        raise ValueError(f"time outside [0, {traj.duration:.6g}] s")
    verts = traj._vertices
    seg = np.hypot(*np.diff(verts, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.mod(t * traj.speed_mps, traj.perimeter)
    x = np.interp(s, cum, verts[:, 0])
    y = np.interp(s, cum, verts[:, 1])
    return np.stack([x, y], axis=-1)


def angle_and_distance(ap_pos, sta_pos) -> tuple[np.ndarray, np.ndarray]:
    """Azimuth from the AP broadside (+y axis, positive toward +x) and range.

    A ULA cannot tell front from back, so points behind the array are mirrored.
    """
    delta = np.asarray(sta_pos, dtype=float) - np.asarray(ap_pos, dtype=float)
    dx, dy = delta[..., 0], delta[..., 1]
    dist = np.hypot(dx, dy)
    if np.any(dist == 0):
        raise ValueError("STA and AP positions coincide")
    return np.arctan2(dx, np.abs(dy)), dist


# -- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class CodebookSpec:
    kind: str = "wide"  # "pencil" or "wide"
    beamwidth: float = np.deg2rad(15.0)
    n_beams: int | None = None
    beta1: float = 2.0
    beta2: float = 2.0
    grid_step: float = np.deg2rad(0.25)
    evolution: EvolutionParams = EvolutionParams()
    per_center: bool = False

    def __post_init__(self):
        if self.kind not in ("pencil", "wide"):
            raise ValueError(f"unknown codebook kind {self.kind!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    ap_position: tuple[float, float] = (5.0, 0.0)
    ap_geometry: ArrayGeometry = ArrayGeometry(64)
    sta_geometry: ArrayGeometry = ArrayGeometry(1)
    trajectory: Trajectory = Trajectory()
    static: bool = False
    static_position: tuple[float, float] | None = None
    budget: LinkBudget = LinkBudget()
    codebook: CodebookSpec = CodebookSpec()
    mode: Mode = Mode.TRN_ONLY
    n_particles: int = 500
    p_continuous: float = 0.98
    theta_dot_max: float = np.deg2rad(56.0)
    sigma_gamma_db: float = 1.0
    snr_noise_db: float = 0.5
    trn: TrnConfig = TrnConfig()
    dt_s: float = 0.01
    pause_during_sweep: bool = False
    calibrated: bool = True
    beam_policy: str = "nearest"
    offset_drift_db: float = 0.15
    pf_fallback: str = "predicted"
    lookahead: float = 1.0
    steer_guard: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.dt_s > 0:
            raise ValueError("dt_s must be positive")
        if self.snr_noise_db < 0:
            raise ValueError("snr_noise_db must be nonnegative")
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        ap = np.asarray(self.ap_position, dtype=float)
        if _min_distance_to_polygon(ap, np.array(self.trajectory.waypoints)) < 1.0 - 1e-9:
            raise ValueError("trajectory passes closer than 1 m to the AP")
        if self.static_position is not None and np.hypot(*(np.asarray(self.static_position) - ap)) < 1.0:
            raise ValueError("static_position is closer than 1 m to the AP")

    @property
    def motion(self) -> MotionModel:
        return MotionModel(self.dt_s, self.p_continuous, self.theta_dot_max)


def _min_distance_to_polygon(p: np.ndarray, pts: np.ndarray) -> float:
    a = pts
    b = np.roll(pts, -1, axis=0)
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300), 0, 1)
    closest = a + t[:, None] * ab
    return float(np.min(np.hypot(*(closest - p).T)))


@functools.lru_cache(maxsize=32)
def build_codebook(spec: CodebookSpec, geom: ArrayGeometry) -> Codebook:
    """Codebook described by ``spec``; wide designs are memoized per process."""
    if spec.kind == "pencil":
        return pencil_codebook(geom, spec.n_beams or geom.n_elements)
    params = FitnessParams(spec.beamwidth, 0.0, spec.beta1, spec.beta2, spec.grid_step)
    log.info("designing %.3g deg wide-beam codebook", np.rad2deg(spec.beamwidth))
    return wide_codebook(geom, spec.beamwidth, params, spec.evolution, per_center=spec.per_center)


# -- simulation ----------------------------------------------------------------

@dataclass
class RunMetrics:
    avg_snr_db: float
    trn_events_per_s: float
    outage_fraction: float
    excursions: int
    n_sweeps: int
    n_steers: int
    n_divergences: int
    duration_s: float
    t_s: np.ndarray = field(repr=False)
    x_m: np.ndarray = field(repr=False)
    y_m: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    snr_db: np.ndarray = field(repr=False)
    aligned_snr_db: np.ndarray = field(repr=False)
    reference_snr_db: np.ndarray = field(repr=False)
    beam_index: np.ndarray = field(repr=False)
    action: list[str] = field(repr=False)
    ess: np.ndarray = field(repr=False)
    theta_hat: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        return {
            "avg_snr_db": self.avg_snr_db,
            "trn_events_per_s": self.trn_events_per_s,
            "outage_fraction": self.outage_fraction,
            "excursions": self.excursions,
            "n_sweeps": self.n_sweeps,
            "n_steers": self.n_steers,
            "n_divergences": self.n_divergences,
            "duration_s": self.duration_s,
            "n_steps": int(len(self.t_s)),
        }


def time_grid(cfg: ScenarioConfig) -> np.ndarray:
    duration = cfg.trajectory.duration
    n = int(np.floor(duration / cfg.dt_s + 1e-9))
    return np.arange(n) * cfg.dt_s


def sta_positions(cfg: ScenarioConfig, t: np.ndarray) -> np.ndarray:
    if cfg.static:
        fixed = cfg.static_position or cfg.trajectory.waypoints[0]
        return np.tile(np.asarray(fixed, dtype=float), (len(t), 1))
    return position_at(cfg.trajectory, t)


def count_excursions(below: np.ndarray) -> int:
    """Number of maximal runs of True in ``below``."""
    below = np.asarray(below, dtype=bool)
    return int(np.sum(below[1:] & ~below[:-1]) + (below[0] if len(below) else 0))


def _link(cfg: ScenarioConfig, pos):
    phi, dist = angle_and_distance(cfg.ap_position, pos)
    gain = path_gain(float(dist), cfg.budget.carrier_wavelength_m, cfg.budget.path_loss_exponent)
    return float(phi), los_channel(cfg.sta_geometry, cfg.ap_geometry, gain, 0.0, float(phi), float(dist))


def _f_sta(cfg: ScenarioConfig) -> np.ndarray:
    n = cfg.sta_geometry.n_elements
    return np.ones(n, dtype=complex) / np.sqrt(n)


def run(cfg: ScenarioConfig, codebook: Codebook | None = None) -> RunMetrics:
    """Simulate the scenario and aggregate the link metrics.

    Each step moves the STA, measures the SNR through the current beam and
    lets the controller hold, steer or start a sweep. A sweep occupies
    ``len(codebook) * trn_interval_s``; data keeps flowing on the old beam
    meanwhile (or the link is marked paused with ``pause_during_sweep``) and
    the winner is taken against the channel at the end of the sweep.
    """
    cb = codebook if codebook is not None else build_codebook(cfg.codebook, cfg.ap_geometry)
    if cb.geometry.n_elements != cfg.ap_geometry.n_elements:
        raise ValueError("codebook does not match the AP array")
    noise_ss, tracker_ss = np.random.SeedSequence(cfg.rng_seed).spawn(2)
    noise_rng = np.random.default_rng(noise_ss)
    f_sta = _f_sta(cfg)
    weights = cb.weights

    t = time_grid(cfg)
    pos = sta_positions(cfg, t)
    n = len(t)
    tracker = BeamTracker(cfg.mode, cb, cfg.trn, cfg.motion, cfg.sigma_gamma_db,
                          cfg.n_particles, np.random.default_rng(tracker_ss),
                          calibrated=cfg.calibrated, policy=cfg.beam_policy,
                          offset_drift_db=cfg.offset_drift_db, fallback=cfg.pf_fallback,
                          lookahead=cfg.lookahead, guard=cfg.steer_guard)

    phi0, ch0 = _link(cfg, pos[0])
    best, _ = trn_sweep(cb, ch0, cfg.budget, cfg.trn, f_sta)
    tracker.initialize(phi0, best, snr_db(f_sta, ch0, weights[best], cfg.budget))

    phi = np.empty(n)
    snr = np.empty(n)
    genie = np.empty(n)
    ref = np.empty(n)
    idx = np.empty(n, dtype=int)
    ess = np.full(n, np.nan)
    theta_hat = np.full(n, np.nan)
    actions = []
    sweeping_until = None
    paused = np.zeros(n, dtype=bool)
    n_sweeps = n_steers = n_div = 0
    eps = 1e-9

    for k in range(n):
        phi[k], ch = _link(cfg, pos[k])
        all_snr = snr_db(f_sta, ch, weights, cfg.budget)
        genie[k] = np.max(all_snr)
        data = all_snr[tracker.index]
        idx[k] = tracker.index
        ref[k] = tracker.reference_snr_db
        if sweeping_until is not None:
            paused[k] = cfg.pause_during_sweep
            if t[k] >= sweeping_until - eps:
                best, _ = trn_sweep(cb, ch, cfg.budget, cfg.trn, f_sta)
                measured = all_snr
                if cfg.snr_noise_db > 0:
                    measured = np.maximum(measured + noise_rng.normal(0.0, cfg.snr_noise_db, len(cb)),
                                          SNR_FLOOR_DB)
                tracker.after_sweep(best, all_snr[best], measured)
                sweeping_until = None
                actions.append("sweep_done")
            else:
                actions.append("sweeping")
        else:
            observed = data + (noise_rng.normal(0.0, cfg.snr_noise_db) if cfg.snr_noise_db > 0 else 0.0)
            action = tracker.step(max(observed, SNR_FLOOR_DB))
            if action.kind == "sweep":
                n_sweeps += 1
                sweeping_until = t[k] + len(cb) * cfg.trn.trn_interval_s
                paused[k] = cfg.pause_during_sweep
            elif action.kind == "steer":
                n_steers += 1
            actions.append(action.kind)
            if tracker.particles is not None:
                n_div += tracker.particles.diverged
                ess[k] = tracker.particles.ess
                theta_hat[k] = tracker.theta_hat
        snr[k] = SNR_FLOOR_DB if paused[k] else data

    below = (snr < genie - cfg.trn.drop_threshold_db) | (snr <= SNR_FLOOR_DB)
    duration = n * cfg.dt_s
    return RunMetrics(
        avg_snr_db=float(np.mean(snr)),
        trn_events_per_s=n_sweeps / duration,
        outage_fraction=float(np.mean(below)),
        excursions=count_excursions(below),
        n_sweeps=n_sweeps, n_steers=n_steers, n_divergences=int(n_div),
        duration_s=duration,
        t_s=t, x_m=pos[:, 0], y_m=pos[:, 1], phi=phi, snr_db=snr, aligned_snr_db=genie,
        reference_snr_db=ref,
        beam_index=idx, action=actions, ess=ess, theta_hat=theta_hat,
    )


def genie_average_snr(cfg: ScenarioConfig, codebook: Codebook) -> float:
    """Mean SNR when the best codebook entry is used at every trajectory point.

    This is the average over static users placed along the path, each aligned
    once, and an upper bound for any tracker using the same codebook.
    """
    t = time_grid(cfg)
    pos = sta_positions(cfg, t)
    f_sta = _f_sta(cfg)
    best = np.empty(len(t))
    for k in range(len(t)):
        _, ch = _link(cfg, pos[k])
        best[k] = np.max(snr_db(f_sta, ch, codebook.weights, cfg.budget))
    return float(np.mean(best))


@dataclass
class SweepRow:
    label: str
    beamwidth_deg: float
    static_snr_db: float
    dynamic_snr_db: float
    trn_per_s: float
    trn_per_s_pf: float


def sweep_beamwidth(cfg: ScenarioConfig, beamwidths_deg, with_pf: bool = True,
                    codebooks: dict | None = None) -> list[SweepRow]:
    """Pencil baseline followed by one row per wide-beam width.

    The static column averages perfectly aligned static users along the path;
    the dynamic column and ``trn_per_s`` come from a TRN-only run, and
    ``trn_per_s_pf`` from a PF-BT run with the same seed.
    ``codebooks`` maps beamwidth in degrees (None for pencil) to prebuilt codebooks.
    """
    beamwidths_deg = list(beamwidths_deg)
    if not beamwidths_deg:
        raise ValueError("empty beamwidth list")
    codebooks = codebooks or {}
    specs = [(None, replace(cfg.codebook, kind="pencil"))]
    specs += [(float(bw), replace(cfg.codebook, kind="wide", beamwidth=float(np.deg2rad(bw))))
              for bw in beamwidths_deg]
    rows = []
    for bw, spec in specs:
        cb = codebooks.get(bw) or build_codebook(spec, cfg.ap_geometry)
        dyn = replace(cfg, codebook=spec, static=False, mode=Mode.TRN_ONLY)
        trn_metrics = run(dyn, cb)
        pf_rate = run(replace(dyn, mode=Mode.PF_BT), cb).trn_events_per_s if with_pf else float("nan")
        rows.append(SweepRow(
            "pencil" if bw is None else f"wide_{bw:g}",
            0.0 if bw is None else bw,
            genie_average_snr(dyn, cb),
            trn_metrics.avg_snr_db,
            trn_metrics.trn_events_per_s,
            pf_rate,
        ))
    return rows
