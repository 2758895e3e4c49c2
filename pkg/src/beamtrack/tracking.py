"""Blind beam tracking.

A particle filter over angular position and velocity is driven only by the
SNR measured through the current beam. The 802.11ad-style TRN sweep is the
fallback (and the only mechanism in TRN-only mode).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .array import HALF_PI, ArrayGeometry, array_pattern, pattern_grid
from .channel import SNR_FLOOR_DB, LinkBudget, LosChannel, snr_db
from .codebook import Codebook

log = logging.getLogger(__name__)

THETA_DOT_MAX = np.deg2rad(56.0)


@dataclass
class ParticleSet:
    theta: np.ndarray
    theta_dot: np.ndarray
    weights: np.ndarray
    rng: np.random.Generator = field(repr=False)
    offset: np.ndarray | None = None
    diverged: bool = False

    def __len__(self):
        return len(self.theta)

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))


def seed_particles(n: int, theta_lo: float, theta_hi: float, theta_dot_max: float,
                   rng: np.random.Generator) -> ParticleSet:
    """Positions uniform on [theta_lo, theta_hi], velocities uniform on +-theta_dot_max."""
    theta = rng.uniform(theta_lo, theta_hi, n) if theta_hi > theta_lo else np.full(n, float(theta_lo))
    theta_dot = rng.uniform(-theta_dot_max, theta_dot_max, n)
    return ParticleSet(theta, theta_dot, np.full(n, 1.0 / n), rng)


def seed_on_grid(n: int, support: np.ndarray, step: float, theta_dot_max: float,
                 rng: np.random.Generator) -> ParticleSet:
    """Positions uniform over the union of grid cells centered on ``support``."""
    picks = support[rng.integers(len(support), size=n)]
    theta = np.clip(picks + rng.uniform(-step / 2, step / 2, n), -HALF_PI, HALF_PI)
    theta_dot = rng.uniform(-theta_dot_max, theta_dot_max, n)
    return ParticleSet(theta, theta_dot, np.full(n, 1.0 / n), rng)


@dataclass(frozen=True)
class MotionModel:
    """Two-regime velocity evolution.

    With probability ``p_continuous`` the velocity takes a Gaussian step of
    std ``sigma_accel``; otherwise it is redrawn uniformly on +-theta_dot_max.
    ``sigma_accel`` defaults to ``theta_dot_max * dt``.
    """

    dt: float = 0.01
    p_continuous: float = 0.98
    theta_dot_max: float = THETA_DOT_MAX
    sigma_accel: float | None = None

    def __post_init__(self):
        if not 0 <= self.p_continuous <= 1:
            raise ValueError("p_continuous must lie in [0, 1]")
        if not self.theta_dot_max > 0:
            raise ValueError("theta_dot_max must be positive")
        if self.sigma_accel is None:
            object.__setattr__(self, "sigma_accel", self.theta_dot_max * self.dt)
        if self.sigma_accel < 0:
            raise ValueError("sigma_accel must be nonnegative")


def draw_velocity(theta_dot: np.ndarray, mm: MotionModel,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Next velocities and the mask of particles that took the uniform redraw."""
    n = len(theta_dot)
    jump = rng.random(n) >= mm.p_continuous
    steps = rng.normal(0.0, mm.sigma_accel, n) if mm.sigma_accel > 0 else np.zeros(n)
    fresh = rng.uniform(-mm.theta_dot_max, mm.theta_dot_max, n)
    return np.where(jump, fresh, theta_dot + steps), jump


def predict(ps: ParticleSet, mm: MotionModel, offset_drift_db: float = 0.0) -> ParticleSet:
    """Propagate every particle one step through the motion model (in place).

    Per-particle link offsets, when present, take a Gaussian random-walk step
    of std ``offset_drift_db``.
    """
    theta = ps.theta + ps.theta_dot * mm.dt
    theta_dot, _ = draw_velocity(ps.theta_dot, mm, ps.rng)
    clamped = np.abs(theta) > HALF_PI
    ps.theta = np.clip(theta, -HALF_PI, HALF_PI)
    ps.theta_dot = np.where(clamped, 0.0, theta_dot)
    if ps.offset is not None and offset_drift_db > 0:
        ps.offset = ps.offset + ps.rng.normal(0.0, offset_drift_db, len(ps))
    return ps


@dataclass(frozen=True)
class ObservationModel:
    """Gaussian likelihood of the SNR change since the last alignment.

    Without per-particle offsets the expected change for a user at theta is
    the pattern gain at theta relative to the gain at the beam center, both
    in dB. With offsets (SNR at unit pattern gain, one per particle) the
    expected SNR is simply offset + gain.
    """

    awv: np.ndarray = field(repr=False)
    beam_center: float
    reference_snr_db: float
    sigma_gamma_db: float = 1.0

    def __post_init__(self):
        if not self.sigma_gamma_db > 0:
            raise ValueError("sigma_gamma_db must be positive")

    def expected_snr_db(self, geom: ArrayGeometry, theta: np.ndarray,
                        offset: np.ndarray | None = None) -> np.ndarray:
        if offset is not None:
            return np.maximum(offset + gain_db(geom, self.awv, theta), SNR_FLOOR_DB)
        g = gain_db(geom, self.awv, np.append(theta, self.beam_center))
        return np.maximum(self.reference_snr_db + g[:-1] - g[-1], SNR_FLOOR_DB)


def gain_db(geom: ArrayGeometry, awv, theta) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 10 * np.log10(array_pattern(geom, awv, theta))


def update(ps: ParticleSet, observed_snr_db: float, om: ObservationModel,
           geom: ArrayGeometry) -> ParticleSet:
    """Reweight by the SNR likelihood and renormalize (in place).

    If every likelihood underflows the weights are reset to uniform and
    ``ps.diverged`` is set.
    """
    resid = (observed_snr_db - om.expected_snr_db(geom, ps.theta, ps.offset)) / om.sigma_gamma_db
    return _reweight(ps, np.exp(-0.5 * resid ** 2))


def update_sweep(ps: ParticleSet, sweep_snr_db: np.ndarray, cb: Codebook,
                 sigma_gamma_db: float) -> ParticleSet:
    """Reweight with the SNR of every codebook entry measured by a sweep.

    Requires per-particle offsets. Entries measured at the floor carry no
    usable level and are skipped.
    """
    if ps.offset is None:
        raise ValueError("sweep update needs per-particle offsets")
    sweep_snr_db = np.asarray(sweep_snr_db, dtype=float)
    use = sweep_snr_db > SNR_FLOOR_DB
    expected = np.maximum(ps.offset + gain_db(cb.geometry, cb.weights[use], ps.theta), SNR_FLOOR_DB)
    resid = (sweep_snr_db[use, None] - expected) / sigma_gamma_db
    loglik = -0.5 * np.sum(resid ** 2, axis=0)
    # a joint likelihood over many entries underflows easily; scale by the best particle
    return _reweight(ps, np.exp(loglik - np.max(loglik)))


def _reweight(ps: ParticleSet, likelihood: np.ndarray) -> ParticleSet:
    w = ps.weights * likelihood
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        log.debug("all particle likelihoods vanished, resetting weights")
        ps.weights = np.full(len(ps), 1.0 / len(ps))
        ps.diverged = True
    else:
        ps.weights = w / total
        ps.diverged = False
    return ps


def systematic_resample(weights, count: int, rng: np.random.Generator) -> np.ndarray:
    """Parent index of each of ``count`` offspring using one uniform draw."""
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    positions = (rng.random() + np.arange(count)) / count
    return np.searchsorted(cdf, positions, side="right")


def resample(ps: ParticleSet) -> ParticleSet:
    """Systematic resampling when the effective sample size drops below half the count."""
    n = len(ps)
    if ps.ess >= n / 2:
        return ps
    idx = systematic_resample(ps.weights, n, ps.rng)
    ps.theta = ps.theta[idx]
    ps.theta_dot = ps.theta_dot[idx]
    if ps.offset is not None:
        ps.offset = ps.offset[idx]
    ps.weights = np.full(n, 1.0 / n)
    return ps


def estimate(ps: ParticleSet) -> tuple[float, float]:
    """Weighted mean angle and weighted standard deviation."""
    mean = float(ps.weights @ ps.theta)
    var = float(ps.weights @ (ps.theta - mean) ** 2)
    return mean, float(np.sqrt(max(var, 0.0)))


def select_beam(theta_hat: float, cb: Codebook) -> int:
    """Entry whose center is nearest in sin(phi); ties go to the lower index."""
    dist = np.abs(np.sin(cb.centers) - np.sin(theta_hat))
    return int(np.flatnonzero(dist <= dist.min() + 1e-12)[0])


def beam_cell(cb: Codebook, index: int) -> tuple[float, float]:
    """Angular span over which ``select_beam`` returns ``index``."""
    u = np.sin(cb.centers)
    lo = -1.0 if index == 0 else (u[index - 1] + u[index]) / 2
    hi = 1.0 if index == len(u) - 1 else (u[index] + u[index + 1]) / 2
    return float(np.arcsin(lo)), float(np.arcsin(hi))


@dataclass(frozen=True)
class TrnConfig:
    trn_interval_s: float = 0.020
    drop_threshold_db: float = 3.0

    def __post_init__(self):
        if not self.trn_interval_s > 0 or not self.drop_threshold_db > 0:
            raise ValueError("trn_interval_s and drop_threshold_db must be positive")


def trn_sweep(cb: Codebook, ch: LosChannel, budget: LinkBudget, trn: TrnConfig,
              f_sta=None) -> tuple[int, float]:
    """Exhaustive sweep: index of the best entry and the air time it costs."""
    if f_sta is None:
        f_sta = np.ones(ch.matrix.shape[0], dtype=complex) / np.sqrt(ch.matrix.shape[0])
    snrs = np.atleast_1d(snr_db(f_sta, ch, cb.weights, budget))
    return int(np.argmax(snrs)), len(cb) * trn.trn_interval_s


class Mode(enum.Enum):
    TRN_ONLY = "trn"
    PF_BT = "pf"


class Action(NamedTuple):
    kind: str  # "hold", "steer" or "sweep"
    index: int


def coverage_grid(cb: Codebook, step_deg: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Grid angles and, for each, the index of the strongest codebook entry."""
    grid = pattern_grid(step_deg)
    gains = array_pattern(cb.geometry, cb.weights, grid)
    return grid, np.argmax(gains, axis=0)


class BeamTracker:
    """Drop-triggered sweep controller, optionally steered by a particle filter.

    In PF mode each particle carries a link offset (SNR at unit pattern gain)
    unless ``calibrated`` is False, in which case the likelihood is referenced
    to the beam center. ``policy`` picks the beam from the posterior:
    "nearest" uses the entry center closest to the estimate, "max_gain" the
    entry with the largest posterior-mean gain.
    """

    def __init__(self, mode: Mode, cb: Codebook, trn: TrnConfig | None = None,
                 motion: MotionModel | None = None, sigma_gamma_db: float = 1.0,
                 n_particles: int = 500, rng: np.random.Generator | None = None,
                 calibrated: bool = True, policy: str = "nearest",
                 offset_drift_db: float = 0.15, fallback: str = "predicted",
                 lookahead: float = 1.0, guard: bool = True):
        if policy not in ("nearest", "max_gain"):
            raise ValueError(f"unknown beam policy {policy!r}")
        if fallback not in ("reference", "predicted", "both"):
            raise ValueError(f"unknown fallback rule {fallback!r}")
        if fallback != "reference" and not calibrated:
            raise ValueError("the predicted fallback needs calibrated particles")
        self.fallback = fallback
        self.lookahead = lookahead
        self.guard = guard
        self.mode = Mode(mode)
        self.codebook = cb
        self.trn = trn or TrnConfig()
        self.motion = motion or MotionModel()
        self.sigma_gamma_db = sigma_gamma_db
        self.n_particles = n_particles
        self.rng = rng if rng is not None else np.random.default_rng()
        self.calibrated = calibrated
        self.policy = policy
        self.offset_drift_db = offset_drift_db
        self.index = 0
        self.reference_snr_db = np.nan
        self.particles: ParticleSet | None = None
        self.theta_hat = np.nan
        self._coverage = None

    @property
    def geometry(self) -> ArrayGeometry:
        return self.codebook.geometry

    def _set_offsets(self) -> None:
        if self.calibrated:
            entry = self.codebook[self.index]
            self.particles.offset = self.reference_snr_db - gain_db(self.geometry, entry.awv,
                                                                   self.particles.theta)

    def initialize(self, theta0: float, index: int, reference_snr_db: float) -> None:
        """Start from a known angle and an aligned beam."""
        self.index = int(index)
        self.reference_snr_db = float(reference_snr_db)
        self.theta_hat = float(theta0)
        if self.mode is Mode.PF_BT:
            self.particles = seed_particles(self.n_particles, theta0, theta0,
                                            self.motion.theta_dot_max, self.rng)
            self._set_offsets()

    def after_sweep(self, index: int, best_snr_db: float, sweep_snr_db=None) -> None:
        """Adopt the sweep winner, reset the reference and re-seed the filter.

        Particles are spread over the angles where the winner is the strongest
        entry. When the per-entry sweep SNRs are given (calibrated mode) they
        are folded in as one joint measurement.
        """
        self.index = int(index)
        self.reference_snr_db = float(best_snr_db)
        if self.mode is not Mode.PF_BT:
            return
        if self._coverage is None:
            self._coverage = coverage_grid(self.codebook)
        grid, owner = self._coverage
        support = grid[owner == self.index]
        if len(support):
            step = grid[1] - grid[0]
            self.particles = seed_on_grid(self.n_particles, support, step,
                                          self.motion.theta_dot_max, self.rng)
        else:
            lo, hi = beam_cell(self.codebook, self.index)
            self.particles = seed_particles(self.n_particles, lo, hi,
                                            self.motion.theta_dot_max, self.rng)
        self._set_offsets()
        if sweep_snr_db is not None and self.calibrated:
            update_sweep(self.particles, sweep_snr_db, self.codebook, self.sigma_gamma_db)
            resample(self.particles)
        self.theta_hat = estimate(self.particles)[0]

    def observation_model(self) -> ObservationModel:
        entry = self.codebook[self.index]
        return ObservationModel(entry.awv, entry.center, self.reference_snr_db, self.sigma_gamma_db)

    def choose_beam(self) -> int:
        """Beam for the next step, judged at the one-step-ahead particle positions."""
        ps = self.particles
        ahead = np.clip(ps.theta + self.lookahead * ps.theta_dot * self.motion.dt, -HALF_PI, HALF_PI)
        if self.policy == "nearest":
            best = select_beam(float(ps.weights @ ahead), self.codebook)
            if best == self.index or not self.guard:
                return best
            # keep the current beam unless the posterior expects the new one to be stronger
            gains = array_pattern(self.geometry, self.codebook.weights[[self.index, best]], ahead)
            mean = gains @ ps.weights
            return best if mean[1] > mean[0] else self.index
        gains = array_pattern(self.geometry, self.codebook.weights, ahead)
        return int(np.argmax(gains @ ps.weights))

    def step(self, observed_snr_db: float) -> Action:
        """Consume one SNR observation taken through the current beam."""
        if np.isnan(self.reference_snr_db):
            raise RuntimeError("tracker has no reference SNR; call initialize() first")
        dropped = observed_snr_db < self.reference_snr_db - self.trn.drop_threshold_db
        if self.mode is Mode.TRN_ONLY:
            return Action("sweep", self.index) if dropped else Action("hold", self.index)

        ps = self.particles
        predict(ps, self.motion, self.offset_drift_db)
        if self.fallback != "reference":
            expected = self.observation_model().expected_snr_db(self.geometry, ps.theta, ps.offset)
            below_prediction = observed_snr_db < ps.weights @ expected - self.trn.drop_threshold_db
            dropped = below_prediction and (dropped or self.fallback == "predicted")
        update(ps, observed_snr_db, self.observation_model(), self.geometry)
        resample(ps)
        self.theta_hat = estimate(ps)[0]
        if dropped:
            return Action("sweep", self.index)
        best = self.choose_beam()
        if best != self.index:
            self.index = best
            return Action("steer", best)
        return Action("hold", self.index)


def step_controller(tracker: BeamTracker, observed_snr_db: float) -> Action:
    return tracker.step(observed_snr_db)
