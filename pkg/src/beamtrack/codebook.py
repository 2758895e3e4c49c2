"""Codebook generation: pencil (steering/SVD) beams and evolutionary wide beams."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .array import (HALF_PI, ArrayGeometry, array_factor, normalized_steering,
                    pattern_grid, resteer, steering_vector)
from .channel import LosChannel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CodebookEntry:
    awv: np.ndarray = field(repr=False)
    center: float
    beamwidth: float = 0.0

    def __post_init__(self):
        if abs(self.center) > HALF_PI + 1e-12:
            raise ValueError("entry center must lie in [-pi/2, pi/2]")
        if abs(np.linalg.norm(self.awv) - 1.0) > 1e-12:
            raise ValueError("codebook AWV must have unit norm")


@dataclass(frozen=True)
class Codebook:
    entries: tuple[CodebookEntry, ...]
    geometry: ArrayGeometry

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise ValueError("codebook is empty")
        if any(e.awv.shape != (self.geometry.n_elements,) for e in self.entries):
            raise ValueError("entry length does not match the array geometry")
        if np.any(np.diff(self.centers) <= 0):
            raise ValueError("entry centers must be strictly increasing")

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i) -> CodebookEntry:
        return self.entries[i]

    @property
    def centers(self) -> np.ndarray:
        return np.array([e.center for e in self.entries])

    @property
    def weights(self) -> np.ndarray:
        """All AWVs stacked as a (K, N) array."""
        return np.stack([e.awv for e in self.entries])


def pencil_codebook(geom: ArrayGeometry, n_beams: int) -> Codebook:
    """Steering beams with centers evenly spaced in sin(phi) over (-1, 1)."""
    if n_beams < 1:
        raise ValueError("n_beams must be >= 1")
    u = -1 + (2 * np.arange(n_beams) + 1) / n_beams
    entries = [CodebookEntry(normalized_steering(geom, c), float(c)) for c in np.arcsin(u)]
    return Codebook(entries, geom)


def svd_beamformer(ch: LosChannel) -> tuple[np.ndarray, np.ndarray]:
    """Principal right (AP) and left (STA) singular vectors of the channel."""
    u, _, vh = np.linalg.svd(ch.matrix)
    f_sta = u[:, 0]
    f_ap = vh[0].conj()
    # fix the global phase so that the first element is real positive
    f_sta = f_sta * np.exp(-1j * np.angle(f_sta[0]))
    f_ap = f_ap * np.exp(-1j * np.angle(f_ap[0]))
    return f_ap, f_sta


# -- wide beam design ---------------------------------------------------------

@dataclass(frozen=True)
class FitnessParams:
    beamwidth: float
    target_center: float = 0.0
    beta1: float = 2.0
    beta2: float = 2.0
    grid_step: float = np.deg2rad(0.25)

    def __post_init__(self):
        if not 0 < self.beamwidth < np.pi:
            raise ValueError("beamwidth must lie in (0, pi)")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("beta1 and beta2 must be nonnegative")
        if self.grid_step > self.beamwidth / 10 + 1e-15:
            raise ValueError("grid_step must not exceed beamwidth / 10")
        lo, hi = self.window
        if lo < -HALF_PI - 1e-12 or hi > HALF_PI + 1e-12:
            raise ValueError("beam window exceeds [-pi/2, pi/2]")

    @property
    def window(self) -> tuple[float, float]:
        half = self.beamwidth / 2
        return self.target_center - half, self.target_center + half


@dataclass(frozen=True)
class EvolutionParams:
    population_size: int = 100
    stagnation_limit: int = 200
    eta_max: float = 1e5
    rng_seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.stagnation_limit < 1:
            raise ValueError("stagnation_limit must be >= 1")
        if not self.eta_max > 1:
            raise ValueError("eta_max must be > 1")


def _trapezoid_weights(angles: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # integral of f over the masked runs == weights @ f
    w = np.zeros_like(angles)
    seg = np.diff(angles) / 2
    both = mask[:-1] & mask[1:]
    w[:-1] += np.where(both, seg, 0.0)
    w[1:] += np.where(both, seg, 0.0)
    return w


class FitnessEvaluator:
    """Batched evaluation of the ripple / leakage / in-band gain objective.

    The three terms are averages on a fixed angle grid: ``f1`` is the in-band
    spread of |A| around its mean, ``f2`` the out-of-band power and ``f3`` the
    in-band power. The objective is ``f1 + beta1 * f2 - beta2 * f3``.
    """

    def __init__(self, geom: ArrayGeometry, params: FitnessParams):
        self.geom = geom
        self.params = params
        self.angles = pattern_grid(np.rad2deg(params.grid_step))
        lo, hi = params.window
        eps = 1e-9
        inside = (self.angles >= lo - eps) & (self.angles <= hi + eps)
        # the complement is open: samples on the window edge count as in-band only
        outside = (self.angles < lo - eps) | (self.angles > hi + eps)
        self.w_in = _trapezoid_weights(self.angles, inside)
        self.w_out = _trapezoid_weights(self.angles, outside)
        self.w_in /= self.w_in.sum()
        self.w_out /= self.w_out.sum()
        self._steer_h = steering_vector(geom, self.angles).conj().T

    def magnitude(self, awvs: np.ndarray) -> np.ndarray:
        """|A(phi)| on the grid for unit-norm AWVs, shape (P, G) or (G,)."""
        return np.abs(np.asarray(awvs, dtype=complex) @ self._steer_h)

    def terms_from_magnitude(self, mag: np.ndarray) -> np.ndarray:
        """(..., 3) array of (f1, f2, f3) given |A| sampled on the grid."""
        mag = np.asarray(mag, dtype=float)
        a_m = mag @ self.w_in
        f1 = (a_m[..., None] - mag) ** 2 @ self.w_in
        power = mag ** 2
        f2 = power @ self.w_out
        f3 = power @ self.w_in
        return np.stack([f1, f2, f3], axis=-1)

    def combine(self, terms: np.ndarray) -> np.ndarray:
        p = self.params
        return terms[..., 0] + p.beta1 * terms[..., 1] - p.beta2 * terms[..., 2]

    def terms(self, awvs) -> np.ndarray:
        return self.terms_from_magnitude(self.magnitude(awvs))

    def __call__(self, awvs) -> np.ndarray:
        return self.combine(self.terms(awvs))


def fitness(geom: ArrayGeometry, awv, params: FitnessParams) -> float:
    """Objective value of a single unit-norm AWV (lower is better)."""
    return float(FitnessEvaluator(geom, params)(awv))


@dataclass
class EvolutionResult:
    awv: np.ndarray
    fitness: float
    terms: np.ndarray
    trace: list[float]
    iterations: int
    eta: float


def evolve_awv(geom: ArrayGeometry, params: FitnessParams, evo: EvolutionParams) -> EvolutionResult:
    """Phase-only elitist evolution of a unit-modulus AWV.

    Every generation the best individual is kept and the remaining
    ``population_size - 1`` individuals are phase perturbations of it with
    Gaussian offsets of std pi / eta. After ``stagnation_limit`` generations
    without improvement eta doubles; the search stops once eta >= eta_max.
    """
    rng = np.random.default_rng(evo.rng_seed)
    n = geom.n_elements
    scale = 1 / np.sqrt(n)
    evaluate = FitnessEvaluator(geom, params)

    population = np.exp(2j * np.pi * rng.random((evo.population_size, n)))
    eta = 1.0
    best_value = np.inf
    stagnant = 0
    trace = []
    while eta < evo.eta_max:
        values = evaluate(population * scale)
        i = int(np.argmin(values))
        best = population[i]
        if values[i] < best_value:
            best_value = float(values[i])
            stagnant = 0
        else:
            stagnant += 1
            if stagnant == evo.stagnation_limit:
                eta *= 2
                stagnant = 0
        trace.append(best_value)
        offsets = rng.normal(0.0, np.pi / eta, (evo.population_size - 1, n))
        population = np.vstack([best, best * np.exp(1j * offsets)])

    awv = best / np.linalg.norm(best)
    log.debug("evolution finished after %d generations, fitness %.6g", len(trace), best_value)
    return EvolutionResult(awv, best_value, evaluate.terms(awv), trace, len(trace), eta)


def design_wide_beam(geom: ArrayGeometry, params: FitnessParams,
                     evo: EvolutionParams) -> CodebookEntry:
    """Flat-top beam of width ``params.beamwidth`` centered at ``params.target_center``."""
    result = evolve_awv(geom, params, evo)
    return CodebookEntry(result.awv, params.target_center, params.beamwidth)


def wide_centers(beamwidth: float) -> np.ndarray:
    """Beam centers tiling [-pi/2, pi/2] with spacing close to ``beamwidth``."""
    n = int(np.ceil(np.pi / beamwidth - 1e-9))
    return -HALF_PI + (np.arange(n) + 0.5) * np.pi / n


def wide_codebook(geom: ArrayGeometry, beamwidth: float, params: FitnessParams | None = None,
                  evo: EvolutionParams | None = None, per_center: bool = False,
                  prototype: np.ndarray | None = None) -> Codebook:
    """Codebook of wide beams covering the full field of view.

    By default a single beam is designed at broadside and re-steered to each
    center, which shifts the pattern exactly in sin(phi). With ``per_center``
    every entry is optimized separately at its own center.
    ``prototype`` skips the broadside design and re-steers the given AWV.
    """
    if not beamwidth > 0:
        raise ValueError("beamwidth must be positive")
    params = params or FitnessParams(beamwidth)
    evo = evo or EvolutionParams()
    centers = wide_centers(beamwidth)
    entries = []
    if per_center:
        for k, c in enumerate(centers):
            p = FitnessParams(beamwidth, float(c), params.beta1, params.beta2, params.grid_step)
            e = EvolutionParams(evo.population_size, evo.stagnation_limit, evo.eta_max,
                                evo.rng_seed + k)
            entries.append(design_wide_beam(geom, p, e))
        return Codebook(entries, geom)

    if prototype is None:
        base = FitnessParams(beamwidth, 0.0, params.beta1, params.beta2, params.grid_step)
        prototype = evolve_awv(geom, base, evo).awv
    for c in centers:
        awv = resteer(geom, prototype, c)
        entries.append(CodebookEntry(awv / np.linalg.norm(awv), float(c), float(beamwidth)))
    return Codebook(entries, geom)


def codebook_pattern(cb: Codebook, angles) -> np.ndarray:
    """(K, G) power patterns of every entry."""
    return np.abs(array_factor(cb.geometry, cb.weights, angles)) ** 2


# -- file format --------------------------------------------------------------

FORMAT_VERSION = 1


def codebook_to_dict(cb: Codebook) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "geometry": {"n_elements": cb.geometry.n_elements,
                     "spacing_wavelengths": cb.geometry.spacing},
        "entries": [
            {"center_deg": float(np.rad2deg(e.center)),
             "beamwidth_deg": float(np.rad2deg(e.beamwidth)),
             "center_rad": float(e.center),
             "beamwidth_rad": float(e.beamwidth),
             "weights": [[float(w.real), float(w.imag)] for w in e.awv]}
            for e in cb.entries
        ],
    }


def codebook_from_dict(data: dict) -> Codebook:
    geo = data["geometry"]
    geom = ArrayGeometry(int(geo["n_elements"]), float(geo["spacing_wavelengths"]))
    entries = []
    for e in data["entries"]:
        w = np.array([complex(re, im) for re, im in e["weights"]])
        # exact radians when present; degrees alone lose the last bit on conversion
        center = e.get("center_rad", np.deg2rad(e["center_deg"]))
        width = e.get("beamwidth_rad", np.deg2rad(e["beamwidth_deg"]))
        entries.append(CodebookEntry(w, float(center), float(width)))
    return Codebook(entries, geom)


def save_codebook(cb: Codebook, path) -> None:
    # repr of a Python float is the shortest string that round-trips (<= 17 digits)
    Path(path).write_text(json.dumps(codebook_to_dict(cb), indent=1) + "\n")


def load_codebook(path) -> Codebook:
    return codebook_from_dict(json.loads(Path(path).read_text()))
