"""Rank-1 line-of-sight channel, free-space path gain and link SNR."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .array import ArrayGeometry, normalized_steering

SPEED_OF_LIGHT = 299792458.0
WAVELENGTH_60GHZ = SPEED_OF_LIGHT / 60e9
SNR_FLOOR_DB = -40.0


@dataclass(frozen=True)
class LinkBudget:
    tx_power_dbm: float = 10.0
    noise_power_dbm: float = -84.0
    carrier_wavelength_m: float = WAVELENGTH_60GHZ
    path_loss_exponent: float = 2.0

    def __post_init__(self):
        if not self.noise_power_dbm < self.tx_power_dbm:
            raise ValueError("noise_power_dbm must be below tx_power_dbm")
        if not self.carrier_wavelength_m > 0:
            raise ValueError("carrier_wavelength_m must be positive")


@dataclass(frozen=True)
class LosChannel:
    """N x M channel matrix (STA rows, AP columns) and the geometry that produced it."""

    matrix: np.ndarray = field(repr=False)
    gain: complex
    aod: float
    aoa: float
    distance: float = float("nan")


def path_gain(distance_m: float, wavelength_m: float, exponent: float = 2.0) -> complex:
    """Complex free-space gain; |alpha| = lambda / (4 pi d) for the default exponent.

    Other exponents scale the amplitude as d**(-exponent/2) around the 1 m point.
    """
    if not distance_m > 0:
        raise ValueError(f"distance must be positive, got {distance_m!r}")
    magnitude = wavelength_m / (4 * np.pi) * distance_m ** (-exponent / 2)
    phase = -2 * np.pi * np.mod(distance_m / wavelength_m, 1.0)
    return magnitude * np.exp(1j * phase)


def los_channel(geom_rx: ArrayGeometry, geom_tx: ArrayGeometry, gain: complex,
                aoa: float, aod: float, distance: float = float("nan")) -> LosChannel:
    """sqrt(MN) * alpha * a_r(aoa) a_t(aod)^H with unit-norm steering vectors."""
    a_r = normalized_steering(geom_rx, aoa)
    a_t = normalized_steering(geom_tx, aod)
    scale = np.sqrt(geom_rx.n_elements * geom_tx.n_elements) * gain
    matrix = scale * np.outer(a_r, a_t.conj())
    return LosChannel(matrix, complex(gain), float(aod), float(aoa), float(distance))


def effective_gain(f_sta, ch: LosChannel, f_ap) -> np.ndarray:
    """|f_sta^H H f_ap|; ``f_ap`` may be a stack of AWVs (P, M)."""
    f_sta = np.asarray(f_sta, dtype=complex)
    f_ap = np.asarray(f_ap, dtype=complex)
    rows, cols = ch.matrix.shape
    if f_sta.shape != (rows,) or f_ap.shape[-1] != cols:
        raise ValueError(
            f"AWV dimensions {f_sta.shape}/{f_ap.shape} do not match channel {ch.matrix.shape}")
    return np.abs(f_ap @ (ch.matrix.T @ f_sta.conj()))


def snr_db(f_sta, ch: LosChannel, f_ap, budget: LinkBudget, floor_db: float = SNR_FLOOR_DB):
    """Received SNR in dB for the given combiner and beamformer, clipped at ``floor_db``."""
    g = effective_gain(f_sta, ch, f_ap)
    with np.errstate(divide="ignore"):
        snr = budget.tx_power_dbm + 20 * np.log10(g) - budget.noise_power_dbm
    snr = np.maximum(snr, floor_db)
    return float(snr) if np.ndim(snr) == 0 else snr
