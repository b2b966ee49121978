"""Instantaneous SNRs, secrecy rates and secrecy-optimal transmitter selection.

Eavesdroppers collude and combine with MRC, so the eavesdropping SNR for
transmitter ``k`` is the sum of its ``N`` branch SNRs. Path loss, transmit
power and noise powers only enter through the average SNRs of
:class:`TopologyConfig`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class TopologyConfig:
    num_transmitters: int = 3
    num_eavesdroppers: int = 2
    avg_snr_dest_db: float = 30.0
    avg_snr_eaves_db: float = 10.0

    def __post_init__(self):
        if self.num_transmitters < 1 or self.num_eavesdroppers < 1:
            raise ConfigError("need at least one transmitter and one eavesdropper")
        if not (math.isfinite(self.avg_snr_dest_db) and math.isfinite(self.avg_snr_eaves_db)):
            raise ConfigError("average SNRs must be finite")

    @property
    def num_links(self) -> int:
        """Rows of the CSI layout, ``K (1 + N)``."""
        return self.num_transmitters * (1 + self.num_eavesdroppers)

    @property
    def snr_dest(self) -> float:
        return db_to_linear(self.avg_snr_dest_db)

    @property
    def snr_eaves(self) -> float:
        return db_to_linear(self.avg_snr_eaves_db)


@dataclass(frozen=True)
class SelectionResult:
    index: int  # 1-based transmitter index k*
    rate_bpcu: float


def snr_dest(h_mag, avg_snr):
    return avg_snr * np.square(h_mag)


def snr_eaves_mrc(h_mags, avg_snr):
    h_mags = np.asarray(h_mags, dtype=float)
    if h_mags.size == 0:
        raise DomainError("MRC needs at least one eavesdropper branch")
    return avg_snr * float(np.sum(h_mags * h_mags))


def secrecy_rate(snr_d, snr_e):
    """``max(0, log2((1 + snr_d) / (1 + snr_e)))`` in bpcu; works elementwise."""
    rate = np.log2((1.0 + np.asarray(snr_d, dtype=float)) / (1.0 + np.asarray(snr_e, dtype=float)))
    rate = np.maximum(rate, 0.0)
    return rate if rate.ndim else float(rate)


def link_snrs(csi: np.ndarray, topo: TopologyConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-transmitter destination and combined eavesdropper SNRs.

    ``csi`` has the link layout on axis 0: rows ``0..K-1`` are destination
    magnitudes, then ``K*N`` eavesdropper magnitudes with the transmitter
    index outer and eavesdropper index inner. Any trailing axes are kept.
    Returns two arrays of shape ``(K, ...)``.
    """
    K, N = topo.num_transmitters, topo.num_eavesdroppers
    csi = np.asarray(csi, dtype=float)
    if csi.shape[0] != topo.num_links:
        raise ShapeError(f"expected {topo.num_links} CSI rows for K={K}, N={N}, got {csi.shape[0]}")
    dest = csi[:K]
    eaves = csi[K:].reshape((K, N) + csi.shape[1:])
    g_d = topo.snr_dest * dest * dest
    g_e = topo.snr_eaves * np.sum(eaves * eaves, axis=1)
    return g_d, g_e


def select_transmitters(csi: np.ndarray, topo: TopologyConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised selection over any trailing axes of ``csi``.

    Returns ``(index, rate)`` with 1-based indices. The argmax is taken over
    the unclipped SNR ratio and the lowest index wins exact ties.
    """
    g_d, g_e = link_snrs(csi, topo)
    ratio = (1.0 + g_d) / (1.0 + g_e)
    best = np.argmax(ratio, axis=0)
    best_ratio = np.take_along_axis(ratio, best[None], axis=0)[0]
    rate = np.maximum(np.log2(best_ratio), 0.0)
    return best + 1, rate


def select_transmitter(column, topo: TopologyConfig) -> SelectionResult:
    column = np.asarray(column, dtype=float)
    if column.ndim != 1:
        raise ShapeError("select_transmitter expects a single CSI column")
    idx, rate = select_transmitters(column, topo)
    return SelectionResult(int(idx), float(rate))


def rates_at(csi: np.ndarray, index: np.ndarray, topo: TopologyConfig) -> np.ndarray:
    """Clipped secrecy rate obtained by transmitting from the given (1-based) index."""
    index = np.asarray(index)
    if np.any(index < 1) or np.any(index > topo.num_transmitters):
        raise DomainError(f"transmitter index outside [1, {topo.num_transmitters}]")
    g_d, g_e = link_snrs(csi, topo)
    pick = (index - 1)[None]
    gd = np.take_along_axis(g_d, pick, axis=0)[0]
    ge = np.take_along_axis(g_e, pick, axis=0)[0]
    return np.maximum(np.log2((1.0 + gd) / (1.0 + ge)), 0.0)


def ergodic_secrecy_rate(rates) -> float:
    rates = np.asarray(rates, dtype=float)
    if rates.size == 0:
        raise DomainError("ergodic secrecy rate of an empty sequence")
    # fsum is correctly rounded, so the estimate does not depend on ordering
    return math.fsum(rates.ravel()) / rates.size
