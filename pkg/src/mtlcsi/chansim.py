"""Time-correlated Rayleigh fading under Clarke's sum-of-sinusoids model.

A link with ``M`` propagation paths has complex envelope

    h(t) = (Y_C(t) + j Y_S(t)) / sqrt(M)
    Y_C(t) = sum_m cos(2 pi f_d t cos(beta_m) + phi_m)
    Y_S(t) = sum_m sin(2 pi f_d t cos(beta_m) + phi_m)

with ``beta_m = (2 pi m + theta_m) / M`` and ``theta_m``, ``phi_m`` i.i.d.
uniform on [-pi, pi], drawn once per realization.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError

SPEED_OF_LIGHT = 2.998e8  # m/s

# rows per chunk when evaluating the path sum; bounds peak memory at ~10 MB
_CHUNK = 8192


def doppler_frequency(carrier_freq_hz: float, speed_mps: float) -> float:
    """Maximum Doppler shift ``f_c v / c`` in Hz."""
    return carrier_freq_hz * speed_mps / SPEED_OF_LIGHT


def coherence_time(doppler_hz: float) -> float:
    if doppler_hz <= 0:
        raise DomainError("coherence time is unbounded for a static channel (f_d <= 0)")
    return 0.423 / doppler_hz


@dataclass(frozen=True)
class ChannelConfig:
    carrier_freq_hz: float = 2e9
    speed_mps: float = 10.0
    sampling_freq_hz: float = 1e3
    num_paths: int = 100
    num_samples: int = 50_000
    seed: int = 0

    def __post_init__(self):
        if not self.carrier_freq_hz > 0:
            raise ConfigError(f"carrier_freq_hz must be positive, got {self.carrier_freq_hz}")
        if not self.speed_mps >= 0:
            raise ConfigError(f"speed_mps must be non-negative, got {self.speed_mps}")
        if not self.sampling_freq_hz > 0:
            raise ConfigError(f"sampling_freq_hz must be positive, got {self.sampling_freq_hz}")
        if self.num_paths < 1 or self.num_samples < 1:
            raise ConfigError("num_paths and num_samples must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        if not self.sampling_freq_hz > 2 * self.doppler_hz:
            raise ConfigError(
                f"sampling_freq_hz={self.sampling_freq_hz} violates the Nyquist margin "
                f"for f_d={self.doppler_hz:.3f} Hz"
            )

    @property
    def doppler_hz(self) -> float:
        return doppler_frequency(self.carrier_freq_hz, self.speed_mps)

    @property
    def coherence_time_s(self) -> float:
        return coherence_time(self.doppler_hz)


def derive_seed(master_seed: int, *path: int) -> int:
    """Child 64-bit seed for the stream identified by ``(master_seed, *path)``.

    Distinct paths give statistically independent streams; the mapping is
    stable across runs and platforms.
    """
    ss = np.random.SeedSequence([int(master_seed), *(int(p) for p in path)])
    return int(ss.generate_state(1, np.uint64)[0])


def draw_path_angles(num_paths: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Arrival-angle offsets ``theta`` and initial phases ``phi`` for one realization."""
    rng = np.random.Generator(np.random.PCG64(seed))
    theta = rng.uniform(-np.pi, np.pi, num_paths)
    phi = rng.uniform(-np.pi, np.pi, num_paths)
    return theta, phi


def quadratures(cfg: ChannelConfig, seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalised in-phase and quadrature sums ``Y_C``, ``Y_S``."""
    seed = cfg.seed if seed is None else seed
    M = cfg.num_paths
    theta, phi = draw_path_angles(M, seed)
    m = np.arange(1, M + 1)
    beta = (2 * np.pi * m + theta) / M
    omega = 2 * np.pi * cfg.doppler_hz * np.cos(beta)  # rad/s per path

    yc = np.empty(cfg.num_samples)
    ys = np.empty(cfg.num_samples)
    for start in range(0, cfg.num_samples, _CHUNK):
        stop = min(start + _CHUNK, cfg.num_samples)
        t = np.arange(start, stop) / cfg.sampling_freq_hz
        phase = np.outer(t, omega) + phi
        yc[start:stop] = np.cos(phase).sum(axis=1)
        ys[start:stop] = np.sin(phase).sum(axis=1)
    return yc, ys


def generate_envelope(cfg: ChannelConfig, seed: int | None = None) -> np.ndarray:
    """Complex channel envelope sampled at ``t_i = i / f_s``.

    Returns a complex128 array of length ``cfg.num_samples`` with unit
    average power. The output is a pure function of ``(cfg, seed)``;
    ``seed`` defaults to ``cfg.seed``.
    """
    yc, ys = quadratures(cfg, seed)
    return (yc + 1j * ys) / math.sqrt(cfg.num_paths)


# Series/asymptotic switch point: below it the power series loses at most ~4
# digits to cancellation, above it the Hankel expansion reaches ~1e-11.
_J0_SWITCH = 12.0


def _j0_series(x: np.ndarray) -> np.ndarray:
    q = -(x * x) / 4.0
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, 60):
        term = term * q / (k * k)
        total = total + term
    return total


def _j0_asymptotic(x: np.ndarray) -> np.ndarray:
    # Hankel expansion: a_k = prod_{i<=k} (-(2i-1)^2) / (k! 8^k), truncated at
    # the smallest term (the series is only asymptotic).
    p = np.ones_like(x)
    q = np.zeros_like(x)
    a = 1.0
    term_prev = np.full_like(x, np.inf)
    active = np.ones(x.shape, dtype=bool)
    for k in range(1, 80):
        a *= -((2 * k - 1) ** 2) / (k * 8.0)
        term = a / x**k
        # P collects even orders with sign (-1)^(k/2), Q odd orders with (-1)^((k-1)/2)
        sign = (-1.0) ** (k // 2)
        active &= np.abs(term) < term_prev
        if k % 2 == 0:
            p = np.where(active, p + sign * term, p)
        else:
            q = np.where(active, q + sign * term, q)
        term_prev = np.where(active, np.abs(term), term_prev)
        if not active.any():
            break
    chi = x - np.pi / 4
    return np.sqrt(2.0 / (np.pi * x)) * (p * np.cos(chi) - q * np.sin(chi))


def bessel_j0(x):
    """Zero-order Bessel function of the first kind (absolute error < 1e-8)."""
    arr = np.abs(np.asarray(x, dtype=float))
    out = np.empty_like(arr)
    small = arr <= _J0_SWITCH
    out[small] = _j0_series(arr[small])
    out[~small] = _j0_asymptotic(arr[~small])
    return out if out.ndim else float(out)


def theoretical_autocorrelation(doppler_hz: float, lag_s):
    """Clarke autocorrelation ``J0(2 pi f_d tau)`` of the complex envelope."""
    if doppler_hz < 0 or np.any(np.asarray(lag_s) < 0):
        raise DomainError("doppler_hz and lag_s must be non-negative")
    return bessel_j0(2 * np.pi * doppler_hz * np.asarray(lag_s, dtype=float))


def empirical_autocorrelation(samples: np.ndarray, max_lag: int) -> np.ndarray:
    """Time-averaged ``Re E[h(t + tau) h*(t)]`` for lags ``0..max_lag`` samples."""
    n = len(samples)
    if max_lag >= n:
        raise DomainError("max_lag must be shorter than the trace")
    out = np.empty(max_lag + 1)
    for lag in range(max_lag + 1):
        out[lag] = np.real(np.vdot(samples[: n - lag], samples[lag:])) / (n - lag)
    return out


def export_envelope_csv(samples: np.ndarray, path: str | Path) -> None:
    """Write an envelope trace as ``sample_index,re,im`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "re", "im"])
        for i, h in enumerate(samples):
            writer.writerow([i, repr(float(h.real)), repr(float(h.imag))])
