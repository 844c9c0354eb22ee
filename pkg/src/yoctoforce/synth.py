"""Seeded Monte Carlo synthesis of driven and undriven heterodyne spectra.

Spectra are generated directly in the frequency domain: every DFT bin of
every repetition is an independent complex Gaussian around the transduced
coherent response.  Random streams are derived from the run seed as
``SeedSequence(seed, spawn_key=(stream, repetition, scan_index))`` and each
stream fills the grid bins in increasing-frequency order, so any repetition
can be regenerated on its own.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import model
from .model import (
    ComplexSpectrum,
    DriveConfig,
    MeasurementConfig,
    MechanicalOscillator,
    PowerSpectrum,
)

COHERENT_STREAM = 1
PSD_STREAM = 2


@dataclass(frozen=True)
class AnharmonicLadder:
    """Populated trap levels, each giving a red-shifted copy of the resonance.

    Level ``k`` sits ``k * splitting`` below the primary resonance.  Its peak
    is weighted by its population relative to the ground level times its
    coupling scale, so the primary peak always has unit weight.
    """

    n_peaks: int = 3
    splitting: float = field(default_factory=lambda: model.default_splitting())
    level_fractions: tuple = (0.97, 0.02, 0.01)
    coupling_scale: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "level_fractions", tuple(float(x) for x in self.level_fractions))
        object.__setattr__(self, "coupling_scale", tuple(float(x) for x in self.coupling_scale))
        if self.n_peaks < 1:
            raise ValueError("ladder.n_peaks must be >= 1")
        if len(self.level_fractions) != self.n_peaks or len(self.coupling_scale) != self.n_peaks:
            raise ValueError("ladder.level_fractions and ladder.coupling_scale need n_peaks entries")
        if abs(sum(self.level_fractions) - 1.0) > 1e-9:
            raise ValueError(f"ladder.level_fractions must sum to 1, got {sum(self.level_fractions)!r}")
        if any(f < 0 for f in self.level_fractions) or self.level_fractions[0] < max(self.level_fractions):
            raise ValueError("ladder.level_fractions must be non-negative with the ground level dominant")
        if not self.splitting > 0:
            raise ValueError("ladder.splitting must be > 0")

    @classmethod
    def single(cls) -> "AnharmonicLadder":
        return cls(n_peaks=1, level_fractions=(1.0,), coupling_scale=(1.0,))

    @property
    def weights(self) -> np.ndarray:
        f = np.asarray(self.level_fractions)
        return f / f[0] * np.asarray(self.coupling_scale)

    def offsets(self) -> np.ndarray:
        """Peak centre offsets from the primary resonance (non-positive)."""
        return -self.splitting * np.arange(self.n_peaks)


def default_grid(osc: MechanicalOscillator, meas: MeasurementConfig, span: float = 7.0) -> np.ndarray:
    """Bins spaced by the DFT bandwidth, centred on omega_m, covering +-span*gamma."""
    half = int(math.ceil(span * osc.gamma / meas.omega_bw))
    return osc.omega_m + meas.omega_bw * np.arange(-half, half + 1)


@dataclass(frozen=True)
class SynthConfig:
    osc: MechanicalOscillator
    meas: MeasurementConfig
    drive: DriveConfig
    ladder: AnharmonicLadder = field(default_factory=AnharmonicLadder)
    freq_grid: np.ndarray | None = None
    n_reps: int = 150
    seed: int = 0
    noise: bool = True

    def __post_init__(self):
        if self.freq_grid is None:
            object.__setattr__(self, "freq_grid", default_grid(self.osc, self.meas))
        grid = np.asarray(self.freq_grid, dtype=float)
        object.__setattr__(self, "freq_grid", grid)
        if grid.ndim != 1 or grid.size == 0:
            raise ValueError("freq_grid must be a non-empty 1-d array")
        if self.n_reps < 1:
            raise ValueError(f"n_reps must be >= 1, got {self.n_reps!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        five = 5 * self.osc.gamma
        if grid[0] > self.osc.omega_m - five or grid[-1] < self.osc.omega_m + five:
            raise ValueError("freq_grid must span at least +-5 gamma around omega_m")
        if grid.size > 1:
            step = np.diff(grid)
            if not np.allclose(step, self.meas.omega_bw, rtol=1e-9, atol=0):
                raise ValueError("freq_grid spacing must equal the DFT bandwidth 2 pi / tau")


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def coherent_mean(cfg: SynthConfig, omega=None) -> np.ndarray:
    """Noiseless driven PM response P^PM(omega) summed over the ladder peaks, in W."""
    omega = cfg.freq_grid if omega is None else np.asarray(omega, dtype=float)
    f0 = cfg.drive.f0
    out = np.zeros(omega.shape, dtype=complex)
    for w, off in zip(cfg.ladder.weights, cfg.ladder.offsets()):
        shifted = omega - off
        mag = model.transduction(cfg.osc, cfg.meas, shifted) * f0
        phase = model.response_angle(shifted, cfg.osc.omega_m, cfg.osc.gamma) + cfg.drive.drive_phase
        out += w * mag * np.exp(1j * phase)
    return out


def expected_psd(cfg: SynthConfig, omega=None) -> np.ndarray:
    """Undriven PM heterodyne PSD expectation with every ladder peak added."""
    omega = cfg.freq_grid if omega is None else np.asarray(omega, dtype=float)
    floor = 0.5 * cfg.meas.s_sn
    out = np.full(omega.shape, floor)
    for w, off in zip(cfg.ladder.weights, cfg.ladder.offsets()):
        out += w * (model.heterodyne_psd_pm(cfg.osc, cfg.meas, omega - off) - floor)
    return out


def noise_variance(cfg: SynthConfig, omega=None) -> np.ndarray:
    """E|n|^2 of the complex noise in one repetition's bin.

    Each quadrature carries the PSD integrated over the 1/tau equivalent noise
    bandwidth of the window, so the total is 2 S(omega) / tau.
    """
    return 2.0 * expected_psd(cfg, omega) / cfg.meas.tau


def _coherent_reps(cfg: SynthConfig, mean: np.ndarray, scan_index: int) -> list[ComplexSpectrum]:
    sigma_q = np.sqrt(0.5 * noise_variance(cfg))
    reps = []
    for r in range(cfg.n_reps):
        values = mean.copy()
        if cfg.noise:
            z = _rng(cfg.seed, COHERENT_STREAM, r, scan_index).standard_normal((2, mean.size))
            values = values + sigma_q * (z[0] + 1j * z[1])
        reps.append(ComplexSpectrum(cfg.freq_grid, values, n_avg=1))
    return reps


def synth_coherent(cfg: SynthConfig) -> list[ComplexSpectrum]:
    """One driven-response spectrum per repetition.

    Bin ``omega`` holds the response to a drive tone at ``omega`` (the line
    shape assembled from a drive-frequency scan), plus measurement noise.
    """
    return _coherent_reps(cfg, coherent_mean(cfg), scan_index=0)


def synth_noise_psd(cfg: SynthConfig, stream: int = 0) -> PowerSpectrum:
    """Average of ``n_reps`` single-window periodograms of the undriven response.

    Drawn directly as expectation * chi2(2 n_reps) / (2 n_reps) per bin.
    ``stream`` selects an independent data set, e.g. a second record taken
    with the drive far off resonance.
    """
    n = cfg.n_reps
    expect = expected_psd(cfg)
    if not cfg.noise:
        return PowerSpectrum(cfg.freq_grid, expect, n_avg=n)
    draws = _rng(cfg.seed, PSD_STREAM, stream).chisquare(2 * n, size=expect.size)
    return PowerSpectrum(cfg.freq_grid, expect * draws / (2.0 * n), n_avg=n)


def drive_scan(cfg: SynthConfig, offsets) -> dict[float, list[ComplexSpectrum]]:
    """Separate repetition sets with a single drive tone at omega_m + offset.

    The coherent response appears only in the bin nearest the tone; all other
    bins contain noise.  Each offset uses its own random streams.
    """
    grid = cfg.freq_grid
    out = {}
    for j, off in enumerate(offsets):
        off = float(off)
        if not math.isfinite(off):
            raise ValueError("drive offsets must be finite")
        omega_d = cfg.osc.omega_m + off
        sub = replace(cfg, drive=replace(cfg.drive, omega_d=omega_d))
        mean = np.zeros(grid.size, dtype=complex)
        k = int(np.argmin(np.abs(grid - omega_d)))
        mean[k] = coherent_mean(sub, grid[k : k + 1])[0]
        out[off] = _coherent_reps(sub, mean, scan_index=j + 1)
    return out


def average_repetitions(reps: list[ComplexSpectrum]) -> ComplexSpectrum:
    """Mean response with the per-quadrature standard error of the mean."""
    if not reps:
        raise ValueError("no repetitions to average")
    stack = np.stack([r.values for r in reps])
    n = stack.shape[0]
    mean = stack.mean(axis=0)
    sigma = None
    if n > 1:
        var = np.sum(np.abs(stack - mean) ** 2, axis=0) / (n - 1)
        sigma = np.sqrt(0.5 * var / n)
    return ComplexSpectrum(reps[0].freqs, mean, n_avg=n, sigma=sigma)
