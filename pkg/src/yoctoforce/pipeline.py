"""Synthesize, fit and analyse one measurement setting."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import analysis, estimator, synth
from .analysis import PhaseSpaceEnsemble, SensitivityPoint
from .estimator import FitOptions, JointFitResult
from .model import ComplexSpectrum, PowerSpectrum
from .synth import SynthConfig


@dataclass
class PointResult:
    cfg: SynthConfig
    coherent: ComplexSpectrum  # averaged, normalised by the applied force (W/N)
    psd: PowerSpectrum  # PSD that entered the fit
    fit: JointFitResult
    sensitivity: SensitivityPoint | None
    reps: list | None = None
    phase: PhaseSpaceEnsemble | None = None
    error: str = ""


def normalise_by_force(coh: ComplexSpectrum, f0: float) -> ComplexSpectrum:
    if not f0 > 0:
        return coh
    sigma = None if coh.sigma is None else coh.sigma / f0
    return ComplexSpectrum(coh.freqs, coh.values / f0, n_avg=coh.n_avg, sigma=sigma)


def run_point(cfg: SynthConfig, *, off_resonant_psd: bool = True, keep_reps: bool = False,
              phase_space: bool = False, opts: FitOptions | None = None) -> PointResult:
    """One full chain: synthesize, jointly fit, then derive sensitivity.

    With ``off_resonant_psd`` a second, independent PSD record is averaged in
    with equal weight.
    """
    reps = synth.synth_coherent(cfg)
    coh = normalise_by_force(synth.average_repetitions(reps), cfg.drive.f0)
    psd = synth.synth_noise_psd(cfg, stream=0)
    extra = synth.synth_noise_psd(cfg, stream=1) if off_resonant_psd else None
    combined = estimator.combine_psd(psd, extra)
    init = estimator.initial_guess(coh, combined, n_peaks=cfg.ladder.n_peaks, spacing=cfg.ladder.splitting)
    fit = estimator.fit_joint(coh, combined, init, opts)
    sens, err = None, ""
    if fit.converged and cfg.drive.f0 > 0:
        try:
            sens = analysis.sensitivity_on_resonance(fit, cfg.osc, cfg.meas.epsilon_eff)
        except ValueError as exc:
            err = str(exc)
    elif not fit.converged:
        err = f"fit did not converge: {fit.message}"
    result = PointResult(cfg=cfg, coherent=coh, psd=combined, fit=fit, sensitivity=sens,
                         reps=reps if keep_reps else None, error=err)
    if phase_space:
        result.phase = analysis.phase_space_points(reps, fit, cfg.meas, drive_phase=cfg.drive.drive_phase)
    return result


def with_cooperativity(cfg: SynthConfig, c: float) -> SynthConfig:
    return replace(cfg, meas=cfg.meas.with_cooperativity(c))


def default_sweep_grid(c_min=0.1, c_max=20.0, n=16) -> np.ndarray:
    return np.geomspace(c_min, c_max, n)
