"""Invariant suite: identity chains, roundtrips and oracle fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import analysis, estimator, model, pipeline, report, synth
from .synth import SynthConfig


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float  # worst observed deviation
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.value:.3g} (tol {self.tolerance:.0e}) {self.detail}".rstrip()


def _check(name, value, tol, detail="") -> CheckResult:
    value = float(value)
    return CheckResult(name, bool(np.isfinite(value) and value <= tol), value, tol, detail)


def truth_model(cfg: SynthConfig) -> estimator.JointFitModel:
    """Joint-fit parameters that reproduce ``cfg``'s noiseless spectra, with
    the coherent response normalised by the drive force."""
    osc, meas = cfg.osc, cfg.meas
    w = cfg.ladder.weights
    k = math.sqrt(meas.epsilon_eff * meas.s_sn * meas.cooperativity * osc.gamma) / (
        osc.z_ho * osc.mass * osc.omega_m * osc.gamma)
    peak = float(model.heterodyne_psd_pm(osc, meas, osc.omega_m)) - 0.5 * meas.s_sn
    n = cfg.ladder.n_peaks
    return estimator.JointFitModel(omega_m=osc.omega_m, gamma=osc.gamma, a_sig=k * w,
                                   phase=np.full(n, cfg.drive.drive_phase), a_nn=peak * w,
                                   floor=0.5 * meas.s_sn, spacing=cfg.ladder.splitting)


def noiseless_fit(cfg: SynthConfig):
    cfg = replace(cfg, noise=False)
    coh = _noiseless_coherent(cfg)
    psd = synth.synth_noise_psd(cfg)
    init = estimator.initial_guess(coh, psd, n_peaks=cfg.ladder.n_peaks, spacing=cfg.ladder.splitting)
    return estimator.fit_joint(coh, psd, init)


def _noiseless_coherent(cfg):
    reps = synth.synth_coherent(replace(cfg, n_reps=1))
    return pipeline.normalise_by_force(reps[0], cfg.drive.f0)


def check_noiseless_roundtrip(cfg: SynthConfig, tol=1e-6) -> list[CheckResult]:
    fit = noiseless_fit(cfg)
    truth = truth_model(cfg)
    m = fit.model
    rel = max(
        abs(m.omega_m / truth.omega_m - 1),
        abs(m.gamma / truth.gamma - 1),
        abs(m.floor / truth.floor - 1),
        float(np.max(np.abs(m.a_sig / truth.a_sig - 1))),
        float(np.max(np.abs(m.a_nn / truth.a_nn - 1))),
    )
    dphi = float(np.max(np.abs(np.angle(np.exp(1j * (m.phase - truth.phase))))))
    sp = analysis.sensitivity_on_resonance(fit, cfg.osc, cfg.meas.epsilon_eff)
    exact = float(model.force_sensitivity(cfg.osc, cfg.meas, cfg.osc.omega_m)) / model.sql_sensitivity(cfg.osc)
    return [
        _check("noiseless fit roundtrip (relative)", rel, tol, f"converged={fit.converged}"),
        _check("noiseless fit phases (rad)", dphi, tol),
        _check("noiseless S_FF/SQL vs closed form", abs(sp.s_ff_over_sql / exact - 1), tol),
        _check("noiseless C_om estimate", abs(sp.cooperativity.value / cfg.meas.cooperativity - 1), tol),
    ]


def check_peak_inversion(nu=1.2, epsilon_eff=0.055, tol=1e-9) -> CheckResult:
    osc = model.reference_oscillator(nu=nu)
    worst = 0.0
    for c in np.geomspace(0.01, 100, 401):
        meas = model.reference_measurement(cooperativity=float(c), epsilon_det=2 * epsilon_eff)
        ratio = float(model.heterodyne_psd_pm(osc, meas, osc.omega_m)) / meas.s_sn
        back = model.cooperativity_from_peak(ratio, nu, meas.epsilon_eff)
        worst = max(worst, abs(back / c - 1))
    return _check("peak-height cooperativity roundtrip, C in [0.01, 100]", worst, tol)


def check_psd_identity(osc=None, tol=1e-10) -> CheckResult:
    osc = osc or model.reference_oscillator()
    omega = osc.omega_m + osc.gamma * np.linspace(-10, 10, 801)
    worst = 0.0
    for c in np.geomspace(0.01, 100, 41):
        for eps_det in (0.11, 0.5, 1.0):
            meas = model.reference_measurement(cooperativity=float(c), epsilon_det=eps_det)
            via_psd = model.heterodyne_psd_pm(osc, meas, omega) / model.transduction(osc, meas, omega) ** 2
            direct = model.force_sensitivity(osc, meas, omega)
            worst = max(worst, float(np.max(np.abs(via_psd / direct - 1))))
    return _check("force sensitivity = noise PSD / transduction^2", worst, tol)


def check_sql_forms(fit, osc, tol=1e-9, label="") -> CheckResult:
    m = fit.model
    p_ho = math.sqrt(model.HBAR * osc.n_atoms * osc.m_atom * m.omega_m / 2)
    a = analysis.sql_ratio_floor_form(m.a_nn[0], m.floor, m.a_sig[0], m.gamma, p_ho)
    b = analysis.sql_ratio_atom_form(m.a_nn[0] + m.floor, m.a_sig[0], m.gamma, osc.n_atoms, osc.m_atom, m.omega_m)
    return _check(f"SQL-ratio forms agree{label}", abs(a / b - 1), tol)


def jacobian_error(prob: estimator.JointProblem, p, rel_step=1e-6) -> float:
    """Worst column-wise relative difference between analytic and central-difference Jacobians."""
    jac = prob.jacobian(p)
    scales = prob.scales(p)
    worst = 0.0
    for j in range(p.size):
        h = rel_step * scales[j]
        up, dn = p.copy(), p.copy()
        up[j] += h
        dn[j] -= h
        fd = (prob.residuals(up) - prob.residuals(dn)) / (2 * h)
        norm = np.linalg.norm(jac[:, j])
        worst = max(worst, float(np.linalg.norm(jac[:, j] - fd) / norm))
    return worst


def check_jacobian(cfg: SynthConfig, tol=1e-6, seed=12345) -> CheckResult:
    run = pipeline.run_point(replace(cfg, n_reps=20))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for free_spacing in (False, True):
        prob = estimator.JointProblem(run.coherent, run.psd, cfg.ladder.n_peaks, fit_floor=True,
                                      free_spacing=free_spacing, floor=run.fit.model.floor,
                                      spacing=cfg.ladder.splitting)
        prob.sigma_c = estimator.coherent_sigma(run.coherent, cfg.osc.omega_m, cfg.osc.gamma)
        prob.sigma_p = np.asarray(run.psd.values) / math.sqrt(run.psd.n_avg)
        p0 = prob.pack(run.fit.model)
        for _ in range(3):
            p = p0 + 0.05 * prob.scales(p0) * rng.standard_normal(p0.size)
            worst = max(worst, jacobian_error(prob, p))
    return _check("analytic Jacobian vs central differences", worst, tol)


def check_determinism(cfg: SynthConfig) -> CheckResult:
    small = replace(cfg, n_reps=20)
    a = pipeline.run_point(small)
    b = pipeline.run_point(small)

    def text(r):
        return report.csv_text(["name", "value"], zip(r.fit.param_names, r.fit.params), {"seed": small.seed})

    same = (np.array_equal(a.fit.params, b.fit.params) and np.array_equal(a.psd.values, b.psd.values)
            and np.array_equal(a.coherent.values, b.coherent.values) and text(a) == text(b))
    return CheckResult("fixed-seed reruns are bit-exact", same, 0.0 if same else 1.0, 0.0)


def run_validation(cfg: SynthConfig) -> list[CheckResult]:
    """Full invariant suite on the oscillator and measurement of ``cfg``."""
    results = check_noiseless_roundtrip(cfg)
    results.append(check_peak_inversion(cfg.osc.nu, cfg.meas.epsilon_eff))
    results.append(check_psd_identity(cfg.osc))
    run = pipeline.run_point(cfg)
    results.append(check_sql_forms(run.fit, cfg.osc, label=" (noisy fit)"))
    results.append(check_sql_forms(noiseless_fit(cfg), cfg.osc, label=" (noiseless fit)"))
    results.append(check_jacobian(cfg))
    results.append(check_determinism(cfg))
    return results
