import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from yoctoforce import analysis, model, pipeline, synth, validation
from yoctoforce.synth import AnharmonicLadder, SynthConfig


def make_cfg(c=2.0, **kw):
    kw.setdefault("n_reps", 150)
    return SynthConfig(osc=model.reference_oscillator(), meas=model.reference_measurement(cooperativity=c),
                       drive=model.DriveConfig(), **kw)


def test_noiseless_sensitivity_matches_closed_form():
    cfg = make_cfg(c=1.3)
    fit = validation.noiseless_fit(cfg)
    sp = analysis.sensitivity_on_resonance(fit, cfg.osc, cfg.meas.epsilon_eff)
    exact = float(model.force_sensitivity(cfg.osc, cfg.meas, cfg.osc.omega_m))
    assert sp.s_ff_over_sql == pytest.approx(exact / model.sql_sensitivity(cfg.osc), rel=1e-9)
    assert sp.cooperativity.value == pytest.approx(1.3, rel=1e-9)
    assert sp.s_ff_over_sql_sigma >= 0.1 * sp.s_ff_over_sql  # atom-number calibration term


def test_absolute_sensitivity_uses_transduction():
    cfg = make_cfg(c=2.0)
    fit = validation.noiseless_fit(cfg)
    sp = analysis.sensitivity_on_resonance(fit, cfg.osc, cfg.meas.epsilon_eff)
    exact = float(model.force_sensitivity(cfg.osc, cfg.meas, cfg.osc.omega_m))
    assert sp.s_ff_abs == pytest.approx(exact, rel=1e-9)


def test_sql_forms_agree():
    osc = model.reference_oscillator()
    p = osc.p_ho
    a = analysis.sql_ratio_floor_form(3.0, 1.5, 2.0, osc.gamma, p)
    b = analysis.sql_ratio_atom_form(4.5, 2.0, osc.gamma, osc.n_atoms, osc.m_atom, osc.omega_m)
    assert a == pytest.approx(b, rel=1e-12)


def test_weak_probe_reports_no_cooperativity_when_peak_below_floor():
    cfg = make_cfg(c=2.0)
    fit = validation.noiseless_fit(cfg)
    fit.model = replace(fit.model, a_nn=np.array([-0.1 * fit.model.floor, 0.0, 0.0]))
    sp = analysis.sensitivity_on_resonance(fit, cfg.osc, cfg.meas.epsilon_eff)
    assert sp.cooperativity is None


def test_sensitivity_spectrum_noiseless_single_peak_is_exact():
    cfg = make_cfg(c=0.7, ladder=AnharmonicLadder.single())
    fit = validation.noiseless_fit(cfg)
    psd = synth.synth_noise_psd(replace(cfg, noise=False))
    spec = analysis.sensitivity_spectrum(psd, fit)
    assert np.allclose(spec.values, model.force_sensitivity(cfg.osc, cfg.meas, spec.freqs), rtol=1e-9)


def test_chi2_quantile_matches_scipy():
    for p in (0.39, 0.5, 0.9, 0.99):
        assert analysis.chi2_2dof_quantile(p) == pytest.approx(stats.chi2(2).ppf(p), rel=1e-12)
    with pytest.raises(ValueError):
        analysis.chi2_2dof_quantile(1.0)


def test_ellipse_of_known_gaussian():
    rng = np.random.default_rng(3)
    cov = np.array([[4.0, 1.2], [1.2, 1.0]])
    pts = rng.multivariate_normal([1.0, -2.0], cov, size=50_000)
    e = analysis.covariance_ellipse(pts, confidence=0.5)
    evals = np.sort(np.linalg.eigvalsh(cov))[::-1]
    assert sorted(e.rms, reverse=True) == pytest.approx(np.sqrt(evals), rel=0.02)
    assert e.product == pytest.approx(math.sqrt(np.linalg.det(cov)), rel=0.02)
    # half of the points fall inside the 50% ellipse
    d = pts - pts.mean(axis=0)
    maha = np.einsum("ij,jk,ik->i", d, np.linalg.inv(np.cov(pts, rowvar=False)), d)
    inside = np.mean(maha <= analysis.chi2_2dof_quantile(0.5))
    assert inside == pytest.approx(0.5, abs=0.01)
    assert e.radii[0] / e.rms[0] == pytest.approx(math.sqrt(-2 * math.log(0.5)))


def test_degenerate_ellipse_flagged():
    t = np.linspace(0, 1, 20)
    e = analysis.covariance_ellipse(np.column_stack([t, 2 * t]))
    assert e.degenerate
    with pytest.raises(ValueError):
        analysis.covariance_ellipse(np.zeros((2, 2)))


def test_predicted_product_at_optimum_equals_bound():
    osc = model.reference_oscillator()
    eps = 0.056
    meas = model.reference_measurement(cooperativity=model.optimal_cooperativity(eps), epsilon_det=2 * eps)
    assert analysis.predicted_product(osc, meas) == pytest.approx(
        model.uncertainty_bound(osc.nu, eps, meas.tau, osc.gamma), rel=1e-12)


@pytest.mark.parametrize("c", [0.3, 2.0, 12.0])
def test_phase_space_product_matches_prediction(c):
    cfg = make_cfg(c=c, seed=21)
    run = pipeline.run_point(cfg, phase_space=True)
    ens = run.phase
    pred = analysis.predicted_product(cfg.osc, cfg.meas, ens.bin_omega)
    assert abs(ens.product - pred) < 3.5 * ens.product_sigma


def test_mean_displacement_independent_of_probe():
    means = []
    for i, c in enumerate((0.3, 2.0, 12.0)):
        run = pipeline.run_point(make_cfg(c=c, seed=50 + i), phase_space=True)
        ens = run.phase
        se = np.sqrt(np.diag(np.cov(ens.points, rowvar=False)) / len(ens.points))
        means.append((ens.mean, se))
    for (m1, s1), (m2, s2) in zip(means, means[1:]):
        assert np.all(np.abs(m1 - m2) < 4 * np.hypot(s1, s2))


def test_zero_drive_centres_at_origin():
    cfg = make_cfg(seed=8)
    cfg = replace(cfg, drive=replace(cfg.drive, mod_index=0.0))
    run = pipeline.run_point(cfg, phase_space=True)
    ens = run.phase
    se = np.sqrt(np.diag(np.cov(ens.points, rowvar=False)) / len(ens.points))
    assert np.all(np.abs(ens.mean) < 4 * se)


def test_phase_space_rejects_missing_bin():
    cfg = make_cfg(seed=1)
    run = pipeline.run_point(cfg, keep_reps=True)
    fit = run.fit
    fit.model = replace(fit.model, omega_m=fit.model.omega_m + 100 * cfg.osc.gamma)
    with pytest.raises(ValueError, match="no bin"):
        analysis.phase_space_points(run.reps, fit, cfg.meas)
