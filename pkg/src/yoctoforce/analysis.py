"""Headline quantities derived from joint fits and repetition sets."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import model
from .estimator import Estimate, FitNotConvergedError, JointFitResult, estimate_cooperativity
from .model import ComplexSpectrum, MeasurementConfig, MechanicalOscillator, PowerSpectrum

ATOM_NUMBER_REL_SIGMA = 0.10


@dataclass(frozen=True)
class SensitivityPoint:
    cooperativity: Estimate | None  # None when the noise peak is below the floor
    s_ff_over_sql: float
    s_ff_over_sql_sigma: float
    s_ff_over_sql_sigma_fit: float
    s_ff_abs: float
    s_ff_abs_sigma: float
    omega_m: float
    gamma: float

    def __post_init__(self):
        if not self.s_ff_over_sql > 0:
            raise ValueError("s_ff_over_sql must be > 0")
        if self.s_ff_over_sql_sigma < 0 or self.s_ff_abs_sigma < 0:
            raise ValueError("uncertainties must be >= 0")


def sql_ratio_floor_form(a_nn, floor, a_sig, gamma, p_ho):
    """(A_NN + S_SN/2) / A_sig^2 in units of the ideal SQL 4 Gamma p_HO^2."""
    return (a_nn + floor) / a_sig**2 / (4.0 * gamma * p_ho**2)


def sql_ratio_atom_form(peak_total, a_sig, gamma, n_atoms, m_atom, omega_m):
    """Same ratio written with the atom number; ``peak_total`` is the full
    on-resonance PSD height A_NN + S_SN/2."""
    return peak_total / a_sig**2 / (2.0 * gamma * n_atoms * m_atom * model.HBAR * omega_m)


def sensitivity_on_resonance(fit: JointFitResult, osc: MechanicalOscillator, epsilon_eff: float,
                             atom_rel_sigma: float = ATOM_NUMBER_REL_SIGMA,
                             s_sn: float | None = None) -> SensitivityPoint:
    """On-resonance force sensitivity from the primary-peak fit amplitudes.

    p_HO is rebuilt from the fitted resonance frequency and the calibrated
    atom number, which is the only calibration entering the ratio.  Its
    relative uncertainty ``atom_rel_sigma`` is added in quadrature to the
    propagated fit errors.
    """
    if not fit.converged:
        raise FitNotConvergedError("sensitivity needs a converged fit")
    m = fit.model
    a_sig, a_nn, floor = float(m.a_sig[0]), float(m.a_nn[0]), float(m.floor)
    omega_m, gamma = float(m.omega_m), float(m.gamma)
    p_ho2 = model.HBAR * osc.n_atoms * osc.m_atom * omega_m / 2.0
    ratio = sql_ratio_floor_form(a_nn, floor, a_sig, gamma, math.sqrt(p_ho2))
    ratio_b = sql_ratio_atom_form(a_nn + floor, a_sig, gamma, osc.n_atoms, osc.m_atom, omega_m)
    if not math.isclose(ratio, ratio_b, rel_tol=1e-9):
        raise RuntimeError(f"SQL-ratio forms disagree: {ratio!r} vs {ratio_b!r}")

    total = a_nn + floor
    re = fit.params[fit.index("re_sig_0")]
    im = fit.params[fit.index("im_sig_0")]
    # d log(ratio) / d params
    grads = {"omega_m": -1.0 / omega_m, "gamma": -1.0 / gamma,
             "re_sig_0": -2.0 * re / a_sig**2, "im_sig_0": -2.0 * im / a_sig**2,
             "a_nn_0": 1.0 / total, "floor": 1.0 / total}
    names = [n for n in grads if n in fit.param_names]
    g = np.array([grads[n] for n in names])
    rel_fit = math.sqrt(max(float(g @ fit.cov(names) @ g), 0.0))
    abs_names = [n for n in names if n not in ("omega_m", "gamma")]
    ga = np.array([grads[n] for n in abs_names])
    rel_abs = math.sqrt(max(float(ga @ fit.cov(abs_names) @ ga), 0.0))

    try:
        coop = estimate_cooperativity(fit, osc.nu, epsilon_eff, s_sn=s_sn)
    except model.PeakHeightError:
        coop = None
    s_abs = total / a_sig**2
    return SensitivityPoint(
        cooperativity=coop,
        s_ff_over_sql=ratio,
        s_ff_over_sql_sigma=ratio * math.hypot(rel_fit, atom_rel_sigma),
        s_ff_over_sql_sigma_fit=ratio * rel_fit,
        s_ff_abs=s_abs,
        s_ff_abs_sigma=s_abs * rel_abs,
        omega_m=omega_m,
        gamma=gamma,
    )


def sensitivity_spectrum(psd: PowerSpectrum, fit: JointFitResult) -> PowerSpectrum:
    """Noise PSD divided by the fitted primary-peak transduction, in N^2/Hz."""
    if not fit.converged:
        raise FitNotConvergedError("sensitivity spectrum needs a converged fit")
    m = fit.model
    g = m.gamma / 2
    d = np.asarray(psd.freqs) - m.omega_m
    values = np.asarray(psd.values) * (d**2 + g**2) / (m.a_sig[0] ** 2 * g**2)
    return PowerSpectrum(psd.freqs, values, n_avg=psd.n_avg)


def sensitivity_spectrum_sigma(psd: PowerSpectrum, fit: JointFitResult) -> np.ndarray:
    """Per-bin standard error of :func:`sensitivity_spectrum`.

    Combines the periodogram averaging error 1/sqrt(n_avg) with the fit
    uncertainty of the primary-peak transduction (omega_m, gamma, A_sig).
    """
    spec = sensitivity_spectrum(psd, fit)
    m = fit.model
    g = m.gamma / 2
    d = np.asarray(psd.freqs) - m.omega_m
    den = d**2 + g**2
    re = fit.params[fit.index("re_sig_0")]
    im = fit.params[fit.index("im_sig_0")]
    a2 = re**2 + im**2
    names = ["omega_m", "gamma", "re_sig_0", "im_sig_0"]
    grad = np.column_stack([-2 * d / den, 0.5 * (2 * g / den - 2 / g),
                            np.full(d.size, -2 * re / a2), np.full(d.size, -2 * im / a2)])
    var_fit = np.einsum("ij,jk,ik->i", grad, fit.cov(names), grad)
    rel = np.sqrt(1.0 / max(psd.n_avg, 1) + np.clip(var_fit, 0, None))
    return spec.values * rel


# -------------------------------------------------------------- phase space


def chi2_2dof_quantile(confidence: float) -> float:
    if not 0 < confidence < 1:
        raise ValueError("confidence must be in (0, 1)")
    return -2.0 * math.log1p(-confidence)


@dataclass(frozen=True)
class Ellipse:
    rms: tuple  # (dZ1, dZ2): sqrt of covariance eigenvalues
    radii: tuple  # rms scaled to the confidence level
    orientation: float  # angle of the dZ1 axis from the Z1 axis, rad
    confidence: float
    degenerate: bool = False

    @property
    def product(self) -> float:
        return self.rms[0] * self.rms[1]


@dataclass(frozen=True)
class PhaseSpaceEnsemble:
    points: np.ndarray  # (n, 2) in units of z_HO
    mean: np.ndarray
    ellipse: Ellipse
    bin_omega: float

    @property
    def product(self) -> float:
        return self.ellipse.product

    @property
    def product_sigma(self) -> float:
        """Approximate standard error of the imprecision product.

        sqrt(det) of a 2x2 sample covariance has relative spread ~1/sqrt(n-1).
        """
        return self.product / math.sqrt(max(len(self.points) - 1, 1))


def covariance_ellipse(points, confidence: float = 0.5) -> Ellipse:
    """Error ellipse of a 2-d point cloud from its sample covariance."""
    pts = np.asarray(points.points if isinstance(points, PhaseSpaceEnsemble) else points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ValueError("covariance ellipse needs at least 3 two-dimensional points")
    q = chi2_2dof_quantile(confidence)
    evals, evecs = np.linalg.eigh(np.cov(pts, rowvar=False))
    evals = np.clip(evals, 0.0, None)
    # axis 1 is the eigenvector closest to the Z1 direction
    i1 = int(np.argmax(np.abs(evecs[0])))
    i2 = 1 - i1
    rms = (math.sqrt(evals[i1]), math.sqrt(evals[i2]))
    v = evecs[:, i1]
    orientation = math.atan2(v[1], v[0])
    if orientation > math.pi / 2:
        orientation -= math.pi
    elif orientation <= -math.pi / 2:
        orientation += math.pi
    degenerate = bool(evals.max() == 0 or evals.min() <= 1e-12 * evals.max())
    return Ellipse(rms=rms, radii=(rms[0] * math.sqrt(q), rms[1] * math.sqrt(q)),
                   orientation=orientation, confidence=confidence, degenerate=degenerate)


def phase_space_points(reps: list[ComplexSpectrum], fit: JointFitResult, meas: MeasurementConfig,
                       drive_phase: float = 0.0, cooperativity: float | None = None,
                       confidence: float = 0.5) -> PhaseSpaceEnsemble:
    """Per-repetition displacement at the bin nearest the fitted resonance.

    Each driven response P^PM is rotated by ``-drive_phase`` and divided by
    sqrt(eps S_SN C_om Gamma) to give (Z1, Z2) in units of z_HO.
    """
    if not reps:
        raise ValueError("no repetitions")
    c = meas.cooperativity if cooperativity is None else cooperativity
    if not c > 0:
        raise ValueError("cooperativity must be > 0 to scale the response")
    freqs = np.asarray(reps[0].freqs)
    omega_m = fit.model.omega_m
    k = int(np.argmin(np.abs(freqs - omega_m)))
    half_bin = 0.5 * abs(freqs[1] - freqs[0]) if freqs.size > 1 else 0.0
    if abs(freqs[k] - omega_m) > half_bin * (1 + 1e-9):
        raise ValueError("no bin at the fitted resonance frequency")
    scale = math.sqrt(meas.epsilon_eff * meas.s_sn * c * fit.model.gamma)
    z = np.array([r.values[k] for r in reps]) * np.exp(-1j * drive_phase) / scale
    pts = np.column_stack([z.real, z.imag])
    ellipse = covariance_ellipse(pts, confidence) if len(pts) >= 3 else None
    return PhaseSpaceEnsemble(points=pts, mean=pts.mean(axis=0), ellipse=ellipse, bin_omega=float(freqs[k]))


def predicted_product(osc: MechanicalOscillator, meas: MeasurementConfig, omega=None) -> float:
    """|chi|^2 S_FF / (tau z_HO^2) at ``omega`` (default omega_m)."""
    omega = osc.omega_m if omega is None else omega
    chi2 = float(np.abs(model.susceptibility(osc, omega)) ** 2)
    s_ff = float(model.force_sensitivity(osc, meas, omega))
    return chi2 * s_ff / (meas.tau * osc.z_ho**2)
