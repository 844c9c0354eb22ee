"""Closed-form physics of a cavity-optomechanical force sensor.

All quantities are SI with angular frequencies in rad/s.  Functions accept
scalars or numpy arrays for ``omega`` and broadcast.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

HBAR = 1.054571817e-34  # J s
M_RB87 = 1.44316e-25  # kg
G_EARTH = 9.81  # m/s^2
C_LIGHT = 299792458.0  # m/s
YN2 = 1e-48  # (1 yN)^2 in N^2

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class MechanicalOscillator:
    """Collective centre-of-mass mode of ``n_atoms`` atoms.

    ``gamma`` is the full mechanical linewidth and ``nu`` the mean thermal
    phonon occupation.
    """

    omega_m: float
    gamma: float
    nu: float = 0.0
    n_atoms: float = 1200
    m_atom: float = M_RB87

    def __post_init__(self):
        for name in ("omega_m", "gamma", "m_atom"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if not self.nu >= 0:
            raise ValueError(f"nu must be >= 0, got {self.nu!r}")
        if not self.n_atoms >= 1:
            raise ValueError(f"n_atoms must be >= 1, got {self.n_atoms!r}")
        if self.gamma >= self.omega_m / 10:
            warnings.warn(
                f"gamma={self.gamma:g} is not << omega_m={self.omega_m:g}; "
                "the near-resonance susceptibility is inaccurate",
                stacklevel=2,
            )

    @property
    def mass(self) -> float:
        return self.n_atoms * self.m_atom

    @property
    def z_ho(self) -> float:
        """Ground-state length scale sqrt(hbar / (2 m omega_m))."""
        return math.sqrt(HBAR / (2.0 * self.mass * self.omega_m))

    @property
    def p_ho(self) -> float:
        """Ground-state rms momentum sqrt(hbar m omega_m / 2)."""
        return math.sqrt(HBAR * self.mass * self.omega_m / 2.0)

    @property
    def zpm(self) -> float:
        """Zero-point force-noise unit 2 Gamma p_HO^2 in N^2/Hz."""
        return 2.0 * self.gamma * self.p_ho**2


@dataclass(frozen=True)
class MeasurementConfig:
    """Probe and detection settings.

    ``s_sn`` is the total shot-noise PSD; the phase-quadrature floor is half of
    it.  When ``s_sn`` is omitted it is derived as ``p_lo * hbar * omega_0``.
    ``kappa`` only enters the optional finite-cavity filter; ``None`` means the
    resolved-sideband limit.
    """

    epsilon_det: float = 0.11
    heterodyne: bool = True
    cooperativity: float = 2.0
    kappa: float | None = None
    s_sn: float | None = None
    tau: float = 1e-3
    p_lo: float | None = 1e-3
    omega_0: float | None = TWO_PI * C_LIGHT / 780e-9

    def __post_init__(self):
        if not 0 < self.epsilon_det <= 1:
            raise ValueError(f"epsilon_det must be in (0, 1], got {self.epsilon_det!r}")
        if not self.cooperativity >= 0:
            raise ValueError(f"cooperativity must be >= 0, got {self.cooperativity!r}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau!r}")
        if self.kappa is not None and not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa!r}")
        if self.s_sn is None:
            if self.p_lo is None or self.omega_0 is None:
                raise ValueError("s_sn requires either an explicit value or p_lo and omega_0")
            if not (self.p_lo > 0 and self.omega_0 > 0):
                raise ValueError("p_lo and omega_0 must be > 0")
            object.__setattr__(self, "s_sn", self.p_lo * HBAR * self.omega_0)
        elif not self.s_sn > 0:
            raise ValueError(f"s_sn must be > 0, got {self.s_sn!r}")

    @property
    def epsilon_eff(self) -> float:
        """Efficiency entering the sensitivity; heterodyne detection halves it."""
        return self.epsilon_det / 2.0 if self.heterodyne else self.epsilon_det

    @property
    def omega_bw(self) -> float:
        """DFT bin spacing for a window of length ``tau``."""
        return TWO_PI / self.tau

    def with_cooperativity(self, cooperativity: float) -> "MeasurementConfig":
        return replace(self, cooperativity=cooperativity)


@dataclass(frozen=True)
class DriveConfig:
    """Calibrated optical-dipole drive.

    The applied force amplitude is ``n_atoms * f_static_per_atom * mod_index``.
    """

    n_atoms: float = 1200
    f_static_per_atom: float = 6.2e-21
    mod_index: float = 1e-3
    omega_d: float = TWO_PI * 110e3
    drive_phase: float = 0.0

    def __post_init__(self):
        if not self.f0 >= 0:
            raise ValueError(f"applied force must be >= 0, got {self.f0!r}")
        if not self.omega_d > 0:
            raise ValueError(f"omega_d must be > 0, got {self.omega_d!r}")

    @property
    def f0(self) -> float:
        return self.n_atoms * self.f_static_per_atom * self.mod_index


@dataclass(frozen=True)
class ComplexSpectrum:
    """Complex response on a uniform angular-frequency grid.

    ``sigma`` optionally holds the per-bin standard error of each quadrature of
    ``values`` (set when the spectrum is an average over repetitions).
    """

    freqs: np.ndarray
    values: np.ndarray
    n_avg: int = 1
    sigma: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        _check_grid(self.freqs, self.values)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrum values must be finite")

    def __len__(self):
        return len(self.freqs)


@dataclass(frozen=True)
class PowerSpectrum:
    """Averaged power spectral density on a uniform angular-frequency grid."""

    freqs: np.ndarray
    values: np.ndarray
    n_avg: int = 1

    def __post_init__(self):
        _check_grid(self.freqs, self.values)
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("PSD values must be finite and non-negative")

    def __len__(self):
        return len(self.freqs)


def _check_grid(freqs, values):
    freqs = np.asarray(freqs)
    if freqs.ndim != 1 or freqs.size == 0:
        raise ValueError("frequency grid must be a non-empty 1-d array")
    if np.shape(values) != freqs.shape:
        raise ValueError(f"values shape {np.shape(values)} does not match grid {freqs.shape}")
    if freqs.size > 1:
        step = np.diff(freqs)
        if np.any(step <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        if not np.allclose(step, step[0], rtol=1e-9, atol=0):
            raise ValueError("frequency grid must be uniform")


def grid_spacing(freqs) -> float:
    freqs = np.asarray(freqs)
    return float(freqs[1] - freqs[0]) if freqs.size > 1 else float("nan")


# ---------------------------------------------------------------- response


def susceptibility(osc: MechanicalOscillator, omega):
    """Near-resonance mechanical susceptibility in m/N."""
    omega = np.asarray(omega, dtype=float)
    return 1.0 / (2.0 * osc.mass * osc.omega_m * (-(omega - osc.omega_m) - 0.5j * osc.gamma))


def response_angle(omega, omega_m, gamma):
    """Phase of the transduced coherent response, -90 deg on resonance.

    Equals -arctan((gamma/2)/(omega - omega_m)) above resonance and continues
    smoothly (down to -180 deg) below it.
    """
    return -np.arctan2(0.5 * gamma, np.asarray(omega, dtype=float) - omega_m)


def transduction(osc: MechanicalOscillator, meas: MeasurementConfig, omega):
    """Force-to-PM-quadrature transduction magnitude T_sig(omega) in W/N."""
    pref = math.sqrt(meas.epsilon_eff * meas.s_sn * meas.cooperativity * osc.gamma) / osc.z_ho
    return pref * np.abs(susceptibility(osc, omega))


def photon_spectrum_pm(osc: MechanicalOscillator, meas: MeasurementConfig, omega):
    """Intracavity PM photon spectrum including the cavity filter."""
    omega = np.asarray(omega, dtype=float)
    c = meas.cooperativity
    if meas.kappa is None:
        cavity = 1.0
    else:
        cavity = meas.kappa**2 / (meas.kappa**2 + omega**2)
    lorentz = osc.gamma**2 / ((omega - osc.omega_m) ** 2 + (osc.gamma / 2) ** 2)
    return 0.5 * c * cavity * lorentz * (2 * osc.nu + 1 + c)


def heterodyne_psd_pm(osc: MechanicalOscillator, meas: MeasurementConfig, omega, full_cavity=False):
    """Undriven PM-quadrature heterodyne PSD in units of ``meas.s_sn``.

    The default is the resolved-sideband form (omega_m << kappa).  With
    ``full_cavity`` the finite-cavity photon spectrum is used instead.
    """
    if full_cavity:
        return 0.5 * meas.s_sn * (1.0 + 2.0 * meas.epsilon_eff * photon_spectrum_pm(osc, meas, omega))
    c = meas.cooperativity
    chi2 = np.abs(susceptibility(osc, omega)) ** 2
    excess = 4 * meas.epsilon_eff * c * (2 * osc.nu + c + 1) * (osc.mass * osc.omega_m * osc.gamma) ** 2 * chi2
    return 0.5 * meas.s_sn * (1.0 + excess)


# ------------------------------------------------------------- sensitivity


def force_sensitivity(osc: MechanicalOscillator, meas: MeasurementConfig, omega):
    """Total force imprecision S_FF(omega) in N^2/Hz."""
    c = meas.cooperativity
    if c <= 0:
        raise ValueError("cooperativity must be > 0: shot-noise term undefined at C_om = 0")
    omega = np.asarray(omega, dtype=float)
    half = osc.gamma / 2
    shot = ((omega - osc.omega_m) ** 2 + half**2) / half**2 / (4 * meas.epsilon_eff * c)
    return osc.zpm * (shot + (2 * osc.nu + 1) + c)


def imprecision_terms(cooperativity, epsilon_eff: float, nu: float) -> dict:
    """On-resonance force-noise contributions in zero-point units (2 Gamma p_HO^2)."""
    c = np.asarray(cooperativity, dtype=float)
    shot = 1.0 / (4 * epsilon_eff * c)
    thermal = np.full_like(c, 2 * nu + 1)
    back_action = c.copy()
    return {"shot": shot, "zero_point": thermal, "back_action": back_action,
            "total": shot + thermal + back_action}


def sql_sensitivity(osc: MechanicalOscillator) -> float:
    """Absolute standard quantum limit 4 Gamma p_HO^2."""
    return 4.0 * osc.gamma * osc.p_ho**2


def optimal_cooperativity(epsilon_eff: float) -> float:
    _check_efficiency(epsilon_eff)
    return 1.0 / (2.0 * math.sqrt(epsilon_eff))


def min_sensitivity(osc: MechanicalOscillator, epsilon_eff: float, nu: float) -> float:
    """On-resonance sensitivity at the optimal cooperativity."""
    _check_efficiency(epsilon_eff)
    return osc.zpm * (1.0 / math.sqrt(epsilon_eff) + 2 * nu + 1)


def uncertainty_bound(nu: float, epsilon_eff: float, tau: float, gamma: float) -> float:
    """Lower bound on the phase-space imprecision product in z_HO^2 units."""
    if not tau * gamma > 0:
        raise ValueError("tau * gamma must be > 0")
    _check_efficiency(epsilon_eff)
    return 2.0 / (tau * gamma) * ((2 * nu + 1) + 1.0 / math.sqrt(epsilon_eff))


def acceleration_sensitivity(osc: MechanicalOscillator, epsilon_eff: float, nu: float) -> float:
    """Amplitude acceleration sensitivity at the quantum limit, in g/sqrt(Hz)."""
    return math.sqrt(min_sensitivity(osc, epsilon_eff, nu)) / (osc.mass * G_EARTH)


def _check_efficiency(epsilon_eff):
    if not 0 < epsilon_eff <= 1:
        raise ValueError(f"epsilon_eff must be in (0, 1], got {epsilon_eff!r}")


# ------------------------------------------------------------- calibration


class PeakHeightError(ValueError):
    """Raised when a normalised peak height admits no physical cooperativity."""


def cooperativity_from_peak(peak_ratio: float, nu: float, epsilon_eff: float) -> float:
    """Invert the on-resonance PSD height S_het(omega_m)/S_SN for C_om.

    Solves C^2 + (2 nu + 1) C - (2 r - 1)/(4 eps) = 0 for its non-negative
    root.
    """
    _check_efficiency(epsilon_eff)
    if peak_ratio < 0.5:
        raise PeakHeightError(f"peak ratio {peak_ratio:g} is below the shot-noise floor of 1/2")
    b = nu + 0.5
    disc = b * b + (2 * peak_ratio - 1) / (4 * epsilon_eff)
    if disc < 0:
        raise PeakHeightError(f"unphysical peak: negative discriminant {disc:g}")
    # stable form of -b + sqrt(b^2 + q) for small q
    q = (2 * peak_ratio - 1) / (4 * epsilon_eff)
    return q / (b + math.sqrt(disc))


def cooperativity_from_peak_slope(peak_ratio: float, nu: float, epsilon_eff: float) -> float:
    """d C_om / d (peak ratio), used for error propagation."""
    b = nu + 0.5
    disc = b * b + (2 * peak_ratio - 1) / (4 * epsilon_eff)
    return 1.0 / (4 * epsilon_eff * math.sqrt(disc))


def cooperativity_from_photons(n_photons: float, g_om: float, kappa: float, gamma: float) -> float:
    for name, val in (("n_photons", n_photons), ("g_om", g_om), ("kappa", kappa), ("gamma", gamma)):
        if not val > 0:
            raise ValueError(f"{name} must be > 0, got {val!r}")
    return 4.0 * n_photons * g_om**2 / (kappa * gamma)


def optomech_coupling(g0: float, delta_ca: float, k_p: float, n_atoms: float, z_ho: float) -> float:
    """Collective optomechanical coupling g_om in rad/s."""
    if delta_ca == 0:
        raise ValueError("delta_ca must be non-zero")
    return g0**2 / delta_ca * k_p * n_atoms * z_ho


def cavity_shift(n_atoms: float, g0: float, delta_ca: float) -> float:
    """Dispersive cavity frequency shift from ``n_atoms`` atoms, rad/s."""
    if delta_ca == 0:
        raise ValueError("delta_ca must be non-zero")
    return n_atoms * g0**2 / (2.0 * delta_ca)


DEFAULT_TRAP_WAVENUMBER = TWO_PI / 850e-9


def default_splitting() -> float:
    """Recoil splitting for Rb-87 in the 850 nm mean-wavelength trap."""
    return recoil_splitting(DEFAULT_TRAP_WAVENUMBER, M_RB87)


def recoil_splitting(k_t: float, m_atom: float = M_RB87) -> float:
    """Level-spacing reduction of the lattice, the recoil frequency hbar k^2 / 2m."""
    if not (k_t > 0 and m_atom > 0):
        raise ValueError("k_t and m_atom must be > 0")
    return HBAR * k_t**2 / (2.0 * m_atom)


# ------------------------------------------------------------------ helpers


def reference_oscillator(**overrides) -> MechanicalOscillator:
    """The 1200-atom, 110 kHz oscillator with 3 kHz linewidth and 1.2 phonons."""
    kw = dict(omega_m=TWO_PI * 110e3, gamma=TWO_PI * 3e3, nu=1.2, n_atoms=1200, m_atom=M_RB87)
    kw.update(overrides)
    return MechanicalOscillator(**kw)


def reference_measurement(**overrides) -> MeasurementConfig:
    kw = dict(epsilon_det=0.11, heterodyne=True, cooperativity=2.0, tau=1e-3)
    kw.update(overrides)
    return MeasurementConfig(**kw)


def to_yn2(s_ff):
    """Convert N^2/Hz to yN^2/Hz."""
    return np.asarray(s_ff) / YN2
