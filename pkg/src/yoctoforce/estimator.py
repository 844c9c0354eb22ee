"""Joint Lorentzian fit of the driven response and the undriven noise PSD.

Both data sets share one resonance frequency and linewidth.  Each ladder
peak ``k`` is centred at ``omega_m - k * spacing`` and contributes

    coherent:  A_k exp(i theta_k) (Gamma/2) / (omega - c_k + i Gamma/2)
    PSD:       N_k (Gamma/2)^2 / ((omega - c_k)^2 + (Gamma/2)^2)

on top of a flat shot-noise floor in the PSD.  The complex factor has
modulus sqrt(Lorentzian) and angle -arctan2(Gamma/2, omega - c_k), i.e. the
response angle is -90 degrees at the peak.  Internally the coherent
amplitudes are fitted in Cartesian form so a vanishing response does not make
its phase singular.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import model
from .model import ComplexSpectrum, PowerSpectrum

log = logging.getLogger(__name__)


class NoResonanceError(ValueError):
    """No peak stands out of the PSD floor."""


class DegenerateFitError(RuntimeError):
    """The normal matrix is singular; ``params`` lists the unidentifiable ones."""

    def __init__(self, params):
        self.params = list(params)
        super().__init__(f"degenerate fit: unidentifiable parameters {', '.join(self.params)}")


class FitNotConvergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class JointFitModel:
    omega_m: float
    gamma: float
    a_sig: np.ndarray
    phase: np.ndarray
    a_nn: np.ndarray
    floor: float
    spacing: float = field(default_factory=model.default_splitting)

    def __post_init__(self):
        for name in ("a_sig", "phase", "a_nn"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not (len(self.a_sig) == len(self.phase) == len(self.a_nn)):
            raise ValueError("per-peak parameter arrays differ in length")

    @property
    def n_peaks(self) -> int:
        return len(self.a_sig)

    @property
    def s_sn_half(self) -> float:
        return self.floor

    def centers(self) -> np.ndarray:
        return self.omega_m - self.spacing * np.arange(self.n_peaks)

    def coherent(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        g = self.gamma / 2
        amp = self.a_sig * np.exp(1j * self.phase)
        den = omega[None, :] - self.centers()[:, None] + 1j * g
        return np.sum(amp[:, None] * g / den, axis=0)

    def psd(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        g = self.gamma / 2
        d = omega[None, :] - self.centers()[:, None]
        return np.sum(self.a_nn[:, None] * g**2 / (d**2 + g**2), axis=0) + self.floor


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 200
    xtol: float = 1e-10
    gtol: float = 1e-8
    fit_floor: bool = True
    free_spacing: bool = False
    reweight_passes: int = 3
    lambda0: float = 1e-3


@dataclass
class JointFitResult:
    model: JointFitModel
    param_names: list
    params: np.ndarray
    covariance: np.ndarray
    residual_norms: dict
    chi2: float
    dof: int
    converged: bool
    n_iter: int
    message: str = ""

    def index(self, name: str) -> int:
        return self.param_names.index(name)

    def sigma(self, name: str) -> float:
        i = self.index(name)
        return float(math.sqrt(max(self.covariance[i, i], 0.0)))

    def cov(self, names) -> np.ndarray:
        idx = [self.index(n) for n in names]
        return self.covariance[np.ix_(idx, idx)]

    def amplitude_sigma(self, k: int = 0) -> float:
        """Standard error of |A_sig| for peak ``k`` from its Cartesian covariance."""
        re, im = self.params[self.index(f"re_sig_{k}")], self.params[self.index(f"im_sig_{k}")]
        c = self.cov([f"re_sig_{k}", f"im_sig_{k}"])
        a = math.hypot(re, im)
        if a == 0:
            return math.sqrt(max(0.5 * (c[0, 0] + c[1, 1]), 0.0))
        u = np.array([re, im]) / a
        return math.sqrt(max(float(u @ c @ u), 0.0))

    def uncertainties(self) -> dict:
        return {n: self.sigma(n) for n in self.param_names}


# ----------------------------------------------------------------- problem


class JointProblem:
    """Weighted residuals and analytic Jacobian in physical parameters.

    Parameter order: omega_m, gamma, (re_sig_k, im_sig_k) per peak, a_nn_k
    per peak, then floor and spacing when they are free.
    """

    def __init__(self, coh: ComplexSpectrum, psd: PowerSpectrum, n_peaks: int, *,
                 fit_floor=True, free_spacing=False, floor=None, spacing=None):
        self.w_c = np.asarray(coh.freqs, dtype=float)
        self.w_p = np.asarray(psd.freqs, dtype=float)
        self.coh = np.asarray(coh.values, dtype=complex)
        self.psd = np.asarray(psd.values, dtype=float)
        self.n = n_peaks
        self.fit_floor = fit_floor
        self.free_spacing = free_spacing
        self.fixed_floor = floor
        self.fixed_spacing = spacing
        names = ["omega_m", "gamma"]
        for k in range(n_peaks):
            names += [f"re_sig_{k}", f"im_sig_{k}"]
        names += [f"a_nn_{k}" for k in range(n_peaks)]
        if fit_floor:
            names.append("floor")
        if free_spacing and n_peaks > 1:
            names.append("spacing")
        self.names = names
        self.sigma_c = np.ones_like(self.w_c)
        self.sigma_p = np.ones_like(self.w_p)

    # -- parameter packing

    def pack(self, m: JointFitModel) -> np.ndarray:
        amp = m.a_sig * np.exp(1j * m.phase)
        p = [m.omega_m, m.gamma]
        for a in amp:
            p += [a.real, a.imag]
        p += list(m.a_nn)
        if "floor" in self.names:
            p.append(m.floor)
        if "spacing" in self.names:
            p.append(m.spacing)
        return np.array(p, dtype=float)

    def unpack(self, p) -> JointFitModel:
        n = self.n
        c = p[2 : 2 + 2 * n : 2] + 1j * p[3 : 3 + 2 * n : 2]
        a_nn = p[2 + 2 * n : 2 + 3 * n]
        i = 2 + 3 * n
        floor = p[i] if self.fit_floor else self.fixed_floor
        spacing = p[-1] if "spacing" in self.names else self.fixed_spacing
        return JointFitModel(omega_m=p[0], gamma=p[1], a_sig=np.abs(c), phase=np.angle(c),
                             a_nn=a_nn, floor=floor, spacing=spacing)

    def _spacing(self, p):
        return p[-1] if "spacing" in self.names else self.fixed_spacing

    def _floor(self, p):
        return p[2 + 3 * self.n] if self.fit_floor else self.fixed_floor

    # -- model pieces

    def _terms(self, p, omega):
        k = np.arange(self.n)[:, None]
        g = 0.5 * p[1]
        d = omega[None, :] - p[0] + k * self._spacing(p)
        return k, g, d

    def coherent_model(self, p):
        k, g, d = self._terms(p, self.w_c)
        c = p[2 : 2 + 2 * self.n : 2] + 1j * p[3 : 3 + 2 * self.n : 2]
        return np.sum(c[:, None] * g / (d + 1j * g), axis=0)

    def psd_model(self, p):
        k, g, d = self._terms(p, self.w_p)
        a_nn = p[2 + 2 * self.n : 2 + 3 * self.n]
        return np.sum(a_nn[:, None] * g**2 / (d**2 + g**2), axis=0) + self._floor(p)

    def residuals(self, p) -> np.ndarray:
        rc = (self.coh - self.coherent_model(p)) / self.sigma_c
        rp = (self.psd - self.psd_model(p)) / self.sigma_p
        return np.concatenate([rc.real, rc.imag, rp])

    def jacobian(self, p) -> np.ndarray:
        """d residuals / d p, shape (2 M_c + M_p, n_params)."""
        n = self.n
        col = {name: j for j, name in enumerate(self.names)}
        mc, mp = self.w_c.size, self.w_p.size
        jc = np.zeros((mc, len(self.names)), dtype=complex)
        jp = np.zeros((mp, len(self.names)))

        k, g, d = self._terms(p, self.w_c)
        den = d + 1j * g
        lor = g / den
        c = (p[2 : 2 + 2 * n : 2] + 1j * p[3 : 3 + 2 * n : 2])[:, None]
        dl_dwm = g / den**2
        dl_dgam = 0.5 * d / den**2
        jc[:, 0] = np.sum(c * dl_dwm, axis=0)
        jc[:, 1] = np.sum(c * dl_dgam, axis=0)
        for q in range(n):
            jc[:, col[f"re_sig_{q}"]] = lor[q]
            jc[:, col[f"im_sig_{q}"]] = 1j * lor[q]
        if "spacing" in col:
            jc[:, col["spacing"]] = np.sum(-c * k * dl_dwm, axis=0)

        k, g, d = self._terms(p, self.w_p)
        a_nn = p[2 + 2 * n : 2 + 3 * n][:, None]
        den2 = d**2 + g**2
        ell = g**2 / den2
        dl_dwm = 2 * d * g**2 / den2**2
        jp[:, 0] = np.sum(a_nn * dl_dwm, axis=0)
        jp[:, 1] = np.sum(a_nn * g * d**2 / den2**2, axis=0)
        for q in range(n):
            jp[:, col[f"a_nn_{q}"]] = ell[q]
        if "floor" in col:
            jp[:, col["floor"]] = 1.0
        if "spacing" in col:
            jp[:, col["spacing"]] = np.sum(-a_nn * k * dl_dwm, axis=0)

        jc = -jc / self.sigma_c[:, None]
        jp = -jp / self.sigma_p[:, None]
        return np.vstack([jc.real, jc.imag, jp])

    def scales(self, p) -> np.ndarray:
        """Typical magnitude of each parameter, used to condition the solve."""
        g = abs(p[1])
        a_scale = max(np.max(np.abs(self.coh)), 1e-300)
        p_scale = max(np.max(np.abs(self.psd)), 1e-300)
        s = []
        for name in self.names:
            if name in ("omega_m", "gamma", "spacing"):
                s.append(g)
            elif name.startswith(("re_", "im_")):
                s.append(a_scale)
            else:
                s.append(p_scale)
        return np.array(s)


# ----------------------------------------------------------- initial guess


def _edge_mask(n: int, frac: float = 0.15) -> np.ndarray:
    m = max(2, int(round(frac * n)))
    mask = np.zeros(n, dtype=bool)
    mask[:m] = True
    mask[-m:] = True
    return mask


def _peak_stats(w, y):
    edges = _edge_mask(w.size)
    floor = float(np.median(y[edges]))
    spread = float(np.std(y[edges]))
    imax = int(np.argmax(y))
    height = float(y[imax] - floor)
    return floor, spread, imax, height


DETECT_THRESHOLD = 25.0


def _detect(y) -> float:
    """Significance of the highest 3-bin running mean above the edge bins.

    A resonance spans several bins while isolated noise spikes do not, so
    smoothing suppresses false detections on flat spectra.
    """
    y = np.asarray(y, dtype=float)
    if y.size < 8:
        return 0.0
    edges = y[_edge_mask(y.size)]
    spread = float(np.std(edges))
    smooth = np.convolve(y, np.ones(3) / 3, mode="valid")
    excess = float(smooth.max() - edges.mean())
    if spread == 0:
        return np.inf if excess > 0 else 0.0
    return excess / (spread / math.sqrt(3))


def initial_guess(coh: ComplexSpectrum, psd: PowerSpectrum, n_peaks: int = 3,
                  spacing: float | None = None) -> JointFitModel:
    """Heuristic starting point for :func:`fit_joint`.

    omega_m is the PSD maximum (lowest-frequency bin on ties), the floor is the
    median of the grid-edge bins, and gamma comes from the half-power width.
    When |coh|^2 stands further out of its edge scatter than the PSD does
    (weak probing), omega_m and gamma are taken from |coh|^2 instead.  Given those, all amplitudes follow from a
    linear least-squares solve, which reduces to the peak heights of |coh| and
    PSD minus floor for one peak.
    """
    if spacing is None:
        spacing = model.default_splitting()
    w = np.asarray(psd.freqs, dtype=float)
    y = np.asarray(psd.values, dtype=float)
    floor, spread, imax, height = _peak_stats(w, y)
    wc = np.asarray(coh.freqs, dtype=float)
    power = np.abs(np.asarray(coh.values)) ** 2
    _, c_spread, c_max, c_height = _peak_stats(wc, power)
    psd_sig = height / spread if spread > 0 else (np.inf if height > 0 else 0.0)
    coh_sig = c_height / c_spread if c_spread > 0 else (np.inf if c_height > 0 else 0.0)
    if not (_detect(y) > DETECT_THRESHOLD or _detect(power) > DETECT_THRESHOLD):
        raise NoResonanceError("no resonance detected: no peak stands out of the edge-bin scatter")
    if psd_sig >= coh_sig:
        omega_m = float(w[imax])
        gamma = _half_power_width(w, y - floor, imax, height)
    else:
        omega_m = float(wc[c_max])
        gamma = _half_power_width(wc, power, c_max, float(power[c_max]))

    amp_c, amp_p, floor_fit = _linear_amplitudes(coh, psd, omega_m, gamma, spacing, n_peaks)
    # a larger "secondary" peak means the primary was placed on a side level
    k = int(np.argmax(np.abs(amp_c) / max(np.abs(amp_c).max(), 1e-300)
                      + np.clip(amp_p, 0, None) / max(np.clip(amp_p, 0, None).max(), 1e-300)))
    if k > 0:
        omega_m -= k * spacing
        amp_c, amp_p, floor_fit = _linear_amplitudes(coh, psd, omega_m, gamma, spacing, n_peaks)
    a_sig = np.abs(amp_c)
    phase = np.angle(amp_c)
    a_nn = np.clip(amp_p, 0.0, None)
    if floor_fit > 0:
        floor = floor_fit
    if not a_nn[0] > 0:
        a_nn[0] = max(height, 1e-3 * floor)
    return JointFitModel(omega_m=omega_m, gamma=gamma, a_sig=a_sig, phase=phase,
                         a_nn=a_nn, floor=floor, spacing=spacing)


def _half_power_width(w, excess, imax, height) -> float:
    """Full width at half maximum of a peak sampled on a coarse grid.

    Between the last bin above and the first bin below half maximum,
    height/excess is interpolated linearly in detuning squared, which is exact
    for a Lorentzian.
    """
    halves = []
    for step in (-1, 1):
        i = imax
        while 0 <= i + step < w.size and excess[i + step] > 0.5 * height:
            i += step
        j = i + step
        if not 0 <= j < w.size:
            continue
        d_in, d_out = (w[i] - w[imax]) ** 2, (w[j] - w[imax]) ** 2
        if excess[j] > 0:
            y_in, y_out = height / excess[i], height / excess[j]
            d2 = d_in + (2.0 - y_in) * (d_out - d_in) / (y_out - y_in)
        else:
            frac = (excess[i] - 0.5 * height) / (excess[i] - excess[j])
            d2 = (math.sqrt(d_in) + frac * (math.sqrt(d_out) - math.sqrt(d_in))) ** 2
        halves.append(math.sqrt(max(d2, 0.0)))
    if not halves:
        return float(w[-1] - w[0]) / 4
    width = 2.0 * float(np.mean(halves))
    return width if width > 0 else float(w[1] - w[0])


def _linear_amplitudes(coh, psd, omega_m, gamma, spacing, n_peaks):
    g = gamma / 2
    wc = np.asarray(coh.freqs, dtype=float)
    centers = omega_m - spacing * np.arange(n_peaks)
    basis_c = g / (wc[:, None] - centers[None, :] + 1j * g)
    amp_c, *_ = np.linalg.lstsq(basis_c, np.asarray(coh.values, dtype=complex), rcond=None)
    wp = np.asarray(psd.freqs, dtype=float)
    d = wp[:, None] - centers[None, :]
    basis_p = np.hstack([g**2 / (d**2 + g**2), np.ones((wp.size, 1))])
    sol, *_ = np.linalg.lstsq(basis_p, np.asarray(psd.values, dtype=float), rcond=None)
    return amp_c, sol[:-1], float(sol[-1])


# ----------------------------------------------------------------- fitting


def combine_psd(primary: PowerSpectrum, extra: PowerSpectrum | None) -> PowerSpectrum:
    """Equal-weight average of two PSD records on the same grid."""
    if extra is None:
        return primary
    if not np.array_equal(primary.freqs, extra.freqs):
        raise ValueError("PSD grids differ")
    return PowerSpectrum(primary.freqs, 0.5 * (primary.values + extra.values),
                         n_avg=primary.n_avg + extra.n_avg)


def coherent_sigma(coh: ComplexSpectrum, omega_m: float, gamma: float) -> np.ndarray:
    """Per-bin quadrature standard error of the averaged coherent response.

    Uses the repetition spread carried by ``coh`` when available, otherwise a
    constant estimated from second differences in bins more than 4 gamma from
    resonance.
    """
    if coh.sigma is not None and np.all(np.asarray(coh.sigma) > 0):
        return np.asarray(coh.sigma, dtype=float)
    v = np.asarray(coh.values, dtype=complex)
    scale = max(float(np.max(np.abs(v))), 1e-300)
    sigma = 0.0
    if v.size >= 5:
        d2 = v[2:] - 2 * v[1:-1] + v[:-2]
        far = np.abs(np.asarray(coh.freqs)[1:-1] - omega_m) > 4 * gamma
        if np.any(far):
            sigma = math.sqrt(float(np.mean(np.abs(d2[far]) ** 2)) / 12.0)
    return np.full(v.size, max(sigma, 1e-6 * scale))


def fit_joint(coh: ComplexSpectrum, psd: PowerSpectrum, init: JointFitModel,
              opts: FitOptions | None = None, extra_psd: PowerSpectrum | None = None) -> JointFitResult:
    """Simultaneous weighted least-squares fit of ``coh`` and ``psd``.

    PSD bins are weighted by model / sqrt(n_avg); the weights are refreshed
    from the fitted model ``opts.reweight_passes`` times.
    """
    opts = opts or FitOptions()
    psd = combine_psd(psd, extra_psd)
    if not init.gamma > 0 or np.any(init.a_nn < 0) or np.any(init.a_sig < 0):
        raise ValueError("invalid initial model")
    span = min(init.omega_m - psd.freqs[0], psd.freqs[-1] - init.omega_m)
    if span < 3 * init.gamma:
        raise ValueError("PSD grid must cover at least 3 gamma on each side of omega_m")

    prob = JointProblem(coh, psd, init.n_peaks, fit_floor=opts.fit_floor,
                        free_spacing=opts.free_spacing, floor=init.floor, spacing=init.spacing)
    p = prob.pack(init)
    n_avg = max(int(psd.n_avg), 1)
    total_iter = 0
    converged = False
    message = ""
    for _ in range(max(opts.reweight_passes, 1)):
        current = prob.unpack(p)
        prob.sigma_c = coherent_sigma(coh, current.omega_m, current.gamma)
        expect = np.maximum(prob.psd_model(p), 1e-12 * np.max(np.abs(psd.values)))
        prob.sigma_p = expect / math.sqrt(n_avg)
        p, converged, n_iter, message = _levenberg_marquardt(prob, p, opts)
        total_iter += n_iter

    r = prob.residuals(p)
    jac = prob.jacobian(p)
    mc = prob.w_c.size
    dof = max(r.size - p.size, 1)
    chi2 = float(r @ r)
    cov = _covariance(jac, prob.scales(p), prob.names) * (chi2 / dof)
    norms = {"coherent": float(np.sqrt(np.sum(r[: 2 * mc] ** 2))),
             "psd": float(np.sqrt(np.sum(r[2 * mc :] ** 2)))}
    if not converged:
        log.warning("joint fit did not converge after %d iterations: %s", total_iter, message)
    return JointFitResult(model=prob.unpack(p), param_names=list(prob.names), params=p,
                          covariance=cov, residual_norms=norms, chi2=chi2, dof=dof,
                          converged=converged, n_iter=total_iter, message=message)


def _covariance(jac, scales, names) -> np.ndarray:
    js = jac * scales[None, :]
    u, s, vt = np.linalg.svd(js, full_matrices=False)
    if s.size == 0 or s[-1] <= 1e-12 * s[0]:
        bad = s <= 1e-12 * s[0]
        weight = np.sum(vt[bad] ** 2, axis=0)
        raise DegenerateFitError([n for n, wgt in zip(names, weight) if wgt > 0.1])
    inv = (vt.T / s**2) @ vt
    return inv * np.outer(scales, scales)


def _levenberg_marquardt(prob: JointProblem, p0, opts: FitOptions):
    """Damped Gauss-Newton on scaled parameters; damping x3 / /3."""
    scales = prob.scales(p0)
    x = p0 / scales
    lam = opts.lambda0
    r = prob.residuals(x * scales)
    cost = float(r @ r)
    for it in range(1, opts.max_iter + 1):
        jac = prob.jacobian(x * scales) * scales[None, :]
        grad = jac.T @ r
        jtj = jac.T @ jac
        diag = np.diag(jtj).copy()
        diag[diag == 0] = 1.0
        col_norm = np.sqrt(diag)
        gnorm = float(np.max(np.abs(grad) / col_norm)) / max(math.sqrt(cost), 1e-300)
        if gnorm < opts.gtol:
            return x * scales, True, it - 1, "gradient tolerance reached"
        while True:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(jtj + lam * np.diag(diag), -grad, rcond=None)[0]
            x_new = x + step
            r_new = prob.residuals(x_new * scales)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost and x_new[1] > 0:
                break
            lam *= 3.0
            if lam > 1e16:
                return x * scales, gnorm < 1e3 * opts.gtol, it, "damping limit reached"
        rel_step = float(np.linalg.norm(step) / (np.linalg.norm(x_new) + opts.xtol))
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 3.0, 1e-12)
        if rel_step < opts.xtol or cost == 0.0:
            return x * scales, True, it, "step tolerance reached"
    return x * scales, False, opts.max_iter, "iteration limit reached"


# ------------------------------------------------------------ cooperativity


@dataclass(frozen=True)
class Estimate:
    value: float
    sigma: float


def estimate_cooperativity(fit: JointFitResult, nu: float, epsilon_eff: float,
                           s_sn: float | None = None) -> Estimate:
    """C_om from the fitted primary-peak noise height.

    With ``s_sn=None`` the fitted floor is taken as S_SN/2, so the estimate
    depends only on the ratio A_NN / floor.
    """
    if not fit.converged:
        raise FitNotConvergedError("cooperativity needs a converged fit")
    a_nn = float(fit.model.a_nn[0])
    if s_sn is None:
        floor = float(fit.model.floor)
        ratio = 0.5 + a_nn / (2 * floor)
        names = ["a_nn_0"] + (["floor"] if "floor" in fit.param_names else [])
        grad = np.array([1 / (2 * floor), -a_nn / (2 * floor**2)])[: len(names)]
        var_r = float(grad @ fit.cov(names) @ grad)
    else:
        ratio = (a_nn + 0.5 * s_sn) / s_sn
        var_r = fit.sigma("a_nn_0") ** 2 / s_sn**2
    c = model.cooperativity_from_peak(ratio, nu, epsilon_eff)
    slope = model.cooperativity_from_peak_slope(ratio, nu, epsilon_eff)
    return Estimate(c, abs(slope) * math.sqrt(max(var_r, 0.0)))
