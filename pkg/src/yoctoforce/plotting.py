"""Static SVG figures (matplotlib, non-interactive backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Ellipse as EllipsePatch  # noqa: E402

# stable SVG ids and no timestamp, so reruns give identical files
matplotlib.rcParams["svg.hashsalt"] = "yoctoforce"
_META = {"Date": None, "Creator": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def theory_curves(c, ideal: dict, corrected: dict, path):
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8), sharey=True)
    for ax, terms, title in zip(axes, (ideal, corrected), ("ideal", "corrected")):
        for key, style in (("shot", "--"), ("back_action", "-."), ("zero_point", ":"), ("total", "-")):
            ax.loglog(c, terms[key], style, label=key.replace("_", " "))
        ax.set_xlabel("cooperativity $C_{om}$")
        ax.set_title(title)
    axes[0].set_ylabel("force noise on resonance [zpm]")
    axes[0].legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def sweep(c_est, ratio, sigma, c_theory, theory, path, c_set=None):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    x = np.where(np.isfinite(c_est), c_est, c_set if c_set is not None else c_est)
    ax.errorbar(x, ratio, yerr=sigma, fmt="o", ms=4, capsize=2, label="simulated fits")
    ax.loglog(c_theory, theory, "-", label="theory")
    ax.axhline(1.0, color="0.5", lw=0.8)
    ax.set_xlabel("estimated $C_{om}$")
    ax.set_ylabel("$S_{FF}(\\omega_m)$ / SQL")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def fit_example(f_hz, coh, coh_model, psd, psd_model, path):
    fig, axes = plt.subplots(3, 1, figsize=(5.5, 7), sharex=True)
    axes[0].plot(f_hz / 1e3, np.abs(coh), ".", label="data")
    axes[0].plot(f_hz / 1e3, np.abs(coh_model), "-", label="joint fit")
    axes[0].set_ylabel("|response| [W/N]")
    axes[0].legend(frameon=False)
    axes[1].plot(f_hz / 1e3, np.degrees(np.angle(coh)), ".")
    axes[1].plot(f_hz / 1e3, np.degrees(np.angle(coh_model)), "-")
    axes[1].set_ylabel("phase [deg]")
    axes[2].semilogy(f_hz / 1e3, psd, ".")
    axes[2].semilogy(f_hz / 1e3, psd_model, "-")
    axes[2].set_ylabel("PSD [W$^2$/Hz]")
    axes[2].set_xlabel("frequency [kHz]")
    fig.tight_layout()
    return _save(fig, path)


def sensitivity_spectra(curves, path):
    """``curves``: list of (label, f_hz, measured, theory) in N^2/Hz."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for label, f, meas, theo in curves:
        (line,) = ax.semilogy(f / 1e3, meas, ".", ms=3, label=label)
        ax.semilogy(f / 1e3, theo, "-", color=line.get_color())
    ax.set_xlabel("frequency [kHz]")
    ax.set_ylabel("$S_{FF}$ [N$^2$/Hz]")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def phase_space(ensembles, labels, path):
    fig, axes = plt.subplots(1, len(ensembles), figsize=(3.2 * len(ensembles), 3.4), squeeze=False)
    for ax, ens, label in zip(axes[0], ensembles, labels):
        pts, e = ens.points, ens.ellipse
        ax.plot(pts[:, 0], pts[:, 1], ".", ms=2, alpha=0.6)
        ax.plot(*ens.mean, "k+", ms=10)
        ax.add_patch(EllipsePatch(ens.mean, 2 * e.radii[0], 2 * e.radii[1], angle=np.degrees(e.orientation),
                                  fill=False, color="C3"))
        ax.set_title(f"{label}\n$\\Delta Z_1 \\Delta Z_2$ = {ens.product:.2f}", fontsize=9)
        ax.set_xlabel("$Z_1$ [$z_{HO}$]")
        ax.set_aspect("equal", adjustable="datalim")
    axes[0][0].set_ylabel("$Z_2$ [$z_{HO}$]")
    fig.tight_layout()
    return _save(fig, path)
