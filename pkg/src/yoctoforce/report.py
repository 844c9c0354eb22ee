"""CSV and JSON writers with embedded schema and provenance lines."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .model import TWO_PI

SCHEMA_VERSION = "yoctoforce-output/1"


def fmt(x) -> str:
    """12 significant digits for reals; other values as text."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return f"{x:.12g}"
    return str(x)


def hz(omega):
    return np.asarray(omega, dtype=float) / TWO_PI if np.ndim(omega) else float(omega) / TWO_PI


def csv_text(columns, rows, meta: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {SCHEMA_VERSION}\n")
    for key, val in meta.items():
        buf.write(f"# {key}: {fmt(val)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise ValueError("row length does not match the header")
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows, meta: dict) -> Path:
    path = Path(path)
    path.write_text(csv_text(columns, rows, meta))
    return path


def read_csv(path):
    """Return (meta, columns, rows-as-strings) for a file written by :func:`write_csv`."""
    meta, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            meta[key.strip()] = val.strip()
        else:
            body.append(line)
    rows = list(csv.reader(body))
    return meta, rows[0], rows[1:]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def report(config: dict, seed: int, config_hash: str, fits=None, sensitivity=None,
           phase_space=None, validation=None) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "seed": seed,
        "config_hash": config_hash,
        "config": config,
        "fits": fits or [],
        "sensitivity": sensitivity or [],
        "phase_space": phase_space or [],
        "validation": validation or [],
    }


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


# -- record serializers


def fit_record(fit, c_true=None) -> dict:
    m = fit.model
    unc = fit.uncertainties()
    return {
        "cooperativity_set": c_true,
        "converged": fit.converged,
        "n_iter": fit.n_iter,
        "message": fit.message,
        "chi2": fit.chi2,
        "dof": fit.dof,
        "f_m_hz": hz(m.omega_m),
        "f_m_sigma_hz": hz(unc["omega_m"]),
        "linewidth_hz": hz(m.gamma),
        "linewidth_sigma_hz": hz(unc["gamma"]),
        "a_sig": m.a_sig,
        "phase": m.phase,
        "a_nn": m.a_nn,
        "floor": m.floor,
        "spacing_hz": hz(m.spacing),
        "params": dict(zip(fit.param_names, fit.params)),
        "sigmas": unc,
    }


def sensitivity_record(sp, c_true=None) -> dict:
    from .model import YN2
    coop = sp.cooperativity
    return {
        "cooperativity_set": c_true,
        "cooperativity": None if coop is None else coop.value,
        "cooperativity_sigma": None if coop is None else coop.sigma,
        "s_ff_over_sql": sp.s_ff_over_sql,
        "s_ff_over_sql_sigma": sp.s_ff_over_sql_sigma,
        "s_ff_over_sql_sigma_fit": sp.s_ff_over_sql_sigma_fit,
        "s_ff_abs": sp.s_ff_abs,
        "s_ff_abs_sigma": sp.s_ff_abs_sigma,
        "s_ff_abs_yn2": sp.s_ff_abs / YN2,
        "f_m_hz": hz(sp.omega_m),
        "linewidth_hz": hz(sp.gamma),
    }


def phase_record(ens, c_true=None, predicted=None) -> dict:
    e = ens.ellipse
    return {
        "cooperativity_set": c_true,
        "bin_f_hz": hz(ens.bin_omega),
        "n_points": len(ens.points),
        "mean": ens.mean,
        "rms": e.rms,
        "radii": e.radii,
        "orientation": e.orientation,
        "confidence": e.confidence,
        "product": ens.product,
        "product_sigma": ens.product_sigma,
        "predicted_product": predicted,
    }


def repetition_rows(reps):
    """Rows (rep, f_hz, re, im) for a raw repetition export."""
    for r, spec in enumerate(reps):
        for f, v in zip(hz(spec.freqs), spec.values):
            yield (r, f, v.real, v.imag)
