"""Command-line entry point: ``yoctoforce {theory,sweep,phase,validate}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, model, pipeline, report
from .config import ConfigError, RunConfig, load
from .estimator import DegenerateFitError, NoResonanceError
from .report import hz

log = logging.getLogger("yoctoforce")

# seed-derivation purposes, so each command draws independent streams
SWEEP, PHASE, SPECTRA, VALIDATE = 0, 1, 2, 3

FIT_FAILURES = (NoResonanceError, DegenerateFitError, ValueError, RuntimeError, np.linalg.LinAlgError)


class Output:
    """Writes files into the run directory with shared provenance lines."""

    def __init__(self, cfg: RunConfig, directory, command: str, plots: bool):
        self.cfg = cfg
        self.dir = Path(directory)
        self.command = command
        self.plots = plots and cfg["output"]["plots"]
        self.formats = set(cfg["output"]["formats"])
        self.written: list[Path] = []
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {self.dir}: {exc}") from exc
        probe = self.dir / ".write-test"
        try:
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise OSError(f"output directory {self.dir} is not writable: {exc}") from exc

    @property
    def meta(self):
        return {"command": self.command, "seed": self.cfg.seed, "config_hash": self.cfg.config_hash}

    def csv(self, name, columns, rows, force=False):
        if "csv" in self.formats or force:
            self.written.append(report.write_csv(self.dir / name, columns, rows, self.meta))

    def json(self, name, **blocks):
        if "json" in self.formats:
            obj = report.report(self.cfg.as_dict(), self.cfg.seed, self.cfg.config_hash, **blocks)
            obj["command"] = self.command
            self.written.append(report.write_json(self.dir / name, obj))

    def plot(self, func, name, *args, **kw):
        if self.plots:
            from . import plotting
            self.written.append(getattr(plotting, func)(*args, path=self.dir / name, **kw))


def _say(msg: str):
    print(msg, flush=True)


# ----------------------------------------------------------------- theory


def theory_table(cfg: RunConfig, c=None):
    osc, meas = cfg.oscillator(), cfg.measurement()
    if c is None:
        s = cfg["sweep"]
        c = np.geomspace(min(0.01, s["c_min"]), max(100.0, s["c_max"]), 241)
    ideal = model.imprecision_terms(c, 1.0, 0.0)
    corr = model.imprecision_terms(c, meas.epsilon_eff, osc.nu)
    return c, ideal, corr


def cmd_theory(cfg: RunConfig, out: Output) -> int:
    c, ideal, corr = theory_table(cfg)
    keys = ("shot", "back_action", "zero_point", "total")
    cols = ["c_om"] + [f"ideal_{k}" for k in keys] + [f"corrected_{k}" for k in keys] + ["s_ff_over_sql"]
    rows = [[c[i]] + [ideal[k][i] for k in keys] + [corr[k][i] for k in keys] + [corr["total"][i] / 2]
            for i in range(c.size)]
    out.csv("theory.csv", cols, rows)
    eps = cfg.measurement().epsilon_eff
    osc = cfg.oscillator()
    summary = {
        "epsilon_eff": eps,
        "optimal_cooperativity_ideal": 0.5,
        "optimal_cooperativity": model.optimal_cooperativity(eps),
        "min_over_sql": model.min_sensitivity(osc, eps, osc.nu) / model.sql_sensitivity(osc),
        "sql": model.sql_sensitivity(osc),
        "sql_yn2": model.to_yn2(model.sql_sensitivity(osc)),
        "min_sensitivity_yn2": model.to_yn2(model.min_sensitivity(osc, eps, osc.nu)),
        "acceleration_g_per_rthz": model.acceleration_sensitivity(osc, eps, osc.nu),
        "uncertainty_bound": model.uncertainty_bound(osc.nu, eps, cfg.measurement().tau, osc.gamma),
    }
    out.json("theory.json", sensitivity=[summary])
    out.plot("theory_curves", "theory.svg", c, ideal, corr)
    for k, v in summary.items():
        _say(f"{k}: {v:.6g}")
    return 0


# ------------------------------------------------------------------ sweep


def run_grid(cfg: RunConfig, grid, purpose: int, *, phase_space=False, keep_reps=False):
    """Run one synthesized point per cooperativity; failures are recorded, not raised."""
    results = []
    for i, c in enumerate(grid):
        scfg = cfg.synth_config(float(c), index=i, purpose=purpose)
        try:
            res = pipeline.run_point(scfg, off_resonant_psd=cfg["synthesis"]["off_resonant_psd"],
                                     phase_space=phase_space, keep_reps=keep_reps)
        except FIT_FAILURES as exc:
            log.warning("C_om=%g failed: %s", c, exc)
            res = None
            err = f"{type(exc).__name__}: {exc}"
        else:
            err = res.error
        ok = res is not None and res.fit.converged and res.sensitivity is not None and not err
        if ok:
            sp = res.sensitivity
            _say(f"C_om={c:.4g}: S_FF/SQL = {sp.s_ff_over_sql:.4g} +- {sp.s_ff_over_sql_sigma:.2g}")
        else:
            _say(f"C_om={c:.4g}: FAILED {err}")
        results.append((float(c), res, err, ok))
    return results


SWEEP_COLUMNS = ["c_om_set", "c_om_est", "c_om_est_sigma", "s_ff_over_sql", "s_ff_over_sql_sigma",
                 "s_ff_over_sql_sigma_fit", "theory_over_sql", "s_ff_abs", "s_ff_abs_sigma", "s_ff_abs_yn2",
                 "f_m_hz", "f_m_sigma_hz", "linewidth_hz", "linewidth_sigma_hz", "converged", "error"]


def sweep_rows(cfg: RunConfig, results):
    osc = cfg.oscillator()
    sql = model.sql_sensitivity(osc)
    for c, res, err, ok in results:
        theory = float(model.force_sensitivity(osc, cfg.measurement(c), osc.omega_m)) / sql
        if res is None or res.sensitivity is None:
            yield [c, None, None, None, None, None, theory, None, None, None, None, None, None, None,
                   bool(res is not None and res.fit.converged), err]
            continue
        sp, fit = res.sensitivity, res.fit
        coop = sp.cooperativity
        yield [c, None if coop is None else coop.value, None if coop is None else coop.sigma,
               sp.s_ff_over_sql, sp.s_ff_over_sql_sigma, sp.s_ff_over_sql_sigma_fit, theory,
               sp.s_ff_abs, sp.s_ff_abs_sigma, model.to_yn2(sp.s_ff_abs),
               hz(fit.model.omega_m), hz(fit.sigma("omega_m")), hz(fit.model.gamma), hz(fit.sigma("gamma")),
               fit.converged, err]


def cmd_sweep(cfg: RunConfig, out: Output) -> int:
    grid = cfg.sweep_grid()
    results = run_grid(cfg, grid, SWEEP)
    rows = list(sweep_rows(cfg, results))
    out.csv("sweep.csv", SWEEP_COLUMNS, rows)

    good = [(c, r) for c, r, _, ok in results if ok]
    fits = [report.fit_record(r.fit, c) for c, r in good]
    sens = [report.sensitivity_record(r.sensitivity, c) for c, r in good]
    out.json("sweep.json", fits=fits, sensitivity=sens)

    if good:
        # example fit at the point closest to C_om = 4
        c_ex, ex = min(good, key=lambda t: abs(np.log(t[0] / 4.0)))
        f = hz(ex.coherent.freqs)
        coh_model = ex.fit.model.coherent(ex.coherent.freqs)
        psd_model = ex.fit.model.psd(ex.psd.freqs)
        out.csv("fit_example.csv", ["f_hz", "re", "im", "re_model", "im_model", "psd", "psd_model"],
                zip(f, ex.coherent.values.real, ex.coherent.values.imag, coh_model.real, coh_model.imag,
                    ex.psd.values, psd_model))
        out.plot("fit_example", "fit_example.svg", f, ex.coherent.values, coh_model, ex.psd.values, psd_model)

        c_th, _, corr = theory_table(cfg)
        arr = np.array([[r[1] if r[1] is not None else np.nan, r[3], r[4]] for r in rows if r[3] is not None])
        out.plot("sweep", "sweep.svg", arr[:, 0], arr[:, 1], arr[:, 2], c_th, corr["total"] / 2,
                 c_set=np.array([r[0] for r in rows if r[3] is not None]))
        best = min(good, key=lambda t: t[1].sensitivity.s_ff_over_sql)[1].sensitivity
        coop = best.cooperativity
        _say(f"minimum S_FF/SQL = {best.s_ff_over_sql:.4g} +- {best.s_ff_over_sql_sigma:.2g}"
             + ("" if coop is None else f" at C_om = {coop.value:.3g} +- {coop.sigma:.2g}"))
    n_bad = sum(not ok for *_, ok in results)
    if n_bad:
        _say(f"{n_bad} of {len(results)} points failed")
    return 1 if n_bad else 0


# ------------------------------------------------------------------ phase


def spectrum_rows(cfg: RunConfig, results):
    osc = cfg.oscillator()
    for c, res, _, ok in results:
        if not ok:
            continue
        spec = analysis.sensitivity_spectrum(res.psd, res.fit)
        sigma = analysis.sensitivity_spectrum_sigma(res.psd, res.fit)
        theory = model.force_sensitivity(osc, cfg.measurement(c), spec.freqs)
        yield from ([c, f, s, e, t] for f, s, e, t in zip(hz(spec.freqs), spec.values, sigma, theory))


def cmd_phase(cfg: RunConfig, out: Output) -> int:
    phase_c = cfg["sweep"]["phase_cooperativities"]
    results = run_grid(cfg, phase_c, PHASE, phase_space=True, keep_reps="reps" in out.formats)
    osc = cfg.oscillator()
    summary, points, records, ensembles, labels = [], [], [], [], []
    for c, res, _, ok in results:
        if not ok or res.phase is None:
            continue
        ens = res.phase
        pred = analysis.predicted_product(osc, cfg.measurement(c), ens.bin_omega)
        e = ens.ellipse
        summary.append([c, ens.mean[0], ens.mean[1], e.rms[0], e.rms[1], e.radii[0], e.radii[1],
                        e.orientation, ens.product, ens.product_sigma, pred])
        points += [[c, i, z1, z2] for i, (z1, z2) in enumerate(ens.points)]
        records.append(report.phase_record(ens, c, pred))
        ensembles.append(ens)
        labels.append(f"$C_{{om}}$ = {c:g}")
        _say(f"C_om={c:g}: dZ1 dZ2 = {ens.product:.3f} +- {ens.product_sigma:.3f} (predicted {pred:.3f})")
        if res.reps is not None:
            out.csv(f"reps_c{c:g}.csv", ["rep", "f_hz", "re", "im"], report.repetition_rows(res.reps),
                    force=True)
    out.csv("phase_space.csv", ["c_om_set", "mean_z1", "mean_z2", "dz1", "dz2", "radius1", "radius2",
                                "orientation", "product", "product_sigma", "predicted_product"], summary)
    out.csv("phase_points.csv", ["c_om_set", "rep", "z1", "z2"], points)
    if ensembles:
        out.plot("phase_space", "phase_space.svg", ensembles, labels)

    spec_results = run_grid(cfg, cfg["sweep"]["spectrum_cooperativities"], SPECTRA)
    rows = list(spectrum_rows(cfg, spec_results))
    out.csv("sensitivity_spectra.csv", ["c_om_set", "f_hz", "s_ff", "s_ff_sigma", "s_ff_theory"], rows)
    if rows:
        arr = np.array(rows, dtype=float)
        curves = [(f"$C_{{om}}$ = {c:g}", arr[arr[:, 0] == c, 1], arr[arr[:, 0] == c, 2], arr[arr[:, 0] == c, 4])
                  for c in dict.fromkeys(arr[:, 0])]
        out.plot("sensitivity_spectra", "sensitivity_spectra.svg", curves)

    all_res = results + spec_results
    fits = [report.fit_record(r.fit, c) for c, r, _, ok in all_res if ok]
    sens = [report.sensitivity_record(r.sensitivity, c) for c, r, _, ok in all_res if ok]
    out.json("phase.json", fits=fits, sensitivity=sens, phase_space=records)
    return 0 if all(ok for *_, ok in all_res) else 1


# --------------------------------------------------------------- validate


def cmd_validate(cfg: RunConfig, out: Output) -> int:
    from . import validation
    scfg = cfg.synth_config(cfg["measurement"]["cooperativity"], purpose=VALIDATE)
    checks = validation.run_validation(scfg)
    for chk in checks:
        _say(chk.line())
    out.csv("validation.csv", ["check", "passed", "value", "tolerance", "detail"],
            [[c.name, c.passed, c.value, c.tolerance, c.detail] for c in checks])
    out.json("validation.json", validation=[c.__dict__ for c in checks])
    n_fail = sum(not c.passed for c in checks)
    _say(f"{len(checks) - n_fail}/{len(checks)} checks passed")
    return 1 if n_fail else 0


COMMANDS = {"theory": cmd_theory, "sweep": cmd_sweep, "phase": cmd_phase, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="yoctoforce",
                                     description="Simulate, fit and analyse optomechanical force sensing.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config file (defaults when omitted)")
    common.add_argument("--seed", type=int, help="RNG seed; overrides the config and $YF_SEED")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output.directory)")
    common.add_argument("--no-plots", action="store_true", help="skip SVG figures")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"theory": "closed-form force-noise curves versus cooperativity",
             "sweep": "simulated cooperativity sweep with joint fits",
             "phase": "phase-space ensembles and force-sensitivity spectra",
             "validate": "run the invariant suite"}
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        cfg = load(args.config, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        out = Output(cfg, args.out or cfg["output"]["directory"], args.command, plots=not args.no_plots)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    code = COMMANDS[args.command](cfg, out)
    for path in out.written:
        log.info("wrote %s", path)
    return code


if __name__ == "__main__":
    sys.exit(main())
