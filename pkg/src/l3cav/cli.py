"""Command-line entry point: ``l3cav <verb> ...``.

Verbs: ``modes``, ``optimize``, ``fit {voigt,decay,purcell,g2}``,
``stack-sweep`` and ``synth {spectrum,decay,hbt}``.  Every verb writes into
an output directory (``--out``) that ends up holding its results plus one
``manifest.json``.

Exit codes
----------
0  success
2  invalid input (unreadable file, schema mismatch, too little data)
3  solver failure (eigen-solver, optimiser)
4  fit did not converge (suppressed by ``--allow-nonconverged``)

Configuration
-------------
``--config FILE`` reads a flat ``key = value`` file (``#`` starts a
comment).  A value given as a flag wins over the file, which wins over the
built-in default.  Keys are listed in :data:`DEFAULTS`.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
import tempfile
import warnings
from importlib import metadata
from typing import Dict, List, Optional

import numpy as np

from . import fitkit, geometry, gme, inverse_design, photon_stats, stack, synth

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_CONVERGENCE = 0, 2, 3, 4
MANIFEST = "manifest.json"
MANIFEST_SCHEMA = 1

# key -> (type, default).  Every key may appear in a config file.
DEFAULTS: Dict[str, tuple] = {
    "g_cutoff": (float, 2.5),            # plane-wave cutoff, units of 2 pi / a
    "guided_orders": (int, 1),
    "max_basis": (int, 6000),
    "budget": (int, 200),
    "step": (float, 0.01),
    "bound_lo": (float, 0.85),
    "bound_hi": (float, 1.25),
    "rep_period_ns": (float, photon_stats.DEFAULT_REP_PERIOD_NS),
    "n_side_peaks": (int, 5),
    "irf_fwhm_ns": (float, 0.025),
    "n_samples": (int, 2001),
    "membrane_index": (float, 3.17),
    "substrate_index": (float, 3.17),
}


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# config, manifest and atomic output
# --------------------------------------------------------------------------

def read_config(path) -> Dict[str, object]:
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"config: {exc}")
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(EXIT_INPUT, f"{path}:{n}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise CliError(EXIT_INPUT, f"{path}:{n}: unknown key {key!r}")
        try:
            out[key] = DEFAULTS[key][0](val)
        except ValueError:
            raise CliError(EXIT_INPUT, f"{path}:{n}: bad value for {key}: {val!r}")
    return out


VERB_KEYS = {
    "modes": ["g_cutoff", "guided_orders", "max_basis"],
    "optimize": ["g_cutoff", "guided_orders", "max_basis", "budget", "step", "bound_lo", "bound_hi"],
    "fit": ["irf_fwhm_ns", "rep_period_ns", "n_side_peaks"],
    "stack-sweep": ["n_samples", "membrane_index", "substrate_index"],
    "synth": ["irf_fwhm_ns", "rep_period_ns", "n_side_peaks"],
}


def resolve(args, config) -> Dict[str, object]:
    """Effective settings for the chosen verb: flag, else config file, else default.

    Config keys that the verb does not use are ignored.
    """
    eff = {}
    for key in VERB_KEYS[args.verb]:
        flag = getattr(args, key, None)
        eff[key] = flag if flag is not None else config.get(key, DEFAULTS[key][1])
    return eff


def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def build_manifest(argv: List[str], args, settings, inputs: List[str]):
    return {
        "schema": MANIFEST_SCHEMA,
        "command": args.verb,
        "argv": list(argv),
        "config": settings,
        "inputs": {p: _sha256(p) for p in inputs},
        "tool_version": _version(),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "seed": args.seed,
    }


def manifest_argv(manifest) -> List[str]:
    """Argument vector that re-runs a manifest's command with its exact settings.

    The config snapshot is turned back into explicit flags, so no config
    file is needed.
    """
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise CliError(EXIT_INPUT, "unsupported manifest schema")
    argv = list(manifest["argv"])
    extra = []
    for key, val in sorted(manifest["config"].items()):
        extra += [f"--{key.replace('_', '-')}", repr(val) if isinstance(val, float) else str(val)]
    # global flags precede the verb; drop any config-file reference
    clean, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--config":
            skip = True
            continue
        if a.startswith("--config="):
            continue
        clean.append(a)
    if not any(a == "--seed" or a.startswith("--seed=") for a in clean):
        clean = ["--seed", str(manifest["seed"])] + clean
    return clean + extra


# --------------------------------------------------------------------------
# verbs
# --------------------------------------------------------------------------

def _basis(s):
    return gme.GmeBasis(g_cutoff=s["g_cutoff"], guided_orders=s["guided_orders"],
                        max_size=s["max_basis"])


def cmd_modes(args, s):
    base, design = geometry.load_geometry(args.geometry)
    lat = geometry.build_l3_supercell(base, design)
    basis = _basis(s)
    window = tuple(args.window) if args.window else None
    modes = gme.solve_modes(lat, basis, window, with_q=not args.no_q, with_volume=args.volume)
    loc = [gme.localization(m, lat) for m in modes]
    fund = gme.fundamental_mode(modes, lat)
    rep = gme.mode_report(modes)
    for r, l in zip(rep["modes"], loc):
        r["localization"] = round(float(l), 12)
    rep["fundamental_index"] = next(i for i, m in enumerate(modes) if m is fund)
    rep["basis"] = {"g_cutoff": basis.g_cutoff, "guided_orders": basis.guided_orders,
                    "size": basis.size(lat)}
    rep["period_a_nm"] = lat.period_a_nm
    write_json(os.path.join(args.out, "modes.json"), rep)
    if args.field_csv:
        tmp = os.path.join(args.out, ".field.csv.tmp")
        gme.write_field_csv(fund, lat, tmp)
        os.replace(tmp, os.path.join(args.out, "field.csv"))
    q = "n/a" if fund.q_factor is None else f"{fund.q_factor:.4g}"
    print(f"{len(modes)} modes in window; fundamental at {fund.wavelength_nm:.2f} nm, Q = {q}")
    return [args.geometry]


def cmd_optimize(args, s):
    base, design = geometry.load_geometry(args.geometry)
    trace_path = os.path.join(args.out, "trace.jsonl")
    if args.resume:
        if not os.path.exists(args.resume):
            raise CliError(EXIT_INPUT, f"trace file {args.resume} not found")
        if os.path.abspath(args.resume) != os.path.abspath(trace_path):
            atomic_write(trace_path, open(args.resume).read())
    bounds = [(s["bound_lo"], s["bound_hi"])] * len(inverse_design.PARAM_NAMES)
    best, trace = inverse_design.optimize_q(
        design, base, _basis(s), bounds=bounds, budget=s["budget"], seed=args.seed,
        step=s["step"], trace_path=trace_path, resume=bool(args.resume))
    write_json(os.path.join(args.out, "optimized_geometry.json"),
               geometry.geometry_to_dict(base, best))
    first, top = trace.iterations[0], trace.best()
    print(f"{len(trace.iterations) - 1} evaluations; Q {first.objective:.4g} -> {top.objective:.4g}")
    return [args.geometry] + ([args.resume] if args.resume else [])


def _check_converged(fit, args):
    if not fit.converged and not args.allow_nonconverged:
        raise CliError(EXIT_CONVERGENCE, "fit did not converge (use --allow-nonconverged to keep it)")


def cmd_fit(args, s):
    kind = args.kind
    if kind == "voigt":
        x, y = fitkit.read_csv(args.data, ["wavelength_nm", "counts"])
        fit = fitkit.fit_voigt(fitkit.Spectrum(x, y), n_peaks=args.n_peaks,
                               allow_nonconverged=args.allow_nonconverged)
        _check_converged(fit, args)
        out = fit.to_dict()
        for k, p in enumerate(fit.extras["peaks"]):
            print(f"peak {k}: {p['center_nm']:.4f} nm, FWHM {p['fwhm_nm']:.4f} nm, "
                  f"Q = {p['Q']:.1f} +/- {p['sigma_Q']:.1f}")
    elif kind == "decay":
        t, y = fitkit.read_csv(args.data, ["time_ns", "counts"])
        curve = fitkit.DecayCurve(t, y, s["irf_fwhm_ns"])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", fitkit.IdentifiabilityWarning)
            fit = fitkit.fit_decay(curve, n_exp=args.n_exp, fit_irf_spike=args.spike,
                                   allow_nonconverged=args.allow_nonconverged)
        _check_converged(fit, args)
        out = fit.to_dict()
        out["warnings"] = [str(w.message) for w in caught]
        print("lifetimes (ns): " + ", ".join(f"{v:.4f}" for v in fit.extras["lifetimes_ns"])
              + f"; reduced chi2 {fit.reduced_chi2:.3f}")
    elif kind == "purcell":
        d, tau = fitkit.read_csv(args.data, ["detuning_mev", "tau_ns"])
        fixed = {"q_factor": args.q_factor, "cavity_wavelength_nm": args.cavity_wavelength_nm,
                 "mode_volume": args.mode_volume, "tau_bulk_ns": args.tau_bulk_ns}
        fit = fitkit.fit_purcell(d, tau, fixed, sign=-1.0 if args.flip_detuning else 1.0)
        _check_converged(fit, args)
        out = fit.to_dict()
        eps = fit.params["epsilon"]
        print(f"epsilon = {eps:.4f} +/- {fit.sigmas['epsilon']:.4f}"
              + (" (at bound)" if fit.extras.get("at_bound") else ""))
    else:  # g2
        t, c = fitkit.read_csv(args.data, ["delay_ns", "coincidences"])
        hist = photon_stats.CorrelationHistogram(t, c, s["rep_period_ns"])
        res = photon_stats.g2_zero(hist, n_side=s["n_side_peaks"], label=args.temperature_label)
        out = res.to_dict()
        lab = f"[{args.temperature_label}] " if args.temperature_label else ""
        print(f"{lab}g2(0) = {res.g2:.4f} +/- {res.sigma:.4f} "
              f"(counting: +/- {res.sigma_poisson:.4f}); peaks used {res.used_peaks}")
    out["kind"] = kind
    write_json(os.path.join(args.out, f"fit_{kind}.json"), out)
    return [args.data]


def cmd_stack_sweep(args, s):
    if args.stack:
        st = stack.load_stack(args.stack)
    else:
        st = stack.membrane_stack(n_membrane=s["membrane_index"], n_substrate=s["substrate_index"])
    res = stack.extraction_vs_gap(st, args.gap_range, args.wavelength_nm, s["n_samples"])
    tmp = os.path.join(args.out, ".enhancement.csv.tmp")
    res.to_csv(tmp)
    os.replace(tmp, os.path.join(args.out, "enhancement.csv"))
    write_json(os.path.join(args.out, "maxima.json"),
               {"schema": 1, "wavelength_nm": args.wavelength_nm, "maxima_gap_nm": res.maxima_nm})
    print("maxima (gap nm): " + (", ".join(f"{m:.1f}" for m in res.maxima_nm) or "none"))
    return [args.stack] if args.stack else []


def cmd_synth(args, s):
    cfg = synth.SynthConfig(seed=args.seed, noise=args.noise, counts_scale=args.counts_scale)
    path = os.path.join(args.out, f"{args.kind}.csv")
    tmp = path + ".tmp"
    if args.kind == "spectrum":
        x = np.linspace(args.center_nm - 2, args.center_nm + 2, 801)
        fwhm = args.center_nm / args.q_factor
        gamma = fitkit.voigt_gamma_for_fwhm(fwhm, args.sigma_nm)
        peaks = [{"center_nm": args.center_nm, "sigma_nm": args.sigma_nm, "gamma_nm": gamma,
                  "height": args.height}]
        sp = synth.gen_spectrum(peaks, args.baseline, x, cfg)
        synth.write_csv(tmp, ["wavelength_nm", "counts"], [sp.wavelength_nm, sp.counts],
                        {"q_factor": args.q_factor, **{k: repr(v) for k, v in peaks[0].items()},
                         "baseline": args.baseline}, cfg)
    elif args.kind == "decay":
        t = np.arange(0.0, 12.0, 0.004)
        cur = synth.gen_decay(args.lifetimes, args.amplitudes, s["irf_fwhm_ns"], args.spike_height,
                              cfg, t, background=args.baseline)
        synth.write_csv(tmp, ["time_ns", "counts"], [cur.time_ns, cur.counts],
                        {"lifetimes_ns": args.lifetimes, "amplitudes": args.amplitudes,
                         "irf_fwhm_ns": s["irf_fwhm_ns"], "spike": args.spike_height,
                         "background": args.baseline}, cfg)
    else:
        shape = synth.PeakShape(side_area=args.side_area, background=args.baseline)
        h = synth.gen_hbt(args.g2_true, shape, s["n_side_peaks"], cfg, s["rep_period_ns"])
        synth.write_csv(tmp, ["delay_ns", "coincidences"], [h.delay_ns, h.coincidences],
                        {"g2_true": args.g2_true, "rep_period_ns": s["rep_period_ns"],
                         "side_area": args.side_area, "background": args.baseline}, cfg)
    os.replace(tmp, path)
    print(f"wrote {path}")
    return []


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _cfg_flags(p, keys):
    for k in keys:
        typ, default = DEFAULTS[k]
        p.add_argument(f"--{k.replace('_', '-')}", dest=k, type=typ, default=None,
                       help=f"(config key {k}; default {default})")


def build_parser():
    ap = argparse.ArgumentParser(prog="l3cav", description="L3 cavity design and data analysis")
    ap.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    ap.add_argument("--config", help="flat key = value settings file")
    sub = ap.add_subparsers(dest="verb", required=True)

    def verb(name, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        return p

    p = verb("modes", help="cavity modes of a geometry file")
    p.add_argument("geometry")
    p.add_argument("--window", nargs=2, type=float, metavar=("LO", "HI"),
                   help="a/lambda search window (default: photonic band gap)")
    p.add_argument("--no-q", action="store_true", help="skip radiative Q")
    p.add_argument("--volume", action="store_true", help="compute mode volumes")
    p.add_argument("--field-csv", action="store_true", help="write the fundamental's field slice")
    _cfg_flags(p, VERB_KEYS["modes"])
    p.set_defaults(func=cmd_modes)

    p = verb("optimize", help="maximise the fundamental-mode Q over hole shifts")
    p.add_argument("geometry")
    p.add_argument("--resume", metavar="TRACE", help="continue from a trace file")
    _cfg_flags(p, VERB_KEYS["optimize"])
    p.set_defaults(func=cmd_optimize)

    p = verb("fit", help="fit measured or synthetic data")
    p.add_argument("kind", choices=["voigt", "decay", "purcell", "g2"])
    p.add_argument("data", help="CSV file")
    p.add_argument("--allow-nonconverged", action="store_true")
    p.add_argument("--n-peaks", type=int, default=1)
    p.add_argument("--n-exp", type=int, default=1)
    p.add_argument("--spike", action="store_true", help="decay: fit an IRF-shaped spike")
    p.add_argument("--q-factor", type=float, default=5704.0)
    p.add_argument("--cavity-wavelength-nm", type=float, default=1550.0)
    p.add_argument("--mode-volume", type=float, default=0.8, help="(lambda/n)^3")
    p.add_argument("--tau-bulk-ns", type=float, default=1.78)
    p.add_argument("--flip-detuning", action="store_true",
                   help="treat positive detuning as emitter red of the cavity")
    p.add_argument("--temperature-label", help="label carried into the g2 report")
    _cfg_flags(p, VERB_KEYS["fit"])
    p.set_defaults(func=cmd_fit)

    p = verb("stack-sweep", help="extraction enhancement versus gap thickness")
    p.add_argument("--stack", help="stack JSON (default: suspended membrane over air gap)")
    p.add_argument("--gap-range", nargs=2, type=float, default=[200.0, 3000.0], metavar=("A", "B"))
    p.add_argument("--wavelength-nm", type=float, default=1550.0)
    _cfg_flags(p, VERB_KEYS["stack-sweep"])
    p.set_defaults(func=cmd_stack_sweep)

    p = verb("synth", help="write a seeded synthetic data set")
    p.add_argument("kind", choices=["spectrum", "decay", "hbt"])
    p.add_argument("--noise", choices=["poisson", "none"], default="poisson")
    p.add_argument("--counts-scale", type=float, default=1.0)
    p.add_argument("--baseline", type=float, default=0.0)
    p.add_argument("--center-nm", type=float, default=1550.0)
    p.add_argument("--q-factor", type=float, default=5704.0)
    p.add_argument("--sigma-nm", type=float, default=0.05)
    p.add_argument("--height", type=float, default=1e4)
    p.add_argument("--lifetimes", type=float, nargs="+", default=[1.78])
    p.add_argument("--amplitudes", type=float, nargs="+", default=[1e4])
    p.add_argument("--spike-height", type=float, default=0.0)
    p.add_argument("--g2-true", type=float, default=0.164)
    p.add_argument("--side-area", type=float, default=5000.0)
    _cfg_flags(p, VERB_KEYS["synth"])
    p.set_defaults(func=cmd_synth)
    return ap


_INPUT_ERRORS = (geometry.GeometryError, stack.StackError, fitkit.SchemaError,
                 fitkit.InsufficientDataError, fitkit.DegenerateDataError,
                 photon_stats.SpanError, FileNotFoundError, ValueError)


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        config = read_config(args.config) if args.config else {}
        settings = resolve(args, config)
        os.makedirs(args.out, exist_ok=True)
        inputs = args.func(args, settings)
        write_json(os.path.join(args.out, MANIFEST), build_manifest(argv, args, settings, inputs))
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except fitkit.ConvergenceError as exc:
        print(f"error: fit did not converge: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (gme.GmeError, inverse_design.OptimizationError, np.linalg.LinAlgError) as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except _INPUT_ERRORS as exc:
        print(f"error: invalid input: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
