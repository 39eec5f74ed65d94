"""Command-line entry point.

Subcommands: ``simulate`` produces PTTG tag streams plus a manifest;
``analyze`` hosts the derived analyses (correlate, counts, tomo, gate-scan,
charge-sweep, fss-fit, stats). Exit codes: 0 success, 2 invalid input,
3 estimation failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import analysis, charge, correlate, polarization as pol, simulate, svgplot, tomography
from .errors import DataFormatError, EstimationError, InvalidInputError
from .pttg import read_pttg, write_pttg

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ESTIMATION = 3
EXIT_IO = 4


def _error_json(kind, exc):
    doc = {"error": kind, "message": str(exc)}
    if isinstance(exc, DataFormatError):
        doc["file"] = exc.path
        doc["offset"] = exc.offset
    print(json.dumps(doc), file=sys.stderr)


def _load_config_section(path, section):
    """key=value config with [sections]; returns the section as a flat dict."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_string(fh.read())
    except OSError as exc:
        raise DataFormatError(f"cannot read config: {exc}", path=str(path)) from exc
    except configparser.Error as exc:
        raise InvalidInputError(f"malformed config file: {exc}") from exc
    if not parser.has_section(section):
        return {}
    return dict(parser.items(section))


def _apply_config_defaults(args, parser_defaults, config):
    """Config values fill in wherever the flag was left at its default."""
    for key, value in config.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise InvalidInputError(f"unknown config key {key!r}")
        if getattr(args, attr) == parser_defaults.get(attr):
            current = parser_defaults.get(attr)
            if isinstance(current, bool):
                value = value.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
            setattr(args, attr, value)
    return args


def _write_text(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise DataFormatError(f"cannot write {path}: {exc}", path=str(path)) from exc


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args):
    if args.cycles < 1:
        raise InvalidInputError("--cycles must be >= 1")
    if args.settings not in simulate.SETTING_PRESETS:
        raise InvalidInputError(f"unknown settings preset {args.settings!r}; "
                                f"choose from {sorted(simulate.SETTING_PRESETS)}")
    config = simulate.EmitterConfig(
        fss_uev=args.fss,
        t_xx_ns=args.lifetime_xx,
        t_x_ns=args.lifetime_x,
        rep_period_ns=args.rep_period,
        pulsed=not args.cw,
        electron_capture_rate=args.capture_rate_e,
        hole_capture_rate=args.capture_rate_h,
        background_beta=args.beta,
        detector_efficiency=(args.efficiency,) * 4,
        dark_rate=(args.dark_rate,) * 4,
        jitter_sigma_ns=args.jitter,
        spectral_leak_prob=args.leak,
        seed=args.seed,
    )
    settings = simulate.SETTING_PRESETS[args.settings]()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    streams = simulate.run_experiment(config, settings, args.cycles, workers=args.workers)
    config_doc = asdict(config)
    manifest = {
        "config": config_doc,
        "config_hash": hashlib.sha256(
            json.dumps(config_doc, sort_keys=True).encode()).hexdigest(),
        "seed": args.seed,
        "cycles": args.cycles,
        "settings_preset": args.settings,
        "settings": [],
    }
    for setting in settings:
        stream = streams[setting.setting_id]
        name = f"setting_{setting.setting_id:02d}_{setting.xx_basis}{setting.x_basis}.pttg"
        write_pttg(out_dir / name, stream)
        manifest["settings"].append({
            "setting_id": setting.setting_id,
            "xx_basis": setting.xx_basis,
            "x_basis": setting.x_basis,
            "file": name,
            "n_tags": len(stream),
        })
    _write_text(out_dir / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze subcommands


def _read_manifest(path):
    try:
        doc = json.loads(Path(path).read_text())
        settings = [simulate.AnalyzerSetting(e["xx_basis"], e["x_basis"],
                                             setting_id=e["setting_id"])
                    for e in doc["settings"]]
        files = {e["setting_id"]: Path(path).parent / e["file"] for e in doc["settings"]}
    except OSError as exc:
        raise DataFormatError(f"cannot read manifest: {exc}", path=str(path)) from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed manifest: {exc}") from exc
    return doc, settings, files


def cmd_correlate(args):
    stream = read_pttg(args.input)
    tau_min = int(round(args.tau_min_ns * 1000))
    tau_max = int(round(args.tau_max_ns * 1000))
    hist = correlate.cross_correlate(stream, args.ch_a, args.ch_b,
                                     args.bin_width_ps, (tau_min, tau_max))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "histogram.csv", hist.to_csv())
    _write_text(out / "histogram.json", hist.to_json())
    if args.normalize != "none":
        rep = int(round(args.rep_period_ns * 1000)) if args.rep_period_ns else None
        curve = correlate.normalize_g2(hist, args.normalize, rep_period_ps=rep)
        lines = ["tau_ps,g2"] + [f"{int(t)},{g:.9g}" for t, g in zip(curve.tau_ps, curve.g2)]
        _write_text(out / "g2.csv", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_counts(args):
    _, settings, files = _read_manifest(args.manifest)
    streams = {sid: read_pttg(f) for sid, f in files.items()}
    window_ps = int(round(args.window_ns * 1000))
    table = correlate.coincidence_counts(streams, settings, window_ps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "counts.json", table.to_json())
    _write_text(out / "counts.csv", table.to_csv())
    return EXIT_OK


def _load_counts(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataFormatError(f"cannot read counts: {exc}", path=str(path)) from exc
    if str(path).endswith(".csv"):
        return correlate.CountsTable.from_csv(text)
    return correlate.CountsTable.from_json(text)


def cmd_tomo(args):
    table = _load_counts(args.counts)
    if args.method == "mle":
        result = tomography.mle_reconstruct(table)
    elif args.method == "linear":
        result = tomography.linear_reconstruct(table)
    else:
        raise InvalidInputError(f"unknown method {args.method!r}")
    target = pol.cascade_ket(0.0, 0.0)
    boot = None
    if args.bootstrap:
        boot = tomography.bootstrap_uncertainty(table, args.bootstrap, target,
                                                seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "rho.json", pol.rho_to_json(result.rho))
    _write_text(out / "report.json",
                tomography.report_json(result, target=target, bootstrap=boot,
                                       window_ps=table.window_ps))
    return EXIT_OK


def cmd_gate_scan(args):
    gates = np.array([float(g) for g in args.gates.split(",")])
    scan = analysis.gate_scan(args.fss, args.lifetime_x, gates, args.beta)
    _write_text(args.out, scan.to_csv())
    return EXIT_OK


def cmd_charge_sweep(args):
    pump = charge.PumpConfig(primary_power=args.p1, secondary_power=args.p2,
                             k_e=args.k_e, k_h_primary=args.k_h_primary,
                             k_h_secondary=args.k_h_secondary)
    radiative = charge.RadiativeRates()
    grid = np.logspace(np.log10(args.grid_min), np.log10(args.grid_max), args.grid_points)
    table = charge.pump_sweep(pump, args.axis, grid, radiative)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "sweep.csv", table.to_csv())
    svg = svgplot.line_plot(
        [(line, table.powers, table.intensities[line]) for line in charge.LINES],
        title=f"line intensities vs {args.axis} pump",
        x_label=f"{args.axis} power (arb. units, log)", y_label="intensity (photons/ns)",
        log_x=True)
    _write_text(out / "sweep.svg", svg)
    return EXIT_OK


def cmd_fss_fit(args):
    try:
        text = Path(args.input).read_text()
    except OSError as exc:
        raise DataFormatError(f"cannot read series: {exc}", path=str(args.input)) from exc
    series = analysis.PolarizationSeries.from_csv(text)
    fit = analysis.fit_fss(series, antiphase=not args.same_phase)
    doc = {"fss_uev": fit.fss_uev, "fss_sigma_uev": fit.fss_sigma_uev,
           "axis_angle_deg": fit.axis_angle_deg, "residual_rms_uev": fit.residual_rms_uev,
           "ok": fit.ok}
    text = json.dumps(doc, indent=2)
    if args.out:
        _write_text(args.out, text)
    else:
        print(text)
    return EXIT_OK


def cmd_stats(args):
    try:
        text = Path(args.input).read_text()
    except OSError as exc:
        raise DataFormatError(f"cannot read records: {exc}", path=str(args.input)) from exc
    records = analysis.read_sample_records(text)
    stats = analysis.group_stats(records, min_count=args.min_count)
    out_text = analysis.group_stats_csv(stats)
    if args.out:
        _write_text(args.out, out_text)
    else:
        print(out_text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="qdcascade",
                                     description="Entangled-photon cascade simulator and analysis toolkit")
    parser.add_argument("--config", help="key=value config file; the section named "
                                         "after the subcommand provides defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate PTTG tag streams")
    sim.add_argument("--fss", type=float, default=0.0, help="fine-structure splitting, ueV")
    sim.add_argument("--lifetime-x", type=float, default=1.0, help="exciton lifetime, ns")
    sim.add_argument("--lifetime-xx", type=float, default=0.5, help="biexciton lifetime, ns")
    sim.add_argument("--rep-period", type=float, default=12.5)
    sim.add_argument("--cw", action="store_true", help="continuous-wave excitation")
    sim.add_argument("--cycles", type=int, default=100000)
    sim.add_argument("--settings", default="bases3",
                     help="analyzer preset: bases3 or tomo36")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--beta", type=float, default=0.0, help="background fraction")
    sim.add_argument("--efficiency", type=float, default=1.0)
    sim.add_argument("--dark-rate", type=float, default=0.0, help="counts/ns per channel")
    sim.add_argument("--jitter", type=float, default=0.0, help="timing jitter sigma, ns")
    sim.add_argument("--capture-rate-e", type=float, default=0.0)
    sim.add_argument("--capture-rate-h", type=float, default=0.0)
    sim.add_argument("--leak", type=float, default=0.0, help="trion spectral-leak probability")
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--out", default="out")
    sim.set_defaults(func=cmd_simulate, section="simulate")

    ana = sub.add_parser("analyze", help="derived analyses")
    ana_sub = ana.add_subparsers(dest="subcommand", required=True)

    cor = ana_sub.add_parser("correlate", help="cross-correlation histogram / g2")
    cor.add_argument("--input", required=True, help="PTTG stream")
    cor.add_argument("--ch-a", type=int, default=0)
    cor.add_argument("--ch-b", type=int, default=2)
    cor.add_argument("--bin-width-ps", type=int, default=100)
    cor.add_argument("--tau-min-ns", type=float, default=-50.0)
    cor.add_argument("--tau-max-ns", type=float, default=50.0)
    cor.add_argument("--normalize", default="none", choices=("none", "cw", "pulsed"))
    cor.add_argument("--rep-period-ns", type=float, default=None)
    cor.add_argument("--out", default="out")
    cor.set_defaults(func=cmd_correlate, section="correlate")

    cnt = ana_sub.add_parser("counts", help="coincidence counts table from streams")
    cnt.add_argument("--manifest", required=True)
    cnt.add_argument("--window-ns", type=float, default=1.0)
    cnt.add_argument("--out", default="out")
    cnt.set_defaults(func=cmd_counts, section="counts")

    tomo = ana_sub.add_parser("tomo", help="density-matrix reconstruction")
    tomo.add_argument("--counts", required=True, help="counts table JSON or CSV")
    tomo.add_argument("--method", default="mle", choices=("mle", "linear"))
    tomo.add_argument("--bootstrap", type=int, default=0,
                      help="number of Poisson resamples for the fidelity error bar")
    tomo.add_argument("--seed", type=int, default=0)
    tomo.add_argument("--out", default="out")
    tomo.set_defaults(func=cmd_tomo, section="tomo")

    gate = ana_sub.add_parser("gate-scan", help="fidelity/retention vs gate width")
    gate.add_argument("--fss", type=float, required=True)
    gate.add_argument("--lifetime-x", type=float, default=1.0)
    gate.add_argument("--beta", type=float, default=0.0)
    gate.add_argument("--gates", default="0.25,0.5,1,2,3,5,10",
                      help="comma-separated gate widths, ns")
    gate.add_argument("--out", default="gate_scan.csv")
    gate.set_defaults(func=cmd_gate_scan, section="gate-scan")

    sweep = ana_sub.add_parser("charge-sweep", help="line intensities vs pump power")
    sweep.add_argument("--axis", default="secondary", choices=("primary", "secondary"))
    sweep.add_argument("--p1", type=float, default=1.0)
    sweep.add_argument("--p2", type=float, default=0.0)
    sweep.add_argument("--k-e", type=float, default=1.0)
    sweep.add_argument("--k-h-primary", type=float, default=0.1)
    sweep.add_argument("--k-h-secondary", type=float, default=1.0)
    sweep.add_argument("--grid-min", type=float, default=0.01)
    sweep.add_argument("--grid-max", type=float, default=100.0)
    sweep.add_argument("--grid-points", type=int, default=41)
    sweep.add_argument("--out", default="out")
    sweep.set_defaults(func=cmd_charge_sweep, section="charge-sweep")

    fss = ana_sub.add_parser("fss-fit", help="fine-structure splitting from a peak series")
    fss.add_argument("--input", required=True, help="series CSV")
    fss.add_argument("--same-phase", action="store_true",
                     help="fit X and XX oscillating in phase instead of anti-phase")
    fss.add_argument("--out", default=None)
    fss.set_defaults(func=cmd_fss_fit, section="fss-fit")

    stats = ana_sub.add_parser("stats", help="per-sample FSS statistics")
    stats.add_argument("input", help="SampleRecord CSV")
    stats.add_argument("--min-count", type=int, default=2)
    stats.add_argument("--out", default=None)
    stats.set_defaults(func=cmd_stats, section="stats")

    return parser


def _collect_defaults(parser, out=None):
    out = {} if out is None else out
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for child in action.choices.values():
                _collect_defaults(child, out)
        elif action.dest != "help":
            out[action.dest] = action.default
    return out


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            section = getattr(args, "section", args.command)
            config = _load_config_section(args.config, section)
            _apply_config_defaults(args, _collect_defaults(parser), config)
        return args.func(args)
    except InvalidInputError as exc:
        _error_json("invalid-input", exc)
        return EXIT_INVALID
    except EstimationError as exc:
        _error_json("estimation-failure", exc)
        return EXIT_ESTIMATION
    except (DataFormatError, OSError) as exc:
        _error_json("io-error", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
