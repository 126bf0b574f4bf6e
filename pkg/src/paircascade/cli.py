"""Command-line entry point ``paircascade``.

Exit codes: 0 success, 2 bad input or validation failure, 3 numerical
non-convergence (artifacts are still written).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, metrics, scenario
from .coincidence import (
    DEFAULT_REP_PERIOD,
    Binning,
    CoincidenceHistogram,
    TimeTagStream,
    correlate,
    expected_histogram,
    g2_autocorrelation,
    g2_center_ratio,
    postselect_counts,
    sample_stream,
)
from .cascade import oscillation_period
from .fitting import fit_damped_cosine, fit_fss_oscillation, fit_fss_pair, fit_lorentzian
from .io import (
    ConfigError,
    angle_series_from_csv,
    density_from_json,
    density_to_json,
    format_config,
    parse_config,
    sha256_text,
    spectrum_from_csv,
    tomography_from_csv,
    tomography_to_csv,
    write_text,
)
from .polarization import AnalyzerSetting, canonical_setting
from .tomography import STANDARD_LABELS, MLEOptions, TomographyInput, error_bars, mle_reconstruct

OUTPUT_DIR_ENV = "PAIRCASCADE_OUTPUT_DIR"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3


class InputError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _out_dir(arg: str | None) -> Path:
    path = arg or os.environ.get(OUTPUT_DIR_ENV) or "."
    return Path(path)


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _emit(text: str, out: str | None) -> None:
    if out:
        write_text(Path(out), text)
    else:
        sys.stdout.write(text)


# -- simulate ----------------------------------------------------------------


def _load_settings(args) -> list[tuple[AnalyzerSetting, AnalyzerSetting]]:
    if args.settings and args.labels:
        raise InputError("use either --settings or --labels, not both")
    if args.labels:
        pairs = []
        for lab in args.labels.split(","):
            lab = lab.strip()
            if len(lab) != 2:
                raise InputError(f"setting label {lab!r} must be two characters, e.g. RR")
            pairs.append((canonical_setting(lab[0]), canonical_setting(lab[1])))
        return pairs
    if args.settings:
        try:
            data = json.loads(_read(args.settings))
            return [(AnalyzerSetting.from_record(d["xx"]), AnalyzerSetting.from_record(d["x"])) for d in data]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InputError(f"malformed settings file: {exc}") from None
    return [(canonical_setting(l[0]), canonical_setting(l[1])) for l in STANDARD_LABELS]


def _setting_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def cmd_simulate(args) -> int:
    cfg_text = _read(args.config)
    cfg = parse_config(cfg_text)
    mode = args.mode or cfg.mode
    settings = _load_settings(args)
    out = _out_dir(args.out)
    for i, j in cfg.window_overlaps():
        print(f"warning: windows {i} and {j} overlap", file=sys.stderr)

    seeds = _setting_seeds(cfg.seed, len(settings))
    outputs = {}
    hists: dict[str, dict[str, CoincidenceHistogram]] = {"expected": {}, "sampled": {}}
    for k, ((sxx, sx), s_seed) in enumerate(zip(settings, seeds)):
        label = f"{sxx.label or '?'}{sx.label or '?'}"
        stem = f"hist_{k:02d}_{label}"
        if mode in ("expected", "both"):
            h = expected_histogram(cfg.cascade, cfg.detector, sxx, sx, cfg.pairs_emitted, cfg.binning, cfg.rep_period)
            outputs[f"{stem}_expected.csv"] = write_text(out / f"{stem}_expected.csv", h.to_csv())
            hists["expected"][label] = h
        if mode in ("sampled", "both"):
            stream = sample_stream(cfg.cascade, cfg.detector, sxx, sx, cfg.rep_period, cfg.n_pulses, s_seed)
            h = correlate(stream, cfg.binning)
            outputs[f"{stem}_sampled.csv"] = write_text(out / f"{stem}_sampled.csv", h.to_csv())
            hists["sampled"][label] = h

    labels = [f"{a.label}{b.label}" for a, b in settings]
    if cfg.windows and sorted(labels) == sorted(STANDARD_LABELS):
        for kind, by_label in hists.items():
            if not by_label:
                continue
            for w, (start, width) in enumerate(cfg.windows, start=1):
                counts = [postselect_counts(by_label[l], start, width) for l in STANDARD_LABELS]
                inp = TomographyInput.from_labels(STANDARD_LABELS, counts, f"window {start}+{width} ps, {kind}")
                name = f"window{w}_{kind}_counts.csv"
                outputs[name] = write_text(out / name, tomography_to_csv(inp))

    manifest = {
        "tool": "paircascade",
        "version": __version__,
        "command": "simulate",
        "config": cfg.to_flat(),
        "config_sha256": sha256_text(format_config(cfg)),
        "config_file_sha256": sha256_text(cfg_text),
        "seed": cfg.seed,
        "mode": mode,
        "settings": [{"xx": a.to_record(), "x": b.to_record(), "seed": s} for (a, b), s in zip(settings, seeds)],
        "outputs": outputs,
    }
    write_text(out / "manifest.json", _dump(manifest))
    return EXIT_OK


# -- tomography and metrics --------------------------------------------------


def _references(names: list[str] | None, thetas_deg: list[float] | None) -> dict[str, np.ndarray]:
    refs = {}
    for name in names or []:
        refs[name.lower()] = metrics.bell_state(name)
    for t in thetas_deg or []:
        refs[f"theta={t:g}deg"] = metrics.phase_reference_state(math.radians(t))
    if not refs:
        refs = {k: v.copy() for k, v in metrics.BELL_STATES.items()}
    return refs


def metric_report(rho, refs: dict[str, np.ndarray]) -> dict:
    theta, f_best = metrics.best_phase_reference(rho)
    return {
        "fidelity": {name: metrics.fidelity_to_pure(rho, psi) for name, psi in refs.items()},
        "concurrence": metrics.concurrence(rho),
        "purity": metrics.purity(rho),
        "best_phase_reference": {"theta_deg": math.degrees(theta), "fidelity": f_best},
    }


def cmd_tomo(args) -> int:
    try:
        inp = tomography_from_csv(_read(args.counts), note=args.counts)
    except ValueError as exc:
        raise InputError(f"{args.counts}: {exc}") from None
    refs = _references(args.reference, args.theta)
    rho, fit = mle_reconstruct(inp, MLEOptions(seed=args.seed))
    report = {"fit_report": fit.to_dict(), "metrics": metric_report(rho, refs)}
    if args.error_bars:
        report["error_bars"] = error_bars(inp, args.error_bars, seed=args.seed, references=refs)
    out = _out_dir(args.out)
    write_text(out / "rho.json", density_to_json(rho))
    write_text(out / "report.json", _dump(report))
    if not fit.converged:
        print(f"MLE did not converge: {fit.message}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_metrics(args) -> int:
    try:
        rho = density_from_json(_read(args.rho))
    except ValueError as exc:
        raise InputError(f"{args.rho}: {exc}") from None
    _emit(_dump(metric_report(rho, _references(args.reference, args.theta))), args.out)
    return EXIT_OK


# -- fits ------------------------------------------------------------------------


def _fit_exit(res, out: str | None) -> int:
    _emit(_dump(res.to_dict()), out)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_fit_line(args) -> int:
    spec = spectrum_from_csv(_read(args.data))
    if args.to_energy:
        spec = spec.to_energy()
    return _fit_exit(fit_lorentzian(spec), args.out)


def cmd_fit_fss(args) -> int:
    theta, energy = angle_series_from_csv(_read(args.data))
    if args.xx:
        theta_xx, energy_xx = angle_series_from_csv(_read(args.xx))
        res = fit_fss_pair(theta, energy, theta_xx, energy_xx)
    else:
        res = fit_fss_oscillation(theta, energy, with_qwp=not args.no_qwp)
    return _fit_exit(res, args.out)


def cmd_fit_osc(args) -> int:
    hist = CoincidenceHistogram.from_csv(_read(args.data))
    guess = None
    if args.period_guess:
        guess = {"period": args.period_guess}
    res = fit_damped_cosine(hist, initial_guess=guess, fit_range=tuple(args.range) if args.range else None)
    return _fit_exit(res, args.out)


# -- g2 ---------------------------------------------------------------------------


def g2_binning(rep_period: float, n_side: int, bin_width: float) -> Binning:
    span = (2 * n_side + 1) * rep_period
    return Binning(bin_width, -(n_side + 0.5) * rep_period, int(math.ceil(span / bin_width)))


def cmd_g2(args) -> int:
    stream = TimeTagStream.from_csv(_read(args.stream))
    if stream.times.size == 0:
        raise InputError(f"{args.stream}: stream holds no events")
    binning = g2_binning(args.rep_period, args.n_side, args.bin_width)
    hist = g2_autocorrelation(stream, args.rep_period, binning, channel=args.channel)
    ratio = g2_center_ratio(hist, args.rep_period)
    out = _out_dir(args.out)
    write_text(out / "g2_histogram.csv", hist.to_csv())
    write_text(out / "g2.json", _dump({"center_ratio": ratio, "rep_period_ps": args.rep_period, "n_events": int(stream.times.size)}))
    print(f"g2(0) center-peak ratio: {ratio:.4f}")
    return EXIT_OK


# -- reproduce-paper ------------------------------------------------------------


def _entry(value, target, lo=None, hi=None, stderr=None) -> dict:
    e = {"value": value, "target": target}
    if stderr is not None:
        e["stderr"] = stderr
    if lo is not None or hi is not None:
        lo = -math.inf if lo is None else lo
        hi = math.inf if hi is None else hi
        e["within_target"] = bool(lo <= value <= hi)
    return e


def reproduce(out: Path, seed: int = 0, n_resamples: int = 100) -> dict:
    """Run the calibrated scenario end to end and write all artifacts to ``out``."""
    params = scenario.calibrated_params()
    det = scenario.scenario_detector()
    seeds = _setting_seeds(seed, 8)
    report: dict = {"seed": seed, "params": params.to_dict(), "irf_fwhm_ps": det.irf_fwhm}

    # delay oscillations in RR and DD
    binning = Binning(4.0, -200.0, 600)
    fit_range = scenario.OSC_FIT_RANGE_PS
    osc = {}
    for k, lab in enumerate(("RR", "DD")):
        h = expected_histogram(params, det, canonical_setting(lab[0]), canonical_setting(lab[1]), 1e6, binning)
        sampled = CoincidenceHistogram(h.bin_width, h.bin_start, np.random.default_rng(seeds[k]).poisson(h.counts), lab)
        write_text(out / f"hist_{lab}.csv", sampled.to_csv())
        osc[lab] = fit_damped_cosine(sampled, fit_range=fit_range)
    rr, dd = osc["RR"], osc["DD"]
    dphi = math.degrees(abs(math.remainder(rr.params["phase"] - dd.params["phase"], 2 * math.pi)))
    report["oscillation"] = {
        "fit_range_ps": list(fit_range),
        "period_RR_ps": _entry(rr.params["period"], "225(5)", 225.0, 235.0, rr.stderr and rr.stderr["period"]),
        "period_DD_ps": _entry(dd.params["period"], "225(5)", 225.0, 235.0, dd.stderr and dd.stderr["period"]),
        "period_from_fss_ps": _entry(oscillation_period(params.fss_S), "230(12)"),
        "phase_difference_deg": _entry(dphi, "180", 175.0, 185.0),
    }

    # FSS from waveplate-angle series of X and XX line centres
    rng = np.random.default_rng(seeds[2])
    theta = np.radians(np.arange(0.0, 181.0, 10.0))
    e_x = 1.3549e6 + 0.5 * params.fss_S * np.cos(4 * theta) + rng.normal(0, 1.0, theta.size)
    e_xx = 1.3514e6 - 0.5 * params.fss_S * np.cos(4 * theta) + rng.normal(0, 1.0, theta.size)
    fss = fit_fss_pair(theta, e_x, theta, e_xx)
    report["fss"] = {"S_ueV": _entry(fss.params["S"], "18(1)", 17.0, 19.0, fss.stderr and fss.stderr["S"])}

    # windowed tomography
    windows = scenario.scenario_windows(params.fss_S)
    states = scenario.window_states(params, windows)
    ref_i = metrics.phase_reference_state(math.pi / 2)
    refs = {"phi+": metrics.bell_state("phi+"), "phi-": metrics.bell_state("phi-"), "hh+i*vv": ref_i}
    c_targets = [("0.57(6)", None, None), ("0.45(2)", 0.35, 0.55), ("0", None, 0.1)]
    report["windows"] = []
    for w, (win, rho_true) in enumerate(zip(windows, states), start=1):
        model_rho, _ = mle_reconstruct(scenario.window_counts(rho_true, 1e6))
        inp = scenario.window_counts(rho_true, scenario.WINDOW_COUNTS, seed=seeds[3 + w])
        write_text(out / f"window{w}_counts.csv", tomography_to_csv(inp))
        rho, fit = mle_reconstruct(inp, MLEOptions(seed=seed))
        write_text(out / f"rho_window{w}.json", density_to_json(rho))
        bars = error_bars(inp, n_resamples, seed=seeds[3 + w], references=refs)
        theta_m, f_m = metrics.best_phase_reference(model_rho)
        target, lo, hi = c_targets[w - 1]
        entry = {
            "start_ps": win.start,
            "width_ps": win.width,
            "model": {
                "concurrence": _entry(metrics.concurrence(model_rho), target, lo, hi),
                "best_phase_deg": math.degrees(theta_m),
                "best_phase_fidelity": _entry(f_m, "0.76(2)" if w == 1 else "-", *((0.70, 0.82) if w == 1 else (None, None))),
            },
            "sampled": {
                "total_counts": float(inp.counts.sum()),
                "converged": fit.converged,
                **metric_report(rho, refs),
                "error_bars": bars["std"],
                "vs_target": {
                    "concurrence": _entry(metrics.concurrence(rho), target, stderr=bars["std"]["concurrence"]),
                    "fidelity_hh+i*vv": _entry(
                        metrics.fidelity_to_pure(rho, ref_i), "-", stderr=bars["std"]["fidelity[hh+i*vv]"]
                    ),
                },
            },
        }
        report["windows"].append(entry)

    # HV suppression, time-integrated over the full decay
    wide = Binning(10.0, -500.0, 2500)
    ratios = {}
    for name, p in (("noiseless", params.replace(background_fraction=0.0)), ("with_background", params)):
        hh = expected_histogram(p, det, canonical_setting("H"), canonical_setting("H"), 1e6, wide).counts.sum()
        hv = expected_histogram(p, det, canonical_setting("H"), canonical_setting("V"), 1e6, wide).counts.sum()
        ratios[name] = float(hv / hh)
    report["hv_suppression"] = {
        "HV_over_HH_noiseless": _entry(ratios["noiseless"], "strongly suppressed", None, 0.05),
        "HV_over_HH_with_background": _entry(ratios["with_background"], "-"),
    }
    write_text(out / "report.json", _dump(report))
    write_text(out / "report.md", _markdown(report))
    return report


def _markdown(report: dict) -> str:
    rows = []

    def walk(prefix, node):
        if isinstance(node, dict) and "value" in node and "target" in node:
            ok = node.get("within_target")
            flag = "" if ok is None else ("yes" if ok else "no")
            err = f" +- {node['stderr']:.3g}" if node.get("stderr") is not None else ""
            rows.append(f"| {prefix} | {node['value']:.4g}{err} | {node['target']} | {flag} |")
        elif isinstance(node, dict):
            for k, v in node.items():
                walk(f"{prefix}.{k}" if prefix else k, v)
        elif isinstance(node, list):
            for i, v in enumerate(node, start=1):
                walk(f"{prefix}[{i}]", v)

    for key in ("oscillation", "fss", "windows", "hv_suppression"):
        walk(key, report[key])
    head = ["# Calibrated scenario report", "", f"seed: {report['seed']}", "",
            "| quantity | value | target | within |", "|---|---|---|---|"]
    return "\n".join(head + rows) + "\n"


def cmd_reproduce_paper(args) -> int:
    reproduce(_out_dir(args.out), seed=args.seed, n_resamples=args.resamples)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="paircascade", description="Entangled photon pairs from a quantum-dot cascade.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate coincidence histograms")
    s.add_argument("config")
    s.add_argument("--settings", help="JSON list of {xx: record, x: record}")
    s.add_argument("--labels", help="comma-separated setting labels such as RR,DD")
    s.add_argument("--mode", choices=("expected", "sampled", "both"))
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    ref_help = "named Bell state (phi+, phi-, psi+, psi-); repeatable"
    s = sub.add_parser("tomo", help="maximum-likelihood tomography from counts CSV")
    s.add_argument("counts")
    s.add_argument("--reference", action="append", help=ref_help)
    s.add_argument("--theta", action="append", type=float, help="(HH + e^{i theta} VV) reference, degrees; repeatable")
    s.add_argument("--error-bars", type=int, default=0, metavar="N", help="Poisson resamples (>= 100)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_tomo)

    s = sub.add_parser("metrics", help="fidelity, concurrence and purity of a density matrix")
    s.add_argument("rho")
    s.add_argument("--reference", action="append", help=ref_help)
    s.add_argument("--theta", action="append", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("fit-line", help="Lorentzian fit of a spectrum CSV")
    s.add_argument("data")
    s.add_argument("--to-energy", action="store_true", help="convert a wavelength axis to micro-eV first")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit_line)

    s = sub.add_parser("fit-fss", help="fine-structure splitting from line centre vs. HWP angle")
    s.add_argument("data", help="X series (angle_deg,energy_ueV)")
    s.add_argument("--xx", help="XX series for a joint anti-phase fit")
    s.add_argument("--no-qwp", action="store_true", help="series measured without QWP1")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit_fss)

    s = sub.add_parser("fit-osc", help="damped-cosine fit of a coincidence histogram")
    s.add_argument("data")
    s.add_argument("--range", nargs=2, type=float, metavar=("LO", "HI"))
    s.add_argument("--period-guess", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit_osc)

    s = sub.add_parser("g2", help="autocorrelation of a time-tag stream")
    s.add_argument("stream")
    s.add_argument("--rep-period", type=float, default=DEFAULT_REP_PERIOD)
    s.add_argument("--bin-width", type=float, default=100.0)
    s.add_argument("--n-side", type=int, default=5, help="side peaks on each side")
    s.add_argument("--channel", choices=("XX", "X"))
    s.add_argument("--out")
    s.set_defaults(func=cmd_g2)

    s = sub.add_parser("reproduce-paper", help="run the calibrated scenario and write a report")
    s.add_argument("--out")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--resamples", type=int, default=100)
    s.set_defaults(func=cmd_reproduce_paper)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
