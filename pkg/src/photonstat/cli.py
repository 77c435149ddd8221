"""Command-line surface: simulate, analyze, reproduce-paper.

Every command takes an --out-dir and never writes outside it; files are
written atomically.  Each run drops a manifest.json recording the command
line, config digest, seed, tool version, input and output paths, and wall
time, so any run is reproducible from the manifest alone.  The manifest is
the only output carrying a wall time; data and report files are byte-stable
under reruns with the same seed.

Exit codes: 0 success, 1 analysis or criterion failure, 2 input error.
PHOTONSTAT_THREADS caps internal parallelism (the engine is sequential, the
cap is recorded for provenance).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .acceptance import CRITERION_IDS, run_criterion
from .engine import simulate_cw, simulate_pulsed
from .model import (
    ExcitationMode,
    config_digest,
    config_from_dict,
    config_to_json,
    validate,
)
from .numerics import FitError
from .photometry import build_efficiency_report, fit_saturation
from .report import (
    atomic_write,
    atomic_write_text,
    read_array_csvs,
    read_profile_csv,
    read_saturation_csv,
    write_histogram_csv,
    write_report,
    write_xy_csv,
)
from .spectral import fit_lineshape, summarize_yield, with_coherence
from .streams import (
    read_clicks_binary,
    read_clicks_csv,
    stream_digest,
    write_clicks_binary,
    write_photons_csv,
)
from .tcspc import (
    DipFitDegenerateError,
    build_decay_histogram,
    correlate,
    fit_biexponential,
    fit_dip_time,
    purity_from_histogram,
)


class InputError(Exception):
    """User-input problem: exit code 2."""


class AnalysisError(Exception):
    """Analysis-level failure: exit code 1, structured error report written."""


# ---------------------------------------------------------------------------
# Manifest


class _Run:
    """Collects output paths and writes the manifest at the end."""

    def __init__(self, args, out_dir: str):
        self.argv = args._argv
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.seed: int | None = None
        self.config_digest: str | None = None
        self.overrides: list[str] = []
        self.t0 = time.monotonic()

    def out(self, name: str) -> Path:
        path = (self.out_dir / name).resolve()
        if self.out_dir.resolve() not in path.parents and path != self.out_dir.resolve():
            raise InputError(f"output path {name!r} escapes the output directory")
        self.outputs.append(str(path))
        return path

    def used_input(self, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise InputError(f"input not found: {p}")
        self.inputs.append(str(p))
        return p

    def finish(self) -> None:
        manifest = {
            "command": self.argv,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "tool_version": __version__,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "threads": os.environ.get("PHOTONSTAT_THREADS"),
            "overrides": self.overrides,
            "wall_time_s": round(time.monotonic() - self.t0, 3),
        }
        atomic_write_text(
            self.out_dir / "manifest.json",
            json.dumps(manifest, sort_keys=True, indent=2) + "\n",
        )


# ---------------------------------------------------------------------------
# Config loading and dotted-path overrides


def _apply_override(data, dotted: str, raw_value: str) -> None:
    """Set a dotted path like emitter.tau_fast or detectors[0].efficiency."""
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value  # bare strings (e.g. mode=Pulsed) arrive unquoted
    node = data
    parts = dotted.split(".")
    for depth, part in enumerate(parts):
        index = None
        if part.endswith("]") and "[" in part:
            part, _, idx = part.partition("[")
            try:
                index = int(idx[:-1])
            except ValueError:
                raise InputError(f"--set {dotted}: bad list index in {part!r}") from None
        if not isinstance(node, dict) or part not in node:
            raise InputError(f"--set {dotted}: no config field {'.'.join(parts[: depth + 1])!r}")
        if index is not None:
            seq = node[part]
            if not isinstance(seq, list) or not 0 <= index < len(seq):
                raise InputError(f"--set {dotted}: index {index} out of range")
            if depth == len(parts) - 1:
                seq[index] = value
                return
            node = seq[index]
        elif depth == len(parts) - 1:
            node[part] = value
        else:
            node = node[part]


def _load_config(path: str, overrides: list[str]):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc
    for item in overrides:
        dotted, sep, raw = item.partition("=")
        if not sep:
            raise InputError(f"--set needs path=value, got {item!r}")
        _apply_override(data, dotted.strip(), raw)
    try:
        config = config_from_dict(data)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    violations = validate(config)
    if violations:
        raise InputError("\n".join(f"invalid config: {v}" for v in violations))
    return config


def _read_stream(path, detector_id: int = 0):
    path = Path(path)
    if path.suffix == ".csv":
        return read_clicks_csv(path, detector_id=detector_id)
    return read_clicks_binary(path)


# ---------------------------------------------------------------------------
# Commands


def cmd_simulate(args) -> int:
    run = _Run(args, args.out_dir)
    config = _load_config(args.config, args.set or [])
    run.used_input(args.config)
    run.overrides = list(args.set or [])
    run.seed = config.rng_seed
    run.config_digest = config_digest(config)

    atomic_write_text(run.out("config.json"), config_to_json(config))
    if config.excitation.mode is ExcitationMode.PULSED:
        photons, clicks = simulate_pulsed(config)
        atomic_write(run.out("photons.csv"), lambda p: write_photons_csv(p, photons))
    else:
        clicks = simulate_cw(config)
    for stream in clicks:
        path = run.out(f"clicks_det{stream.detector_id}.pstm")
        atomic_write(path, lambda p, s=stream: write_clicks_binary(p, s))
    run.finish()
    print(f"wrote {len(clicks)} click stream(s) to {run.out_dir}")
    return 0


def _write_error_report(run: _Run, kind: str, exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    write_report(run.out(f"{kind}.json"), f"{kind}-error", payload)
    run.finish()


def cmd_analyze_lifetime(args) -> int:
    run = _Run(args, args.out_dir)
    stream = _read_stream(run.used_input(args.input))
    fold = 1e12 / args.rep_rate if args.rep_rate else None
    hist = build_decay_histogram(stream, bin_width=args.bin_width, fold=fold)
    write_histogram_csv(run.out("decay.csv"), hist)
    try:
        fit = fit_biexponential(hist, fit_start=args.fit_start)
    except (FitError, ValueError) as exc:
        _write_error_report(run, "lifetime", exc)
        print(f"lifetime analysis failed: {exc}", file=sys.stderr)
        return 1
    t = hist.bin_centers
    model = (
        fit.amplitude_fast * np.exp(-np.maximum(t - hist.bin_centers[0], 0.0) / (fit.tau_fast * 1000.0))
        + fit.amplitude_slow * np.exp(-np.maximum(t - hist.bin_centers[0], 0.0) / (fit.tau_slow * 1000.0))
        + fit.background
    )
    write_xy_csv(run.out("decay_fit.csv"), ("time_ps", "model_counts"), t, model)
    write_report(run.out("lifetime.json"), "lifetime", fit,
                 input_digest=stream_digest(stream))
    run.finish()
    print(f"tau_fast = {fit.tau_fast:.4g} ns, tau_slow = {fit.tau_slow:.4g} ns")
    return 0


def cmd_analyze_g2(args) -> int:
    run = _Run(args, args.out_dir)
    s0 = _read_stream(run.used_input(args.input), detector_id=0)
    s1 = _read_stream(run.used_input(args.input2), detector_id=1)
    period = 1e12 / args.rep_rate
    window = (args.n_side_peaks + 0.6) * period
    hist = correlate(s0, s1, bin_width=args.bin_width, window=window, rep_period=period)
    write_histogram_csv(run.out("g2.csv"), hist)
    try:
        purity = purity_from_histogram(hist, n_side_peaks=args.n_side_peaks)
    except ValueError as exc:
        _write_error_report(run, "g2", exc)
        print(f"g2 analysis failed: {exc}", file=sys.stderr)
        return 1
    payload = {"purity": purity, "dip_time_ps": None, "dip_note": None}
    if args.dip_jitter_fwhm is not None:
        try:
            payload["dip_time_ps"] = fit_dip_time(hist, jitter_fwhm=args.dip_jitter_fwhm)
        except DipFitDegenerateError as exc:
            payload["dip_note"] = str(exc)
        except FitError as exc:
            _write_error_report(run, "g2", exc)
            print(f"dip fit failed: {exc}", file=sys.stderr)
            return 1
    digest = stream_digest(s0) + stream_digest(s1)
    write_report(run.out("g2_report.json"), "g2", payload, input_digest=digest)
    run.finish()
    print(f"g2(0) = {purity.g2_zero:.4f}, purity = {purity.purity:.4f}")
    return 0


def cmd_analyze_saturation(args) -> int:
    run = _Run(args, args.out_dir)
    try:
        points = read_saturation_csv(run.used_input(args.input))
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    try:
        curve = fit_saturation(points)
    except (FitError, ValueError) as exc:
        _write_error_report(run, "saturation", exc)
        print(f"saturation fit failed: {exc}", file=sys.stderr)
        return 1
    powers = np.array([p for p, _ in curve.points])
    grid = np.linspace(powers.min(), powers.max(), 200)
    model = curve.fitted_rate_sat * -np.expm1(-grid / curve.fitted_p_sat)
    write_xy_csv(run.out("saturation_fit.csv"), ("power", "model_rate"), grid, model)
    write_report(run.out("saturation.json"), "saturation", curve)
    run.finish()
    print(f"rate_sat = {curve.fitted_rate_sat:.4g} cps, P_sat = {curve.fitted_p_sat:.4g}")
    return 0


def cmd_analyze_linewidth(args) -> int:
    run = _Run(args, args.out_dir)
    try:
        profile = read_profile_csv(run.used_input(args.input))
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    try:
        report = fit_lineshape(profile, etalon_fwhm=args.etalon_fwhm)
    except (FitError, ValueError) as exc:
        _write_error_report(run, "linewidth", exc)
        print(f"linewidth fit failed: {exc}", file=sys.stderr)
        return 1
    if args.lifetime is not None:
        report = with_coherence(report, args.lifetime)
    write_report(run.out("linewidth.json"), "linewidth", report)
    run.finish()
    limited = " (resolution limited)" if report.resolution_limited else ""
    print(f"model = {report.model}, deconvolved FWHM = {report.deconvolved_fwhm:.4g} GHz{limited}")
    return 0


def cmd_analyze_yield(args) -> int:
    run = _Run(args, args.out_dir)
    try:
        spectra = read_array_csvs(run.used_input(args.input))
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    summary = summarize_yield(spectra, dominance_threshold=args.dominance_threshold)
    rows = [f"{i},{label.value}" for i, label in enumerate(summary.classifications)]
    atomic_write_text(run.out("classifications.csv"),
                      "device,classification\n" + "\n".join(rows) + "\n")
    write_report(run.out("yield.json"), "yield", summary)
    run.finish()
    print(f"{summary.n_two_peak} of {summary.n_devices} devices show two dominant peaks; "
          f"trion mean {summary.mean_trion_energy:.2f} meV, std {summary.std_trion_energy:.2f} meV")
    return 0


def cmd_analyze_efficiency(args) -> int:
    run = _Run(args, args.out_dir)
    report = build_efficiency_report(
        detected_rate=args.detected_rate,
        detected_rate_all_lines=args.all_lines_rate
        if args.all_lines_rate is not None
        else args.detected_rate,
        rep_rate=args.rep_rate,
        eta_t=args.eta_t,
        eta_d=args.eta_d,
        directionality=args.directionality,
        sideband_pass=args.sideband_pass,
    )
    write_report(run.out("efficiency.json"), "efficiency", report)
    run.finish()
    flag = " [inconsistent inputs]" if report.inconsistent else ""
    print(f"source efficiency = {report.source_efficiency:.3f}, "
          f"collection efficiency = {report.collection_efficiency:.3f}{flag}")
    return 0


def cmd_reproduce_paper(args) -> int:
    if args.list:
        for cid in CRITERION_IDS:
            print(cid)
        return 0
    run = _Run(args, args.out_dir)
    results = []
    failed = False
    for cid in CRITERION_IDS:
        result = run_criterion(cid, tolerance_scale=args.tolerance_scale)
        results.append(result)
        mark = "INFO" if result.informational else ("PASS" if result.passed else "FAIL")
        failed |= not result.passed
        print(f"[{mark}] {result.criterion_id}: {result.title}")
        for line in result.details:
            print(f"    {line}")
    write_report(run.out("criteria.json"), "acceptance",
                 {"tolerance_scale": args.tolerance_scale, "results": results})
    run.finish()
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photonstat",
        description="Single-photon-source simulator and analysis suite.",
    )
    parser.add_argument("--version", action="version", version=f"photonstat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the emission/detection simulation")
    sim.add_argument("--config", required=True, help="experiment config JSON")
    sim.add_argument("--out-dir", required=True)
    sim.add_argument("--set", action="append", metavar="PATH=VALUE",
                     help="dotted-path config override, e.g. emitter.tau_fast=1.7")
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="run one analysis on existing data")
    ana_sub = ana.add_subparsers(dest="analysis", required=True)

    life = ana_sub.add_parser("lifetime", help="bi-exponential decay fit")
    life.add_argument("--input", required=True, help="click stream (.pstm or .csv)")
    life.add_argument("--out-dir", required=True)
    life.add_argument("--bin-width", type=float, default=100.0, help="histogram bin, ps")
    life.add_argument("--rep-rate", type=float, default=None,
                      help="pulse rate in Hz; folds timestamps into one period")
    life.add_argument("--fit-start", type=float, default=None, help="fit window start, ps")
    life.set_defaults(func=cmd_analyze_lifetime)

    g2p = ana_sub.add_parser("g2", help="coincidence histogram and purity")
    g2p.add_argument("--input", required=True, help="detector 0 stream")
    g2p.add_argument("--input2", required=True, help="detector 1 stream")
    g2p.add_argument("--out-dir", required=True)
    g2p.add_argument("--rep-rate", type=float, required=True, help="pulse rate, Hz")
    g2p.add_argument("--bin-width", type=float, default=100.0, help="ps")
    g2p.add_argument("--n-side-peaks", type=int, default=10)
    g2p.add_argument("--dip-jitter-fwhm", type=float, default=None,
                     help="detector jitter FWHM in ps; enables the refill-time fit")
    g2p.set_defaults(func=cmd_analyze_g2)

    sat = ana_sub.add_parser("saturation", help="saturation-curve fit")
    sat.add_argument("--input", required=True, help="CSV with power,rate columns")
    sat.add_argument("--out-dir", required=True)
    sat.set_defaults(func=cmd_analyze_saturation)

    lw = ana_sub.add_parser("linewidth", help="lineshape fit and deconvolution")
    lw.add_argument("--input", required=True, help="CSV with detuning_ghz,counts columns")
    lw.add_argument("--out-dir", required=True)
    lw.add_argument("--etalon-fwhm", type=float, required=True, help="GHz")
    lw.add_argument("--lifetime", type=float, default=None,
                    help="lifetime in ns; adds coherence metrics to the report")
    lw.set_defaults(func=cmd_analyze_linewidth)

    yld = ana_sub.add_parser("yield", help="array spectrum classification")
    yld.add_argument("--input", required=True, help="array index.csv")
    yld.add_argument("--out-dir", required=True)
    yld.add_argument("--dominance-threshold", type=float, default=0.25)
    yld.set_defaults(func=cmd_analyze_yield)

    eff = ana_sub.add_parser("efficiency", help="efficiency calculus from rates")
    eff.add_argument("--detected-rate", type=float, required=True, help="cps, filtered line")
    eff.add_argument("--all-lines-rate", type=float, default=None,
                     help="cps over all lines; defaults to --detected-rate")
    eff.add_argument("--rep-rate", type=float, required=True, help="Hz")
    eff.add_argument("--eta-t", type=float, required=True)
    eff.add_argument("--eta-d", type=float, required=True)
    eff.add_argument("--directionality", type=float, default=0.5)
    eff.add_argument("--sideband-pass", type=float, default=0.8)
    eff.add_argument("--out-dir", required=True)
    eff.set_defaults(func=cmd_analyze_efficiency)

    rep = sub.add_parser("reproduce-paper", help="run the acceptance criteria")
    rep.add_argument("--out-dir", default="reproduce_out")
    rep.add_argument("--list", action="store_true", help="print criterion IDs and exit")
    rep.add_argument("--tolerance-scale", type=float, default=1.0,
                     help="multiply every tolerance; below 1 tightens the checks")
    rep.set_defaults(func=cmd_reproduce_paper)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = ["photonstat", *argv]
    try:
        return args.func(args)
    except InputError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
