"""Command-line front end: ``pnr simulate | analyze | sweep | report``.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical
non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import discrimination as disc
from . import experiments as exp
from .config import build_manifest, config_from_manifest, load_config, parse_sections
from .errors import (BadFormat, InsufficientData, NoCrossing, NoInput, NonConvergence,
                     PeakNotBracketed, PNRError, Saturated, ValidationError)
from .filtering import apply_filter, apply_lowpass, build_matched_template
from .signal_model import EventSchedule, add_noise, NoiseModel, synthesize_trace
from .traceio import read_trace, write_trace

log = logging.getLogger("pnrfilter")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGENCE = 0, 2, 3, 4

TRACE_SUFFIXES = (".pnrt", ".csv")
_SIM_NOISE_STREAM = 10
_SIM_PHOTON_STREAM = 11
_SIM_PHASE_STREAM = 12


class UsageError(PNRError):
    pass


def dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _resolve(args):
    if getattr(args, "manifest", None):
        manifest = json.loads(Path(args.manifest).read_text())
        config = config_from_manifest(manifest)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.filter is not None:
            overrides["filter"] = args.filter
        if overrides:
            sections = {k: dict(v) for k, v in config.sections.items()}
            sections["experiment"].update({k: str(v) for k, v in overrides.items()})
            config = parse_sections(sections)
        return config, manifest.get("timestamp")
    return load_config(args.config, args.seed, args.filter), None


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


# -- simulate -------------------------------------------------------------------


def cmd_simulate(args):
    config, stamp = _resolve(args)
    out = _out_dir(args)
    cfg = config.experiment
    N = cfg.readout.num_pixels
    probs = disc.fired_pixel_distribution(config.mean_photon_number, N).fired_probabilities
    detected = probs[1:] / probs[1:].sum()
    rows = []
    for i in range(config.traces):
        if config.photon_number:
            n = config.photon_number
        else:
            n = 1 + int(exp.block_rng(cfg.seed, _SIM_PHOTON_STREAM, i).choice(N, p=detected))
        arrival = cfg.pulse_delay
        if cfg.random_phase:
            arrival += exp.block_rng(cfg.seed, _SIM_PHASE_STREAM, i).uniform(0, 1 / cfg.sample_rate)
        clean = synthesize_trace(cfg.shape, EventSchedule(((arrival, n),)),
                                 cfg.sample_rate, cfg.duration)
        noise_seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(_SIM_NOISE_STREAM, i))
                         .generate_state(1, np.uint64)[0])
        trace = add_noise(clean, NoiseModel(cfg.noise.sigma, noise_seed))
        name = f"trace_{i:05d}.pnrt"
        write_trace(trace, out / name)
        rows.append((name, arrival, n))
    with open(out / "truth.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["file", "arrival_time_s", "photon_number"])
        for name, arrival, n in rows:
            writer.writerow([name, repr(arrival), n])
    dump_json(build_manifest("simulate", config, stamp=stamp,
                             extra={"outputs": [r[0] for r in rows] + ["truth.csv"]}),
              out / "manifest.json")
    log.info("wrote %d traces to %s", len(rows), out)
    return EXIT_OK


# -- analyze --------------------------------------------------------------------


def collect_inputs(paths):
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(f for f in p.iterdir()
                                if f.suffix.lower() in TRACE_SUFFIXES and f.name != "truth.csv"))
        elif p.exists():
            files.append(p)
        else:
            raise NoInput(f"{p} does not exist")
    if not files:
        raise NoInput("no trace files found in " + ", ".join(map(str, paths)))
    return files


def _read_ref_times(path):
    refs = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                refs[Path(row["file"]).name] = float(row["arrival_time_s"])
            except (KeyError, ValueError):
                raise BadFormat(path, 0, "ref-times CSV needs 'file' and 'arrival_time_s'") \
                    from None
    return refs


def _filter_trace(trace, spec, shape):
    if spec.kind == "none":
        return trace
    if spec.kind == "lowpass":
        return apply_lowpass(trace, spec.cutoff, spec.lowpass_kind)
    kernel = spec.template or build_matched_template(shape, trace.sample_rate)
    return apply_filter(trace, kernel)


def _edge_fraction(config, spec, trace):
    """Threshold as a fraction of peak height at the steepest point of the clean response."""
    cfg = replace(config.experiment, filter=spec, sample_rate=trace.sample_rate,
                  duration=len(trace) / trace.sample_rate,
                  pulse_delay=min(config.experiment.pulse_delay, 0.25 * len(trace) / trace.sample_rate))
    proc = exp.Processor(cfg)
    unit_thr, _, _ = proc.edge_threshold()
    return unit_thr / proc.response[proc.peak_index]


def cmd_analyze(args):
    if not args.inputs:
        raise UsageError("analyze needs at least one trace file or directory")
    config, stamp = _resolve(args)
    spec = config.experiment.filter
    files = collect_inputs(args.inputs)
    out = _out_dir(args)
    shape = config.experiment.shape

    def process(path):
        trace = read_trace(path)
        y = _filter_trace(trace, spec, shape)
        try:
            event = disc.detect_peak(y)
        except PeakNotBracketed:
            return path, trace, y, None
        return path, trace, y, event

    with ThreadPoolExecutor(max_workers=exp.worker_count()) as pool:
        results = list(pool.map(process, files))
    kept = [(p, tr, y, e) for p, tr, y, e in results if e is not None]
    skipped = [str(p) for p, _, _, e in results if e is None]
    if not kept:
        raise InsufficientData("no trace produced a bracketed peak")

    amplitudes = np.array([e.peak_amplitude for _, _, _, e in kept])
    k = args.components or config.experiment.readout.num_pixels
    report = {"filter": spec.label(), "traces": len(files), "skipped_unbracketed": skipped,
              "warnings": []}
    status = EXIT_OK
    fit = None
    try:
        fit, hist = exp.fit_amplitudes(amplitudes, k)
    except NonConvergence as exc:
        report["warnings"].append(f"mixture fit did not converge: {exc}")
        fit, hist = exc.partial, disc.build_histogram(amplitudes)
        status = EXIT_NONCONVERGENCE
    except disc.InvalidComponentCount as exc:
        report["warnings"].append(f"mixture fit skipped: {exc}")
        hist = disc.build_histogram(amplitudes)
        status = EXIT_NONCONVERGENCE

    events = [e for _, _, _, e in kept]
    if fit is not None:
        events = disc.classify_events(events, fit)
        report["fit"] = fit.to_dict()
        if len(fit) >= 2:
            report["spacings"] = [float(s) for s in disc.normalized_spacing(fit)]
        N = config.experiment.readout.num_pixels
        if k == N:
            counts = disc.fired_counts_from_labels([e.assigned_n for e in events], N)
            report["fired_counts"] = [int(c) for c in counts]
            try:
                report["mu_estimate_detected_only"] = disc.estimate_mean_photon_number(counts, N)
            except Saturated as exc:
                report["warnings"].append(str(exc))

    if args.ref_times:
        report["jitter_s"] = _analyze_jitter(config, spec, kept, events, fit, args.ref_times,
                                             report["warnings"])

    (out / "events.csv").write_text(disc.events_to_csv(events))
    (out / "histogram.csv").write_text(disc.histogram_to_csv(hist))
    if fit is not None:
        dump_json(fit.to_dict(), out / "fit.json")
    inputs = list(files) + ([Path(args.ref_times)] if args.ref_times else [])
    report["manifest"] = build_manifest("analyze", config, inputs=inputs, stamp=stamp)
    dump_json(report, out / "report.json")
    dump_json(report["manifest"], out / "manifest.json")
    for w in report["warnings"]:
        log.warning(w)
    return status


def _analyze_jitter(config, spec, kept, events, fit, ref_path, warnings):
    refs = _read_ref_times(ref_path)
    delays = {}
    fraction = None
    for (path, trace, y, _), event in zip(kept, events):
        if path.name not in refs:
            continue
        if spec.kind in ("matched", "kernel"):
            t = event.peak_time
        else:
            if fraction is None:
                fraction = _edge_fraction(config, spec, trace)
            level = event.peak_amplitude * fraction
            if fit is not None and event.assigned_n is not None:
                level = fit.means[event.assigned_n - 1] * fraction
            peak_idx = int(round((event.peak_time - y.start_time) * y.sample_rate))
            try:
                t = _last_crossing(y, level, peak_idx)
            except NoCrossing:
                continue
        delays.setdefault(event.assigned_n or 0, []).append(t - refs[path.name])
    result = {}
    for n, values in sorted(delays.items()):
        key = "all" if n == 0 else str(n)
        try:
            result[key] = disc.timing_jitter(values, config.jitter_method)
        except (InsufficientData, NonConvergence, disc.InvalidComponentCount) as exc:
            warnings.append(f"jitter for n={key} not computed: {exc}")
    return result


def _last_crossing(y, level, peak_idx):
    pos = disc.crossing_positions(y.samples, level, 0, peak_idx + 1, last=True)[0]
    if np.isnan(pos):
        raise NoCrossing("no rising crossing before the peak")
    return y.start_time + pos / y.sample_rate


# -- sweep ----------------------------------------------------------------------


def parse_cutoffs(text):
    """Comma list of Hz values, or ``start:stop:count`` for log spacing."""
    try:
        if ":" in text:
            start, stop, count = text.split(":")
            return list(np.geomspace(float(start), float(stop), int(count)))
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse cutoffs {text!r}") from None


def cmd_sweep(args):
    cutoffs = parse_cutoffs(args.cutoffs)
    if len(set(cutoffs)) < 3:
        raise UsageError("a sweep needs at least 3 distinct cutoffs")
    config, stamp = _resolve(args)
    out = _out_dir(args)
    result = exp.sweep_lowpass(config.experiment, cutoffs, kind=args.kind,
                               jitter_n=args.jitter_n, jitter_method=config.jitter_method)
    (out / "sweep.csv").write_text(result.to_csv())
    summary = result.to_dict()
    summary["manifest"] = build_manifest("sweep", config, stamp=stamp,
                                         extra={"cutoffs_hz": [float(c) for c in cutoffs],
                                                "jitter_n": args.jitter_n, "kind": args.kind})
    dump_json(summary, out / "sweep.json")
    dump_json(summary["manifest"], out / "manifest.json")
    return EXIT_OK


# -- report ---------------------------------------------------------------------


def build_report(config):
    """Unfiltered vs configured-filter comparison of spacings, mu round trip and jitter."""
    cfg = config.experiment
    filters = [exp.FilterSpec("none")]
    if cfg.filter.kind != "none":
        filters.append(cfg.filter)
    report = {"discrimination": {}, "jitter_s": {}}
    spacings = {}
    for spec in filters:
        result = exp.run_discrimination_experiment(cfg, config.mean_photon_number, spec)
        report["discrimination"][spec.label()] = result.to_dict()
        spacings[spec.label()] = result.spacings
        jitters = {}
        jitter_cfg = replace(cfg, trials=max(cfg.trials, 1000))
        for n in config.jitter_photon_numbers:
            jitters[str(n)] = exp.run_jitter_experiment(jitter_cfg, n, config.jitter_method, spec)
        report["jitter_s"][spec.label()] = jitters
    if len(filters) == 2:
        base, best = spacings["none"], spacings[filters[1].label()]
        report["spacing_improvement"] = [float(b / a) for a, b in zip(base, best)]
    best_label = filters[-1].label()
    s_min = float(np.min(spacings[best_label]))
    r = cfg.readout
    try:
        report["max_array_size"] = {
            "filter": best_label, "s_min": s_min,
            "size": exp.estimate_max_array_size(s_min, r.num_pixels, r.line_impedance,
                                                r.shunt_resistance)}
    except PNRError as exc:
        report["max_array_size"] = {"filter": best_label, "s_min": s_min, "error": str(exc)}
    return report


def cmd_report(args):
    config, stamp = _resolve(args)
    out = _out_dir(args)
    report = build_report(config)
    report["manifest"] = build_manifest("report", config, stamp=stamp)
    dump_json(report, out / "report.json")
    dump_json(report["manifest"], out / "manifest.json")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--manifest", help="replay the config, seed and timestamp of a manifest")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--filter", help="none | matched | lowpass:<hz>[:single_pole]")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pnr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write noisy simulated traces")
    p = sub.add_parser("analyze", parents=[common], help="filter and analyse trace files")
    p.add_argument("inputs", nargs="*", help="trace files or directories")
    p.add_argument("--ref-times", help="CSV of true arrival times (file, arrival_time_s)")
    p.add_argument("--components", type=int, help="mixture components (default: num_pixels)")
    p = sub.add_parser("sweep", parents=[common], help="low-pass cutoff sweep")
    p.add_argument("--cutoffs", required=True,
                   help="comma list of Hz, or start:stop:count (log spaced)")
    p.add_argument("--kind", default="brickwall_fft", choices=["brickwall_fft", "single_pole"])
    p.add_argument("--jitter-n", type=int, default=1)
    sub.add_parser("report", parents=[common], help="simulated discrimination/jitter report")
    return parser


COMMANDS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "sweep": cmd_sweep,
            "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValidationError) as exc:
        print(f"pnr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonConvergence as exc:
        print(f"pnr {args.command}: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (PNRError, OSError) as exc:
        print(f"pnr {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
