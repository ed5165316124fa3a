"""Command-line front end.

Verbs: ``validate`` (schema + timing checks, derived quantities),
``run`` (simulate and write the output bundle plus key report),
``keyrate`` (rate chain for one operating point) and ``sweep``
(rate chain over a transmissivity grid, CSV on stdout).

Exit codes: 0 success, 1 validation failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import jsonschema

from . import outputs, postproc, simcore
from .config import load_scenario, preset_names
from .errors import ConfigurationError, ScheduleOverlapError
from .network import SPLITTER_SPLIT_DB, path_loss, propagation_delay
from .optics import voa_setting
from .units import db_to_fraction

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _load(path_or_preset):
    try:
        return load_scenario(path_or_preset), None
    except FileNotFoundError as exc:
        return None, str(exc)
    except json.JSONDecodeError as exc:
        return None, (f"{path_or_preset}: JSON parse error at line "
                      f"{exc.lineno}, column {exc.colno}: {exc.msg}")
    except jsonschema.ValidationError as exc:
        return None, (f"{path_or_preset}: schema violation at "
                      f"{exc.json_path}: {exc.message}")
    except (ConfigurationError, ValueError) as exc:
        return None, f"{path_or_preset}: {exc}"


def _print_derived(scenario, topology, sched, out=None):
    out = out if out is not None else sys.stdout
    slot = scenario.source.slot_period
    mu_out = scenario.source.photons_per_pulse
    print(f"scenario        : {scenario.name}", file=out)
    print(f"config digest   : {scenario.digest}", file=out)
    print(f"photons/slot out: {mu_out:.4g}", file=out)
    print(f"packet length   : {scenario.slot_count} slots = "
          f"{scenario.slot_count * slot * 1e9:.1f} ns", file=out)
    print(f"minimum period  : {sched.min_period * 1e9:.1f} ns", file=out)
    if sched.forced:
        print(f"forced period   : {sched.period * 1e9:.1f} ns "
              f"(config override of the derived minimum)", file=out)
    det = scenario.detectors
    for idx, bob in enumerate(scenario.bobs):
        fiber_time = propagation_delay(topology, bob.leaf)
        loss = path_loss(topology, bob.leaf)
        trans = db_to_fraction(loss + scenario.receiver_extra_db)
        mu_at_voa = (mu_out * db_to_fraction(loss)
                     * (1.0 - bob.clock_tap_fraction))
        try:
            voa = f"{voa_setting(mu_at_voa, bob.mu_target):.2f} dB"
        except ValueError:
            voa = (f"infeasible: only {mu_at_voa:.3g} photons/slot reach "
                   f"the attenuator, target is {bob.mu_target}")
        splitters_db = scenario.levels * (SPLITTER_SPLIT_DB
                                          + scenario.splitter_excess_db)
        circ_db = (2.0 * scenario.circulator.insertion_loss_db
                   if scenario.circulator else 0.0)
        fiber_db = loss - splitters_db - circ_db
        print(f"user {idx} (leaf {bob.leaf}):", file=out)
        print(f"  fiber time        : {fiber_time * 1e9:.2f} ns", file=out)
        print(f"  storage time      : {bob.storage_time * 1e9:.2f} ns",
              file=out)
        print(f"  one-way path loss : {loss:.3f} dB (splitters "
              f"{splitters_db:.3f}, fiber {fiber_db:.3f}, circulators "
              f"{circ_db:.3f})", file=out)
        print(f"  transmissivity T  : {trans:.4g} (path {loss:.3f} dB + "
              f"receiver {scenario.receiver_extra_db:.3f} dB)", file=out)
        print(f"  attenuator setting: {voa}", file=out)
        n = scenario.slot_count
        duty = n * slot / sched.period
        signal = bob.mu_target * trans * det.efficiency
        rate = (scenario.source.pulse_rate * duty
                * (signal + 2 * det.dark_prob) * (n - 1) / n)
        print(f"  expected raw rate : {rate:,.0f} counts/s "
              f"(= {scenario.source.pulse_rate:.3g} Hz x duty {duty:.4g} x "
              f"(mu T eta = {signal:.3g} + 2 x dark {det.dark_prob:.3g}) x "
              f"{(n - 1)}/{n})", file=out)


def cmd_validate(args) -> int:
    scenario, err = _load(args.config)
    if err:
        print(f"FAIL: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    topology = scenario.topology()
    try:
        sched, profile = simcore.build_run_timing(scenario, topology)
    except (ScheduleOverlapError, ConfigurationError) as exc:
        print(f"FAIL: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    _print_derived(scenario, topology, sched)
    from .schedule import validate_silence
    report = validate_silence(sched, profile, scenario.stray_threshold)
    if not report.passed:
        print(f"FAIL: stray flux above {report.threshold:g} photons/slot in "
              f"{len(report.violations)} signal-window bins:", file=sys.stderr)
        for v in report.violations[:5]:
            print(f"  bin {v.bin} (t = {v.time * 1e9:.1f} ns): "
                  f"{v.flux:.3g} photons/slot, dominated by {v.label} "
                  f"(user {v.user_id} window)", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"silence check   : PASS (threshold "
          f"{scenario.stray_threshold:g} photons/slot)")
    return EXIT_OK


def _execute_run(config, seed, packets, force, outdir, overwrite) -> int:
    scenario, err = _load(config)
    if err:
        print(f"FAIL: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        report = simcore.run_scenario(scenario, seed=seed, packets=packets,
                                      force=force)
    except (ScheduleOverlapError, ConfigurationError) as exc:
        print(f"FAIL: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    topology = scenario.topology()
    _, profile = simcore.build_run_timing(scenario, topology)
    run_seed = scenario.seed if seed is None else seed
    sifted = postproc.sift(report.records,
                           scenario.bound_sources(run_seed),
                           scenario.slot_count)
    key_report = postproc.build_key_report(
        report, sifted, scenario.security_map(topology),
        sample_fraction=scenario.sample_fraction,
        cascade_preset=scenario.cascade_preset,
        frame_bits=scenario.frame_bits,
        ec_efficiency=scenario.ec_efficiency,
        seed=run_seed, timeline_windows=scenario.timeline_windows)
    try:
        outputs.write_run_bundle(outdir, report, profile, key_report,
                                 overwrite=overwrite)
    except FileExistsError as exc:
        print(f"FAIL: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {outdir}: {report.records.shape[0]} records, raw rate "
          f"{report.raw_rate:,.0f} counts/s, final rate "
          f"{key_report['total_final_rate_bits_per_s']:,.0f} bits/s")
    return EXIT_OK


def _run_job(job):
    config, seed, packets, force, outdir, overwrite = job
    return _execute_run(config, seed, packets, force, outdir, overwrite)


def cmd_run(args) -> int:
    outdir = args.out or "run-output"
    if args.jobs <= 1:
        return _execute_run(args.config, args.seed, args.packets, args.force,
                            outdir, args.overwrite)
    scenario, err = _load(args.config)
    if err:
        print(f"FAIL: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    base_seed = scenario.seed if args.seed is None else args.seed
    jobs = [(args.config, base_seed + i, args.packets, args.force,
             os.path.join(outdir, f"seed-{base_seed + i}"), args.overwrite)
            for i in range(args.jobs)]
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        codes = list(pool.map(_run_job, jobs))
    return max(codes)


def cmd_keyrate(args) -> int:
    try:
        params = postproc.SecurityParams(
            mu=args.mu, transmissivity=args.transmissivity, qber=args.qber,
            ec_efficiency=args.ec_efficiency)
        entropy = postproc.binary_entropy(args.qber)
        collision = postproc.collision_probability(args.qber) \
            if args.qber <= 1 / 6 else math.nan
        fraction = postproc.secure_fraction(params)
        final = postproc.secure_rate(args.raw_rate, fraction)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"binary entropy h(e)     : {entropy:.5f} bits")
    print(f"collision probability   : {collision:.5f}")
    print(f"secure fraction r       : {fraction:.4f}")
    print(f"final rate              : {final:,.0f} bits/s "
          f"(raw {args.raw_rate:,.0f} counts/s)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        if args.t_min <= 0 or args.t_max > 1 or args.t_min > args.t_max:
            raise ValueError("need 0 < t-min <= t-max <= 1")
        print("transmissivity,secure_fraction,final_rate_bits_per_s")
        for i in range(args.points):
            if args.points == 1:
                t = args.t_min
            else:
                log_t = (math.log10(args.t_min)
                         + i * (math.log10(args.t_max)
                                - math.log10(args.t_min)) / (args.points - 1))
                t = 10.0 ** log_t
            fraction = postproc.secure_fraction(postproc.SecurityParams(
                mu=args.mu, transmissivity=t, qber=args.qber,
                ec_efficiency=args.ec_efficiency))
            print(f"{t:.6g},{fraction:.6f},"
                  f"{postproc.secure_rate(args.raw_rate, fraction):.1f}")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpsqkd",
        description="Multi-user differential-phase-shift QKD simulator "
                    "for passive optical tree networks")
    sub = parser.add_subparsers(dest="command", required=True)

    presets = ", ".join(preset_names())
    config_help = f"scenario .json file or bundled preset ({presets})"

    p = sub.add_parser("validate", help="check a scenario and print derived "
                                        "quantities")
    p.add_argument("config", help=config_help)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate and write the output bundle")
    p.add_argument("config", help=config_help)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--packets", type=int, default=None)
    p.add_argument("--force", action="store_true",
                   help="run even if silence validation fails")
    p.add_argument("--overwrite", action="store_true",
                   help="replace an existing output bundle")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--jobs", type=int, default=1,
                   help="fan out this many independent seeds, one "
                        "subdirectory each")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("keyrate", help="rate chain for one operating point")
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--transmissivity", type=float, required=True)
    p.add_argument("--qber", type=float, required=True)
    p.add_argument("--ec-efficiency", type=float, default=1.05)
    p.add_argument("--raw-rate", type=float, default=10000.0)
    p.set_defaults(func=cmd_keyrate)

    p = sub.add_parser("sweep", help="rate chain over a transmissivity grid "
                                     "(CSV on stdout)")
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--qber", type=float, required=True)
    p.add_argument("--ec-efficiency", type=float, default=1.05)
    p.add_argument("--raw-rate", type=float, default=10000.0)
    p.add_argument("--t-min", type=float, default=1e-7)
    p.add_argument("--t-max", type=float, default=1.0)
    p.add_argument("--points", type=int, default=29)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - last-resort exit-code mapping
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
