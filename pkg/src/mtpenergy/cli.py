"""Command line entry point: validate, inject, serve, monitor, report.

Exit codes: 0 success, 1 validation errors, 2 usage, 3 I/O or parse
failure, 4 network failure. Data goes to stdout or ``--out``; diagnostics
go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import random
import sys
from pathlib import Path
from typing import Callable, Sequence

from mtpenergy import __version__, caex_document as caex, pea_sim, pol_client
from mtpenergy.enrg_model import default_mid_registry
from mtpenergy.errors import ParseError
from mtpenergy.mtp_injector import (
    InjectionError,
    InvalidMeasurementSpec,
    add_measurement_instance,
    inject_energy_library,
    load_measurement_specs,
    validate_energy_mtp,
)
from mtpenergy.tagbus import ProtocolError

log = logging.getLogger("mtpenergy")

OK, INVALID, USAGE, IO_FAILURE, NETWORK = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(out).write_text(text, encoding="utf-8")


def cmd_validate(args: argparse.Namespace) -> int:
    report = validate_energy_mtp(caex.load_caex(args.file), default_mid_registry())
    _write(report.render(), args.out)
    return OK if report.ok else INVALID


def cmd_inject(args: argparse.Namespace) -> int:
    if args.out != "-" and Path(args.out).resolve() == Path(args.mtp).resolve() and not args.force:
        raise UsageError(f"refusing to overwrite {args.mtp} in place; pass --force")
    mids = default_mid_registry()
    doc = caex.load_caex(args.mtp)
    specs = load_measurement_specs(Path(args.measurements).read_text(encoding="utf-8"))
    rng = random.Random(args.seed) if args.seed is not None else None
    doc = inject_energy_library(doc)
    for spec in specs:
        doc = add_measurement_instance(doc, spec, rng, mids)
    report = validate_energy_mtp(doc, mids)
    if not report.ok:
        sys.stderr.write(report.render())
        return INVALID
    _write(caex.serialize_caex(doc), args.out)
    log.info("injected %d measurement(s) into %s", len(specs), args.out)
    return OK


def cmd_serve(args: argparse.Namespace) -> int:
    if args.accelerate <= 0:
        raise UsageError("--accelerate must be positive")
    pea_sim.run_server(args.mtp, args.profile, args.port, args.host, args.accelerate, args.ticks)
    return OK


def _parse_reset(text: str) -> tuple[str, int]:
    node, sep, tick = text.rpartition("@")
    if not sep or not node or not tick.isdigit():
        raise argparse.ArgumentTypeError(f"expected NODE@TICK, got {text!r}")
    return node, int(tick)


def cmd_monitor(args: argparse.Namespace) -> int:
    samples = pol_client.monitor(
        args.mtp, args.connect, ticks=args.ticks, duration=args.duration,
        interval_ms=args.interval_ms, log_path=args.log, resets=dict(args.reset or []),
    )
    log.info("logged %d samples to %s", len(samples), args.log)
    return OK


def cmd_report(args: argparse.Namespace) -> int:
    mids = default_mid_registry()
    registry = pol_client.load_registry(args.mtp, mids)
    samples = pol_client.SampleLog.load(args.log, registry)
    report = pol_client.aggregate_report(samples, registry, mids)
    _write(pol_client.render_report(report, args.format), args.out)
    if args.figures:
        from mtpenergy.plotting import render_figures

        for path in render_figures(samples, registry, report, args.figures):
            log.info("wrote %s", path)
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtpenergy", description="Energy data objects for MTP manifests.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    v = sub.add_parser("validate", help="check an energy-extended manifest")
    v.add_argument("file")
    v.add_argument("--out", help="write the report here instead of stdout")
    v.set_defaults(func=cmd_validate)

    i = sub.add_parser("inject", help="add the energy library and measurement instances")
    i.add_argument("--mtp", required=True)
    i.add_argument("--measurements", required=True, help="measurement spec JSON")
    i.add_argument("--out", required=True, help="output manifest, '-' for stdout")
    i.add_argument("--seed", type=int, help="seed for reproducible GUIDs")
    i.add_argument("--force", action="store_true", help="allow --out to equal --mtp")
    i.set_defaults(func=cmd_inject)

    s = sub.add_parser("serve", help="run the simulated PEA")
    s.add_argument("--mtp", required=True)
    s.add_argument("--profile", required=True)
    s.add_argument("--port", type=int, required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--accelerate", type=float, default=1.0, help="simulated seconds per wall second")
    s.add_argument("--ticks", type=int, help="stop after this many ticks")
    s.set_defaults(func=cmd_serve)

    m = sub.add_parser("monitor", help="subscribe to a PEA and record samples")
    m.add_argument("--mtp", required=True)
    m.add_argument("--connect", required=True, metavar="HOST:PORT")
    budget = m.add_mutually_exclusive_group(required=True)
    budget.add_argument("--duration", type=float, help="wall seconds")
    budget.add_argument("--ticks", type=int, help="subscription intervals of simulated time")
    m.add_argument("--log", required=True, help="NDJSON sample log to write")
    m.add_argument("--interval-ms", type=int, default=100)
    m.add_argument("--reset", type=_parse_reset, action="append", metavar="NODE@TICK",
                   help="request a counter reset after TICK intervals (repeatable)")
    m.set_defaults(func=cmd_monitor)

    r = sub.add_parser("report", help="energy report from a recorded session")
    r.add_argument("--log", required=True)
    r.add_argument("--mtp", required=True)
    r.add_argument("--format", choices=("csv", "json", "text"), default="csv")
    r.add_argument("--out")
    r.add_argument("--figures", metavar="DIR", help="also write PNG figures into DIR")
    r.set_defaults(func=cmd_report)
    return p


# Checked in order; the first matching class decides the exit code.
ERROR_CODES: list[tuple[type[BaseException], int]] = [
    (UsageError, USAGE),
    (pea_sim.BindFailure, NETWORK),
    (pol_client.ConnectFailure, NETWORK),
    (ProtocolError, NETWORK),
    (pol_client.ValidationFailed, INVALID),
    (pea_sim.InvalidManifest, INVALID),
    (InvalidMeasurementSpec, IO_FAILURE),
    (InjectionError, INVALID),
    (ParseError, IO_FAILURE),
    (pea_sim.SimulationError, IO_FAILURE),
    (OSError, IO_FAILURE),
    (Exception, IO_FAILURE),
]


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except KeyboardInterrupt:
        return OK
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit code
        code = next(c for kind, c in ERROR_CODES if isinstance(exc, kind))
        print(f"mtpenergy {args.command}: {exc}", file=sys.stderr)
        return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
