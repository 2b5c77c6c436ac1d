"""Command line entry point: ``thzfdrl {run,sweep,baseline,check}``.

Every ExperimentConfig field is also a flag (``--fed-cycle 20``); flags
override ``--config``. Failures print ``error: <category>: <message>`` on one
line and exit non-zero.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import experiment as ex
from .errors import ThzError
from .selfcheck import run_checks

log = logging.getLogger("thzfdrl")

EXIT_FAILED_CHECK = 1
EXIT_ERROR = 2


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="key = value file")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed", type=int, help="master seed")
    g = p.add_argument_group("config keys")
    for f in fields(ex.ExperimentConfig):
        if f.name == "seed":
            continue
        g.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar="VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thzfdrl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte Carlo batch of one method; writes trace.csv and summary.csv")
    _add_config_flags(run)

    sw = sub.add_parser("sweep", help="one Monte Carlo batch per axis value; writes sweep_<axis>.csv")
    _add_config_flags(sw)
    sw.add_argument("--axis", required=True, choices=ex.SWEEP_AXES)
    sw.add_argument("--values", required=True,
                    help="comma-separated values; for neurons use e.g. 20x20,30x30")

    base = sub.add_parser("baseline", help="evaluate a non-learning beamformer")
    _add_config_flags(base)

    chk = sub.add_parser("check", help="gradient, SINR and zero-forcing self-tests")
    chk.add_argument("--seed", type=int, default=0)
    return parser


def config_from_args(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config) if args.config else ex.ExperimentConfig()
    overrides = {f.name: getattr(args, "cfg_" + f.name) for f in fields(cfg)
                 if getattr(args, "cfg_" + f.name, None) is not None}
    cfg = ex.config_with(cfg, overrides)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _parse_axis_values(axis: str, text: str):
    out = []
    for item in (t.strip() for t in text.split(",")):
        if not item:
            continue
        if axis == "neurons":
            out.append(tuple(int(v) for v in item.split("x")))
        elif axis in ("antennas", "cells"):
            out.append(int(item))
        else:
            out.append(float(item))
    return out


def _write_run(cfg, out: Path, label):
    mc = ex.run_monte_carlo(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(ex.format_config(cfg))
    ex.emit_csv(ex.trace_rows(mc.runs), out / "trace.csv")
    ex.emit_csv(ex.summary_rows([(label, mc)]), out / "summary.csv", ex.SUMMARY_COLUMNS)
    print(f"{label}: mean {mc.mean:.6g}  median {mc.median:.6g}  std {mc.std:.6g}  "
          f"({cfg.monte_carlo_runs} runs) -> {out}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "check":
            ok = True
            for name, passed, detail in run_checks(args.seed):
                ok &= passed
                print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
            return 0 if ok else EXIT_FAILED_CHECK
        cfg = config_from_args(args)
        if args.command == "run":
            _write_run(cfg, args.out, cfg.method)
        elif args.command == "baseline":
            if cfg.method in ex.LEARNING_METHODS:
                cfg = replace(cfg, method="zf")
            _write_run(cfg, args.out, cfg.method)
        elif args.command == "sweep":
            values = _parse_axis_values(args.axis, args.values)
            results = ex.sweep(cfg, args.axis, values)
            path = ex.emit_csv(ex.summary_rows(results), args.out / f"sweep_{args.axis}.csv",
                               ex.SUMMARY_COLUMNS)
            for value, mc in results:
                print(f"{args.axis}={ex._fmt(value)}: mean {mc.mean:.6g}")
            print(f"-> {path}")
        return 0
    except ThzError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
    except ValueError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
