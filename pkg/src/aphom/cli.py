"""Command line entry point: ``aphom run | field-check | fit | list``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from scipy import fft

from . import experiments as X
from .coeff import FieldError
from .report import FitError, fit_power_law, read_series_csv

log = logging.getLogger("aphom")


def _threads(arg):
    if arg is not None:
        return int(arg)
    env = os.environ.get("APHOM_THREADS")
    return int(env) if env else 1


def _summary(rep, paths) -> str:
    lines = [f"{rep.kind}: {'PASS' if rep.passed else 'FAIL'}  hash {rep.digest()[:16]}"]
    for cid, f in sorted(rep.flags.items()):
        lines.append(f"  [{('ok' if f['passed'] else 'FAIL'):>4}] {cid}: {f['metric']} {f['op']} "
                     f"{f.get('threshold')}  (value {f['value']})")
    lines.append(f"  report: {paths['report']}")
    return "\n".join(lines)


def cmd_run(args) -> int:
    try:
        cfg, base = X.resolve_config(args.config)
    except X.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return X.EXIT_CONFIG
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = Path(args.out) if args.out else Path("runs") / f"{cfg['name']}-seed{seed}"
    try:
        with fft.set_workers(_threads(args.threads)):
            rep = X.run_experiment(cfg, base, out=out, seed=seed)
    except Exception as exc:  # mapped onto the exit-code contract
        code = X.exit_code_for(exc)
        if code == X.EXIT_CONFIG and not isinstance(exc, ValueError):
            raise
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    paths = rep.write(out, figures=not args.no_figures)
    print(_summary(rep, paths))
    return X.EXIT_OK if rep.passed else X.EXIT_ASSERT


def cmd_field_check(args) -> int:
    cfg = {"kind": "field-check", "field": str(Path(args.field).resolve()) if Path(args.field).exists() else args.field,
           "params": {"probes": args.probes},
           "checks": [{"id": "certificate", "metric": "cert_ok", "op": "true"},
                      {"id": "sampled", "metric": "sampled_ok", "op": "true"}]}
    try:
        rep = X.run_experiment(cfg)
    except FieldError as exc:
        print(f"field invalid: {exc}", file=sys.stderr)
        return X.EXIT_FIELD
    except X.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return X.EXIT_CONFIG
    print(json.dumps(rep.metrics, indent=2, sort_keys=True))
    return X.EXIT_OK if rep.passed else X.EXIT_ASSERT


def cmd_fit(args) -> int:
    try:
        cols = read_series_csv(args.series)
        names = list(cols)
        xk = args.x or names[0]
        yk = args.y or names[1]
        fit = fit_power_law(cols[xk], cols[yk])
    except (OSError, KeyError, IndexError, ValueError, FitError) as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return X.EXIT_CONFIG
    print(json.dumps({"x": xk, "y": yk, **fit.to_dict()}, indent=2))
    return X.EXIT_OK


def cmd_list(args) -> int:
    print("fields:  " + " ".join(X.bundled_fields()))
    print("configs: " + " ".join(X.bundled_configs()))
    return X.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aphom", description="Almost-periodic homogenization experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config (path or bundled name)")
    r.add_argument("config")
    r.add_argument("--out", help="output directory")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int, help="FFT worker threads (default: $APHOM_THREADS or 1)")
    r.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("field-check", help="validate a coefficient field file")
    f.add_argument("field")
    f.add_argument("--probes", type=int, default=100_000)
    f.set_defaults(func=cmd_field_check)

    t = sub.add_parser("fit", help="log-log least squares on two CSV columns")
    t.add_argument("series")
    t.add_argument("--x")
    t.add_argument("--y")
    t.set_defaults(func=cmd_fit)

    ls = sub.add_parser("list", help="bundled fields and configs")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
