"""Config-driven batch front end.

Subcommands:
  run             run a scenario's Monte Carlo experiment, emit result tables
  converge        run the ensemble-size convergence study
  list-scenarios  print the built-in scenario names

Result tables are long-format (k, label, value) CSV or JSON-lines files.
Floats are printed with 17 significant digits so re-parsing round-trips
exactly.  The effective configuration (defaults resolved) is written next to
the results; re-running from it reproduces the estimation outputs byte for
byte.  Timing tables are wall-clock and excluded from that guarantee.
"""

import argparse
import json
import os
import sys
from pathlib import Path

from .forward import FilterError
from .runner import convergence_study, run_monte_carlo
from .scenarios import (BUILTIN_SCENARIOS, ConfigError, config_from_dict,
                        validate_config)
from .ssm import ModelError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fmt(value):
    return format(float(value), ".17g")


def _write_table(path, rows, fmt):
    """rows: iterable of (k, label, value)."""
    if fmt == "csv":
        with open(path.with_suffix(".csv"), "w") as fh:
            fh.write("k,label,value\n")
            for k, label, value in rows:
                fh.write(f"{k},{label},{_fmt(value)}\n")
    else:
        with open(path.with_suffix(".jsonl"), "w") as fh:
            for k, label, value in rows:
                fh.write(json.dumps({"k": int(k), "label": label,
                                     "value": float(_fmt(value))}) + "\n")


def _series_rows(table, start_k=1):
    for label in sorted(table):
        for i, value in enumerate(table[label]):
            yield start_k + i, label, value


def _resolve_config(args):
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config parse error at line {exc.lineno}: {exc.msg}")
        cfg = config_from_dict(doc)
    elif args.scenario:
        if args.scenario not in BUILTIN_SCENARIOS:
            raise ConfigError(f"unknown scenario '{args.scenario}' "
                              f"(expected one of {sorted(BUILTIN_SCENARIOS)})")
        cfg = BUILTIN_SCENARIOS[args.scenario]()
    else:
        raise ConfigError("one of --scenario or --config is required")
    seed = args.seed
    if seed is None and os.environ.get("INVFILTER_SEED"):
        seed = int(os.environ["INVFILTER_SEED"])
    if seed is not None:
        cfg.seed = seed
    validate_config(cfg)
    return cfg


def _write_effective_config(cfg, out_dir):
    doc = {"scenario": cfg.name}
    doc.update({k: v for k, v in cfg.to_dict().items() if k != "name"})
    with open(out_dir / "config.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_run(args):
    cfg = _resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_monte_carlo(cfg, threads=args.threads)

    rmse_rows = list(_series_rows(result.rmse_avg))
    rmse_rows += [(k, f"{label}:raw", v)
                  for k, label, v in _series_rows(result.rmse)]
    _write_table(out_dir / "rmse", rmse_rows, args.format)
    _write_table(out_dir / "nci", list(_series_rows(result.nci)), args.format)
    _write_table(out_dir / "rcrlb", list(_series_rows(result.rcrlb, start_k=0)),
                 args.format)
    _write_table(out_dir / "timing",
                 [(0, label, v) for label, v in sorted(result.timing.items())],
                 args.format)
    if result.rel_error:
        _write_table(out_dir / "rel_error", list(_series_rows(result.rel_error)),
                     args.format)
    _write_effective_config(cfg, out_dir)
    print(f"wrote results for scenario '{cfg.name}' "
          f"({result.runs} runs, {result.failures} failures) to {out_dir}")
    return EXIT_OK


def _cmd_converge(args):
    cfg = _resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_list = [int(tok) for tok in args.n_list.split(",")]
    result = convergence_study(cfg, n_list, reps=args.reps, k_probe=args.k_probe,
                               gamma=args.gamma, n_ref=args.n_ref)
    rows = [(n, "fourth_moment_error", e) for n, e in zip(result.n_list, result.errors)]
    rows += [(n, "mean_retries", r) for n, r in zip(result.n_list, result.retries)]
    rows += [(0, "slope", result.slope),
             (0, "spearman_rho", result.spearman_rho),
             (0, "spearman_p", result.spearman_p),
             (0, "ref_spread", result.ref_spread),
             (result.n_ref, "n_ref", result.n_ref)]
    _write_table(out_dir / "convergence", rows, args.format)
    _write_effective_config(cfg, out_dir)
    print(f"convergence slope {result.slope:.3f} "
          f"(Spearman rho {result.spearman_rho:.3f}, p {result.spearman_p:.2e})")
    return EXIT_OK


def _cmd_list(args):
    for name in sorted(BUILTIN_SCENARIOS):
        print(name)
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="invfilter",
                     description="Inverse-filtering experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--scenario", help="built-in scenario name")
        p.add_argument("--config", help="path to a JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed override (env INVFILTER_SEED as fallback)")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--format", choices=("csv", "json-lines"), default="csv")
        p.add_argument("--threads", type=int, default=1, help="worker thread cap")

    p_run = sub.add_parser("run", help="run a Monte Carlo experiment")
    add_common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_conv = sub.add_parser("converge", help="run the convergence study")
    add_common(p_conv)
    p_conv.add_argument("--n-list", default="50,100,200,400,800,1600")
    p_conv.add_argument("--reps", type=int, default=500)
    p_conv.add_argument("--k-probe", type=int, default=10)
    p_conv.add_argument("--gamma", type=float, default=0.0)
    p_conv.add_argument("--n-ref", type=int, default=100_000)
    p_conv.set_defaults(func=_cmd_converge)

    p_list = sub.add_parser("list-scenarios", help="print built-in scenarios")
    p_list.set_defaults(func=_cmd_list)
    return parser


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelError, FilterError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
