"""Command line entry point: ``fimsketch run | density | tables``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
import argparse
import logging
import os
import sys

from .config import ConfigError, load_config, normalize_key
from .errors import FimSketchError
from .experiments import emit_density, reproduce_tables, run_scenario
from .schrodinger import ConstantSource, Grid, preset

log = logging.getLogger("fimsketch")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _split_run_args(tokens):
    """Config path (first bare token) and ``--key value`` / ``--key=value`` overrides."""
    config = None
    out = {}
    it = iter(tokens)
    for tok in it:
        if not tok.startswith("--"):
            if config is not None:
                raise ConfigError(tok, "expected --key value")
            config = tok
            continue
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
        else:
            key = tok[2:]
            try:
                value = next(it)
            except StopIteration:
                raise ConfigError(normalize_key(key), "missing value") from None
        out[normalize_key(key)] = value
    return config, out


def _cmd_run(args, extra):
    config, overrides = _split_run_args(extra)
    cfg = load_config(config, overrides)
    paths = run_scenario(cfg)
    print(f"wrote {len(paths)} files to {cfg.output}")
    report = os.path.join(cfg.output, "report.csv")
    with open(report) as fh:
        sys.stdout.write(fh.read())


def _cmd_density(args, extra):
    if extra:
        raise ConfigError(extra[0], "unknown option")
    try:
        coeffs = preset(args.scenario, args.alpha)
    except KeyError as exc:
        raise ConfigError("scenario", str(exc.args[0])) from None
    if args.nx < 4:
        raise ConfigError("nx", "must be at least 4")
    density = emit_density(Grid(args.nx), coeffs, ConstantSource(args.gamma), args.out)
    top = density.values.argmax()
    print(f"wrote {args.out}: max density {density.values[top]:.4g} at {tuple(density.points[top])}")


def _cmd_tables(args, extra):
    if extra:
        raise ConfigError(extra[0], "unknown option")
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError("seeds", f"cannot parse {args.seeds!r}") from None
    if not seeds:
        raise ConfigError("seeds", "need at least one seed")
    rows, _ = reproduce_tables(seeds, out_dir=args.out, jobs=args.jobs, nx=args.nx)
    for row in rows:
        lam = "" if row["lambda_min_median"] is None else f"{row['lambda_min_median']:.3g}"
        print(f"{row['table']:13s} {row['method']:18s} lambda_min={lam:>9s} c_inv={row['c_inv_median']:.3g}")


def build_parser():
    parser = argparse.ArgumentParser(prog="fimsketch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario; any config key may be given as --key value")
    p.usage = "fimsketch run [config] [--key value ...]"
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("density", help="write the optimal sampling density of a preset")
    p.add_argument("--scenario", default="systemC")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--nx", type=int, default=30)
    p.add_argument("--gamma", type=float, default=1.0e4)
    p.add_argument("--out", default="density.csv")
    p.set_defaults(func=_cmd_density)

    p = sub.add_parser("tables", help="reproduce the design comparison tables over several seeds")
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--nx", type=int, default=30)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="runs/tables")
    p.set_defaults(func=_cmd_tables)
    return parser


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if "run" in argv and not ({"-h", "--help"} & set(argv)):
        # run overrides are free-form, so keep argparse away from them
        cut = argv.index("run") + 1
        args = parser.parse_args(argv[:cut])
        extra = argv[cut:]
    else:
        args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FimSketchError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
