"""Command-line entry point: ``rydtrap run|validate|list-scenarios``.

Exit status: 0 on success, 1 when an acceptance check fails, 2 for
configuration errors.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, defaults, validate_config
from .scenarios import SCENARIOS, run_scenario

EXIT_OK = 0
EXIT_ACCEPTANCE = 1
EXIT_CONFIG = 2


def _plain(v):
    if isinstance(v, (np.floating, float)):
        return float("%.12g" % v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def render_report(name, cfg, seed, res):
    """Report text; contains no timings so reruns are byte-identical."""
    lines = [f"rydtrap {__version__} run report", f"scenario: {name}", f"seed: {seed}", "",
             "[config]", cfg.echo().rstrip(), "", "[outputs]"]
    for fname, schema in res.files.items():
        lines.append(f"{fname}: {schema}")
    lines += ["", "[summary]"]
    lines += [f"{k}: {json.dumps(_plain(v))}" for k, v in res.summary.items()]
    lines += ["", "[fits]"]
    for fname, fit in res.fits.items():
        lines.append(f"{fname}:")
        lines += ["  " + ln for ln in fit.to_text().splitlines()]
    lines += ["", "[acceptance]"]
    for c in res.checks:
        lines.append(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    lines.append(f"overall: {'PASS' if res.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"


def cmd_run(args):
    try:
        cfg = validate_config(args.config) if args.config else defaults()
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    if args.scenario not in SCENARIOS:
        print(f"unknown scenario {args.scenario!r}; see 'rydtrap list-scenarios'", file=sys.stderr)
        return EXIT_CONFIG
    seed = cfg.run.seed if args.seed is None else args.seed
    out = Path(args.out if args.out else cfg.run.output_dir)
    res = run_scenario(args.scenario, cfg, seed, out)
    (out / "report.txt").write_text(render_report(args.scenario, cfg, seed, res))
    (out / "timings.txt").write_text(f"{args.scenario}: {res.seconds:.3f} s\n")
    for c in res.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    if cfg.run.acceptance and not res.passed:
        return EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_validate(args):
    try:
        cfg = validate_config(args.config)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    print(cfg.echo(), end="")
    return EXIT_OK


def cmd_list(args):
    for name, (_, desc) in SCENARIOS.items():
        print(f"{name:16s} {desc}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="rydtrap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("scenario")
    r.add_argument("--config", help="YAML configuration (defaults if omitted)")
    r.add_argument("--seed", type=int, help="overrides run.seed")
    r.add_argument("--out", help="output directory (overrides run.output_dir)")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a configuration and echo it with defaults")
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_validate)
    ls = sub.add_parser("list-scenarios", help="list available scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
