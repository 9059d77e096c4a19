"""Command-line interface.

Subcommands: ``attack``, ``sweep``, ``defend-eval``, ``energy-map`` and ``selfcheck``.
Settings resolve as defaults < ``--config`` file < ``FREQALIGN_OUTPUT_DIR`` < flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import (
    SCALAR_SECTIONS,
    ConfigError,
    RawConfig,
    RunConfig,
    build_config,
    flag_name,
    parse_value,
    read_config,
    to_text,
)
from .evaluation import energy_map
from .imageio import load_image, save_tensor
from .runner import defend_eval, run_batch, run_sweep
from .selfcheck import run_selfcheck
from .validation import DomainError

ENV_OUTPUT_DIR = "FREQALIGN_OUTPUT_DIR"


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="configuration file")
    p.add_argument("--pair", nargs=2, action="append", metavar=("SOURCE", "TARGET"), help="source/target image pair (repeatable)")
    p.add_argument("--print-effective-config", action="store_true", help="print the resolved configuration and exit")
    group = p.add_argument_group("configuration overrides")
    for section, keys in SCALAR_SECTIONS.items():
        for key in keys:
            group.add_argument(flag_name(section, key), dest=f"cfg__{section}__{key}", metavar="VALUE")


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config is not None:
        text = args.config.read_text()
        raw = read_config(text, str(args.config))
        base_dir = args.config.resolve().parent
        if "pair" in raw.tables:
            for _, table in raw.tables["pair"]:
                for key in ("source", "target"):
                    if key in table and isinstance(table[key][0], str) and not Path(table[key][0]).is_absolute():
                        table[key] = (str(base_dir / table[key][0]), table[key][1])
        cfg = build_config(raw, cfg)
    overrides = RawConfig()
    env_dir = os.environ.get(ENV_OUTPUT_DIR)
    if env_dir:
        overrides.scalars[("run", "output_dir")] = (env_dir, f"environment {ENV_OUTPUT_DIR}")
    for section, keys in SCALAR_SECTIONS.items():
        for key in keys:
            text = getattr(args, f"cfg__{section}__{key}", None)
            if text is None:
                continue
            where = f"flag {flag_name(section, key)}"
            try:
                value = parse_value(text)
            except ValueError:
                # unquoted strings such as paths are fine on the command line
                value = text
            overrides.scalars[(section, key)] = (value, where)
    if args.pair:
        overrides.tables["pair"] = [
            ("flag --pair", {"source": (s, "flag --pair"), "target": (t, "flag --pair")}) for s, t in args.pair
        ]
    return build_config(overrides, cfg)


def cmd_attack(args, cfg: RunConfig) -> int:
    outcome = run_batch(cfg, defenses=not args.no_defenses)
    _report(outcome, cfg)
    return outcome.exit_code


def cmd_sweep(args, cfg: RunConfig) -> int:
    if not cfg.sweep_param:
        raise ConfigError("sweep needs --sweep-param (or [sweep] param) and --sweep-values")
    outcome = run_sweep(cfg, defenses=args.with_defenses)
    _report(outcome, cfg)
    return outcome.exit_code


def cmd_defend_eval(args, cfg: RunConfig) -> int:
    outcome = defend_eval(cfg, args.adversarial_dir)
    _report(outcome, cfg)
    return outcome.exit_code


def cmd_energy_map(args, cfg: RunConfig) -> int:
    image = load_image(args.image)
    specs = list(cfg.ensemble)
    if not 0 <= args.encoder < len(specs):
        raise ConfigError(f"--encoder must index the ensemble (0..{len(specs) - 1})")
    spec = specs[args.encoder]
    if image.shape != spec.input_size:
        spec = dataclasses.replace(spec, input_size=image.shape)
    theta = args.theta if args.theta is not None else cfg.attack.theta
    n = args.n if args.n is not None else cfg.attack.n
    emap = energy_map(image, spec, theta, n)
    if args.out:
        save_tensor(args.out, emap)
    np.savetxt(sys.stdout, emap, fmt="%.6f", delimiter=",")
    return 0


def cmd_selfcheck(args, cfg: RunConfig) -> int:
    return 0 if run_selfcheck(args.seed) else 1


def _report(outcome, cfg: RunConfig) -> None:
    print(f"{len(outcome.rows)} metric rows written to {cfg.output_dir}; {len(outcome.failures)} failure(s)")
    for idx, msg in outcome.failures:
        print(f"  pair {idx}: {msg}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freqalign", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="attack every configured pair and write metrics")
    _add_config_flags(p)
    p.add_argument("--no-defenses", action="store_true", help="skip defended re-evaluation")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="vary one hyperparameter with the pairs held fixed")
    _add_config_flags(p)
    p.add_argument("--with-defenses", action="store_true", help="also evaluate each defense per row")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("defend-eval", help="evaluate defended adversarial images on the holdouts")
    _add_config_flags(p)
    p.add_argument("--adversarial-dir", type=Path, help="output directory of a previous attack run")
    p.set_defaults(func=cmd_defend_eval)

    p = sub.add_parser("energy-map", help="per-patch high-frequency energy map of an image")
    _add_config_flags(p)
    p.add_argument("image", type=Path)
    p.add_argument("--encoder", type=int, default=0, help="ensemble index of the encoder to use")
    p.add_argument("--theta", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--out", type=Path, help="also save the map as a FRAT tensor")
    p.set_defaults(func=cmd_energy_map)

    p = sub.add_parser("selfcheck", help="run the built-in property checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selfcheck, config=None, pair=None, print_effective_config=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.print_effective_config:
            sys.stdout.write(to_text(cfg))
            return 0
        return args.func(args, cfg)
    except (ConfigError, DomainError, OSError) as exc:
        print(f"freqalign: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
