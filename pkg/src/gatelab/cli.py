"""Command-line interface.

Subcommands map onto the lab's workflows: ``train`` and ``attack`` for
model preparation and trajectory dumps, one subcommand per verification
experiment (``verify-dynamics``, ``effect-fit``, ``growth``, ``impact``,
``cosine``, ``oscillate``), and ``report`` to render figures from the CSVs
an earlier run produced.  ``--seed``, ``--out`` and ``--dataset`` override
the config file.
"""

from __future__ import annotations

import argparse
import sys

from .configfile import ConfigError, load_config
from .experiments import (
    ExperimentConfig,
    ExperimentError,
    config_from_mapping,
    run_attack_dump,
    run_experiment,
    run_training,
)

_COMMAND_KINDS = {
    "verify-dynamics": "kappa-table",
    "effect-fit": "effect-fit",
    "growth": "growth",
    "impact": "impact-vs-a",
    "cosine": "cosine-vs-a",
    "oscillate": "oscillation",
}


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="path to a key = value configuration file")
    sub.add_argument("--seed", type=int, help="seed override")
    sub.add_argument("--out", help="output directory override")
    sub.add_argument("--dataset", help="dataset spec override (idx:<imgs>,<labels> | synth:<kind>,...)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gatelab",
        description="attacks, spectra, and training effects on gated ReLU networks",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("train", "train a network and write a checkpoint plus history.csv"),
        ("attack", "attack evaluation samples and dump the trajectory scalars"),
        ("verify-dynamics", "analytic-vs-real perturbation error table across the zoo"),
        ("effect-fit", "measured vs predicted training-effect errors across the zoo"),
        ("growth", "per-step perturbation and gradient norms for three step rules"),
        ("impact", "per-sample amplification against effect magnitudes"),
        ("cosine", "alignment of gradient shifts with their mean, by amplification"),
        ("oscillate", "gradient response to fixed-length weight steps"),
        ("report", "render figures for the CSVs in an output directory"),
    ]:
        sub = commands.add_parser(name, help=help_text)
        if name != "report":
            _add_common(sub)
        else:
            sub.add_argument("--out", required=True, help="directory containing experiment CSVs")
    return parser


def _build_config(args: argparse.Namespace, kind: str | None) -> ExperimentConfig:
    mapping = load_config(args.config) if args.config else {}
    overrides = {"seed": args.seed, "out": args.out, "dataset": args.dataset}
    if kind is not None:
        overrides["kind"] = kind
    cfg = config_from_mapping(mapping, overrides)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            from .report import render_reports

            written = render_reports(args.out)
            for path in written:
                print(path)
            if not written:
                print("no known CSVs found", file=sys.stderr)
                return 1
            return 0
        if args.command == "train":
            cfg = _build_config(args, kind=None)
            paths = run_training(cfg)
            for name, path in paths.items():
                print(f"{name}: {path}")
            return 0
        if args.command == "attack":
            cfg = _build_config(args, kind=None)
            tables = run_attack_dump(cfg)
            print(f"trajectory rows: {len(tables['trajectory'].rows)}")
            if cfg.out:
                print(f"written under {cfg.out}")
            return 0
        kind = _COMMAND_KINDS[args.command]
        cfg = _build_config(args, kind=kind)
        tables = run_experiment(cfg)
        for name, table in tables.items():
            print(f"{name}: {len(table.rows)} rows")
            if cfg.out:
                print(f"written to {cfg.out}/{name}.csv")
        return 0
    except (ConfigError, ExperimentError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
