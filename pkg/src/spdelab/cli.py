"""Command-line entry point: one subcommand per experiment plus ``report``.

Options may come from a JSON config file (``--config``), individual flags, or
both; flags win.  The exit code is 0 only when every assertion of the run
passed.
"""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import EXPERIMENTS, ExperimentConfig, report, run


def _add_common(parser):
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--model", choices=["rd", "ns"])
    parser.add_argument("--K", type=int)
    parser.add_argument("--nu", type=float)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--T", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--replicas", type=int)
    parser.add_argument("--scheme", choices=["exponential", "semi_implicit"])
    parser.add_argument("--delta", type=float)
    parser.add_argument("--subspace")
    parser.add_argument("--out")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spdelab",
        description="spectral Galerkin laboratory: simulation, variations, "
        "Malliavin spectra, bracket spans, Wiener-polynomial checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        _add_common(p)
    p = sub.add_parser("report", help="summarize a finished run directory")
    p.add_argument("outdir")
    return parser


def config_from_args(args):
    data = {}
    if args.config:
        with open(args.config) as fh:
            data.update(json.load(fh))
    for key in ("model", "K", "nu", "steps", "T", "seed", "replicas", "scheme", "delta", "subspace", "out"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    data["experiment"] = args.command
    return ExperimentConfig.from_dict(data)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "report":
        sys.stdout.write(report(args.outdir))
        return 0
    try:
        config = config_from_args(args)
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return 2
    manifest = run(config)
    sys.stdout.write(report(config["out"]))
    return 0 if manifest["ok"] else 1


if __name__ == "__main__":
    sys.exit(main())
