"""Command-line interface: ``autopoly {run,grid,homophily,spectrum,sbm}``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric
failure, 4 guard refusal.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from autopoly.errors import (
    CheckpointError,
    ConfigError,
    GuardError,
    InputError,
    NumericError,
    ShapeError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_GUARD = 4

log = logging.getLogger("autopoly")


def cmd_run(args) -> int:
    from autopoly.config import load_config
    from autopoly.harness import run_experiment, summary_csv

    cfg = load_config(args.config, args.set)
    if args.output:
        cfg.output = Path(args.output)
    summary = run_experiment(cfg)
    sys.stdout.write(summary_csv(summary))
    return EXIT_OK


def cmd_grid(args) -> int:
    from autopoly.config import load_config
    from autopoly.harness import run_grid

    cfg = load_config(args.config, args.set)
    if args.output:
        cfg.output = Path(args.output)
    result = run_grid(cfg)
    theta = ", ".join(f"{t:g}" for t in result.best_theta)
    print(f"best theta [{theta}] val_acc {result.best_val_acc:.4f} over {len(result.table)} candidates")
    print(f"wrote {cfg.output / 'grid_table.csv'} and {cfg.output / 'best_theta.json'}")
    return EXIT_OK


def cmd_homophily(args) -> int:
    from autopoly.data import bundle_homophily, load_bundle

    bundle = load_bundle(args.bundle)
    h = bundle_homophily(bundle)
    if args.json:
        doc = {"dataset": bundle.name, "homophily": h.ratio, "excluded_nodes": h.excluded,
               "nodes": bundle.n, "edges": bundle.graph.num_edges}
        print(json.dumps(doc))
    else:
        print(f"{h.ratio:.4f}")
        print(f"excluded isolated nodes: {h.excluded}")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    from autopoly.filters import response_grid, spectral_response
    from autopoly.model import load_checkpoint

    if args.grid < 2:
        raise InputError(f"--grid needs at least 2 points, got {args.grid}")
    state = load_checkpoint(args.checkpoint)
    text = spectral_response(state.filter, response_grid(args.grid)).to_csv()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sbm(args) -> int:
    from autopoly.config import load_sbm_params
    from autopoly.data import bundle_homophily, save_bundle, sbm_generate

    params, name = load_sbm_params(args.params)
    bundle = sbm_generate(params, name)
    save_bundle(bundle, args.output)
    h = bundle_homophily(bundle)
    print(f"wrote {bundle.name}: {bundle.n} nodes, {bundle.graph.num_edges} edges, homophily {h.ratio:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autopoly", description="Polynomial spectral graph filters for node classification.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, helptext in (("run", cmd_run, "train every seed of an experiment config"),
                               ("grid", cmd_grid, "brute-force coefficient grid search")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="TOML experiment config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set model.order=3 (repeatable)")
        sp.add_argument("-o", "--output", help="output directory (overrides the config)")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("homophily", help="node homophily of a bundle directory")
    sp.add_argument("bundle")
    sp.add_argument("--json", action="store_true", help="print a JSON object instead of text")
    sp.set_defaults(func=cmd_homophily)

    sp = sub.add_parser("spectrum", help="export the spectral response of a checkpoint as CSV")
    sp.add_argument("checkpoint")
    sp.add_argument("--grid", type=int, default=201, help="number of evenly spaced points on [0, 2]")
    sp.add_argument("-o", "--output", help="write to this file instead of stdout")
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("sbm", help="materialize a synthetic SBM bundle")
    sp.add_argument("params", help="TOML file with SBM parameters")
    sp.add_argument("-o", "--output", required=True, help="bundle directory to create")
    sp.set_defaults(func=cmd_sbm)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError, ShapeError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GuardError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_GUARD


if __name__ == "__main__":
    sys.exit(main())
