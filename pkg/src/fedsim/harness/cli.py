"""Command line entry point: ``fedsim run | list | verify | config``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from fedsim.harness.experiments import (
    DESCRIPTIONS,
    EXPERIMENTS,
    ExperimentSpec,
    apply_overrides,
    preset,
    run_experiment,
)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedsim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one named experiment")
    run.add_argument("--experiment", choices=sorted(EXPERIMENTS))
    run.add_argument("--config", help="JSON document mirroring the experiment spec")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (default results/<experiment>)")
    run.add_argument("--d", type=_ints, help="dimension, or comma list for sweeps")
    run.add_argument("--rounds", type=int)
    run.add_argument("--local-steps", type=int)
    run.add_argument("--eta", type=float)
    run.add_argument("--lambda", dest="lam", type=float)
    run.add_argument("--alpha", type=_floats, help="Dirichlet alpha, or comma list")
    run.add_argument("--plots", action=argparse.BooleanOptionalAction, default=None,
                     help="write SVG plots next to the CSVs (default on)")

    sub.add_parser("list", help="list named experiments")
    sub.add_parser("verify", help="run the quick invariant suite")
    cfg = sub.add_parser("config", help="print an experiment's default JSON config")
    cfg.add_argument("--experiment", required=True, choices=sorted(EXPERIMENTS))
    return p


def spec_from_args(args) -> ExperimentSpec:
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        if args.experiment and args.experiment != doc.get("experiment"):
            raise SystemExit("--experiment disagrees with the config file")
        spec = ExperimentSpec.from_json(doc)
    elif args.experiment:
        spec = preset(args.experiment)
    else:
        raise SystemExit("need --experiment or --config")

    doc: dict = {"protocol": {}}
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.rounds is not None:
        doc["protocol"]["rounds"] = args.rounds
    if args.local_steps is not None:
        doc["protocol"]["local_steps"] = args.local_steps
    if args.eta is not None:
        doc["protocol"]["eta"] = args.eta
    if args.lam is not None:
        doc["protocol"]["lambda"] = args.lam
    if args.plots is not None:
        doc["plots"] = args.plots
    doc["out"] = args.out or (str(spec.outputs / spec.name) if not args.config else str(spec.outputs))
    for param, values in (("d", args.d), ("alpha", args.alpha)):
        if values is None:
            continue
        if spec.sweep is not None and spec.sweep.param == param:
            doc["sweep"] = {"param": param, "values": values}
        elif len(values) == 1:
            key = "d" if param == "d" else "dirichlet_alpha"
            doc.setdefault("gen", {})[key] = values[0]
        else:
            raise SystemExit(f"{spec.name} does not sweep {param}; give a single value")
    return apply_overrides(spec, doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        for name in EXPERIMENTS:
            print(f"{name:28s} {DESCRIPTIONS[name]}")
        return 0
    if args.command == "verify":
        from fedsim.harness.verify import run_checks
        return 0 if run_checks() else 1
    if args.command == "config":
        print(json.dumps(preset(args.experiment).to_json(), indent=2))
        return 0
    spec = spec_from_args(args)
    try:
        manifest = run_experiment(spec)
    except Exception as exc:
        print(f"error: {exc} (see {spec.outputs / 'manifest.json'})", file=sys.stderr)
        return 1
    print(f"{spec.name}: {manifest.status} in {manifest.wall_clock_s:.1f}s -> {spec.outputs}")
    for name, digest in sorted(manifest.files.items()):
        print(f"  {name}  {digest[:16]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
