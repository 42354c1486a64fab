"""Command-line entry point: ``bohmcavity run|validate|version``."""

from __future__ import annotations

import argparse
import json
import sys

from .. import __version__, kernels
from ..errors import ConfigurationError, ConvergenceError, NumericalError, ValidationError
from .config import PRESETS, merge_dicts, parse_json, preset_dict, validate_dict

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _load(args):
    raw = preset_dict(args.preset) if args.preset else {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ValidationError(f"cannot read {args.config}: {exc.strerror}") from exc
        raw = merge_dicts(raw, parse_json(text, args.config))
    if not raw:
        raise ValidationError("give a config file or --preset")
    return validate_dict(raw)


def build_parser():
    p = argparse.ArgumentParser(prog="bohmcavity",
                                description="Planar-cavity photon guidance simulations.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run a scenario"), ("validate", "check a scenario file")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config", nargs="?", help="scenario JSON file")
        s.add_argument("--preset", choices=PRESETS, help="built-in scenario used as the base")
        if name == "run":
            s.add_argument("--out", help="output directory (overrides output.dir)")
            s.add_argument("--seed", type=int, help="override run.seed")
    sub.add_parser("version", help="print version and kernel backend")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "version":
        print(f"bohmcavity {__version__} ({kernels.BACKEND} kernels)")
        return EXIT_OK
    try:
        cfg = _load(args)
        if args.command == "validate":
            print(f"{cfg.name}: valid (sha256 {cfg.digest()[:12]})")
            return EXIT_OK
        from .run import run_scenario
        man = run_scenario(cfg, out_dir=args.out, seed=args.seed)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for prob in getattr(exc, "problems", None) or []:
            print(f"  - {prob}", file=sys.stderr)
        return EXIT_INVALID
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, ConvergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps({"name": man.name, "files": len(man.files), "backend": man.backend,
                      "wall_time_s": man.wall_time_s, "warnings": len(man.warnings)}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
