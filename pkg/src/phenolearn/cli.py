"""Command-line entry point: ``phenolearn <subcommand> [--config FILE] [--key=value ...]``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import pipeline, synth, tables
from .errors import ConfigError, PhenoError

STAGE_COMMANDS = {
    "cohort": ("cohort",),
    "gpr-fit": ("gpr-fit",),
    "interpolate": ("interpolate",),
    "train-ae": ("patches", "train-ae"),
    "features": ("features",),
    "analyze": ("analyze",),
    "plot": ("plot",),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _overrides(extra):
    out = {}
    for arg in extra:
        if not arg.startswith("--") or "=" not in arg:
            raise ConfigError(f"unrecognized argument {arg!r}; overrides use --key=value")
        key, value = arg[2:].split("=", 1)
        out[key] = value
    return out


def _config(args, extra):
    overrides = _overrides(extra)
    if args.out:
        overrides["out_dir"] = args.out
    if args.config:
        return pipeline.load_config(args.config, overrides)
    return pipeline.make_config(overrides)


def build_parser():
    parser = _Parser(prog="phenolearn",
                     description="Learn phenotype features from irregular lab time-series.",
                     epilog="exit codes: 0 ok, 1 usage or config, 2 data, 3 numerical")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        return p

    p = sub.add_parser("synth", help="write a synthetic two-class cohort and a config for it")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--noise", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)

    common(sub.add_parser("cooccur", help="ICD-9 category x LOINC admission counts"))
    for name in STAGE_COMMANDS:
        common(sub.add_parser(name, help=f"run the {name} stage"))
    p = common(sub.add_parser("run", help="run the full pipeline"))
    p.add_argument("--force", action="store_true", help="recompute stages whose outputs exist")
    return parser


def _synth(args):
    spec = synth.SyntheticSpec(n_per_class=args.n_per_class, noise=args.noise, seed=args.seed)
    paths = synth.generate_synthetic(spec, args.out)
    cfg_path = os.path.join(args.out, "pipeline.cfg")
    with open(cfg_path, "w") as fh:
        fh.write("# synthetic cohort generated by `phenolearn synth`\n")
        for role, path in paths.items():
            fh.write(f"{role} = {os.path.basename(path)}\n")
        fh.write("out_dir = run\n")
    print(cfg_path)


def _cooccur(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    m = pipeline.stage_cooccur(cfg)
    for row in m.to_rows():
        print("\t".join(str(v) for v in row))


def main(argv=None):
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "synth":
            if extra:
                raise ConfigError(f"unrecognized arguments {extra}")
            _synth(args)
            return 0
        cfg = _config(args, extra).validate()
        if args.command == "cooccur":
            _cooccur(cfg)
        elif args.command == "run":
            pipeline.run_pipeline(cfg, force=args.force)
            metrics = tables.read_kv(cfg.path("metrics.txt"))
            for k in ("auc_layer1", "auc_layer2", "tsne_kl", "n_train", "n_test"):
                print(f"{k} = {metrics[k]}")
        else:
            with pipeline.run_lock(cfg.out_dir):
                for stage in STAGE_COMMANDS[args.command]:
                    pipeline.run_stage(cfg, stage, force=True)
    except PhenoError as e:
        print(f"phenolearn: error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"phenolearn: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
