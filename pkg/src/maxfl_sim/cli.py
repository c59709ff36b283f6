"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import models
from .config import is_meanest_config, load_toml, meanest_from_dict, parse_config, parse_meanest_config
from .core import ConfigError, RngStream
from .data import IdxFormatError

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2


def _cmd_fl(args) -> int:
    from .runner import run_experiment

    cfg = parse_config(args.config)
    summary = run_experiment(cfg, args.out, args.threads)
    print(json.dumps({"rounds_csv": summary.rounds_csv, "mean": summary.mean, "std": summary.std},
                     indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_meanest(args) -> int:
    from .runner import run_meanest

    path = run_meanest(parse_meanest_config(args.config), args.out, args.threads)
    print(path)
    return EXIT_OK


def gradcheck_specs(n_in: int = 5, n_classes: int = 3) -> list[models.ModelSpec]:
    return [
        models.ModelSpec.scalar_quadratic(0.5),
        models.ModelSpec.linear_regression(n_in),
        models.ModelSpec.softmax_regression(n_in, n_classes),
        models.ModelSpec.mlp((n_in, 8, n_classes)),
    ]


def random_case(spec: models.ModelSpec, stream: RngStream, batch: int = 8):
    """A random (params, batch) pair for finite-difference checking."""
    rng = stream.generator()
    params = rng.normal(0.0, 0.5, spec.dim)
    x = rng.normal(0.0, 1.0, (batch, spec.n_inputs))
    if spec.is_classifier:
        y = rng.integers(0, spec.layer_sizes[-1], batch)
    else:
        y = rng.normal(0.0, 1.0, batch)
    return params, models.Batch(x, y)


def gradcheck(draws: int = 100, seed: int = 0) -> dict[str, float]:
    """Worst fd_check error per model kind over ``draws`` random cases."""
    root = RngStream(seed)
    worst = {}
    for spec in gradcheck_specs():
        errs = [models.fd_check(spec, *random_case(spec, root.child(round=i, purpose=spec.kind.value)))
                for i in range(draws)]
        worst[spec.kind.value] = float(np.max(errs))
    return worst


def _cmd_gradcheck(args) -> int:
    for kind, err in gradcheck(args.draws, args.seed).items():
        print(f"{kind:20s} max relative error {err:.3e}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    raw = load_toml(args.config)
    if is_meanest_config(raw):
        cfg = meanest_from_dict(raw)
    else:
        cfg = parse_config(args.config)
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxfl-sim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, metavar="PATH")
        return p

    fl = with_config(sub.add_parser("fl", help="run a federated experiment"))
    fl.add_argument("--threads", type=int, default=1, metavar="N")
    fl.add_argument("--out", metavar="DIR")
    fl.set_defaults(func=_cmd_fl)

    me = with_config(sub.add_parser("meanest", help="mean-estimation appeal sweep"))
    me.add_argument("--threads", type=int, default=1, metavar="N")
    me.add_argument("--out", metavar="DIR")
    me.set_defaults(func=_cmd_meanest)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every model")
    gc.add_argument("--draws", type=int, default=100)
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=_cmd_gradcheck)

    va = with_config(sub.add_parser("validate", help="parse a config and print it with defaults"))
    va.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, IdxFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
