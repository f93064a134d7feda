"""Command-line entry point: ``ksdflow run|generate|check``.

Exit codes: 0 success, 1 configuration error, 2 divergence during a run,
3 a verification check failed.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import generate_ica, generate_logistic
from .diagnostics import stein_identity_check
from .experiments import OUTPUT_ENV, ConfigError, ExperimentConfig, run_experiment
from .flows import DivergenceError
from .kernel import IMQ, GaussianRBF, fd_check
from .stein import SteinKernel
from .targets import Gaussian, symmetric_mixture

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("ksdflow")


def load_config(path):
    """Parse a TOML config (dotted keys such as ``flow.max_iters = 500``)."""
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None


def cmd_run(args):
    raw = load_config(args.config)
    cfg = ExperimentConfig.from_dict(raw, base_dir=os.path.dirname(os.path.abspath(args.config)))
    outdir = args.output_dir or os.environ.get(OUTPUT_ENV) or cfg.output_dir
    try:
        metrics = run_experiment(cfg, output_dir=outdir)
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"{cfg.experiment}: ok ({metrics['runtime_s']:.1f}s) -> {outdir}")
    return EXIT_OK


def cmd_generate(args):
    spec = load_config(args.spec)
    kind = spec.get("kind")
    path = spec.get("path")
    if not path:
        raise ConfigError("generate spec needs a 'path'")
    if not os.path.isabs(path):
        path = os.path.join(os.path.dirname(os.path.abspath(args.spec)), path)
    seed = spec.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    try:
        if kind == "ica":
            out = generate_ica(path, int(spec.get("p", 2)), int(spec.get("q", 1000)), seed)
        elif kind == "logreg":
            out = generate_logistic(path, int(spec.get("p", 5)), int(spec.get("q", 400)), seed,
                                    separable=bool(spec.get("separable", True)),
                                    margin=float(spec.get("margin", 0.1)))
        else:
            raise ConfigError(f"unknown dataset kind {kind!r}; use 'ica' or 'logreg'")
    except OSError as err:
        raise ConfigError(f"cannot write {path}: {err}") from None
    for p in out:
        print(p)
    return EXIT_OK


def cmd_check(args):
    rows = []
    for name, kern in (("GaussianRBF(1)", GaussianRBF(1.0)), ("IMQ(1,-0.5)", IMQ(1.0, -0.5))):
        rep = fd_check(kern, samples=args.fd_samples, seed=args.seed)
        worst = max(rep.max_rel_err.values())
        rows.append((f"fd {name}", f"max rel err {worst:.2e}", rep.passed))
    ys = np.array([[0.0, 0.0], [0.5, 0.5], [-1.0, 0.3], [1.5, -1.0], [2.0, 2.0]])
    for name, model in (("N(0,I)", Gaussian.standard(2)), ("mixture(0.1)", symmetric_mixture(0.1))):
        sk = SteinKernel(GaussianRBF(1.0), model)
        for k, y in enumerate(ys):
            res = stein_identity_check(sk, y, args.samples, seed=args.seed + k)
            rows.append((f"stein {name} y={y.tolist()}",
                         f"mean {res.mean:+.2e} se {res.stderr:.2e}", res.passed))
    width = max(len(r[0]) for r in rows)
    for label, detail, ok in rows:
        print(f"{label:<{width}}  {detail:<30}  {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if all(r[2] for r in rows) else EXIT_CHECK


def build_parser():
    ap = argparse.ArgumentParser(prog="ksdflow", description="Kernel Stein discrepancy descent")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a TOML config")
    p.add_argument("config")
    p.add_argument("-o", "--output-dir", default=None,
                   help=f"override output directory (also ${OUTPUT_ENV})")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("generate", help="write a synthetic dataset from a TOML spec")
    p.add_argument("spec")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("check", help="finite-difference and Stein-identity checks")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--fd-samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValueError as err:  # ConfigError and malformed data files
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
