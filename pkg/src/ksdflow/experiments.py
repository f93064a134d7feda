"""Desk-scale experiments driven by nested config dictionaries.

Each experiment writes per-run traces (JSON and CSV), final particles (CSV)
and a ``metrics.json`` to its output directory.  Everything except the
``runtime_s`` field of the metrics is a deterministic function of the config.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .data import (load_labeled_csv, make_ica_data, make_logistic_data, standardize,
                   write_matrix_csv)
from .diagnostics import amari_distance, ksd_between, logreg_accuracy, symmetry_residual
from .flows import (SCHEMES, DivergenceError, FlowConfig, FlowTrace, GridSearch,
                    ParticleSet, RandomSearch, run_flow, stein_points, stein_points_objective)
from .kernel import make_kernel
from .stein import SteinKernel
from .targets import Banana, Gaussian, ICAPosterior, LogisticPosterior, symmetric_mixture

__all__ = ["EXPERIMENTS", "ConfigError", "ExperimentConfig", "run_experiment",
           "strip_runtime", "OUTPUT_ENV"]

log = logging.getLogger(__name__)

OUTPUT_ENV = "KSDFLOW_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


# per-experiment defaults; user config is merged on top
_DEFAULTS = {
    "gaussian2d": {
        "n_particles": 50,
        "target": {"dim": 2},
        "init": {"distribution": "gaussian", "mean": [1.0, 1.0], "scale": 1.0},
        "flow": {"schemes": ["KSD_LBFGS", "SVGD", "MMD_GD"], "max_iters": 10000,
                 "svgd": {"step_size": 0.1, "max_iters": 3000},
                 "mmd_gd": {"step_size": 1.0, "max_iters": 3000}},
    },
    "mixture": {
        "n_particles": 30,
        "target": {"variance": 0.1, "separation": 1.0},
        "init": {"distribution": "on-axis", "scale": 1.0},
        "flow": {"schemes": ["KSD_GD"], "max_iters": 2000, "step_size": 0.01},
    },
    "mixture_annealed": {
        "n_particles": 50,
        "target": {"variance": 0.1, "separation": 1.0},
        "init": {"distribution": "gaussian", "mean": [0.0, 0.0], "scale": 0.5},
        "flow": {"schemes": ["KSD_LBFGS"], "max_iters": 1000,
                 "anneal_schedule": [[0.1, 500], [1.0, 500]]},
    },
    "banana": {
        "n_particles": 50,
        "target": {"a": 2.0, "b": 0.2},
        "init": {"distribution": "gaussian", "mean": [0.0, 0.0], "scale": 1.0},
        "flow": {"schemes": ["KSD_LBFGS", "SVGD"], "max_iters": 2000,
                 "svgd": {"step_size": 0.1}},
    },
    "logreg": {
        "n_particles": 10,
        "target": {"prior_rate": 0.01},
        "data": {"p": 5, "n_train": 400, "n_test": 200, "separable": True},
        "init": {"distribution": "gaussian", "scale": 1.0},
        "flow": {"schemes": ["KSD_LBFGS", "SVGD"], "max_iters": 1000,
                 "svgd": {"step_size": 0.01}},
    },
    "ica": {
        "n_particles": 10,
        "data": {"p": 2, "q": 1000},
        "repeats": 10,
        "init": {"distribution": "gaussian", "scale": 1.0},
        "flow": {"schemes": ["KSD_LBFGS", "SVGD"], "max_iters": 1000,
                 "svgd": {"step_size": 0.001}},
    },
    "stein_points_banana": {
        "n_particles": 50,
        "target": {"a": 2.0, "b": 0.2},
        "search": {"kind": "grid", "low": [-6.0, -6.0], "high": [6.0, 4.0], "num": 81},
    },
    "convergence_race": {
        "n_particles": 30,
        "target": {"dim": 1},
        "init": {"distribution": "gaussian", "mean": [1.0], "scale": 1.0},
        "flow": {"max_iters": 1000, "ksd_gd_steps": [1.0, 10.0, 100.0],
                 "svgd_steps": [0.01, 0.1, 1.0]},
    },
}

EXPERIMENTS = tuple(_DEFAULTS)


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    output_dir: str = ""
    n_particles: int = 0
    repeats: int = 1
    kernel: dict = field(default_factory=dict)
    target: dict = field(default_factory=dict)
    init: dict = field(default_factory=dict)
    flow: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    search: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str = "."):
        raw = dict(raw)
        name = raw.get("experiment")
        if name not in _DEFAULTS:
            raise ConfigError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
        merged = _merge(_DEFAULTS[name], raw)
        known = set(cls.__dataclass_fields__)
        extra = set(merged) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        seed = merged.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            raise ConfigError("seed must be an integer in [0, 2^64)")
        cfg = cls(**merged)
        if not cfg.output_dir:
            cfg.output_dir = os.path.join("runs", name)
        if not os.path.isabs(cfg.output_dir):
            cfg.output_dir = os.path.join(base_dir, cfg.output_dir)
        for key in ("path", "test_path"):
            p = cfg.data.get(key)
            if p is not None:
                if not os.path.isabs(p):
                    cfg.data[key] = p = os.path.join(base_dir, p)
                if not os.path.exists(p):
                    raise ConfigError(f"data.{key} does not exist: {p}")
        if not isinstance(cfg.n_particles, int) or cfg.n_particles < 1:
            raise ConfigError("n_particles must be a positive integer")
        if not isinstance(cfg.repeats, int) or cfg.repeats < 1:
            raise ConfigError("repeats must be a positive integer")
        for s in cfg.flow.get("schemes", []):
            if str(s).upper() not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}")
        return cfg

    # -- builders ------------------------------------------------------------
    def base_kernel(self):
        k = self.kernel
        try:
            return make_kernel(k.get("family", "rbf"), bandwidth=k.get("bandwidth", 1.0),
                               c=k.get("c", 1.0), beta=k.get("beta", -0.5))
        except ValueError as err:
            raise ConfigError(f"kernel: {err}") from None

    def flow_config(self, scheme, **override):
        scheme = scheme.upper()
        opts = {k: v for k, v in self.flow.items() if not isinstance(v, (dict, list))}
        opts.update(self.flow.get(scheme.lower(), {}))
        if "anneal_schedule" in self.flow and scheme != "MMD_GD":
            opts.setdefault("anneal_schedule", self.flow["anneal_schedule"])
        opts.update(override)
        allowed = set(FlowConfig.__dataclass_fields__) - {"scheme"}
        opts = {k: v for k, v in opts.items() if k in allowed}
        try:
            return FlowConfig(scheme, **opts)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"flow ({scheme}): {err}") from None

    def initial_particles(self, dim, seed):
        spec = self.init
        rng = np.random.default_rng(seed)
        n = self.n_particles
        scale = float(spec.get("scale", 1.0))
        mean = np.broadcast_to(np.asarray(spec.get("mean", 0.0), dtype=float), (dim,))
        kind = spec.get("distribution", "gaussian")
        if kind == "gaussian":
            X = mean + scale * rng.normal(size=(n, dim))
        elif kind == "uniform":
            X = mean + scale * rng.uniform(-1.0, 1.0, size=(n, dim))
        elif kind == "on-axis":
            # first coordinate exactly on the plane x1 = 0
            X = mean + scale * rng.normal(size=(n, dim))
            X[:, 0] = 0.0
        else:
            raise ConfigError(f"unknown init distribution {kind!r}")
        return ParticleSet(X, rng_seed=int(np.atleast_1d(seed)[0]))


# -- output helpers -----------------------------------------------------------

def _write_run(outdir, tag, trace: FlowTrace):
    trace.write_json(os.path.join(outdir, f"{tag}_trace.json"))
    trace.write_csv(os.path.join(outdir, f"{tag}_trace.csv"))
    if trace.final_positions is not None:
        write_matrix_csv(os.path.join(outdir, f"{tag}_particles.csv"), trace.final_positions)


def _summary(sk, trace: FlowTrace, init):
    k0 = ksd_between(sk, init.positions) ** 2
    k1 = ksd_between(sk, trace.final_positions) ** 2
    return {
        "status": trace.status,
        "iterations": int(trace.records[-1]["iteration"]) if trace.records else 0,
        "initial_ksd2": k0,
        "final_ksd2": k1,
        "final_grad_norm": float(trace.grad_norms[-1]) if trace.records else float("nan"),
    }


def _run_scheme(cfg, scheme, init, sk, outdir, tag=None, target_samples=None, **override):
    trace = run_flow(cfg.flow_config(scheme, **override), init, sk, target_samples)
    _write_run(outdir, tag or scheme.lower(), trace)
    return trace


def _schemes(cfg):
    return [s.upper() for s in cfg.flow.get("schemes", [])]


# -- experiments --------------------------------------------------------------

def _gaussian2d(cfg, outdir):
    dim = int(cfg.target.get("dim", 2))
    model = Gaussian.standard(dim)
    sk = SteinKernel(cfg.base_kernel(), model)
    init = cfg.initial_particles(dim, cfg.seed)
    samples = model.sample(cfg.n_particles, np.random.default_rng([cfg.seed, 1]))
    metrics = {}
    for scheme in _schemes(cfg):
        tr = _run_scheme(cfg, scheme, init, sk, outdir, target_samples=samples)
        metrics[scheme] = _summary(sk, tr, init)
    return metrics


def _mixture_model(cfg):
    return symmetric_mixture(float(cfg.target.get("variance", 0.1)),
                             float(cfg.target.get("separation", 1.0)))


def _mixture(cfg, outdir):
    model = _mixture_model(cfg)
    sk = SteinKernel(cfg.base_kernel(), model)
    init = cfg.initial_particles(2, cfg.seed)
    metrics = {}
    for scheme in _schemes(cfg):
        tr = _run_scheme(cfg, scheme, init, sk, outdir)
        m = _summary(sk, tr, init)
        m["axis_residual_final"] = symmetry_residual(tr.final_positions, [1.0, 0.0])
        m["axis_residual_max"] = max(symmetry_residual(pos, [1.0, 0.0])
                                     for _, pos in tr.snapshots)
        metrics[scheme] = m
    return metrics


def _mixture_annealed(cfg, outdir):
    model = _mixture_model(cfg)
    sk = SteinKernel(cfg.base_kernel(), model)
    init = cfg.initial_particles(2, cfg.seed)
    metrics = {}
    for scheme in _schemes(cfg):
        plain = _run_scheme(cfg, scheme, init, sk, outdir, tag=f"{scheme.lower()}_plain",
                            anneal_schedule=[])
        annealed = _run_scheme(cfg, scheme, init, sk, outdir,
                               tag=f"{scheme.lower()}_annealed")
        a = _summary(sk, annealed, init)
        p = _summary(sk, plain, init)
        metrics[scheme] = {"annealed": a, "plain": p,
                           "annealing_wins": bool(a["final_ksd2"] < p["final_ksd2"])}
    return metrics


def _banana(cfg, outdir):
    model = Banana(float(cfg.target.get("a", 2.0)), float(cfg.target.get("b", 0.2)))
    sk = SteinKernel(cfg.base_kernel(), model)
    init = cfg.initial_particles(2, cfg.seed)
    return {s: _summary(sk, _run_scheme(cfg, s, init, sk, outdir), init) for s in _schemes(cfg)}


def _logreg_data(cfg):
    d = cfg.data
    if d.get("path"):
        train = load_labeled_csv(d["path"])
        if d.get("test_path"):
            test = load_labeled_csv(d["test_path"])
        else:
            n_train = int(d.get("n_train", round(0.7 * len(train))))
            train, test = train.split(n_train)
    else:
        n_train, n_test = int(d.get("n_train", 400)), int(d.get("n_test", 200))
        ds, _ = make_logistic_data(n_train + n_test, int(d.get("p", 5)), cfg.seed,
                                   separable=bool(d.get("separable", True)),
                                   margin=float(d.get("margin", 0.1)))
        train, test = ds.split(n_train)
    if train.dim != test.dim:
        raise ConfigError("train and test feature counts differ")
    return standardize(train, test)


def _logreg(cfg, outdir):
    train, test = _logreg_data(cfg)
    model = LogisticPosterior(train.features, train.labels,
                              prior_rate=float(cfg.target.get("prior_rate", 0.01)))
    sk = SteinKernel(cfg.base_kernel(), model)
    init = cfg.initial_particles(model.dim, cfg.seed)
    metrics = {"n_train": len(train), "n_test": len(test), "p": train.dim}
    accs = {}
    for scheme in _schemes(cfg):
        tr = _run_scheme(cfg, scheme, init, sk, outdir)
        m = _summary(sk, tr, init)
        m["test_accuracy"] = logreg_accuracy(tr.final_positions, test.features, test.labels)
        m["train_accuracy"] = logreg_accuracy(tr.final_positions, train.features, train.labels)
        accs[scheme] = m["test_accuracy"]
        metrics[scheme] = m
    if len(accs) >= 2:
        metrics["max_accuracy_gap"] = float(max(accs.values()) - min(accs.values()))
    return metrics


def _ica(cfg, outdir):
    dims = cfg.data.get("p", 2)
    if isinstance(dims, list):
        # one sub-run per dimension, e.g. data.p = [2, 4, 8]
        out = {}
        for p in dims:
            sub = os.path.join(outdir, f"p{int(p)}")
            os.makedirs(sub, exist_ok=True)
            out[f"p{int(p)}"] = _ica_dim(cfg, sub, int(p))
        return out
    return _ica_dim(cfg, outdir, int(dims))


def _ica_dim(cfg, outdir, p):
    q = int(cfg.data.get("q", 1000))
    base = cfg.base_kernel()
    values = {s: [] for s in _schemes(cfg)}
    values["RANDOM"] = []
    for rep in range(cfg.repeats):
        seed = cfg.seed + rep
        X, W = make_ica_data(p, q, seed)
        sk = SteinKernel(base, ICAPosterior(X))
        init = cfg.initial_particles(p * p, [seed, 1])
        rep_dir = os.path.join(outdir, f"repeat_{rep:03d}")
        os.makedirs(rep_dir, exist_ok=True)
        for scheme in _schemes(cfg):
            tr = _run_scheme(cfg, scheme, init, sk, rep_dir)
            values[scheme] += [amari_distance(w.reshape(p, p), W) for w in tr.final_positions]
        rnd = np.random.default_rng([seed, 2]).normal(size=(cfg.n_particles, p, p))
        values["RANDOM"] += [amari_distance(w, W) for w in rnd]
    metrics = {"p": p, "q": q, "repeats": cfg.repeats}
    for name, vals in values.items():
        vals = sorted(vals)
        write_matrix_csv(os.path.join(outdir, f"amari_{name.lower()}.csv"),
                         np.array(vals)[:, None], ["amari"])
        metrics[name] = {"median_amari": float(np.median(vals)),
                         "mean_amari": float(np.mean(vals)), "count": len(vals)}
    return metrics


def _stein_points_banana(cfg, outdir):
    model = Banana(float(cfg.target.get("a", 2.0)), float(cfg.target.get("b", 0.2)))
    sk = SteinKernel(cfg.base_kernel(), model)
    s = cfg.search
    kind = s.get("kind", "grid")
    if kind == "grid":
        search = GridSearch(tuple(s["low"]), tuple(s["high"]), int(s["num"]))
    elif kind == "random":
        search = RandomSearch(tuple(s["low"]), tuple(s["high"]), int(s["num"]))
    else:
        raise ConfigError(f"unknown search kind {kind!r}")
    pts = stein_points(sk, cfg.n_particles, search, seed=cfg.seed)
    trace = FlowTrace("STEIN_POINTS", metadata={"search": dict(s), "seed": cfg.seed})
    for k in range(1, pts.n + 1):
        X = pts.positions[:k]
        trace.add(k, 0, 1.0, 0.5 * ksd_between(sk, X) ** 2, 0.0, 0.0)
    trace.snapshot(pts.n, pts.positions)
    trace.final_positions = pts.positions
    trace.status = "complete"
    _write_run(outdir, "stein_points", trace)
    last = stein_points_objective(sk, pts.positions[-1:], pts.positions[:-1])[0]
    return {"STEIN_POINTS": {"final_ksd2": ksd_between(sk, pts.positions) ** 2,
                             "n_points": pts.n, "last_objective": float(last)}}


def _convergence_race(cfg, outdir):
    dim = int(cfg.target.get("dim", 1))
    sk = SteinKernel(cfg.base_kernel(), Gaussian.standard(dim))
    init = cfg.initial_particles(dim, cfg.seed)
    runs = [("KSD_LBFGS", None)]
    runs += [("KSD_GD", float(g)) for g in cfg.flow.get("ksd_gd_steps", [])]
    runs += [("SVGD", float(g)) for g in cfg.flow.get("svgd_steps", [])]
    rows, metrics = [], {}
    for scheme, step in runs:
        tag = scheme.lower() if step is None else f"{scheme.lower()}_step{step:g}"
        override = {} if step is None else {"step_size": step}
        try:
            tr = _run_scheme(cfg, scheme, init, sk, outdir, tag=tag, **override)
            m = _summary(sk, tr, init)
        except DivergenceError as err:
            tr = err.trace
            _write_run(outdir, tag, tr)
            m = {"status": "diverged", "iterations": int(tr.records[-1]["iteration"])}
        metrics[tag] = m
        for r in tr.records:
            rows.append((tag, scheme, "" if step is None else repr(step), r["iteration"],
                         repr(r["loss"])))
    with open(os.path.join(outdir, "race.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("run", "scheme", "step_size", "iteration", "loss"))
        w.writerows(rows)
    return metrics


_RUNNERS = {
    "gaussian2d": _gaussian2d,
    "mixture": _mixture,
    "mixture_annealed": _mixture_annealed,
    "banana": _banana,
    "logreg": _logreg,
    "ica": _ica,
    "stein_points_banana": _stein_points_banana,
    "convergence_race": _convergence_race,
}


def run_experiment(cfg: ExperimentConfig, output_dir: str | None = None) -> dict:
    """Run ``cfg`` and write its artifacts; returns the metrics dictionary.

    ``output_dir`` (or the ``KSDFLOW_OUTPUT_DIR`` environment variable)
    overrides the configured directory.  A diverging run writes its partial
    metrics before the ``DivergenceError`` propagates.
    """
    outdir = output_dir or os.environ.get(OUTPUT_ENV) or cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    t0 = time.perf_counter()
    metrics = {"experiment": cfg.experiment, "seed": cfg.seed,
               "n_particles": cfg.n_particles}
    try:
        metrics["results"] = _RUNNERS[cfg.experiment](cfg, outdir)
    except DivergenceError as err:
        metrics["status"] = "diverged"
        metrics["error"] = str(err)
        if err.trace is not None:
            _write_run(outdir, "diverged", err.trace)
        raise
    else:
        metrics["status"] = "ok"
    finally:
        metrics["runtime_s"] = time.perf_counter() - t0
        with open(os.path.join(outdir, "metrics.json"), "w") as fh:
            json.dump(metrics, fh, indent=1, sort_keys=True)
    log.info("%s finished in %.1fs -> %s", cfg.experiment, metrics["runtime_s"], outdir)
    return metrics


def strip_runtime(metrics: dict) -> dict:
    """Metrics without the wall-clock field, for determinism comparisons."""
    return {k: v for k, v in metrics.items() if k != "runtime_s"}
