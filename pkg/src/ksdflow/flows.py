"""Particle updates: KSD loss/gradient, KSD Descent, SVGD, MMD-GD, Stein points.

Step-size conventions differ between schemes and are kept as written:

* KSD Descent moves ``x_i <- x_i - (gamma / N^2) sum_j grad2 k_pi(x_j, x_i)``,
  i.e. ``gamma`` times the gradient of ``F = (1/2N^2) sum_ij k_pi``.
* SVGD moves ``x_i <- x_i + gamma (1/N) sum_j [k(x_j, x_i) s(x_j) + grad1 k(x_j, x_i)]``.
* MMD-GD moves ``x_i <- x_i - gamma D_i`` with
  ``D_i = mean_j grad2 k(x_j, x_i) - mean_m grad2 k(y_m, x_i)``.

So the same ``gamma`` is not comparable across schemes.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .kernel import BaseKernel
from .optim import LbfgsConfig, lbfgs_minimize
from .stein import SteinEvaluation, SteinKernel
from .targets import ScoreModel, anneal

__all__ = [
    "ParticleSet",
    "FlowConfig",
    "FlowTrace",
    "DivergenceError",
    "GridSearch",
    "RandomSearch",
    "SCHEMES",
    "ksd_loss",
    "ksd_grad",
    "ksd_objective",
    "gd_step",
    "svgd_direction",
    "svgd_step",
    "mmd_direction",
    "mmd_step",
    "stein_points",
    "stein_points_objective",
    "run_flow",
]

log = logging.getLogger(__name__)

SCHEMES = ("KSD_GD", "KSD_LBFGS", "SVGD", "MMD_GD")


class DivergenceError(RuntimeError):
    """A particle update produced non-finite coordinates."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class ParticleSet:
    positions: np.ndarray
    iteration: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise ValueError("positions must be an (N, d) array with N >= 1")
        if not np.all(np.isfinite(pos)):
            raise ValueError("particle coordinates must be finite")
        self.positions = pos

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    def moved(self, positions):
        return replace(self, positions=positions, iteration=self.iteration + 1)


def _positions(p):
    return p.positions if isinstance(p, ParticleSet) else np.atleast_2d(np.asarray(p, float))


def _advance(particles: ParticleSet, new_positions, what):
    if not np.all(np.isfinite(new_positions)):
        bad = int(np.sum(~np.all(np.isfinite(new_positions), axis=1)))
        raise DivergenceError(
            f"{what} produced non-finite positions for {bad} of {len(new_positions)} "
            f"particles at iteration {particles.iteration + 1}"
        )
    return particles.moved(new_positions)


# ---------------------------------------------------------------------------
# KSD loss and KSD Descent
# ---------------------------------------------------------------------------

def ksd_loss(ev: SteinEvaluation) -> float:
    """``F = (1 / 2N^2) sum_ij k_pi(x_i, x_j)``."""
    n = ev.gram.shape[0]
    return float(ev.gram.sum() / (2.0 * n * n))


def ksd_grad(ev: SteinEvaluation) -> np.ndarray:
    """Row ``i`` is ``(1/N^2) sum_j grad2 k_pi(x_j, x_i)``."""
    if ev.grad_gram is None:
        raise ValueError("evaluation was computed without gradients")
    n = ev.gram.shape[0]
    return ev.grad_gram.sum(axis=0) / (n * n)


def ksd_objective(sk: SteinKernel, n: int, dim: int):
    """Flat ``x -> (F, grad F)`` over the ``n * dim`` particle coordinates."""

    def fun(flat):
        X = flat.reshape(n, dim)
        if not np.all(np.isfinite(X)):
            return np.inf, np.zeros_like(flat)
        ev = sk.evaluate(X)
        return ksd_loss(ev), ksd_grad(ev).ravel()

    return fun


def gd_step(particles: ParticleSet, sk: SteinKernel, step: float) -> ParticleSet:
    """One KSD Descent gradient step."""
    if not step > 0:
        raise ValueError("step size must be positive")
    ev = sk.evaluate(particles.positions)
    return _advance(particles, particles.positions - step * ksd_grad(ev), "KSD descent")


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def svgd_direction(X, base: BaseKernel, model: ScoreModel):
    """``D_i = (1/N) sum_j [k(x_j, x_i) s(x_j) + grad1 k(x_j, x_i)]``."""
    X = _positions(X)
    S = model.score(X)
    xs, ys = X[:, None, :], X[None, :, :]
    K = base.eval(xs, ys)
    G1 = base.grad1(xs, ys)
    return (K.T @ S + G1.sum(axis=0)) / X.shape[0]


def svgd_step(particles: ParticleSet, base: BaseKernel, model: ScoreModel,
              step: float) -> ParticleSet:
    if not step > 0:
        raise ValueError("step size must be positive")
    D = svgd_direction(particles.positions, base, model)
    return _advance(particles, particles.positions + step * D, "SVGD")


def mmd_direction(X, base: BaseKernel, target_samples):
    """``D_i = mean_j grad2 k(x_j, x_i) - mean_m grad2 k(y_m, x_i)``.

    Each average runs over its own count, so the target sample size may
    differ from the number of particles.
    """
    X = _positions(X)
    Y = np.atleast_2d(np.asarray(target_samples, dtype=float))
    if Y.shape[0] == 0:
        raise ValueError("MMD flow needs at least one target sample")
    if Y.shape[1] != X.shape[1]:
        raise ValueError("target samples and particles differ in dimension")
    own = base.grad2(X[:, None, :], X[None, :, :]).mean(axis=0)
    tgt = base.grad2(Y[:, None, :], X[None, :, :]).mean(axis=0)
    return own - tgt


def mmd_step(particles: ParticleSet, base: BaseKernel, target_samples,
             step: float) -> ParticleSet:
    if not step > 0:
        raise ValueError("step size must be positive")
    D = mmd_direction(particles.positions, base, target_samples)
    return _advance(particles, particles.positions - step * D, "MMD-GD")


# ---------------------------------------------------------------------------
# Stein points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSearch:
    """Regular grid with ``num`` points per axis over ``[low, high]``."""

    low: tuple
    high: tuple
    num: int

    def candidates(self, dim, rng=None):
        low = np.broadcast_to(np.asarray(self.low, float), (dim,))
        high = np.broadcast_to(np.asarray(self.high, float), (dim,))
        axes = [np.linspace(lo, hi, self.num) for lo, hi in zip(low, high)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class RandomSearch:
    """``num`` uniform candidates over the box, redrawn for each new point."""

    low: tuple
    high: tuple
    num: int

    def candidates(self, dim, rng):
        low = np.broadcast_to(np.asarray(self.low, float), (dim,))
        high = np.broadcast_to(np.asarray(self.high, float), (dim,))
        return rng.uniform(low, high, size=(self.num, dim))


def stein_points_objective(sk: SteinKernel, candidates, points):
    """``0.5 k_pi(x, x) + sum_i k_pi(x, x_i)`` for every candidate ``x``."""
    candidates = np.atleast_2d(np.asarray(candidates, float))
    obj = 0.5 * sk.kpi_diag(candidates)
    if points is not None and len(points):
        obj = obj + sk.kpi_matrix(candidates, points).sum(axis=1)
    return obj


def stein_points(sk: SteinKernel, n: int, search, seed: int = 0) -> ParticleSet:
    """Greedily add ``n`` points, each minimizing the partial KSD objective."""
    if n < 1:
        raise ValueError("need at least one point")
    rng = np.random.default_rng(seed)
    dim = sk.dim
    points = np.empty((0, dim))
    if isinstance(search, GridSearch):
        cands = search.candidates(dim)
        if len(cands) == 0:
            raise ValueError("empty search set")
        scores = sk.model.score(cands)
        obj = 0.5 * sk._kpi(cands, cands, scores, scores)
        for _ in range(n):
            best = int(np.argmin(obj))
            x = cands[best]
            points = np.vstack([points, x])
            obj = obj + sk._kpi(cands, x, scores, scores[best])
    else:
        if search.num < 1:
            raise ValueError("empty search set")
        for _ in range(n):
            cands = search.candidates(dim, rng)
            obj = stein_points_objective(sk, cands, points)
            points = np.vstack([points, cands[int(np.argmin(obj))]])
    return ParticleSet(points, iteration=n, rng_seed=seed)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

@dataclass
class FlowConfig:
    scheme: str = "KSD_LBFGS"
    step_size: float = 1.0
    max_iters: int = 1000
    tol: float = 1e-10
    # (beta, iteration budget or None for max_iters), applied in order
    anneal_schedule: list = field(default_factory=list)
    backtracking: bool = False
    snapshot_every: int = 10

    def __post_init__(self):
        self.scheme = self.scheme.upper()
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        stages = []
        for stage in self.anneal_schedule:
            beta, iters = (stage, None) if np.isscalar(stage) else tuple(stage)
            if not 0 < float(beta) <= 1:
                raise ValueError(f"anneal beta must lie in (0, 1], got {beta}")
            if iters is not None and int(iters) < 1:
                raise ValueError("stage iteration budget must be positive")
            stages.append((float(beta), None if iters is None else int(iters)))
        self.anneal_schedule = stages

    def stages(self):
        return self.anneal_schedule or [(1.0, None)]


TRACE_COLUMNS = ("iteration", "stage", "beta", "loss", "grad_norm", "step_size")


@dataclass
class FlowTrace:
    """Per-iteration record of a run.

    ``loss`` is the KSD objective ``F`` under the current stage's target and
    ``grad_norm`` the max-abs entry of the update direction (``grad F`` for
    KSD schemes, the unscaled displacement field for SVGD and MMD-GD).
    """

    scheme: str
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    final_positions: np.ndarray | None = None
    status: str = "running"
    metadata: dict = field(default_factory=dict)

    def add(self, iteration, stage, beta, loss, grad_norm, step_size):
        self.records.append(dict(iteration=int(iteration), stage=int(stage), beta=float(beta),
                                 loss=float(loss), grad_norm=float(grad_norm),
                                 step_size=float(step_size)))

    def snapshot(self, iteration, positions):
        self.snapshots.append((int(iteration), np.array(positions, dtype=float)))

    @property
    def losses(self):
        return np.array([r["loss"] for r in self.records])

    @property
    def grad_norms(self):
        return np.array([r["grad_norm"] for r in self.records])

    def to_dict(self):
        return {
            "scheme": self.scheme,
            "status": self.status,
            "metadata": self.metadata,
            "records": self.records,
            "snapshots": [{"iteration": it, "positions": pos.tolist()}
                          for it, pos in self.snapshots],
            "final_positions": None if self.final_positions is None
            else self.final_positions.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        tr = cls(data["scheme"], list(data["records"]), status=data["status"],
                 metadata=dict(data.get("metadata", {})))
        tr.snapshots = [(s["iteration"], np.array(s["positions"], dtype=float))
                        for s in data.get("snapshots", [])]
        if data.get("final_positions") is not None:
            tr.final_positions = np.array(data["final_positions"], dtype=float)
        return tr

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def read_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c]
                            for c in TRACE_COLUMNS])

    def write_snapshots_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if not self.snapshots:
                w.writerow(["iteration", "particle"])
                return
            d = self.snapshots[0][1].shape[1]
            w.writerow(["iteration", "particle"] + [f"x{k + 1}" for k in range(d)])
            for it, pos in self.snapshots:
                for i, row in enumerate(pos):
                    w.writerow([it, i] + [repr(float(v)) for v in row])


def _stage_kernel(sk: SteinKernel, beta):
    return sk if beta == 1.0 else SteinKernel(sk.base, anneal(sk.model, beta))


def run_flow(config: FlowConfig, init: ParticleSet, sk: SteinKernel,
             target_samples=None) -> FlowTrace:
    """Run one scheme from ``init``, stage by stage along the anneal schedule.

    Every stage runs until its max-abs update falls below ``config.tol`` or
    its iteration budget is spent, then hands its particles to the next.
    Non-finite positions raise ``DivergenceError`` carrying the partial trace.
    """
    trace = FlowTrace(config.scheme, metadata={
        "n_particles": init.n, "dim": init.dim, "step_size": config.step_size,
        "tol": config.tol, "max_iters": config.max_iters,
        "anneal_schedule": [[b, it] for b, it in config.stages()],
        "backtracking": config.backtracking, "seed": init.rng_seed,
    })
    if config.scheme == "MMD_GD":
        if target_samples is None:
            raise ValueError("MMD_GD requires target samples")
        if any(b != 1.0 for b, _ in config.stages()):
            raise ValueError("MMD_GD is sample-based and cannot be annealed")
    particles = init
    trace.snapshot(particles.iteration, particles.positions)
    every = max(1, int(config.snapshot_every))
    try:
        # overflow on the way to divergence is detected and raised explicitly
        with np.errstate(over="ignore", invalid="ignore"):
            for stage, (beta, budget) in enumerate(config.stages()):
                budget = budget or config.max_iters
                skb = _stage_kernel(sk, beta)
                runner = _RUNNERS[config.scheme]
                particles = runner(config, particles, skb, budget, trace, stage, beta, every,
                                   target_samples)
    except DivergenceError as err:
        trace.status = "diverged"
        trace.final_positions = particles.positions
        err.trace = trace
        raise
    trace.final_positions = particles.positions
    if trace.status == "running":
        trace.status = "max_iters"
    if not trace.snapshots or trace.snapshots[-1][0] != particles.iteration:
        trace.snapshot(particles.iteration, particles.positions)
    return trace


def _run_lbfgs(config, particles, sk, budget, trace, stage, beta, every, _):
    n, d = particles.positions.shape
    fun = ksd_objective(sk, n, d)
    start = particles.iteration
    state = {"it": start}

    def callback(x, f, g):
        state["it"] += 1
        trace.add(state["it"], stage, beta, f, np.max(np.abs(g)), 0.0)
        if (state["it"] - start) % every == 0:
            trace.snapshot(state["it"], x.reshape(n, d))

    f0, g0 = fun(particles.positions.ravel())
    trace.add(start, stage, beta, f0, np.max(np.abs(g0)), 0.0)
    res = lbfgs_minimize(fun, particles.positions.ravel(),
                         LbfgsConfig(tol_grad=config.tol, max_iters=budget), callback=callback)
    for rec, step in zip(trace.records[-res.n_iters:] if res.n_iters else [],
                         res.trace[1:]):
        rec["step_size"] = step.step
    trace.status = res.status
    trace.metadata.setdefault("lbfgs", []).append(
        {"stage": stage, "status": res.status, "iterations": res.n_iters,
         "fallback_steps": sum(r.kind == "fallback" for r in res.trace)})
    return replace(particles, positions=res.x.reshape(n, d), iteration=state["it"])


def _run_gd(config, particles, sk, budget, trace, stage, beta, every, _):
    step = config.step_size
    ev = sk.evaluate(particles.positions)
    loss, grad = ksd_loss(ev), ksd_grad(ev)
    trace.add(particles.iteration, stage, beta, loss, np.max(np.abs(grad)), step)
    status = "max_iters"
    for k in range(budget):
        if np.max(np.abs(grad)) < config.tol:
            status = "converged"
            break
        for _ in range(31):
            new = particles.positions - step * grad
            if not np.all(np.isfinite(new)):
                if config.backtracking:
                    step *= 0.5
                    continue
                _advance(particles, new, "KSD descent")
            ev_new = sk.evaluate(new)
            loss_new = ksd_loss(ev_new)
            if config.backtracking and not loss_new <= loss:
                step *= 0.5
                continue
            break
        particles = _advance(particles, new, "KSD descent")
        if not np.isfinite(loss_new):
            raise DivergenceError(f"KSD loss is not finite at iteration {particles.iteration}")
        ev, loss, grad = ev_new, loss_new, ksd_grad(ev_new)
        trace.add(particles.iteration, stage, beta, loss, np.max(np.abs(grad)), step)
        if (k + 1) % every == 0:
            trace.snapshot(particles.iteration, particles.positions)
    else:
        if np.max(np.abs(grad)) < config.tol:
            status = "converged"
    trace.status = status
    return particles


def _run_direction(config, particles, sk, budget, trace, stage, beta, every, target_samples):
    step = config.step_size
    if config.scheme == "SVGD":
        direction = lambda X: svgd_direction(X, sk.base, sk.model)  # noqa: E731
        sign = 1.0
    else:
        direction = lambda X: mmd_direction(X, sk.base, target_samples)  # noqa: E731
        sign = -1.0
    status = "max_iters"
    for k in range(budget + 1):
        D = direction(particles.positions)
        loss = ksd_loss(sk.evaluate(particles.positions, with_grad=False))
        gnorm = float(np.max(np.abs(D)))
        trace.add(particles.iteration, stage, beta, loss, gnorm, step)
        if gnorm < config.tol:
            status = "converged"
            break
        if k == budget:
            break
        particles = _advance(particles, particles.positions + sign * step * D, config.scheme)
        if (k + 1) % every == 0:
            trace.snapshot(particles.iteration, particles.positions)
    trace.status = status
    return particles


_RUNNERS = {
    "KSD_LBFGS": _run_lbfgs,
    "KSD_GD": _run_gd,
    "SVGD": _run_direction,
    "MMD_GD": _run_direction,
}
