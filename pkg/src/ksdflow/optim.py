"""Unconstrained minimizers over flat coordinate vectors.

``lbfgs_minimize`` is a limited-memory BFGS with the two-loop recursion and a
bracketing/zoom line search enforcing the strong Wolfe conditions.
``gd_minimize`` is plain fixed-step gradient descent.  Both are deterministic.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Objective",
    "LbfgsConfig",
    "OptimResult",
    "StepRecord",
    "lbfgs_minimize",
    "gd_minimize",
    "line_search_strong_wolfe",
]

log = logging.getLogger(__name__)


@dataclass
class Objective:
    """``fun(x) -> (value, gradient)`` over vectors of length ``dim``."""

    fun: Callable
    dim: int

    def __call__(self, x):
        f, g = self.fun(x)
        g = np.asarray(g, dtype=float)
        if g.shape != (self.dim,):
            raise ValueError(f"gradient has shape {g.shape}, expected ({self.dim},)")
        return float(f), g


@dataclass
class LbfgsConfig:
    memory: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    tol_grad: float = 1e-10
    max_iters: int = 1000
    max_line_search: int = 25
    curvature_eps: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("Wolfe constants must satisfy 0 < c1 < c2 < 1")
        if self.memory < 1 or self.max_iters < 1 or self.max_line_search < 1:
            raise ValueError("memory, max_iters and max_line_search must be positive")
        if self.tol_grad <= 0:
            raise ValueError("tol_grad must be positive")


@dataclass
class StepRecord:
    iteration: int
    value: float
    grad_norm: float
    step: float = 0.0
    kind: str = "init"  # init | wolfe | fallback | gd
    armijo: bool = True
    curvature: bool = True
    n_evals: int = 0


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iters: int
    converged: bool
    status: str
    trace: list = field(default_factory=list)

    @property
    def values(self):
        return np.array([r.value for r in self.trace])

    @property
    def grad_norms(self):
        return np.array([r.grad_norm for r in self.trace])


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating two points and slopes, or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if not np.isfinite(disc) or disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = db - da + 2.0 * d2
    if denom == 0 or not np.isfinite(denom):
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def line_search_strong_wolfe(fg, x, p, f0, g0, c1=1e-4, c2=0.9, max_evals=25,
                             alpha0=1.0, alpha_max=1e10):
    """Find a step satisfying the strong Wolfe conditions along ``p``.

    Returns ``(alpha, f, g, n_evals)``; ``alpha`` is None on failure.
    """
    dphi0 = float(g0 @ p)
    if dphi0 >= 0:
        return None, f0, g0, 0
    n_evals = 0

    def phi(a):
        nonlocal n_evals
        n_evals += 1
        f, g = fg(x + a * p)
        return f, g, float(g @ p)

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi, g_lo):
        while n_evals < max_evals:
            a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi) if np.isfinite(f_hi) else None
            width = abs(hi - lo)
            if width <= 1e-16 * max(abs(lo), abs(hi), 1.0):
                break
            low_b, high_b = min(lo, hi), max(lo, hi)
            if a is None or not (low_b + 0.1 * width <= a <= high_b - 0.1 * width):
                a = 0.5 * (lo + hi)
            f, g, d = phi(a)
            if not np.isfinite(f) or f > f0 + c1 * a * dphi0 or f >= f_lo:
                hi, f_hi, d_hi = a, f, d
            else:
                if abs(d) <= -c2 * dphi0:
                    return a, f, g
                if d * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo, g_lo = a, f, d, g
        return None, f_lo, g_lo

    a_prev, f_prev, d_prev, g_prev = 0.0, f0, dphi0, g0
    alpha = alpha0
    first = True
    while n_evals < max_evals:
        f, g, d = phi(alpha)
        if not np.isfinite(f) or f > f0 + c1 * alpha * dphi0 or (not first and f >= f_prev):
            a, f, g = zoom(a_prev, f_prev, d_prev, alpha, f, d, g_prev)
            return a, f, g, n_evals
        if abs(d) <= -c2 * dphi0:
            return alpha, f, g, n_evals
        if d >= 0:
            a, f, g = zoom(alpha, f, d, a_prev, f_prev, d_prev, g)
            return a, f, g, n_evals
        a_prev, f_prev, d_prev, g_prev = alpha, f, d, g
        alpha = min(2.0 * alpha, alpha_max)
        first = False
    return None, f0, g0, n_evals


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _backtrack(fg, x, f, g, c1, max_halvings=50):
    p = -g
    alpha = min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
    slope = float(g @ p)
    for _ in range(max_halvings):
        f_new, g_new = fg(x + alpha * p)
        if np.isfinite(f_new) and f_new <= f + c1 * alpha * slope and f_new < f:
            return alpha, p, f_new, g_new
        alpha *= 0.5
    return None, p, f, g


def lbfgs_minimize(obj, x0, cfg: LbfgsConfig | None = None, callback=None) -> OptimResult:
    """Minimize ``obj`` from ``x0``.

    Stops when ``max|grad| < cfg.tol_grad`` or after ``cfg.max_iters``
    iterations.  Curvature pairs with ``s.y <= cfg.curvature_eps |s| |y|``
    are skipped; the test is scale-free so tiny late gradients keep their
    pairs.  If the Wolfe search fails, one steepest-descent backtracking
    step is tried; if that fails too, the best point so far is returned with
    ``status='line_search_failed'``.
    """
    cfg = cfg or LbfgsConfig()
    fg = obj if isinstance(obj, Objective) else Objective(obj, len(np.ravel(x0)))
    x = np.array(x0, dtype=float).ravel()
    f, g = fg(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise ValueError("objective is not finite at the initial point")
    pairs: deque = deque(maxlen=cfg.memory)
    trace = [StepRecord(0, f, float(np.max(np.abs(g))))]
    status = "max_iters"
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if np.max(np.abs(g)) < cfg.tol_grad:
            converged, status, it = True, "converged", it - 1
            break
        p = -_two_loop(g, list(pairs))
        if not (g @ p < 0):
            pairs.clear()
            p = -g
        alpha0 = 1.0 if pairs else min(1.0, 1.0 / np.linalg.norm(g))
        alpha, f_new, g_new, n_ev = line_search_strong_wolfe(
            fg, x, p, f, g, cfg.c1, cfg.c2, cfg.max_line_search, alpha0=alpha0)
        kind = "wolfe"
        if alpha is None:
            log.debug("wolfe search failed at iteration %d; trying steepest descent", it)
            pairs.clear()
            alpha, p, f_new, g_new = _backtrack(fg, x, f, g, cfg.c1)
            kind = "fallback"
            if alpha is None:
                status = "line_search_failed"
                it -= 1
                break
        slope0 = float(g @ p)
        armijo = bool(f_new <= f + cfg.c1 * alpha * slope0)
        curvature = bool(abs(g_new @ p) <= -cfg.c2 * slope0)
        s = alpha * p
        y = g_new - g
        sy = float(s @ y)
        if sy > cfg.curvature_eps * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        x = x + s
        f, g = f_new, g_new
        trace.append(StepRecord(it, f, float(np.max(np.abs(g))), float(alpha), kind,
                                armijo, curvature, n_ev))
        if callback is not None:
            callback(x, f, g)
    else:
        if np.max(np.abs(g)) < cfg.tol_grad:
            converged, status = True, "converged"
        it = cfg.max_iters
    return OptimResult(x, f, g, it, converged, status, trace)


def gd_minimize(obj, x0, step, max_iters=1000, tol=0.0, callback=None) -> OptimResult:
    """Fixed-step gradient descent ``x <- x - step * grad``.

    Stops early when ``max|grad| < tol``; a non-finite value ends the run with
    ``status='diverged'``.
    """
    if not step > 0:
        raise ValueError(f"step size must be positive, got {step}")
    fg = obj if isinstance(obj, Objective) else Objective(obj, len(np.ravel(x0)))
    x = np.array(x0, dtype=float).ravel()
    f, g = fg(x)
    trace = [StepRecord(0, f, float(np.max(np.abs(g))))]
    status, converged = "max_iters", False
    it = 0
    for it in range(1, max_iters + 1):
        if np.max(np.abs(g)) < tol:
            converged, status, it = True, "converged", it - 1
            break
        x = x - step * g
        f, g = fg(x)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            status = "diverged"
            trace.append(StepRecord(it, f, float("nan"), step, "gd"))
            break
        trace.append(StepRecord(it, f, float(np.max(np.abs(g))), step, "gd"))
        if callback is not None:
            callback(x, f, g)
    return OptimResult(x, f, g, it, converged, status, trace)
