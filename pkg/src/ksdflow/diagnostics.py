"""Verification and evaluation utilities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .flows import ksd_loss
from .stein import SteinKernel

__all__ = [
    "SteinIdentityResult",
    "stein_identity_check",
    "amari_distance",
    "symmetry_residual",
    "ksd_between",
    "logreg_predict_proba",
    "logreg_accuracy",
    "gram_min_eig_ratio",
]


@dataclass
class SteinIdentityResult:
    mean: float
    stderr: float
    passed: bool


def stein_identity_check(sk: SteinKernel, y, n_samples: int, seed: int = 0,
                         n_sigma: float = 4.0, batch: int = 50_000) -> SteinIdentityResult:
    """Monte-Carlo check that ``E_{X ~ pi} k_pi(X, y) = 0``.

    Passes when the sample mean lies within ``n_sigma`` standard errors of 0.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    model = sk.model
    if not model.has_sampler:
        raise NotImplementedError(f"{model.kind} has no exact sampler")
    rng = np.random.default_rng(seed)
    y = np.asarray(y, dtype=float)
    vals = []
    for start in range(0, n_samples, batch):
        X = model.sample(min(batch, n_samples - start), rng)
        vals.append(sk.kpi(X, np.broadcast_to(y, X.shape)))
    vals = np.concatenate(vals)
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(n_samples))
    return SteinIdentityResult(mean, stderr, abs(mean) < n_sigma * stderr)


def amari_distance(A, B) -> float:
    """Amari index of ``M = A B^{-1}``, normalized to ``[0, 1]``.

    Zero exactly when ``A`` equals ``B`` up to row scaling (any sign) and a
    row permutation.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("amari_distance expects two square matrices of equal size")
    p = A.shape[0]
    if np.linalg.cond(B) > 1e12:
        raise np.linalg.LinAlgError("B is numerically singular")
    M = np.abs(np.linalg.solve(B.T, A.T).T)
    if p == 1:
        return 0.0
    rows = np.sum(M.sum(axis=1) / M.max(axis=1) - 1.0)
    cols = np.sum(M.sum(axis=0) / M.max(axis=0) - 1.0)
    return float((rows + cols) / (2.0 * p * (p - 1)))


def symmetry_residual(particles, normal, offset: float = 0.0) -> float:
    """Largest distance of a particle to the hyperplane ``<x, n> = offset``."""
    X = np.atleast_2d(getattr(particles, "positions", particles))
    n = np.asarray(normal, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("plane normal must be non-zero")
    return float(np.max(np.abs(X @ (n / norm) - offset)))


def ksd_between(sk: SteinKernel, particles) -> float:
    """V-statistic KSD of the empirical measure against the target."""
    X = getattr(particles, "positions", particles)
    return float(np.sqrt(max(0.0, 2.0 * ksd_loss(sk.evaluate(X, with_grad=False)))))


def logreg_predict_proba(particles, features):
    """Posterior-averaged ``P(y = +1 | d)``; the last particle coordinate is ``log alpha``."""
    X = np.atleast_2d(getattr(particles, "positions", particles))
    features = np.asarray(features, dtype=float)
    if X.shape[1] != features.shape[1] + 1:
        raise ValueError(
            f"particles have dimension {X.shape[1]}, expected {features.shape[1] + 1}"
        )
    W = X[:, :-1]
    return expit(features @ W.T).mean(axis=1)


def logreg_accuracy(particles, features, labels) -> float:
    """Accuracy of the averaged predictor; probability exactly 0.5 predicts +1."""
    proba = logreg_predict_proba(particles, features)
    pred = np.where(proba >= 0.5, 1.0, -1.0)
    return float(np.mean(pred == np.asarray(labels, dtype=float)))


def gram_min_eig_ratio(G) -> float:
    """``lambda_min / lambda_max`` of a symmetric Gram matrix (PSD check)."""
    ev = np.linalg.eigvalsh(0.5 * (G + G.T))
    top = max(abs(ev[-1]), 1e-300)
    return float(ev[0] / top)
