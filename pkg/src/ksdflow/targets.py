"""Unnormalized targets exposed through their score ``s(x) = grad log pi(x)``.

Every model accepts a single point of shape ``(d,)`` or a batch ``(n, d)``;
``score`` returns the same shape and ``jacobian`` appends a ``(d, d)`` block
``J[..., i, j] = d s_i / d x_j``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .numdiff import central_diff

__all__ = [
    "ScoreModel",
    "Gaussian",
    "GaussianMixture",
    "Banana",
    "LogisticPosterior",
    "ICAPosterior",
    "AnnealedScore",
    "CallableScore",
    "SingularMatrixError",
    "anneal",
    "symmetric_mixture",
]

FD_JACOBIAN_STEP = 1e-6


def _logsumexp(a, axis=-1):
    top = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(top, axis) + np.log(np.sum(np.exp(a - top), axis=axis))


def _softmax(a, axis=-1):
    e = np.exp(a - np.max(a, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


class SingularMatrixError(ValueError):
    """Raised when an ICA unmixing matrix is numerically singular."""


class ScoreModel:
    """Base class for targets ``pi`` known up to a normalizing constant."""

    kind = "base"
    dim: int

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            raise ValueError(
                f"{self.kind}: expected points of dimension {self.dim}, got shape {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{self.kind}: non-finite input")
        return x

    def score(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        """Jacobian of the score; finite differences unless overridden."""
        x = self._check(x)
        return central_diff(self.score, x, FD_JACOBIAN_STEP)

    def log_density(self, x):
        raise NotImplementedError(f"{self.kind} has no log-density")

    def sample(self, n, rng):
        raise NotImplementedError(f"{self.kind} has no exact sampler")

    @property
    def has_log_density(self) -> bool:
        return type(self).log_density is not ScoreModel.log_density

    @property
    def has_sampler(self) -> bool:
        return type(self).sample is not ScoreModel.sample

    # alias matching the ``score_jacobian`` operation name
    def score_jacobian(self, x):
        return self.jacobian(x)


class Gaussian(ScoreModel):
    kind = "Gaussian"

    def __init__(self, mean, cov=None):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.dim = self.mean.shape[0]
        cov = np.eye(self.dim) if cov is None else np.asarray(cov, dtype=float)
        if np.ndim(cov) == 0:
            cov = float(cov) * np.eye(self.dim)
        if cov.shape != (self.dim, self.dim):
            raise ValueError(f"covariance must be {self.dim}x{self.dim}")
        self.cov = cov
        self.precision = np.linalg.inv(cov)
        self._chol = np.linalg.cholesky(cov)
        self._logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))

    @classmethod
    def standard(cls, dim):
        return cls(np.zeros(dim))

    def score(self, x):
        x = self._check(x)
        return -(x - self.mean) @ self.precision.T

    def jacobian(self, x):
        x = self._check(x)
        return np.broadcast_to(-self.precision, x.shape[:-1] + (self.dim, self.dim)).copy()

    def log_density(self, x):
        x = self._check(x)
        diff = x - self.mean
        quad = np.einsum("...i,ij,...j->...", diff, self.precision, diff)
        return -0.5 * (quad + self._logdet + self.dim * np.log(2 * np.pi))

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._chol.T


class GaussianMixture(ScoreModel):
    kind = "GaussianMixture"

    def __init__(self, weights, means, covs):
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        n_comp, self.dim = self.means.shape
        w = np.asarray(weights, dtype=float)
        if w.shape != (n_comp,) or np.any(w <= 0):
            raise ValueError("weights must be positive, one per component")
        self.weights = w / w.sum()
        covs = np.asarray(covs, dtype=float)
        if covs.ndim == 0:
            covs = np.broadcast_to(covs * np.eye(self.dim), (n_comp, self.dim, self.dim))
        elif covs.ndim == 1:
            covs = covs[:, None, None] * np.eye(self.dim)
        self.covs = np.array(covs)
        self.precisions = np.linalg.inv(self.covs)
        self._chols = np.linalg.cholesky(self.covs)
        logdets = 2.0 * np.sum(np.log(np.diagonal(self._chols, axis1=1, axis2=2)), axis=1)
        self._log_norm = np.log(self.weights) - 0.5 * (logdets + self.dim * np.log(2 * np.pi))

    def _components(self, x):
        diff = x[..., None, :] - self.means  # (..., K, d)
        comp_scores = -np.einsum("kij,...kj->...ki", self.precisions, diff)
        quad = -np.einsum("...ki,...ki->...k", diff, comp_scores)
        logp = self._log_norm - 0.5 * quad
        return logp, comp_scores

    def score(self, x):
        x = self._check(x)
        logp, comp = self._components(x)
        resp = _softmax(logp)
        return np.einsum("...k,...ki->...i", resp, comp)

    def jacobian(self, x):
        x = self._check(x)
        logp, comp = self._components(x)
        resp = _softmax(logp)
        s = np.einsum("...k,...ki->...i", resp, comp)
        outer = comp[..., :, None] * comp[..., None, :]
        jac = np.einsum("...k,...kij->...ij", resp, outer - self.precisions)
        return jac - s[..., :, None] * s[..., None, :]

    def log_density(self, x):
        x = self._check(x)
        logp, _ = self._components(x)
        return _logsumexp(logp)

    def sample(self, n, rng):
        labels = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[labels] + np.einsum("nij,nj->ni", self._chols[labels], z)


def symmetric_mixture(variance=0.1, separation=1.0):
    """Balanced two-component mixture with centroids at ``(+-separation, 0)``.

    Symmetric about the axis ``x_1 = 0``.
    """
    means = np.array([[-separation, 0.0], [separation, 0.0]])
    return GaussianMixture([0.5, 0.5], means, [variance, variance])


class Banana(ScoreModel):
    """Twisted Gaussian in 2-D.

    ``log pi(x) = -x1^2 / (2 a^2) - (x2 + b (x1^2 - a^2))^2 / 2``
    """

    kind = "Banana"
    dim = 2

    def __init__(self, a=2.0, b=0.2):
        if a <= 0:
            raise ValueError("banana scale a must be positive")
        self.a = float(a)
        self.b = float(b)

    def _twist(self, x):
        return x[..., 1] + self.b * (x[..., 0] ** 2 - self.a**2)

    def score(self, x):
        x = self._check(x)
        t = self._twist(x)
        s1 = -x[..., 0] / self.a**2 - 2.0 * self.b * x[..., 0] * t
        return np.stack([s1, -t], axis=-1)

    def jacobian(self, x):
        x = self._check(x)
        t = self._twist(x)
        x1 = x[..., 0]
        j11 = -1.0 / self.a**2 - 2.0 * self.b * t - 4.0 * self.b**2 * x1**2
        j12 = -2.0 * self.b * x1
        jac = np.empty(x.shape[:-1] + (2, 2))
        jac[..., 0, 0] = j11
        jac[..., 0, 1] = j12
        jac[..., 1, 0] = j12
        jac[..., 1, 1] = -1.0
        return jac

    def log_density(self, x):
        x = self._check(x)
        t = self._twist(x)
        return -0.5 * x[..., 0] ** 2 / self.a**2 - 0.5 * t**2

    def sample(self, n, rng):
        x1 = self.a * rng.standard_normal(n)
        x2 = -self.b * (x1**2 - self.a**2) + rng.standard_normal(n)
        return np.stack([x1, x2], axis=-1)


class LogisticPosterior(ScoreModel):
    """Hierarchical Bayesian logistic regression in ``x = [w, log alpha]``.

    ``p(y=1 | d, w) = expit(w . d)``, ``w | alpha ~ N(0, I / alpha)`` and
    ``alpha ~ Exp(rate)``.  The log-density includes the ``log alpha``
    change-of-variables term.
    """

    kind = "LogisticPosterior"

    def __init__(self, features, labels, prior_rate=0.01):
        features = np.asarray(features, dtype=float)
        labels = np.asarray(labels, dtype=float).ravel()
        if features.ndim != 2:
            raise ValueError("features must be a (q, p) matrix")
        if features.shape[0] != labels.shape[0]:
            raise ValueError("features and labels disagree on the number of points")
        if features.shape[1] < 1:
            raise ValueError("need at least one feature")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")
        self.features = features
        self.labels = labels
        self.prior_rate = float(prior_rate)
        self.p = features.shape[1]
        self.dim = self.p + 1
        self._yd = labels[:, None] * features

    def _split(self, x):
        return x[..., : self.p], x[..., self.p]

    def log_density(self, x):
        x = self._check(x)
        w, theta = self._split(x)
        alpha = np.exp(theta)
        margins = w @ self._yd.T
        loglik = -np.sum(np.logaddexp(0.0, -margins), axis=-1)
        sq = np.sum(w**2, axis=-1)
        logprior_w = 0.5 * self.p * theta - 0.5 * alpha * sq
        logprior_alpha = np.log(self.prior_rate) - self.prior_rate * alpha + theta
        return loglik + logprior_w + logprior_alpha

    def score(self, x):
        x = self._check(x)
        w, theta = self._split(x)
        alpha = np.exp(theta)
        margins = w @ self._yd.T
        gw = expit(-margins) @ self._yd - alpha[..., None] * w
        sq = np.sum(w**2, axis=-1)
        gtheta = 0.5 * self.p - 0.5 * alpha * sq - self.prior_rate * alpha + 1.0
        return np.concatenate([gw, gtheta[..., None]], axis=-1)

    def jacobian(self, x):
        x = self._check(x)
        w, theta = self._split(x)
        alpha = np.exp(theta)
        margins = w @ self._yd.T
        sig = expit(margins)
        curv = sig * (1.0 - sig)
        jac = np.zeros(x.shape[:-1] + (self.dim, self.dim))
        jac[..., : self.p, : self.p] = -np.einsum(
            "...n,ni,nj->...ij", curv, self.features, self.features
        ) - alpha[..., None, None] * np.eye(self.p)
        cross = -alpha[..., None] * w
        jac[..., : self.p, self.p] = cross
        jac[..., self.p, : self.p] = cross
        sq = np.sum(w**2, axis=-1)
        jac[..., self.p, self.p] = -0.5 * alpha * sq - self.prior_rate * alpha
        return jac


class ICAPosterior(ScoreModel):
    """Posterior over a ``p x p`` unmixing matrix ``W`` (flattened row-major).

    Sources have ``psi = -p_s'/p_s = tanh``, i.e. ``log p_s(u) = -log cosh u``;
    the prior is i.i.d. ``N(0, 1)`` on the entries and the likelihood is
    summed over the observed samples.
    """

    kind = "ICAPosterior"
    max_condition = 1e12

    def __init__(self, data):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2:
            raise ValueError("ICA data must be a (q, p) matrix")
        self.data = data
        self.q, self.p = data.shape
        self.dim = self.p * self.p

    def _matrices(self, x):
        x = self._check(x)
        W = x.reshape(x.shape[:-1] + (self.p, self.p))
        cond = np.linalg.cond(W)
        if np.any(~np.isfinite(cond)) or np.any(cond > self.max_condition):
            raise SingularMatrixError(
                f"unmixing matrix is numerically singular (condition {np.max(cond):.3g})"
            )
        return x, W

    def log_density(self, x):
        x, W = self._matrices(x)
        _, logdet = np.linalg.slogdet(W)
        Z = W @ self.data.T
        logcosh = np.logaddexp(Z, -Z) - np.log(2.0)
        return self.q * logdet - np.sum(logcosh, axis=(-2, -1)) - 0.5 * np.sum(x**2, axis=-1)

    def score(self, x):
        x, W = self._matrices(x)
        Winv_T = np.swapaxes(np.linalg.inv(W), -1, -2)
        T = np.tanh(W @ self.data.T)
        S = self.q * Winv_T - T @ self.data - W
        return S.reshape(x.shape)

    def jacobian(self, x):
        x, W = self._matrices(x)
        p = self.p
        Winv = np.linalg.inv(W)
        T = np.tanh(W @ self.data.T)
        # d s_ab / d W_ce
        jac = -self.q * np.einsum("...bc,...ea->...abce", Winv, Winv)
        G = np.einsum("...am,mb,me->...abe", 1.0 - T**2, self.data, self.data)
        eye = np.eye(p)
        jac -= np.einsum("ac,...abe->...abce", eye, G)
        jac -= np.einsum("ac,be->abce", eye, eye)
        return jac.reshape(x.shape[:-1] + (self.dim, self.dim))


class AnnealedScore(ScoreModel):
    """Target ``pi^beta``: the score and its Jacobian are scaled by ``beta``."""

    kind = "Annealed"

    def __init__(self, base: ScoreModel, beta: float):
        beta = float(beta)
        if not 0.0 < beta <= 1.0:
            raise ValueError(f"inverse temperature must lie in (0, 1], got {beta}")
        self.base = base
        self.beta = beta
        self.dim = base.dim

    def score(self, x):
        return self.beta * self.base.score(x)

    def jacobian(self, x):
        return self.beta * self.base.jacobian(x)

    def log_density(self, x):
        return self.beta * self.base.log_density(x)

    @property
    def has_log_density(self):
        return self.base.has_log_density


def anneal(model: ScoreModel, beta: float) -> AnnealedScore:
    return AnnealedScore(model, beta)


class CallableScore(ScoreModel):
    """Wrap user functions; the Jacobian falls back to finite differences."""

    kind = "Callable"

    def __init__(self, dim, score_fn, log_density_fn=None):
        self.dim = int(dim)
        self._score = score_fn
        self._logp = log_density_fn

    def score(self, x):
        return np.asarray(self._score(self._check(x)), dtype=float)

    def log_density(self, x):
        if self._logp is None:
            return super().log_density(x)
        return np.asarray(self._logp(self._check(x)), dtype=float)

    @property
    def has_log_density(self):
        return self._logp is not None
