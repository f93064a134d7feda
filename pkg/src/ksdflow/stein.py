"""Stein kernel built from a base kernel and a score model.

    k_pi(x, y) = s(x).s(y) k + s(x).grad2 k + s(y).grad1 k + div1 grad2 k

Its gradient in the second argument is assembled term by term::

    grad2 k_pi(x, y) = s(x).s(y) grad2 k            (a)
                     + Js(y)^T s(x) k               (b)
                     + H2 k s(x)                    (c)
                     + Js(y)^T grad1 k              (d)
                     + (d2k/dx dy)^T s(y)           (e)
                     + grad2 (div1 grad2 k)         (f)

Term (e) comes from differentiating ``s(y).grad1 k(x, y)`` in ``y``; it is
required for agreement with finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import BaseKernel
from .targets import ScoreModel

__all__ = ["SteinKernel", "SteinEvaluation", "evaluate_particles"]


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


@dataclass
class SteinEvaluation:
    """Pairwise Stein-kernel structures for one particle configuration.

    ``gram[i, j] = k_pi(x_i, x_j)`` and
    ``grad_gram[j, i] = grad2 k_pi(x_j, x_i)`` (source ``j``, evaluation ``i``).
    ``grad_gram`` is ``None`` when only values were requested.
    """

    gram: np.ndarray
    grad_gram: np.ndarray | None = None

    @property
    def n(self):
        return self.gram.shape[0]


@dataclass(frozen=True)
class SteinKernel:
    base: BaseKernel
    model: ScoreModel

    @property
    def dim(self):
        return self.model.dim

    # -- values ------------------------------------------------------------
    def _kpi(self, x, y, sx, sy):
        k = self.base
        return (_dot(sx, sy) * k.eval(x, y) + _dot(sx, k.grad2(x, y))
                + _dot(sy, k.grad1(x, y)) + k.div1_grad2(x, y))

    def kpi(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self._kpi(x, y, self.model.score(x), self.model.score(y))

    def kpi_diag(self, X):
        """``k_pi(x, x)`` for each row of ``X``."""
        X = np.asarray(X, dtype=float)
        S = self.model.score(X)
        return self._kpi(X, X, S, S)

    def kpi_matrix(self, X, Y=None):
        """Cross matrix ``[k_pi(X[i], Y[j])]``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        SX = self.model.score(X)
        if Y is None:
            Y, SY = X, SX
        else:
            Y = np.atleast_2d(np.asarray(Y, dtype=float))
            SY = self.model.score(Y)
        return self._kpi(X[:, None, :], Y[None, :, :], SX[:, None, :], SY[None, :, :])

    # -- gradients ---------------------------------------------------------
    def _grad2_kpi(self, x, y, sx, sy, Jy):
        k = self.base
        kv = k.eval(x, y)
        g1 = k.grad1(x, y)
        g2 = k.grad2(x, y)
        out = _dot(sx, sy)[..., None] * g2
        out += np.einsum("...ab,...a->...b", Jy, sx * kv[..., None] + g1)
        out += np.einsum("...ij,...j->...i", k.hess2(x, y), sx)
        out += np.einsum("...ij,...i->...j", k.cross_hess(x, y), sy)
        out += k.grad2_div1_grad2(x, y)
        return out

    def grad2_kpi(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        m = self.model
        return self._grad2_kpi(x, y, m.score(x), m.score(y), m.jacobian(y))

    def grad1_kpi(self, x, y):
        """By symmetry, ``grad1 k_pi(x, y) = grad2 k_pi(y, x)``."""
        return self.grad2_kpi(y, x)

    def _pairwise_radial(self, X, S, J, with_grad):
        """Vectorized gram / grad_gram using the radial structure of the base kernel.

        Hessian-vector products collapse to ``2 phi' v + 4 phi'' u (u . v)``,
        so no ``d x d`` blocks are formed per pair.
        """
        u, r, (p0, p1, p2, p3) = self.base.radial(X[:, None, :], X[None, :, :])
        d = X.shape[1]
        sx, sy = S[:, None, :], S[None, :, :]
        ss = S @ S.T
        ds = sy - sx  # s(y) - s(x)
        gram = ss * p0 + 2.0 * p1 * _dot(u, ds) + (-2.0 * d * p1 - 4.0 * r * p2)
        if not with_grad:
            return gram, None
        g1 = (2.0 * p1)[..., None] * u
        out = -ss[..., None] * g1
        v = sx * p0[..., None] + g1
        out += np.einsum("iab,jia->jib", J, v)
        dsx = -ds
        out += (2.0 * p1)[..., None] * dsx + (4.0 * p2 * _dot(u, dsx))[..., None] * u
        out += (2.0 * ((2.0 * d + 4.0) * p2 + 4.0 * r * p3))[..., None] * u
        return gram, out

    def evaluate(self, X, with_grad=True) -> SteinEvaluation:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[0] < 1:
            raise ValueError("need at least one particle")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite particle coordinates")
        S = self.model.score(X)
        J = self.model.jacobian(X) if with_grad else None
        if hasattr(self.base, "radial"):
            gram, grad_gram = self._pairwise_radial(X, S, J, with_grad)
        else:
            xs, ys = X[:, None, :], X[None, :, :]
            sx, sy = S[:, None, :], S[None, :, :]
            gram = self._kpi(xs, ys, sx, sy)
            grad_gram = self._grad2_kpi(xs, ys, sx, sy, J[None]) if with_grad else None
        # enforce exact symmetry against round-off in the four-term sum
        gram = 0.5 * (gram + gram.T)
        return SteinEvaluation(gram, grad_gram)


def evaluate_particles(sk: SteinKernel, particles, with_grad=True) -> SteinEvaluation:
    """Gram and gradient structures for a particle set (array or ``ParticleSet``)."""
    positions = getattr(particles, "positions", particles)
    return sk.evaluate(positions, with_grad=with_grad)
