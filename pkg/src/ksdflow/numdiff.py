"""Central finite differences shared by the derivative checks."""
import numpy as np


def central_diff(f, y, step):
    """Central-difference Jacobian of ``f`` at ``y``; the derivative axis is appended last."""
    y = np.asarray(y, dtype=float)
    cols = []
    for i in range(y.shape[-1]):
        e = np.zeros_like(y)
        e[..., i] = step
        cols.append((np.asarray(f(y + e)) - np.asarray(f(y - e))) / (2.0 * step))
    return np.stack(cols, axis=-1)


def rel_err(analytic, numeric, floor=1e-3):
    """Normwise relative error with the denominator floored at ``floor``."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    diff = np.linalg.norm(np.ravel(analytic - numeric))
    scale = max(np.linalg.norm(np.ravel(analytic)), np.linalg.norm(np.ravel(numeric)), floor)
    return float(diff / scale)
