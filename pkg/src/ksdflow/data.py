"""Dataset ingestion and seeded synthetic generators.

CSV layout: a header row, a label column named ``y`` holding +1/-1, every
other column a numeric feature.  Values are written with ``repr`` so a
written file reads back to the same floats.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LabeledDataset",
    "load_labeled_csv",
    "write_labeled_csv",
    "standardize",
    "make_logistic_data",
    "make_ica_data",
    "write_matrix_csv",
    "read_matrix_csv",
    "generate_logistic",
    "generate_ica",
]


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.labels = np.asarray(self.labels, dtype=float).ravel()
        if self.features.shape[0] == 0:
            raise ValueError("dataset has no rows")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels differ in length")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")
        if not self.names:
            self.names = tuple(f"f{k + 1}" for k in range(self.features.shape[1]))

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def split(self, n_train):
        if not 0 < n_train < len(self):
            raise ValueError("train size must leave both parts non-empty")
        tr = LabeledDataset(self.features[:n_train], self.labels[:n_train], self.names)
        te = LabeledDataset(self.features[n_train:], self.labels[n_train:], self.names)
        return tr, te


def standardize(train: LabeledDataset, test: LabeledDataset | None = None):
    """Zero-mean, unit-variance features using train statistics.

    Constant columns are centred only.
    """
    mu = train.features.mean(axis=0)
    sd = train.features.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    out = LabeledDataset((train.features - mu) / sd, train.labels, train.names)
    if test is None:
        return out
    return out, LabeledDataset((test.features - mu) / sd, test.labels, test.names)


def write_labeled_csv(path, ds: LabeledDataset):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("y",) + tuple(ds.names))
        for lab, row in zip(ds.labels, ds.features):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])


def load_labeled_csv(path, standardized: bool = False) -> LabeledDataset:
    """Read a labelled CSV; ``standardized=True`` rescales the features."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if "y" not in header:
        raise ValueError(f"{path}: no 'y' column in header")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ValueError(f"{path}: no data rows")
    iy = header.index("y")
    try:
        table = np.array([[float(v) for v in r] for r in body])
    except ValueError as err:
        raise ValueError(f"{path}: non-numeric entry ({err})") from None
    if table.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    names = tuple(h for k, h in enumerate(header) if k != iy)
    ds = LabeledDataset(np.delete(table, iy, axis=1), table[:, iy], names)
    return standardize(ds) if standardized else ds


def write_matrix_csv(path, M, names=None):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    names = names or [f"x{k + 1}" for k in range(M.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in M:
            w.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    return np.array([[float(v) for v in r] for r in rows[1:]])


# -- synthetic data -----------------------------------------------------------

def make_logistic_data(n, p, seed, separable=True, margin=0.1):
    """Labels from a random hyperplane through the origin.

    With ``separable`` points closer than ``margin`` to the plane are
    redrawn and labels are deterministic; otherwise labels are Bernoulli
    draws of the logistic model.  Returns ``(dataset, w_true)``.
    """
    rng = np.random.default_rng(seed)
    w = rng.normal(size=p)
    w /= np.linalg.norm(w)
    rows = []
    while sum(len(r) for r in rows) < n:
        X = rng.normal(size=(n, p))
        if separable:
            X = X[np.abs(X @ w) >= margin]
        rows.append(X)
    X = np.concatenate(rows)[:n]
    z = X @ w
    if separable:
        y = np.where(z >= 0, 1.0, -1.0)
    else:
        y = np.where(rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-4.0 * z)), 1.0, -1.0)
    return LabeledDataset(X, y), w


def make_ica_data(p, q, seed):
    """``q`` observations ``x = W^{-1} s`` with i.i.d. sech-distributed sources.

    ``W`` has i.i.d. N(0, 1) entries.  A sech draw is ``log tan(pi U / 2)``
    with ``U`` uniform on (0, 1), whose density is ``1 / (pi cosh s)``.
    Returns ``(X, W)`` with ``X`` of shape ``(q, p)``.
    """
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(p, p))
    while np.linalg.cond(W) > 1e6:
        W = rng.normal(size=(p, p))
    U = rng.uniform(size=(q, p))
    S = np.log(np.tan(0.5 * np.pi * U))
    X = np.linalg.solve(W, S.T).T
    return X, W


def _ensure_dir(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)


def generate_logistic(path, p, q, seed, separable=True, margin=0.1):
    """Write ``y,f1..fp`` to ``path`` and the true weights next to it."""
    ds, w = make_logistic_data(q, p, seed, separable=separable, margin=margin)
    _ensure_dir(path)
    write_labeled_csv(path, ds)
    truth = os.path.splitext(path)[0] + "_truth.json"
    with open(truth, "w") as fh:
        json.dump({"w": [float(v) for v in w], "seed": int(seed), "separable": separable}, fh,
                  indent=1)
    return path, truth


def generate_ica(path, p, q, seed):
    """Write the observations to ``path`` and the true unmixing matrix next to it."""
    X, W = make_ica_data(p, q, seed)
    _ensure_dir(path)
    write_matrix_csv(path, X)
    truth = os.path.splitext(path)[0] + "_W.csv"
    write_matrix_csv(truth, W, [f"w{k + 1}" for k in range(p)])
    return path, truth
