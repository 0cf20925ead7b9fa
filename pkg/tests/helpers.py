import numpy as np

from credfair.data import EncodedMatrix


def matrix(X, y, names=None, sex=None):
    """EncodedMatrix over plain numeric columns, one attribute per column."""
    X = np.asarray(X, dtype=np.float64)
    names = tuple(names or (f"f{j}" for j in range(X.shape[1])))
    return EncodedMatrix(
        rows=X,
        column_names=names,
        group_map={n: (j, j + 1) for j, n in enumerate(names)},
        labels=np.asarray(y, dtype=np.int64),
        sex=tuple(sex or ["Male"] * len(X)),
        uids=tuple(range(len(X))),
    )


def central_difference(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def max_relative_error(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
