"""Dense linear algebra helpers, activations, seeded RNG and weight initializers.

Matrices and vectors are plain float64 numpy arrays (row-major). Random
streams come from numpy's PCG64 bit generator, which produces the same
stream on every platform for a given seed.
"""

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


def make_rng(seed):
    """PCG64-backed generator. ``seed`` may be an int or a sequence of ints."""
    return np.random.Generator(np.random.PCG64(seed))


def matmul(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(v):
    v = np.asarray(v, dtype=DTYPE)
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def fast_sigmoid(v):
    # used in the recurrent inner loop; exp overflow to inf still yields 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-v))


def tanh(v):
    return np.tanh(np.asarray(v, dtype=DTYPE))


def uniform(rng, lo, hi, size=None):
    """Draw from U[lo, hi). ``lo == hi`` returns ``lo`` exactly."""
    if lo > hi:
        raise ValueError(f"uniform: lo={lo} > hi={hi}")
    if lo == hi:
        return float(lo) if size is None else np.full(size, float(lo))
    return rng.uniform(lo, hi, size=size)


def orthogonal_init(rows, cols, rng):
    """Orthogonal matrix from the QR factorization of a Gaussian matrix.

    For rows >= cols the columns are orthonormal, otherwise the rows are.
    The sign of each column is fixed so that R has a positive diagonal.
    """
    if rows < 1 or cols < 1:
        raise ValueError("orthogonal_init needs rows, cols >= 1")
    big, small = max(rows, cols), min(rows, cols)
    a = rng.standard_normal((big, small))
    q, r = np.linalg.qr(a)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    q = q * d
    return q if rows >= cols else q.T.copy()


def xavier_init(rows, cols, rng):
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))
