"""Gaussian time gate: k = exp(-(t - mu)^2 / sigma^2), one gate per hidden unit."""

import csv
from dataclasses import dataclass

import numpy as np

SIGMA_MIN = 0.01


@dataclass
class GateParams:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.array(self.mu, dtype=np.float64).reshape(-1)
        self.sigma = np.array(self.sigma, dtype=np.float64).reshape(-1)
        if self.mu.shape != self.sigma.shape:
            raise ValueError(f"mu {self.mu.shape} and sigma {self.sigma.shape} differ")
        self.clamp()

    @property
    def size(self):
        return self.mu.shape[0]

    def clamp(self):
        np.maximum(self.sigma, SIGMA_MIN, out=self.sigma)

    def copy(self):
        return GateParams(self.mu.copy(), self.sigma.copy())

    @classmethod
    def init(cls, hidden, mu_range, sigma, rng):
        """mu ~ U(mu_range), sigma constant for every unit."""
        lo, hi = mu_range
        if lo > hi:
            raise ValueError(f"bad mu range {mu_range}")
        mu = rng.uniform(lo, hi, size=hidden) if hi > lo else np.full(hidden, float(lo))
        return cls(mu, np.full(hidden, float(sigma)))


def time_axis(n_steps, start=1.0):
    """Default time inputs t_n = n for n = 1..N."""
    return np.arange(n_steps, dtype=np.float64) + start


def check_axis(axis):
    axis = np.asarray(axis, dtype=np.float64).reshape(-1)
    if axis.size > 1 and not np.all(np.diff(axis) > 0):
        raise ValueError("time axis must be strictly increasing")
    return axis


def gate_value(g, t):
    """Gate openness of every unit at time(s) ``t``.

    Scalar ``t`` gives shape (H,); an array of times gives (len(t), H).
    """
    t = np.asarray(t, dtype=np.float64)
    d = t[..., None] - g.mu
    return np.exp(-(d * d) / (g.sigma * g.sigma))


def gate_grad(g, t):
    """(dk/dmu, dk/dsigma), same shapes as :func:`gate_value`."""
    t = np.asarray(t, dtype=np.float64)
    d = t[..., None] - g.mu
    s2 = g.sigma * g.sigma
    k = np.exp(-(d * d) / s2)
    dmu = k * 2.0 * d / s2
    dsigma = k * 2.0 * d * d / (s2 * g.sigma)
    return dmu, dsigma


def openness_matrix(g, axis):
    """H x N matrix whose row j is unit j's gate over the time axis."""
    axis = check_axis(axis)
    return gate_value(g, axis).T.copy()


def mean_openness(g, axis):
    return float(openness_matrix(g, axis).mean())


def fraction_above_threshold(g, axis, v_t):
    if not 0.0 <= v_t < 1.0:
        raise ValueError(f"threshold must be in [0, 1), got {v_t}")
    return float(np.mean(openness_matrix(g, axis) > v_t))


def write_openness_csv(path_or_file, g, axis):
    """One row per unit, 17 significant digits, header ``unit,t=1,...,t=N``."""
    k = openness_matrix(g, axis)
    n = k.shape[1]

    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit"] + [f"t={i}" for i in range(1, n + 1)])
        for j, row in enumerate(k):
            w.writerow([j] + [format(v, ".17g") for v in row])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)


def read_openness_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])
