"""Gradient-norm profiles, analytic op counts and finite-difference gradient checks."""

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import network
from .timegate import time_axis

# One multiply-add is 1 Op and a nonlinearity is 5 Ops.
LSTM_OPS_PER_INPUT = 8
LSTM_OPS_PER_HIDDEN = 8
LSTM_OPS_CONST = 29
GATE_OPS = 13


def op_count_lstm(t, h, d):
    if min(t, h, d) < 1:
        raise ValueError("op counts need positive T, H, D")
    return int(t) * int(h) * (LSTM_OPS_PER_INPUT * int(d) + LSTM_OPS_PER_HIDDEN * int(h)
                              + LSTM_OPS_CONST)


def op_count_gate(t, h):
    if min(t, h) < 1:
        raise ValueError("op counts need positive T, H")
    return GATE_OPS * int(t) * int(h)


def op_count_thresholded(t, h, d, open_fraction):
    """LSTM ops scaled by the open fraction; the gate is always evaluated."""
    if not 0.0 <= open_fraction <= 1.0:
        raise ValueError(f"open fraction must be in [0, 1], got {open_fraction}")
    return int(round(open_fraction * op_count_lstm(t, h, d))) + op_count_gate(t, h)


@dataclass
class OpCountReport:
    n_lstm: int
    n_gate: int
    total: int
    thresholded_total: int
    open_fraction: float

    @classmethod
    def build(cls, t, h, d, open_fraction):
        n_lstm = op_count_lstm(t, h, d)
        n_gate = op_count_gate(t, h)
        return cls(n_lstm, n_gate, n_lstm + n_gate,
                   op_count_thresholded(t, h, d, open_fraction), float(open_fraction))

    def to_json(self):
        return json.dumps(asdict(self))


def _loss_grad(out, targets, loss):
    """Per-sample (not batch-averaged) dL/d(output)."""
    if loss == "mse":
        return 2.0 * (out - targets) / out.shape[1]
    if loss == "ce":
        z = out - out.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(out.shape[0]), targets] -= 1.0
        return p
    if loss == "zero":
        return np.zeros_like(out)
    raise ValueError(f"unknown loss {loss!r}")


def gradient_norms(model, inputs, targets, loss="ce", batch=25):
    """Gamma_n: |dL/dh_n| averaged over samples and hidden units, shape (N,)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[0] == 0:
        raise ValueError("gradient_norms needs a non-empty (S, N, D) batch")
    total = np.zeros(inputs.shape[1])
    for s in range(0, inputs.shape[0], batch):
        xb = inputs[s:s + batch]
        out, trace = network.forward(model, xb)
        dout = _loss_grad(out, np.asarray(targets)[s:s + batch], loss)
        g = network.backward(model, trace, dout, return_hidden_grads=True)
        total += np.abs(g["h"]).sum(axis=(0, 2))
    return total / (inputs.shape[0] * model.hidden_size)


def gradnorm_csv(gamma, axis=None):
    if axis is None:
        axis = time_axis(len(gamma))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "gamma"])
    for t, v in zip(axis, gamma):
        w.writerow([format(t, ".17g"), format(v, ".17g")])
    return buf.getvalue()


# --- finite differences ---------------------------------------------------------

LD = np.longdouble


def _reference_output(arrays, x, axis, candidate_tanh):
    """Plain per-gate g-LSTM forward in extended precision.

    Written independently of the fused float64 path it is used to check.
    """
    a = {k: v.astype(LD) for k, v in arrays.items()}
    x = x.astype(LD)
    bsz, n_steps, _ = x.shape
    hdim = a["b_i"].shape[0]
    c = np.zeros((bsz, hdim), dtype=LD)
    h = np.zeros((bsz, hdim), dtype=LD)

    def sig(z):
        return 1 / (1 + np.exp(-z))

    for n in range(n_steps):
        pre = {q: x[:, n] @ a[f"W_x{q}"] + h @ a[f"W_h{q}"] + a[f"b_{q}"] for q in "ifgo"}
        i, f, o = sig(pre["i"]), sig(pre["f"]), sig(pre["o"])
        g = np.tanh(pre["g"]) if candidate_tanh else sig(pre["g"])
        ctil = f * c + i * g
        htil = o * np.tanh(ctil)
        if "mu" in a:
            k = np.exp(-(LD(axis[n]) - a["mu"]) ** 2 / a["sigma"] ** 2)
            c = k * ctil + (1 - k) * c
            h = k * htil + (1 - k) * h
        else:
            c, h = ctil, htil
    return h @ a["W_out"] + a["b_out"]


def _reference_loss(arrays, x, targets, axis, candidate_tanh, loss):
    out = _reference_output(arrays, x, axis, candidate_tanh)
    if loss == "mse":
        d = out - np.asarray(targets, dtype=LD)
        return np.mean(d * d)
    if loss == "ce":
        z = out - out.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return -np.mean(logp[np.arange(out.shape[0]), targets])
    if loss == "zero":
        return LD(0)
    raise ValueError(f"unknown loss {loss!r}")


def analytic_grads(model, x, targets, loss="mse"):
    from .training import cross_entropy_batch, mse_loss

    out, trace = network.forward(model, x)
    if loss == "mse":
        _, dout = mse_loss(out, targets)
    elif loss == "zero":
        dout = np.zeros_like(out)
    else:
        _, dout = cross_entropy_batch(out, targets)
    return network.backward(model, trace, dout)


def finite_diff_check(model, x, targets, epsilon=1e-5, loss="mse", grads=None,
                      return_details=False):
    """Worst relative error between analytic and central-difference gradients.

    Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator. The
    numeric side evaluates an extended-precision reference forward so that
    roundoff does not swamp small gradients.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
        targets = np.asarray(targets)[None]
    if grads is None:
        grads = analytic_grads(model, x, targets, loss)
    axis = time_axis(x.shape[1])
    arrays = model.arrays()
    worst, where = 0.0, None
    for name, arr in arrays.items():
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + epsilon
            lp = _reference_loss(arrays, x, targets, axis, model.candidate_tanh, loss)
            arr[idx] = old - epsilon
            lm = _reference_loss(arrays, x, targets, axis, model.candidate_tanh, loss)
            arr[idx] = old
            num = float((lp - lm) / (2 * LD(epsilon)))
            ana = float(grads[name][idx])
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            if rel > worst:
                worst, where = rel, (name, idx, ana, num)
    return (worst, where) if return_details else worst
