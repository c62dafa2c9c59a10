"""LSTM / g-LSTM cell dynamics with exact backpropagation through time.

Sequences are batched as arrays of shape (B, N, D); a single (N, D) sequence
is accepted as well and the batch axis is dropped from the result. The four
LSTM gate blocks are fused column-wise in the order i, f, g, o for speed,
but parameters are stored per gate.

With a time gate, each unit j mixes the LSTM update with its previous state:

    c_n = k_n * c~_n + (1 - k_n) * c_{n-1}
    h_n = k_n * h~_n + (1 - k_n) * h_{n-1}

where k_n = exp(-(t_n - mu)^2 / sigma^2).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .core import ShapeError, orthogonal_init, xavier_init
from .timegate import GateParams, check_axis, gate_grad, gate_value, time_axis

GATES = ("i", "f", "g", "o")
LSTM_PARAM_NAMES = (
    tuple(f"W_x{q}" for q in GATES)
    + tuple(f"W_h{q}" for q in GATES)
    + tuple(f"b_{q}" for q in GATES)
)
HEAD_PARAM_NAMES = ("W_out", "b_out")
GATE_PARAM_NAMES = ("mu", "sigma")
CHECKPOINT_VERSION = 1


@dataclass
class LstmParams:
    W_xi: np.ndarray
    W_xf: np.ndarray
    W_xg: np.ndarray
    W_xo: np.ndarray
    W_hi: np.ndarray
    W_hf: np.ndarray
    W_hg: np.ndarray
    W_ho: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        d, h = self.W_xi.shape
        for q in GATES:
            if getattr(self, f"W_x{q}").shape != (d, h):
                raise ShapeError(f"W_x{q} must be {(d, h)}")
            if getattr(self, f"W_h{q}").shape != (h, h):
                raise ShapeError(f"W_h{q} must be {(h, h)}")
            if getattr(self, f"b_{q}").shape != (h,):
                raise ShapeError(f"b_{q} must be {(h,)}")

    @property
    def input_size(self):
        return self.W_xi.shape[0]

    @property
    def hidden_size(self):
        return self.W_xi.shape[1]

    def arrays(self):
        return {name: getattr(self, name) for name in LSTM_PARAM_NAMES}

    def fused(self):
        wx = np.concatenate([getattr(self, f"W_x{q}") for q in GATES], axis=1)
        wh = np.concatenate([getattr(self, f"W_h{q}") for q in GATES], axis=1)
        b = np.concatenate([getattr(self, f"b_{q}") for q in GATES])
        return wx, wh, b

    def copy(self):
        return LstmParams(**{k: v.copy() for k, v in self.arrays().items()})

    @classmethod
    def zeros(cls, d, h):
        return cls(
            **{n: np.zeros((d, h)) for n in LSTM_PARAM_NAMES[:4]},
            **{n: np.zeros((h, h)) for n in LSTM_PARAM_NAMES[4:8]},
            **{n: np.zeros(h) for n in LSTM_PARAM_NAMES[8:]},
        )

    @classmethod
    def init(cls, d, h, rng, kernel="orthogonal", forget_bias=1.0):
        """Kernels per gate from ``kernel`` (orthogonal | xavier), b_f = forget_bias."""
        make = {"orthogonal": orthogonal_init, "xavier": xavier_init}[kernel]
        kw = {}
        for q in GATES:
            kw[f"W_x{q}"] = make(d, h, rng)
        for q in GATES:
            kw[f"W_h{q}"] = make(h, h, rng)
        for q in GATES:
            kw[f"b_{q}"] = np.zeros(h)
        kw["b_f"][:] = forget_bias
        return cls(**kw)


@dataclass
class OutputHead:
    W_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        if self.W_out.ndim != 2 or self.b_out.shape != (self.W_out.shape[1],):
            raise ShapeError("head W_out must be (H, C) with b_out of length C")

    def arrays(self):
        return {"W_out": self.W_out, "b_out": self.b_out}

    def copy(self):
        return OutputHead(self.W_out.copy(), self.b_out.copy())

    @classmethod
    def init(cls, h, c, rng):
        return cls(xavier_init(h, c, rng), np.zeros(c))


@dataclass
class GLSTM:
    """One recurrent layer plus an affine readout of the final hidden state.

    ``gate=None`` is a plain LSTM.
    """

    params: LstmParams
    head: OutputHead
    gate: GateParams | None = None
    candidate_tanh: bool = False

    def __post_init__(self):
        h = self.params.hidden_size
        if self.head.W_out.shape[0] != h:
            raise ShapeError("head input size does not match hidden size")
        if self.gate is not None and self.gate.size != h:
            raise ShapeError("gate size does not match hidden size")

    @property
    def input_size(self):
        return self.params.input_size

    @property
    def hidden_size(self):
        return self.params.hidden_size

    @property
    def output_size(self):
        return self.head.W_out.shape[1]

    def arrays(self):
        """Name -> live parameter array (mutating these updates the model)."""
        out = self.params.arrays()
        out.update(self.head.arrays())
        if self.gate is not None:
            out["mu"] = self.gate.mu
            out["sigma"] = self.gate.sigma
        return out

    def copy(self):
        return GLSTM(
            self.params.copy(),
            self.head.copy(),
            None if self.gate is None else self.gate.copy(),
            self.candidate_tanh,
        )


def build_model(d, h, c, rng, kernel="orthogonal", forget_bias=1.0, gate=None,
                candidate_tanh=False):
    params = LstmParams.init(d, h, rng, kernel=kernel, forget_bias=forget_bias)
    head = OutputHead.init(h, c, rng)
    return GLSTM(params, head, gate, candidate_tanh)


@dataclass
class CellState:
    c: np.ndarray
    h: np.ndarray


@dataclass
class ForwardTrace:
    """Cached activations of a batched forward pass, time-major.

    ``acts[n]`` holds the post-nonlinearity gate blocks (i, f, g, o);
    ``cs[n]``/``hs[n]`` are the states *before* step n, so ``cs[N]`` is c_N.
    """

    x: np.ndarray          # (N, B, D)
    acts: np.ndarray       # (N, B, 4H)
    ctil: np.ndarray       # (N, B, H)
    tc: np.ndarray         # (N, B, H) tanh(c~)
    htil: np.ndarray       # (N, B, H)
    cs: np.ndarray         # (N+1, B, H)
    hs: np.ndarray         # (N+1, B, H)
    k: np.ndarray | None   # (N, H)
    axis: np.ndarray
    batched: bool = True

    @property
    def length(self):
        return self.x.shape[0]

    def step(self, n, b=0):
        """Per-step record for sample b as a dict (0-based step n)."""
        h = self.cs.shape[2]
        a = self.acts[n, b]
        rec = dict(
            x=self.x[n, b], i=a[:h], f=a[h:2 * h], g=a[2 * h:3 * h], o=a[3 * h:],
            c_tilde=self.ctil[n, b], h_tilde=self.htil[n, b],
            c=self.cs[n + 1, b], h=self.hs[n + 1, b],
        )
        rec["k"] = None if self.k is None else self.k[n]
        return rec


def _as_batch(seq, d):
    x = np.asarray(seq, dtype=np.float64)
    batched = True
    if x.ndim == 2:
        x = x[None]
        batched = False
    if x.ndim != 3 or x.shape[2] != d:
        raise ShapeError(f"expected sequence(s) of shape (B, N, {d}), got {np.shape(seq)}")
    if x.shape[1] == 0:
        raise ValueError("empty sequence")
    return x, batched


def _axis_for(n, axis):
    if axis is None:
        return time_axis(n)
    axis = check_axis(axis)
    if axis.shape[0] != n:
        raise ShapeError(f"time axis has {axis.shape[0]} entries for {n} steps")
    return axis


def _cell(z, c_prev, h, candidate_tanh, a, ctil, tc, htil, tmp):
    """LSTM update from fused pre-activations ``z`` (clobbered), written in place.

    ``a`` receives the gate activations (i, f, g, o); ``tmp`` is (B, H) scratch.
    """
    with np.errstate(over="ignore"):
        np.negative(z, out=a)
        np.exp(a, out=a)
    a += 1.0
    np.reciprocal(a, out=a)
    if candidate_tanh:
        np.tanh(z[:, 2 * h:3 * h], out=a[:, 2 * h:3 * h])
    np.multiply(a[:, h:2 * h], c_prev, out=ctil)
    np.multiply(a[:, :h], a[:, 2 * h:3 * h], out=tmp)
    ctil += tmp
    np.tanh(ctil, out=tc)
    np.multiply(a[:, 3 * h:], tc, out=htil)


def _mix(k, k1, new, old, out, tmp):
    # out = k * new + (1 - k) * old
    np.multiply(k, new, out=out)
    np.multiply(k1, old, out=tmp)
    out += tmp


def lstm_step(p, x, s, candidate_tanh=False):
    """Single ungated step for one sample. Returns (h~, c~, gates dict)."""
    h = p.hidden_size
    wx, wh, b = p.fused()
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != p.input_size:
        raise ShapeError("input size mismatch")
    z = x @ wx + b + s.h.reshape(1, -1) @ wh
    a = np.empty((1, 4 * h))
    ctil, tc, htil, tmp = (np.empty((1, h)) for _ in range(4))
    _cell(z, s.c.reshape(1, -1), h, candidate_tanh, a, ctil, tc, htil, tmp)
    gates = dict(i=a[0, :h], f=a[0, h:2 * h], g=a[0, 2 * h:3 * h], o=a[0, 3 * h:])
    return htil[0], ctil[0], gates


def glstm_step(p, g, t, x, s, candidate_tanh=False):
    htil, ctil, _ = lstm_step(p, x, s, candidate_tanh)
    k = gate_value(g, t)
    return CellState(k * ctil + (1 - k) * s.c, k * htil + (1 - k) * s.h)


def forward(model, seq, axis=None, keep_trace=True):
    """Run the recurrence from the zero state and read out h_N.

    Returns ``(output, trace)``; ``trace`` is None when ``keep_trace`` is False.
    """
    p = model.params
    hdim = p.hidden_size
    x, batched = _as_batch(seq, p.input_size)
    bsz, n_steps, d = x.shape
    axis = _axis_for(n_steps, axis)
    wx, wh, b = p.fused()

    xt = np.ascontiguousarray(x.transpose(1, 0, 2))
    xw = (xt.reshape(n_steps * bsz, d) @ wx + b).reshape(n_steps, bsz, 4 * hdim)

    gated = model.gate is not None
    if gated:
        k = gate_value(model.gate, axis)
        k1 = 1.0 - k

    if keep_trace:
        acts = np.empty((n_steps, bsz, 4 * hdim))
        ctils = np.empty((n_steps, bsz, hdim))
        tcs = np.empty((n_steps, bsz, hdim))
        htils = np.empty((n_steps, bsz, hdim))
        cs = np.zeros((n_steps + 1, bsz, hdim))
        hs = np.zeros((n_steps + 1, bsz, hdim))
    else:
        a = np.empty((bsz, 4 * hdim))
        ctil, tc, htil = (np.empty((bsz, hdim)) for _ in range(3))
        cs = np.zeros((2, bsz, hdim))
        hs = np.zeros((2, bsz, hdim))
    z = np.empty((bsz, 4 * hdim))
    tmp = np.empty((bsz, hdim))

    for n in range(n_steps):
        if keep_trace:
            a, ctil, tc, htil = acts[n], ctils[n], tcs[n], htils[n]
            prev, cur = n, n + 1
        else:
            prev, cur = n % 2, (n + 1) % 2
        np.matmul(hs[prev], wh, out=z)
        z += xw[n]
        _cell(z, cs[prev], hdim, model.candidate_tanh, a, ctil, tc, htil, tmp)
        if gated:
            _mix(k[n], k1[n], ctil, cs[prev], cs[cur], tmp)
            _mix(k[n], k1[n], htil, hs[prev], hs[cur], tmp)
        else:
            cs[cur] = ctil
            hs[cur] = htil
    h = hs[cur]

    out = h @ model.head.W_out + model.head.b_out
    trace = None
    if keep_trace:
        trace = ForwardTrace(xt, acts, ctils, tcs, htils, cs, hs,
                             k if gated else None, axis, batched)
    return (out if batched else out[0]), trace


def predict(model, seq, axis=None, chunk=500):
    """Forward without a trace, in chunks to bound memory."""
    x = np.asarray(seq, dtype=np.float64)
    if x.ndim == 2:
        return forward(model, x, axis, keep_trace=False)[0]
    outs = [forward(model, x[s:s + chunk], axis, keep_trace=False)[0]
            for s in range(0, x.shape[0], chunk)]
    return np.concatenate(outs, axis=0)


def backward(model, trace, dout, return_hidden_grads=False):
    """Exact reverse-mode gradients of a loss L given dL/d(output).

    Returns a dict name -> gradient for every parameter (``mu``/``sigma`` when
    gated) plus ``x`` (dL/dx, same layout as the forward input). With
    ``return_hidden_grads`` the dict also has ``h`` of shape (B, N, H): the
    total derivative dL/dh_n at every step.
    """
    p = model.params
    hdim = p.hidden_size
    n_steps, bsz, d = trace.x.shape
    dout = np.asarray(dout, dtype=np.float64)
    if not trace.batched:
        dout = dout[None]
    if dout.shape != (bsz, model.output_size):
        raise ShapeError(f"dL/doutput has shape {dout.shape}, expected {(bsz, model.output_size)}")
    if trace.acts.shape[2] != 4 * hdim or d != p.input_size:
        raise ShapeError("trace does not match model parameters")
    gated = model.gate is not None
    if gated != (trace.k is not None):
        raise ShapeError("trace and model disagree on the time gate")

    wx, wh, _ = p.fused()
    wh_t = np.ascontiguousarray(wh.T)
    acts = trace.acts
    i, f, g, o = (acts[:, :, j * hdim:(j + 1) * hdim] for j in range(4))
    tc = trace.tc

    # step-local factors, so that inside the loop
    #   dz[:, :3H] = dc~ * q[:, :3H]   and   dz[:, 3H:] = dh~ * q[:, 3H:]
    q = acts * (1.0 - acts)
    if model.candidate_tanh:
        q[:, :, 2 * hdim:3 * hdim] = 1.0 - g * g
    q[:, :, :hdim] *= g
    q[:, :, hdim:2 * hdim] *= trace.cs[:n_steps]
    q[:, :, 2 * hdim:3 * hdim] *= i
    q[:, :, 3 * hdim:] *= tc
    q3 = q.reshape(n_steps, bsz, 4, hdim)
    dtanh = o * (1.0 - tc * tc)

    grads = {
        "W_out": trace.hs[n_steps].T @ dout,
        "b_out": dout.sum(axis=0),
    }
    dh = dout @ model.head.W_out.T
    dc = np.zeros((bsz, hdim))
    dz_all = np.empty((n_steps, bsz, 4 * hdim))
    dz3 = dz_all.reshape(n_steps, bsz, 4, hdim)
    dh_all = np.empty((n_steps, bsz, hdim))
    dc_all = np.empty((n_steps, bsz, hdim)) if gated else None
    dctil = np.empty((bsz, hdim))
    dhtil = np.empty((bsz, hdim))
    tmp = np.empty((bsz, hdim))
    if gated:
        k = trace.k
        k1 = 1.0 - k

    for n in range(n_steps - 1, -1, -1):
        dh_all[n] = dh
        if gated:
            dc_all[n] = dc
            np.multiply(k[n], dh, out=dhtil)
            np.multiply(k[n], dc, out=dctil)
        else:
            dhtil[:] = dh
            dctil[:] = dc
        np.multiply(dhtil, dtanh[n], out=tmp)
        dctil += tmp
        dz = dz_all[n]
        np.multiply(dctil[:, None, :], q3[n, :, :3], out=dz3[n, :, :3])
        np.multiply(dhtil, q3[n, :, 3], out=dz3[n, :, 3])
        dcn = dctil * f[n]
        if gated:
            np.multiply(k1[n], dc, out=dc)
            dc += dcn
            dhn = dz @ wh_t
            np.multiply(k1[n], dh, out=dh)
            dh += dhn
        else:
            dc = dcn
            dh = dz @ wh_t

    flat_dz = dz_all.reshape(n_steps * bsz, 4 * hdim)
    dwx = trace.x.reshape(n_steps * bsz, d).T @ flat_dz
    dwh = trace.hs[:n_steps].reshape(n_steps * bsz, hdim).T @ flat_dz
    db = flat_dz.sum(axis=0)
    for j, q in enumerate(GATES):
        sl = slice(j * hdim, (j + 1) * hdim)
        grads[f"W_x{q}"] = dwx[:, sl].copy()
        grads[f"W_h{q}"] = dwh[:, sl].copy()
        grads[f"b_{q}"] = db[sl].copy()
    if gated:
        # dL/dk_n, summed over the batch
        dk = np.einsum("nbh,nbh->nh", dc_all, trace.ctil - trace.cs[:n_steps]) \
            + np.einsum("nbh,nbh->nh", dh_all, trace.htil - trace.hs[:n_steps])
        kmu, ksig = gate_grad(model.gate, trace.axis)
        grads["mu"] = (dk * kmu).sum(axis=0)
        grads["sigma"] = (dk * ksig).sum(axis=0)

    dx = (dz_all @ wx.T).transpose(1, 0, 2)
    grads["x"] = dx if trace.batched else dx[0]
    if return_hidden_grads:
        hg = dh_all.transpose(1, 0, 2)
        grads["h"] = hg if trace.batched else hg[0]
    return grads


@dataclass
class SkipStats:
    open_fraction: float
    updated: int
    total: int
    per_step: np.ndarray = field(repr=False)


def forward_thresholded(model, seq, axis=None, v_t=0.0):
    """Inference where unit j only runs the LSTM update at step n if k_j > v_t.

    Skipped units copy their previous c and h. Returns (output, SkipStats).
    """
    if not 0.0 <= v_t < 1.0:
        raise ValueError(f"threshold must be in [0, 1), got {v_t}")
    p = model.params
    hdim = p.hidden_size
    x, batched = _as_batch(seq, p.input_size)
    bsz, n_steps, d = x.shape
    axis = _axis_for(n_steps, axis)
    wx, wh, b = p.fused()
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))
    xw = (xt.reshape(n_steps * bsz, d) @ wx + b).reshape(n_steps, bsz, 4 * hdim)

    if model.gate is None:
        k = np.ones((n_steps, hdim))
    else:
        k = gate_value(model.gate, axis)
    k1 = 1.0 - k
    is_open = k > v_t
    a = np.empty((bsz, 4 * hdim))
    z = np.empty((bsz, 4 * hdim))
    ctil, tc, htil, tmp = (np.empty((bsz, hdim)) for _ in range(4))
    c = np.zeros((bsz, hdim))
    h = np.zeros((bsz, hdim))

    for n in range(n_steps):
        m = is_open[n]
        if m.all():
            # same arithmetic as forward(), so v_t = 0 reproduces it bit for bit
            np.matmul(h, wh, out=z)
            z += xw[n]
            _cell(z, c, hdim, model.candidate_tanh, a, ctil, tc, htil, tmp)
            if model.gate is None:
                c, h = ctil.copy(), htil.copy()
            else:
                c_new, h_new = np.empty_like(c), np.empty_like(h)
                _mix(k[n], k1[n], ctil, c, c_new, tmp)
                _mix(k[n], k1[n], htil, h, h_new, tmp)
                c, h = c_new, h_new
        elif m.any():
            idx = np.flatnonzero(m)
            u = idx.size
            cols = np.concatenate([idx + j * hdim for j in range(4)])
            zu = h @ wh[:, cols]
            zu += xw[n][:, cols]
            au = np.empty((bsz, 4 * u))
            cu, tu, hu, tmpu = (np.empty((bsz, u)) for _ in range(4))
            _cell(zu, c[:, idx], u, model.candidate_tanh, au, cu, tu, hu, tmpu)
            kn, kn1 = k[n, idx], k1[n, idx]
            c = c.copy()
            h = h.copy()
            c[:, idx] = kn * cu + kn1 * c[:, idx]
            h[:, idx] = kn * hu + kn1 * h[:, idx]

    out = h @ model.head.W_out + model.head.b_out
    updated = int(is_open.sum())
    stats = SkipStats(updated / is_open.size, updated, int(is_open.size), is_open.mean(axis=1))
    return (out if batched else out[0]), stats


def export_to_lstm(model):
    """Gate-free copy of the weights; only faithful once every sigma is large."""
    return GLSTM(model.params.copy(), model.head.copy(), None, model.candidate_tanh)


# --- plain RNN with a Gaussian time gate -----------------------------------

@dataclass
class GatedRnnParams:
    W_x: np.ndarray
    W_h: np.ndarray
    gate: GateParams

    def __post_init__(self):
        h = self.W_x.shape[1]
        if self.W_h.shape != (h, h) or self.gate.size != h:
            raise ShapeError("inconsistent gated RNN shapes")


@dataclass
class GatedRnnTrace:
    x: np.ndarray      # (N, B, D)
    htil: np.ndarray   # (N, B, H)
    hs: np.ndarray     # (N+1, B, H)
    k: np.ndarray      # (N, H)
    axis: np.ndarray
    batched: bool
    explicit_k: bool


def gated_rnn_forward(p, seq, axis=None, k=None):
    """h~_n = tanh(x_n W_x + h_{n-1} W_h); h_n = k_n h~_n + (1 - k_n) h_{n-1}.

    ``k`` overrides the Gaussian gate with an explicit (N, H) openness pattern
    (gate-parameter gradients are then not defined).
    """
    x, batched = _as_batch(seq, p.W_x.shape[0])
    bsz, n_steps, d = x.shape
    hdim = p.W_x.shape[1]
    axis = _axis_for(n_steps, axis)
    explicit = k is not None
    if explicit:
        k = np.broadcast_to(np.asarray(k, dtype=np.float64), (n_steps, hdim))
    else:
        k = gate_value(p.gate, axis)
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))
    htil = np.empty((n_steps, bsz, hdim))
    hs = np.zeros((n_steps + 1, bsz, hdim))
    for n in range(n_steps):
        htil[n] = np.tanh(xt[n] @ p.W_x + hs[n] @ p.W_h)
        hs[n + 1] = k[n] * htil[n] + (1.0 - k[n]) * hs[n]
    tr = GatedRnnTrace(xt, htil, hs, k, axis, batched, explicit)
    h_n = hs[n_steps]
    return (h_n if batched else h_n[0]), tr


def gated_rnn_backward(p, trace, dh_final):
    """Gradients of L given dL/dh_N: W_x, W_h, x, and mu/sigma if the gate is Gaussian."""
    dh = np.asarray(dh_final, dtype=np.float64)
    if not trace.batched:
        dh = dh[None]
    n_steps, bsz, d = trace.x.shape
    k = trace.k
    dwx = np.zeros_like(p.W_x)
    dwh = np.zeros_like(p.W_h)
    dx = np.empty_like(trace.x)
    dk = np.empty_like(k)
    for n in range(n_steps - 1, -1, -1):
        dk[n] = (dh * (trace.htil[n] - trace.hs[n])).sum(axis=0)
        dpre = k[n] * dh * (1.0 - trace.htil[n] ** 2)
        dwx += trace.x[n].T @ dpre
        dwh += trace.hs[n].T @ dpre
        dx[n] = dpre @ p.W_x.T
        dh = (1.0 - k[n]) * dh + dpre @ p.W_h.T
    grads = {"W_x": dwx, "W_h": dwh}
    dx = dx.transpose(1, 0, 2)
    grads["x"] = dx if trace.batched else dx[0]
    if not trace.explicit_k:
        kmu, ksig = gate_grad(p.gate, trace.axis)
        grads["mu"] = (dk * kmu).sum(axis=0)
        grads["sigma"] = (dk * ksig).sum(axis=0)
    return grads


# --- checkpoints ------------------------------------------------------------

class _Float17(float):
    def __repr__(self):
        return format(float(self), ".17g")


def _fmt(v):
    v = float(v)
    if not np.isfinite(v):
        raise ValueError("cannot serialize a non-finite parameter")
    return _Float17(v)


def _matrix_doc(a):
    a = np.atleast_2d(a)
    return {"rows": a.shape[0], "cols": a.shape[1], "data": [_fmt(v) for v in a.ravel()]}


def _matrix_from(doc, as_vector=False):
    a = np.array(doc["data"], dtype=np.float64).reshape(doc["rows"], doc["cols"])
    return a.reshape(-1) if as_vector else a


class CheckpointError(ValueError):
    pass


def checkpoint_dict(model):
    params = {name: _matrix_doc(a) for name, a in model.params.arrays().items()}
    head = {name: _matrix_doc(a) for name, a in model.head.arrays().items()}
    gate = None
    if model.gate is not None:
        gate = {"mu": [_fmt(v) for v in model.gate.mu],
                "sigma": [_fmt(v) for v in model.gate.sigma]}
    return {
        "version": CHECKPOINT_VERSION,
        "D": model.input_size,
        "H": model.hidden_size,
        "C": model.output_size,
        "candidate_tanh": bool(model.candidate_tanh),
        "params": params,
        "gate": gate,
        "head": head,
    }


def _encode(obj):
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    if isinstance(obj, _Float17):
        return repr(obj)
    return json.dumps(obj)


def dumps_checkpoint(model):
    """JSON text with every float written to 17 significant digits (exact round trip)."""
    return _encode(checkpoint_dict(model))


def model_from_dict(doc):
    if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc.get('version') if isinstance(doc, dict) else None!r}")
    try:
        params = LstmParams(**{
            name: _matrix_from(doc["params"][name], as_vector=name.startswith("b_"))
            for name in LSTM_PARAM_NAMES})
        head = OutputHead(_matrix_from(doc["head"]["W_out"]),
                          _matrix_from(doc["head"]["b_out"], as_vector=True))
        gate = None
        if doc.get("gate") is not None:
            gate = GateParams(doc["gate"]["mu"], doc["gate"]["sigma"])
        model = GLSTM(params, head, gate, bool(doc["candidate_tanh"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if (model.input_size, model.hidden_size, model.output_size) != (doc["D"], doc["H"], doc["C"]):
        raise CheckpointError("checkpoint dimensions disagree with stored matrices")
    return model


def loads_checkpoint(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from exc
    return model_from_dict(doc)


def load_checkpoint(path):
    with open(path) as fh:
        return loads_checkpoint(fh.read())
