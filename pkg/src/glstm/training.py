"""Losses, optimizers, initialization presets, the temporal curriculum and the epoch loop."""

import csv
import io
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import network
from .core import make_rng
from .timegate import SIGMA_MIN, GateParams, gate_grad, gate_value, mean_openness, time_axis
from .utils import atomic_write

GATE_KEYS = ("mu", "sigma")


class NumericError(FloatingPointError):
    pass


# --- losses -----------------------------------------------------------------

def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy_loss(logits, label):
    logits = np.asarray(logits, dtype=np.float64)
    c = logits.shape[-1]
    if not 0 <= label < c:
        raise ValueError(f"label {label} out of range for {c} classes")
    logp = _log_softmax(logits)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]), grad


def cross_entropy_batch(logits, labels):
    """Mean cross entropy over a batch; gradient is (softmax - onehot) / B."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    bsz, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label out of range")
    logp = _log_softmax(logits)
    rows = np.arange(bsz)
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(-logp[rows, labels].mean()), grad / bsz


def budget_loss(g, axis):
    """Mean gate openness over all units and steps, with d/dmu and d/dsigma."""
    axis = np.asarray(axis, dtype=np.float64)
    k = gate_value(g, axis)
    kmu, ksig = gate_grad(g, axis)
    scale = 1.0 / k.size
    return float(k.mean()), kmu.sum(axis=0) * scale, ksig.sum(axis=0) * scale


# --- optimizers ---------------------------------------------------------------

@dataclass
class LrGroups:
    lr_weights: float = 1e-3
    lr_gate: float = 1.0

    def lr_for(self, name):
        return self.lr_gate if name in GATE_KEYS else self.lr_weights


def _check_shapes(params, grads):
    for name, p in params.items():
        if name in grads and grads[name].shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {grads[name].shape}, expected {p.shape}")


def _clamp_sigma(params):
    if "sigma" in params:
        np.maximum(params["sigma"], SIGMA_MIN, out=params["sigma"])


@dataclass
class OptimizerState:
    kind: str
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = OptimizerState("adam")

    def update(self, params, grads, lr_groups):
        """In-place bias-corrected Adam step on every array in ``params``."""
        _check_shapes(params, grads)
        st = self.state
        st.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if name not in st.m:
                st.m[name] = np.zeros_like(p)
                st.v[name] = np.zeros_like(p)
            m, v = st.m[name], st.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            lr = lr_groups.lr_for(name)
            if lr == 0.0:
                continue
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        _clamp_sigma(params)
        return params


class RMSProp:
    def __init__(self, decay=0.9, eps=1e-8):
        if not 0.0 <= decay < 1.0:
            raise ValueError(f"decay must be in [0, 1), got {decay}")
        self.decay, self.eps = decay, eps
        self.state = OptimizerState("rmsprop")

    def update(self, params, grads, lr_groups):
        _check_shapes(params, grads)
        st = self.state
        st.step += 1
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if name not in st.v:
                st.v[name] = np.zeros_like(p)
            a = st.v[name]
            a *= self.decay
            a += (1.0 - self.decay) * g * g
            lr = lr_groups.lr_for(name)
            if lr == 0.0:
                continue
            p -= lr * g / np.sqrt(a + self.eps)
        _clamp_sigma(params)
        return params


def adam_update(optimizer, params, grads, lr_groups):
    return optimizer.update(params, grads, lr_groups)


def rmsprop_update(optimizer, params, grads, lr_groups):
    return optimizer.update(params, grads, lr_groups)


def make_optimizer(kind, rms_decay=0.9):
    if kind == "adam":
        return Adam()
    if kind == "rmsprop":
        return RMSProp(decay=rms_decay)
    raise ValueError(f"unknown optimizer {kind!r}")


# --- initialization -------------------------------------------------------------

def chrono_init_biases(p, t_max, rng):
    """b_f = ln U[1, T_max - 1] per unit and b_i = -b_f."""
    if t_max < 2:
        raise ValueError(f"chrono initialization needs T_max >= 2, got {t_max}")
    out = p.copy()
    out.b_f[:] = np.log(rng.uniform(1.0, t_max - 1.0, size=p.hidden_size))
    out.b_i[:] = -out.b_f
    return out


# --- curriculum ---------------------------------------------------------------

@dataclass
class CurriculumSpec:
    alpha: float = 1.0 / 6.0
    rho: float = 15.0
    final_sigma: float = 5000.0
    final_epochs: int = 10
    gate_lr_zero: bool = True

    def __post_init__(self):
        if self.alpha <= 0 or not 0 < self.rho <= 100:
            raise ValueError("curriculum needs alpha > 0 and 0 < rho <= 100")

    def in_final_phase(self, epoch, total_epochs):
        return epoch > total_epochs - self.final_epochs


def curriculum_step(g, spec, epoch, total_epochs):
    """Gate parameters to use for (1-based) ``epoch``.

    In the last ``final_epochs`` epochs every sigma is ``final_sigma``; before
    that, the lowest ceil(rho% * H) sigmas grow by a factor (1 + alpha).
    """
    out = g.copy()
    if spec.in_final_phase(epoch, total_epochs):
        out.sigma[:] = max(spec.final_sigma, SIGMA_MIN)
        return out
    n_grow = math.ceil(spec.rho / 100.0 * g.size)
    lowest = np.argsort(out.sigma, kind="stable")[:n_grow]
    out.sigma[lowest] *= 1.0 + spec.alpha
    return out


# --- configuration --------------------------------------------------------------

@dataclass
class BudgetSpec:
    lam: float = 0.0
    enabled: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("budget lambda must be finite and >= 0")


@dataclass
class TrainConfig:
    task: str = "adding"             # adding | smnist | pmnist
    model: str = "glstm"             # glstm | lstm
    seq_len: int = 1000              # adding task only; MNIST is always 784
    hidden: int = 110
    epochs: int = 10
    batch_size: int = 50
    optimizer: str = "adam"          # adam | rmsprop
    lr: float = 1e-3
    gate_lr: float = 1.0
    rms_decay: float = 0.9
    kernel_init: str = "orthogonal"  # orthogonal | xavier
    bias_init: str = "constant"      # constant | chrono
    forget_bias: float = 1.0
    chrono_tmax: int = 784
    mu_range: tuple = (300.0, 700.0)
    sigma_init: float = 40.0
    candidate_tanh: bool = False
    budget_lambda: float = 0.0
    curriculum: dict | None = None   # CurriculumSpec fields
    grad_clip: float | None = None
    train_samples: int = 5000        # adding: fresh per epoch; MNIST: first K of the train set
    test_samples: int = 5000
    perm_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("adding", "smnist", "pmnist"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.model not in ("glstm", "lstm"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.optimizer not in ("adam", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.kernel_init not in ("orthogonal", "xavier"):
            raise ValueError(f"unknown kernel init {self.kernel_init!r}")
        if self.bias_init not in ("constant", "chrono"):
            raise ValueError(f"unknown bias init {self.bias_init!r}")
        if self.hidden < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("hidden, batch_size must be >= 1 and epochs >= 0")
        if self.task == "adding" and self.seq_len < 2:
            raise ValueError("adding task needs seq_len >= 2")
        self.mu_range = tuple(float(v) for v in self.mu_range)
        self.budget = BudgetSpec(self.budget_lambda, self.budget_lambda > 0)
        self.curriculum_spec = (CurriculumSpec(**self.curriculum)
                                if self.curriculum is not None else None)
        if self.model == "lstm" and (self.budget.enabled or self.curriculum_spec):
            raise ValueError("budget and curriculum need a time-gated model")

    @property
    def classification(self):
        return self.task != "adding"

    @property
    def input_size(self):
        return 2 if self.task == "adding" else 1

    @property
    def output_size(self):
        return 10 if self.classification else 1

    @property
    def length(self):
        return self.seq_len if self.task == "adding" else 784

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


def init_model(config, rng):
    gate = None
    if config.model == "glstm":
        gate = GateParams.init(config.hidden, config.mu_range, config.sigma_init, rng)
    model = network.build_model(
        config.input_size, config.hidden, config.output_size, rng,
        kernel=config.kernel_init, forget_bias=config.forget_bias,
        gate=gate, candidate_tanh=config.candidate_tanh)
    if config.bias_init == "chrono":
        model.params = chrono_init_biases(model.params, config.chrono_tmax, rng)
    return model


# --- data -------------------------------------------------------------------------

@dataclass
class Split:
    """Inputs (S, N, D) with regression targets (S, 1) or class labels (S,)."""

    inputs: np.ndarray
    targets: np.ndarray
    classification: bool

    def __len__(self):
        return self.inputs.shape[0]


class AddingData:
    """Fresh training sequences every epoch, fixed test set."""

    def __init__(self, n, train_samples, test_samples, seed):
        from .tasks import gen_adding_batch

        self._gen = gen_adding_batch
        self.n = n
        self.train_samples = train_samples
        self.rng = make_rng([seed, 1])
        test = gen_adding_batch(make_rng([seed, 2]), n, test_samples)
        self.test = Split(test.inputs(), test.targets(), False)

    def train_split(self, epoch):
        b = self._gen(self.rng, self.n, self.train_samples)
        return Split(b.inputs(), b.targets(), False)


class FixedData:
    """Classification data with a fixed train/test split; shuffled per epoch."""

    def __init__(self, train, test, seed):
        self.train = Split(train.features, train.labels, True)
        self.test = Split(test.features, test.labels, True)
        self.rng = make_rng([seed, 1])

    def train_split(self, epoch):
        order = self.rng.permutation(len(self.train))
        return Split(self.train.inputs[order], self.train.targets[order], True)


def load_data(config, data_dir=None):
    if config.task == "adding":
        return AddingData(config.seq_len, config.train_samples, config.test_samples, config.seed)
    import os

    from .tasks import MNIST_FILES, PermutationSpec, load_mnist_idx, permute_dataset

    if data_dir is None:
        raise FileNotFoundError("MNIST tasks need a data directory")
    paths = {}
    for split, names in MNIST_FILES.items():
        paths[split] = [os.path.join(data_dir, n) for n in names]
        for pth in paths[split]:
            if not os.path.exists(pth):
                raise FileNotFoundError(pth)
    train = load_mnist_idx(*paths["train"], limit=config.train_samples)
    test = load_mnist_idx(*paths["test"], limit=config.test_samples)
    if config.task == "pmnist":
        spec = PermutationSpec(config.perm_seed)
        train, test = permute_dataset(train, spec), permute_dataset(test, spec)
    return FixedData(train, test, config.seed)


# --- loop ---------------------------------------------------------------------------

@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    test_loss: float
    test_ler: float | None
    mean_openness: float
    wall_time_s: float

    def row(self):
        def f(v):
            return "" if v is None else format(v, ".10g")
        return [str(self.epoch), f(self.train_loss), f(self.test_loss), f(self.test_ler),
                f(self.mean_openness), f(self.wall_time_s)]


METRICS_HEADER = ["epoch", "train_loss", "test_loss", "test_ler", "mean_openness", "wall_time_s"]


def metrics_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def batch_loss(model, x, targets, classification):
    """Forward + loss; returns (loss, dL/doutput, trace)."""
    out, trace = network.forward(model, x)
    if classification:
        loss, dout = cross_entropy_batch(out, targets)
    else:
        loss, dout = mse_loss(out, targets)
    return loss, dout, trace


def loss_and_grads(model, x, targets, classification, budget=None):
    """Data loss (+ lambda * budget) and gradients of every parameter."""
    loss, dout, trace = batch_loss(model, x, targets, classification)
    grads = network.backward(model, trace, dout)
    del grads["x"]
    if budget is not None and budget.enabled and model.gate is not None:
        bl, bmu, bsig = budget_loss(model.gate, trace.axis)
        loss += budget.lam * bl
        grads["mu"] = grads["mu"] + budget.lam * bmu
        grads["sigma"] = grads["sigma"] + budget.lam * bsig
    return loss, grads


def evaluate(model, split, chunk=500):
    """Mean loss over the split and, for classification, the label error rate."""
    out = network.predict(model, split.inputs, chunk=chunk)
    if split.classification:
        loss, _ = cross_entropy_batch(out, split.targets)
        ler = float(np.mean(out.argmax(axis=1) != split.targets))
        return loss, ler
    loss, _ = mse_loss(out, split.targets)
    return loss, None


def _clip(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def train_epoch(model, data, config, optimizer, epoch=1, lr_groups=None):
    """One pass over a training split. Returns a MetricsRecord."""
    t0 = time.perf_counter()
    split = data.train_split(epoch)
    if split.inputs.shape[2] != model.input_size:
        raise ValueError("data input size does not match the model")
    if lr_groups is None:
        lr_groups = LrGroups(config.lr, config.gate_lr)
    freeze_sigma = config.curriculum_spec is not None
    params = model.arrays()
    total, count = 0.0, 0
    for start in range(0, len(split), config.batch_size):
        xb = split.inputs[start:start + config.batch_size]
        yb = split.targets[start:start + config.batch_size]
        loss, grads = loss_and_grads(model, xb, yb, split.classification, config.budget)
        if not math.isfinite(loss):
            raise NumericError(f"non-finite training loss in epoch {epoch}")
        if freeze_sigma:
            # sigma follows the curriculum schedule only
            grads.pop("sigma", None)
        if config.grad_clip:
            _clip(grads, config.grad_clip)
        optimizer.update(params, grads, lr_groups)
        total += loss * xb.shape[0]
        count += xb.shape[0]
    test_loss, test_ler = evaluate(model, data.test)
    if not math.isfinite(test_loss):
        raise NumericError(f"non-finite test loss in epoch {epoch}")
    openness = (1.0 if model.gate is None
                else mean_openness(model.gate, time_axis(split.inputs.shape[1])))
    return MetricsRecord(epoch, total / max(count, 1), test_loss, test_ler, openness,
                         time.perf_counter() - t0)


class Trainer:
    """Owns the model, optimizer state and schedule for one run."""

    def __init__(self, config, data, model=None):
        self.config = config
        self.data = data
        self.model = model if model is not None else init_model(config, make_rng([config.seed, 0]))
        self.optimizer = make_optimizer(config.optimizer, config.rms_decay)
        self.history = []
        self.sigma_history = []

    def lr_groups(self, epoch):
        spec = self.config.curriculum_spec
        gate_lr = self.config.gate_lr
        if spec is not None and spec.gate_lr_zero and spec.in_final_phase(epoch, self.config.epochs):
            gate_lr = 0.0
        return LrGroups(self.config.lr, gate_lr)

    def run_epoch(self, epoch):
        spec = self.config.curriculum_spec
        if spec is not None and self.model.gate is not None:
            self.model.gate = curriculum_step(self.model.gate, spec, epoch, self.config.epochs)
        rec = train_epoch(self.model, self.data, self.config, self.optimizer, epoch,
                          self.lr_groups(epoch))
        if self.model.gate is not None:
            self.sigma_history.append(self.model.gate.sigma.copy())
        self.history.append(rec)
        return rec

    def run(self, out_dir=None, checkpoint_every=0, callback=None):
        import os

        for epoch in range(1, self.config.epochs + 1):
            rec = self.run_epoch(epoch)
            if out_dir is not None:
                atomic_write(os.path.join(out_dir, "metrics.csv"), metrics_csv(self.history))
                if checkpoint_every and epoch % checkpoint_every == 0:
                    atomic_write(os.path.join(out_dir, f"checkpoint_epoch{epoch:04d}.json"),
                                 network.dumps_checkpoint(self.model))
            if callback is not None:
                callback(rec)
        return self.history


def summary(trainer):
    last = trainer.history[-1] if trainer.history else None
    return {
        "final_loss": None if last is None else last.test_loss,
        "final_ler": None if last is None else last.test_ler,
        "mean_openness": None if last is None else last.mean_openness,
    }


def config_json(config):
    doc = config.to_dict()
    doc["mu_range"] = list(doc["mu_range"])
    return doc

