"""Acceptance criteria 1-12, each at its stated tolerance.

A line per criterion is printed in the terminal summary. The long training
runs (criteria 5-8) take most of the suite's wall time. Set
GLSTM_ACCEPTANCE_OUT to choose where report CSVs are written.
"""

import functools
import os
import time

import numpy as np
import pytest

from conftest import DEFAULT_DATA_DIR, record_criterion
from glstm import diagnostics, network, presets, tasks, training
from glstm.core import make_rng
from glstm.network import GatedRnnParams, export_to_lstm, forward, forward_thresholded
from glstm.timegate import GateParams, fraction_above_threshold, time_axis
from glstm.training import TrainConfig, Trainer
from reference import lstm_reference, rnn_bptt_reference

OUT_DIR = os.environ.get("GLSTM_ACCEPTANCE_OUT",
                         os.path.join(os.path.dirname(__file__), os.pardir, "acceptance_output"))


def criterion(number):
    """Record FAIL for a criterion whose test raises before reporting."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except AssertionError:
                raise
            except Exception as exc:
                record_criterion(number, False, f"error: {type(exc).__name__}: {exc}")
                raise
        return run
    return wrap


def check(number, passed, detail):
    record_criterion(number, passed, detail)
    assert passed, f"criterion {number}: {detail}"


def data_dir():
    path = os.environ.get("GLSTM_DATA_DIR", DEFAULT_DATA_DIR)
    if not os.path.exists(os.path.join(path, tasks.MNIST_FILES["train"][0])):
        raise FileNotFoundError(f"MNIST IDX files not found in {path}; set GLSTM_DATA_DIR")
    return path


def mnist_test(limit):
    d = data_dir()
    return tasks.load_mnist_idx(*(os.path.join(d, n) for n in tasks.MNIST_FILES["test"]),
                                limit=limit)


def train_run(**kw):
    cfg = TrainConfig(**kw)
    trainer = Trainer(cfg, training.load_data(cfg, data_dir() if cfg.classification else None))
    trainer.run()
    return trainer


# --- 1 --------------------------------------------------------------------------------

@criterion(1)
def test_c01_gradient_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for cfg in range(20):
        rng = make_rng([101, cfg])
        gate = GateParams(rng.uniform(1.0, 20.0, 8), rng.uniform(5.0, 20.0, 8))
        model = network.build_model(2, 8, 1, rng, gate=gate, candidate_tanh=bool(cfg % 2))
        for arr in (model.params.b_i, model.params.b_g, model.params.b_o):
            arr[:] = rng.uniform(-0.5, 0.5, 8)
        x = rng.standard_normal((1, 20, 2))
        y = rng.standard_normal((1, 1))
        worst = max(worst, diagnostics.finite_diff_check(model, x, y, epsilon=1e-5))
    elapsed = time.perf_counter() - t0
    check(1, worst < 1e-6 and elapsed < 60,
          f"max rel error {worst:.2e} (< 1e-6) over 20 configs in {elapsed:.1f}s (< 60s)")


# --- 2 ---------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def curriculum_run():
    """Short sMNIST curriculum run whose final 10 epochs sit at sigma = 5000."""
    kw = presets.preset("curriculum")
    kw.update(hidden=32, epochs=13, train_samples=500, test_samples=200, seed=1)
    return train_run(**kw)


@criterion(2)
def test_c02_lstm_equivalence(curriculum_run):
    rng = make_rng(202)
    model = network.build_model(2, 16, 1, rng, gate=GateParams(np.zeros(16), np.full(16, 1e8)))
    seq = rng.standard_normal((100, 2))
    out, _ = forward(model, seq)
    h_ref, _ = lstm_reference(model.params.arrays(), seq)
    wide = float(np.max(np.abs(out - (h_ref @ model.head.W_out + model.head.b_out))))

    model = curriculum_run.model
    assert np.all(model.gate.sigma == 5000.0)
    x = mnist_test(200).features
    gated, _ = forward(model, x, keep_trace=False)
    plain, _ = forward(export_to_lstm(model), x, keep_trace=False)
    export = float(np.max(np.abs(gated - plain)))
    check(2, wide < 1e-9 and export < 1e-4,
          f"sigma=1e8 vs gate-free reference {wide:.1e} (< 1e-9); "
          f"curriculum end state export diff {export:.1e} (< 1e-4)")


# --- 3 -----------------------------------------------------------------------------------

@criterion(3)
def test_c03_skip_path():
    rng = make_rng(303)
    gate = GateParams.init(24, (1.0, 120.0), 12.0, rng)
    model = network.build_model(2, 24, 1, rng, gate=gate)
    x = rng.standard_normal((8, 120, 2))
    full, _ = forward(model, x, keep_trace=False)
    thr, stats = forward_thresholded(model, x, v_t=0.0)
    identical = np.array_equal(full, thr) and stats.open_fraction == 1.0
    worst = 0.0
    for v in (0.001, 0.01, 0.1, 0.5):
        _, s = forward_thresholded(model, x, v_t=v)
        worst = max(worst, abs(s.open_fraction - fraction_above_threshold(gate, time_axis(120), v)))
    bound = 1.0 / (24 * 120)
    check(3, identical and worst <= bound,
          f"v_T=0 bit-identical: {identical}; open-fraction gap {worst:.2e} (<= {bound:.2e})")


# --- 4 ---------------------------------------------------------------------------------

@criterion(4)
def test_c04_op_counts():
    kw = presets.preset("smnist")
    t, h = 784, kw["hidden"]
    n_lstm = diagnostics.op_count_lstm(t, h, 1)
    n_gate = diagnostics.op_count_gate(t, h)
    thr = diagnostics.op_count_thresholded(t, h, 1, 0.082)
    check(4, n_lstm == 79_082_080 and n_gate == 1_121_120 and 7.4e6 <= thr <= 7.8e6,
          f"N_LSTM={n_lstm:,} N_gate={n_gate:,} thresholded(0.082)={thr / 1e6:.3f} MOps")


# --- 5-7: adding task ---------------------------------------------------------------

def adding_desk(seed, **kw):
    base = presets.preset("adding-desk")
    base.update(seed=seed, **kw)
    return train_run(**base)


@criterion(5)
def test_c05_adding_desk():
    t0 = time.perf_counter()
    finals = [adding_desk(s).history[-1].test_loss for s in (1, 2, 3)]
    med = float(np.median(finals))
    minutes = (time.perf_counter() - t0) / 60
    check(5, med < 1e-2,
          f"median final test MSE {med:.4g} (< 1e-2); seeds 1,2,3 -> "
          + ", ".join(f"{v:.4g}" for v in finals) + f"; {minutes:.1f} min")


@criterion(6)
def test_c06_convergence_ordering():
    common = dict(task="adding", seq_len=500, hidden=64, epochs=50, optimizer="adam", lr=1e-3,
                  gate_lr=1.0, mu_range=(1.0, 500.0), sigma_init=40.0, train_samples=500,
                  test_samples=500)
    g, l = [], []
    for s in (1, 2, 3):
        g.append(train_run(model="glstm", seed=s, **common).history[-1].test_loss)
        l.append(train_run(model="lstm", seed=s, **common).history[-1].test_loss)
    gm, lm = float(np.median(g)), float(np.median(l))
    check(6, gm <= lm,
          f"epoch-50 median test MSE g-LSTM {gm:.4g} <= LSTM {lm:.4g} "
          f"(g-LSTM {', '.join(f'{v:.4g}' for v in g)}; LSTM {', '.join(f'{v:.4g}' for v in l)})")


@criterion(7)
def test_c07_gate_trainability():
    base = presets.preset("adding-desk-extreme")
    base.update(seed=1)
    cfg = TrainConfig(**base)
    trainer = Trainer(cfg, training.load_data(cfg))
    spread0 = float(np.ptp(trainer.model.gate.mu))
    trainer.run()
    spread = float(np.ptp(trainer.model.gate.mu))
    mse = trainer.history[-1].test_loss
    check(7, spread >= 2 * spread0 and mse < 1e-2,
          f"mu spread {spread0:.1f} -> {spread:.1f} (needs >= {2 * spread0:.1f}); "
          f"final test MSE {mse:.4g} (< 1e-2)")


# --- 8 ---------------------------------------------------------------------------------------

@criterion(8)
def test_c08_budget_effect():
    runs = {}
    for lam in (0.0, 1.0):
        kw = presets.preset("smnist-budgeted-lambda1")
        # gate lr 1.0 lets the normalized budget gradient shut every gate in the first epoch
        kw.update(hidden=32, epochs=15, train_samples=10_000, test_samples=2_000, seed=1,
                  budget_lambda=lam, gate_lr=0.1)
        runs[lam] = train_run(**kw).history[-1]
    r0, r1 = runs[0.0], runs[1.0]
    ok_open = r1.mean_openness < 0.5 * r0.mean_openness
    ok_ler = r1.test_ler - r0.test_ler <= 0.03
    check(8, ok_open and ok_ler,
          f"openness lambda=1 {r1.mean_openness:.4f} vs lambda=0 {r0.mean_openness:.4f} "
          f"(< 0.5x); LER {r1.test_ler:.4f} vs {r0.test_ler:.4f} (<= +3 pp)")


# --- 9 ---------------------------------------------------------------------------------------

@criterion(9)
def test_c09_curriculum(curriculum_run):
    spec = curriculum_run.config.curriculum_spec
    hist = np.array(curriculum_run.sigma_history)
    total = curriculum_run.config.epochs
    final = [e - 1 for e in range(1, total + 1) if spec.in_final_phase(e, total)]
    nondecreasing = bool(np.all(np.diff(hist, axis=0) >= 0))
    at_final = bool(np.all(hist[final] == spec.final_sigma)) and len(final) == 10
    # replay the final phase once more from a snapshot and check gate params do not move
    model = curriculum_run.model
    before = model.gate.copy()
    data = training.load_data(curriculum_run.config, data_dir())
    training.train_epoch(model, data, curriculum_run.config, curriculum_run.optimizer,
                         total, curriculum_run.lr_groups(total))
    frozen = (np.array_equal(before.mu, model.gate.mu)
              and np.array_equal(before.sigma, model.gate.sigma))
    check(9, nondecreasing and at_final and frozen,
          f"sigma nondecreasing: {nondecreasing}; sigma=5000 in final 10 epochs: {at_final}; "
          f"gate bit-frozen: {frozen}")


# --- 10 -------------------------------------------------------------------------------------

def _case_pattern(n_steps, hdim, open_steps):
    k = np.zeros((n_steps, hdim))
    k[[s - 1 for s in open_steps]] = 1.0
    return k


@criterion(10)
def test_c10_gated_rnn_locality():
    rng = make_rng(1010)
    hdim, n_steps = 6, 12
    # D = H with an invertible input map, so perturbing x_n at a closed step moves that
    # step's pre-activation (including its recurrent contribution) in any direction
    p = GatedRnnParams(np.eye(hdim) + 0.1 * rng.standard_normal((hdim, hdim)),
                       0.5 * rng.standard_normal((hdim, hdim)),
                       GateParams(np.zeros(hdim), np.ones(hdim)))
    x = rng.standard_normal((n_steps, hdim))
    dh = rng.standard_normal(hdim)
    worst = 0.0
    for open_steps in ([5], [2, 3, 4, 5, 6]):
        k = _case_pattern(n_steps, hdim, open_steps)
        _, tr = network.gated_rnn_forward(p, x, k=k)
        base = network.gated_rnn_backward(p, tr, dh)["W_h"]
        for _ in range(5):
            xp = x.copy()
            closed = [n for n in range(n_steps) if n + 1 not in open_steps]
            xp[closed] += rng.standard_normal((len(closed), hdim))
            _, trp = network.gated_rnn_forward(p, xp, k=k)
            worst = max(worst, float(np.max(np.abs(network.gated_rnn_backward(p, trp, dh)["W_h"] - base))))
    _, tr = network.gated_rnn_forward(p, x, k=np.ones((n_steps, hdim)))
    g = network.gated_rnn_backward(p, tr, dh)
    dwx, dwh = rnn_bptt_reference(p.W_x, p.W_h, x, dh)
    vanilla = max(float(np.max(np.abs(g["W_x"] - dwx))), float(np.max(np.abs(g["W_h"] - dwh))))
    check(10, worst < 1e-12 and vanilla < 1e-9,
          f"closed-step perturbation changes dL/dW_h by {worst:.1e} (< 1e-12, cases 1 and 2); "
          f"all-open vs vanilla BPTT {vanilla:.1e} (< 1e-9)")


# --- 11 -------------------------------------------------------------------------------------

@criterion(11)
def test_c11_gradient_norm_profile():
    ds = mnist_test(100)
    rng = make_rng(1111)
    gate = GateParams.init(110, (1.0, 784.0), 250.0, rng)
    glstm = network.build_model(1, 110, 10, rng, gate=gate)
    lstm = export_to_lstm(glstm)
    gamma_g = diagnostics.gradient_norms(glstm, ds.features, ds.labels)
    gamma_l = diagnostics.gradient_norms(lstm, ds.features, ds.labels)
    os.makedirs(OUT_DIR, exist_ok=True)
    for name, gamma in (("gradnorm_glstm.csv", gamma_g), ("gradnorm_lstm.csv", gamma_l)):
        with open(os.path.join(OUT_DIR, name), "w") as fh:
            fh.write(diagnostics.gradnorm_csv(gamma))
    ratio_g = gamma_g[0] / gamma_g[-1]
    ratio_l = gamma_l[0] / gamma_l[-1]
    check(11, ratio_g > ratio_l,
          f"Gamma_1/Gamma_784 g-LSTM {ratio_g:.3e} > LSTM {ratio_l:.3e}; CSVs in {os.path.normpath(OUT_DIR)}")


# --- 12 -------------------------------------------------------------------------------------

@criterion(12)
def test_c12_data_layer():
    d = data_dir()
    exact = True
    counts = {}
    for split, (img, lbl) in tasks.MNIST_FILES.items():
        for name, magic in ((img, tasks.IDX_IMAGE_MAGIC), (lbl, tasks.IDX_LABEL_MAGIC)):
            path = os.path.join(d, name)
            arr = tasks.read_idx(path, magic)
            with open(path, "rb") as fh:
                exact &= tasks.idx_bytes(arr) == fh.read()
            counts[split] = arr.shape[0]
    batch = tasks.gen_adding_batch(make_rng(1212), 100, 100_000)
    mean_y = float(batch.y.mean())
    check(12, exact and counts == {"train": 60_000, "test": 10_000} and abs(mean_y - 1.0) < 0.01,
          f"IDX byte-exact round trip: {exact} ({counts['train']} train / {counts['test']} test); "
          f"E[y] over 1e5 samples {mean_y:.4f} (|E[y]-1| < 0.01)")
