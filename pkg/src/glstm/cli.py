"""Command-line entry point: train, eval, gradnorm, export-gate, gen-data.

Exit codes: 0 success, 2 configuration error, 3 data or checkpoint error,
4 numeric failure (non-finite loss).
"""

import argparse
import io
import json
import logging
import os
import sys

import numpy as np

from . import diagnostics, network, presets, tasks, timegate, training
from .core import make_rng
from .utils import atomic_write

DATA_ENV = "GLSTM_DATA_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("glstm")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _data_dir(args):
    return args.data_dir or os.environ.get(DATA_ENV)


def _limit_threads(n):
    if not n:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(limits=n)


# --- train ------------------------------------------------------------------------

_OVERRIDES = {
    "epochs": "epochs", "seed": "seed", "hidden": "hidden", "seq_len": "seq_len",
    "batch_size": "batch_size", "lr": "lr", "gate_lr": "gate_lr", "lam": "budget_lambda",
    "model": "model", "optimizer": "optimizer", "train_samples": "train_samples",
    "test_samples": "test_samples", "perm_seed": "perm_seed", "task": "task",
    "sigma_init": "sigma_init", "grad_clip": "grad_clip",
}


def build_config(args):
    doc = {}
    if args.preset:
        try:
            doc.update(presets.preset(args.preset))
        except KeyError as exc:
            raise CliError(str(exc.args[0]), EXIT_CONFIG)
    if args.config:
        try:
            with open(args.config) as fh:
                doc.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}", EXIT_CONFIG)
    for flag, key in _OVERRIDES.items():
        val = getattr(args, flag, None)
        if val is not None:
            doc[key] = val
    if args.mu_range is not None:
        doc["mu_range"] = tuple(args.mu_range)
    if args.candidate_tanh:
        doc["candidate_tanh"] = True
    try:
        return training.TrainConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_CONFIG)


def cmd_train(args):
    config = build_config(args)
    out_dir = args.out or os.path.join("runs", f"{args.preset or 'custom'}-seed{config.seed}")
    try:
        data = training.load_data(config, _data_dir(args))
    except FileNotFoundError as exc:
        raise CliError(f"missing dataset file: {exc.args[-1] if exc.args else exc}", EXIT_CONFIG)
    except (ValueError, OSError) as exc:
        raise CliError(f"cannot load data: {exc}", EXIT_DATA)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out_dir}: {exc}", EXIT_CONFIG)
    effective = training.config_json(config)
    effective["preset"] = args.preset
    atomic_write(os.path.join(out_dir, "config.json"), json.dumps(effective, indent=2) + "\n")

    trainer = training.Trainer(config, data)

    def progress(rec):
        log.info("epoch %d train %.6g test %.6g ler %s openness %.4f",
                 rec.epoch, rec.train_loss, rec.test_loss, rec.test_ler, rec.mean_openness)

    try:
        trainer.run(out_dir, checkpoint_every=args.checkpoint_every, callback=progress)
    except training.NumericError as exc:
        raise CliError(str(exc), EXIT_NUMERIC)
    if not trainer.history:
        atomic_write(os.path.join(out_dir, "metrics.csv"), training.metrics_csv([]))
    atomic_write(os.path.join(out_dir, "final.json"), network.dumps_checkpoint(trainer.model))
    summary = training.summary(trainer)
    if config.task == "pmnist":
        summary["perm_seed"] = config.perm_seed
    atomic_write(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


# --- commands that start from a checkpoint ------------------------------------

def _load_model(path):
    try:
        return network.load_checkpoint(path)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc}", EXIT_DATA)
    except network.CheckpointError as exc:
        raise CliError(f"{path}: {exc}", EXIT_DATA)


def _dataset(args, model):
    """Test split matching the checkpoint's input/output sizes."""
    task = args.task
    if task is None:
        task = "adding" if (model.input_size, model.output_size) == (2, 1) else "smnist"
    if task == "adding":
        if (model.input_size, model.output_size) != (2, 1):
            raise CliError("checkpoint is not an adding-task model", EXIT_CONFIG)
        batch = tasks.gen_adding_batch(make_rng([args.seed, 2]), args.seq_len, args.samples)
        return training.Split(batch.inputs(), batch.targets(), False)
    data_dir = _data_dir(args)
    if not data_dir:
        raise CliError(f"task {task} needs --data-dir or ${DATA_ENV}", EXIT_CONFIG)
    imgs, labels = (os.path.join(data_dir, n) for n in tasks.MNIST_FILES["test"])
    for p in (imgs, labels):
        if not os.path.exists(p):
            raise CliError(f"missing dataset file: {p}", EXIT_CONFIG)
    try:
        ds = tasks.load_mnist_idx(imgs, labels, limit=args.samples)
    except (ValueError, OSError) as exc:
        raise CliError(f"cannot load data: {exc}", EXIT_DATA)
    if task == "pmnist":
        ds = tasks.permute_dataset(ds, tasks.PermutationSpec(args.perm_seed))
    return training.Split(ds.features, ds.labels, True)


def cmd_eval(args):
    model = _load_model(args.checkpoint)
    split = _dataset(args, model)
    loss, ler = training.evaluate(model, split)
    result = {"loss": loss, "ler": ler}
    if args.vt is not None:
        if not 0.0 <= args.vt < 1.0:
            raise CliError("--vt must be in [0, 1)", EXIT_CONFIG)
        outs, updated, total = [], 0, 0
        for s in range(0, len(split), 500):
            out, stats = network.forward_thresholded(model, split.inputs[s:s + 500], v_t=args.vt)
            outs.append(out)
            updated, total = updated + stats.updated, total + stats.total
        out = np.concatenate(outs)
        if split.classification:
            t_loss, _ = training.cross_entropy_batch(out, split.targets)
            t_ler = float(np.mean(out.argmax(axis=1) != split.targets))
        else:
            t_loss, _ = training.mse_loss(out, split.targets)
            t_ler = None
        frac = updated / total
        n_steps = split.inputs.shape[1]
        report = diagnostics.OpCountReport.build(n_steps, model.hidden_size, model.input_size, frac)
        result.update({"v_t": args.vt, "thresholded_loss": t_loss, "thresholded_ler": t_ler,
                       "open_fraction": frac, "ops": json.loads(report.to_json())})
    print(json.dumps(result))
    return EXIT_OK


def cmd_gradnorm(args):
    if args.samples is None or args.samples < 1:
        raise CliError("--samples must be a positive count", EXIT_CONFIG)
    model = _load_model(args.checkpoint)
    split = _dataset(args, model)
    loss = "ce" if split.classification else "mse"
    gamma = diagnostics.gradient_norms(model, split.inputs, split.targets, loss)
    atomic_write(args.out, diagnostics.gradnorm_csv(gamma))
    return EXIT_OK


def cmd_export_gate(args):
    model = _load_model(args.checkpoint)
    if model.gate is None:
        raise CliError("checkpoint has no time gate", EXIT_DATA)
    if args.steps < 1:
        raise CliError("--steps must be positive", EXIT_CONFIG)
    buf = io.StringIO()
    timegate.write_openness_csv(buf, model.gate, timegate.time_axis(args.steps))
    atomic_write(args.out, buf.getvalue())
    return EXIT_OK


def cmd_gen_data(args):
    if args.task != "adding":
        raise CliError("only the adding task can be generated", EXIT_CONFIG)
    if args.seq_len < 2 or args.count < 1:
        raise CliError("--seq-len must be >= 2 and --count >= 1", EXIT_CONFIG)
    batch = tasks.gen_adding_batch(make_rng(args.seed), args.seq_len, args.count)
    buf = io.StringIO()
    tasks.write_adding_csv(buf, batch)
    atomic_write(args.out, buf.getvalue())
    return EXIT_OK


# --- parser -------------------------------------------------------------------------

def _dataset_args(p, samples_default):
    p.add_argument("--task", choices=["adding", "smnist", "pmnist"])
    p.add_argument("--seq-len", type=int, default=1000, help="adding task length")
    p.add_argument("--samples", type=int, default=samples_default)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perm-seed", type=int, default=0)
    p.add_argument("--data-dir", help=f"MNIST IDX directory (default ${DATA_ENV})")


def build_parser():
    parser = argparse.ArgumentParser(prog="glstm", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS worker threads (results do not depend on it)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write metrics/checkpoints")
    p.add_argument("--preset", choices=sorted(presets.PRESETS))
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--out")
    p.add_argument("--data-dir")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--seq-len", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--gate-lr", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--model", choices=["glstm", "lstm"])
    p.add_argument("--optimizer", choices=["adam", "rmsprop"])
    p.add_argument("--task", choices=["adding", "smnist", "pmnist"])
    p.add_argument("--train-samples", type=int)
    p.add_argument("--test-samples", type=int)
    p.add_argument("--perm-seed", type=int)
    p.add_argument("--sigma-init", type=float)
    p.add_argument("--mu-range", type=float, nargs=2)
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--candidate-tanh", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, optionally with thresholding")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vt", type=float, help="gate threshold for skipped updates")
    _dataset_args(p, samples_default=1000)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradnorm", help="per-step gradient norm profile as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    _dataset_args(p, samples_default=100)
    p.set_defaults(func=cmd_gradnorm)

    p = sub.add_parser("export-gate", help="H x T gate openness CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_gate)

    p = sub.add_parser("gen-data", help="write an adding-task dataset as CSV")
    p.add_argument("--task", default="adding")
    p.add_argument("--seq-len", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    limiter = _limit_threads(args.threads)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"glstm {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"glstm {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
