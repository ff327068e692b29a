"""Training and evaluation loops.

Per batch: every sample runs a full forward pass, the per-modality shared
embeddings of the whole batch form the triplet pool for the margin loss, and
the batch objective is task loss plus the balance factor times the margin
loss. Deterministic mode is the default: batch order, initialization and
arithmetic depend only on the config and seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_model, save_model
from .config import ExperimentConfig, save_config
from .data import Dataset, RatioSplit, load_dataset, split
from .errors import CheckpointError, ConfigError, DataError
from .losses import build_triplets, cross_entropy, margin_loss, metrics, total_loss
from .model import WavFusionModel
from .optim import Adam
from .rng import Prng
from .tensor import Tensor


def build_model(cfg: ExperimentConfig, dataset: Dataset) -> WavFusionModel:
    mask = cfg.mask()
    dims = {}
    for m in mask:
        if m not in dataset.feature_dims:
            raise DataError(f"dataset provides no {m!r} features but config requests them")
        dims[m] = dataset.feature_dims[m]
    return WavFusionModel(
        num_classes=dataset.num_classes,
        feature_dims=dims,
        d=cfg.d,
        heads=cfg.heads,
        n_shallow=cfg.n_shallow,
        n_deep=cfg.n_deep,
        lvc_centers=cfg.lvc_centers,
        conv_kernel=cfg.conv_kernel,
        lvc_enabled=cfg.lvc_enabled,
        gate_input=cfg.gate_input,
        fusion_mode=cfg.fusion_mode,
        seed=cfg.seed,
        dtype=np.float64 if cfg.precision == "float64" else np.float32,
    )


def batch_objective(model: WavFusionModel, samples, mask, alpha: float, balance: float,
                    strict_cosine: bool = False):
    """Forward a batch; returns (total, task, margin, predictions)."""
    logit_rows = []
    labels = []
    entries = []
    embeddings = []
    for sample in samples:
        trace = model.forward(sample, mask)
        logit_rows.append(trace.logits)
        labels.append(sample.label)
        if balance != 0.0:
            model.shared_encode(trace)
            for m in mask:
                entries.append((m, sample.label))
                embeddings.append(trace.shared[m])
    logits = T.concat_rows(logit_rows) if len(logit_rows) > 1 else logit_rows[0]
    task = cross_entropy(logits, labels)
    if balance != 0.0:
        margin = margin_loss(embeddings, build_triplets(entries), alpha, strict_cosine)
    else:
        margin = Tensor(np.zeros((), dtype=model.dtype))
    total = total_loss(task, margin, balance)
    predictions = [int(np.argmax(row)) for row in logits.data]
    return total, task, margin, predictions


def evaluate(model: WavFusionModel, samples, mask):
    """Argmax predictions and (ACC, WF1) over ``samples``."""
    predictions = []
    labels = []
    with T.no_grad():
        for sample in samples:
            trace = model.forward(sample, mask)
            predictions.append(trace.predicted_class())
            labels.append(sample.label)
    acc, wf1 = metrics(predictions, labels, model.num_classes)
    return acc, wf1, predictions, labels


def _dataset_loss(model, samples, mask, cfg) -> float:
    if not samples:
        return float("nan")
    total = 0.0
    count = 0
    with T.no_grad():
        for start in range(0, len(samples), cfg.batch_size):
            chunk = samples[start:start + cfg.batch_size]
            loss, _, _, _ = batch_objective(model, chunk, mask, cfg.alpha, cfg.balance,
                                            cfg.strict_cosine)
            total += float(loss.data) * len(chunk)
            count += len(chunk)
    return total / count


@dataclass
class RunReport:
    seed: int
    config_text: str
    epoch_train_loss: list = field(default_factory=list)
    epoch_val_loss: list = field(default_factory=list)
    first_epoch_step_losses: list = field(default_factory=list)
    test_acc: float = float("nan")
    test_wf1: float = float("nan")
    wall_clock_s: float = 0.0
    stopped_epoch: int = 0

    def to_text(self) -> str:
        lines = ["# run report",
                 f"seed = {self.seed}",
                 f"epochs_run = {self.stopped_epoch}",
                 f"test_acc = {self.test_acc!r}",
                 f"test_wf1 = {self.test_wf1!r}",
                 f"wall_clock_s = {self.wall_clock_s:.3f}",
                 "",
                 "[epochs]  epoch\ttrain_loss\tval_loss"]
        for i, (tr, va) in enumerate(zip(self.epoch_train_loss, self.epoch_val_loss), start=1):
            lines.append(f"{i}\t{tr!r}\t{va!r}")
        lines.append("")
        lines.append("[first_epoch_steps]")
        lines.extend(repr(x) for x in self.first_epoch_step_losses)
        lines.append("")
        lines.append("[config]")
        lines.append(self.config_text.rstrip())
        return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    report: RunReport
    model: WavFusionModel
    run_dir: Path
    splits: tuple  # (train, val, test) sample lists


def train(cfg: ExperimentConfig, dataset: Dataset | None = None,
          write_artifacts: bool = True) -> TrainResult:
    """Train per config; returns the best-validation model and its report."""
    cfg.validate()
    if dataset is None:
        dataset = load_dataset(cfg.data_dir, cfg.num_classes or None)
    mask = cfg.mask()
    train_set, val_set, test_set = split(
        dataset.samples, RatioSplit(cfg.train_frac, cfg.val_frac, cfg.test_frac, cfg.seed))
    if not train_set:
        raise DataError("empty training split")

    model = build_model(cfg, dataset)
    params = model.named_parameters()
    frozen = ("shallow.",) if cfg.freeze_shallow else ()
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, freeze_prefixes=frozen)

    report = RunReport(seed=cfg.seed, config_text=cfg.to_text())
    best_val = float("inf")
    best_state = {name: p.data.copy() for name, p in params}
    started = time.monotonic()

    for epoch in range(1, cfg.epochs + 1):
        order = Prng(cfg.seed, stream=10_000 + epoch).permutation(len(train_set))
        epoch_losses = []
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            chunk = [train_set[i] for i in order[start:start + cfg.batch_size]]
            loss, _, _, _ = batch_objective(model, chunk, mask, cfg.alpha, cfg.balance,
                                            cfg.strict_cosine)
            value = float(loss.data)
            if not np.isfinite(value):
                raise RuntimeError(f"non-finite loss in epoch {epoch} batch {bi}")
            loss.backward()
            opt.step()
            opt.zero_grad()
            epoch_losses.append(value)
            if epoch == 1:
                report.first_epoch_step_losses.append(value)
        report.epoch_train_loss.append(float(np.mean(epoch_losses)))
        val_loss = _dataset_loss(model, val_set, mask, cfg) if val_set else float(np.mean(epoch_losses))
        report.epoch_val_loss.append(val_loss)
        report.stopped_epoch = epoch
        if val_loss <= best_val:
            best_val = val_loss
            best_state = {name: p.data.copy() for name, p in params}
        if cfg.stop_train_acc > 0.0:
            acc, _, _, _ = evaluate(model, train_set, mask)
            if acc >= cfg.stop_train_acc:
                best_state = {name: p.data.copy() for name, p in params}
                break

    for name, p in params:
        p.data = best_state[name]
    if test_set:
        report.test_acc, report.test_wf1, preds, labels = evaluate(model, test_set, mask)
    report.wall_clock_s = time.monotonic() - started

    run_dir = cfg.resolved_out_dir()
    if write_artifacts:
        run_dir.mkdir(parents=True, exist_ok=True)
        save_config(run_dir / "config.cfg", cfg)
        save_model(run_dir / "model.wvfn", model)
        (run_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")
        if test_set:
            dump_predictions(run_dir / "predictions.tsv", test_set, preds)
    return TrainResult(report, model, run_dir, (train_set, val_set, test_set))


def dump_predictions(path, samples, predictions) -> None:
    lines = [f"{s.uid}\t{s.label}\t{p}" for s, p in zip(samples, predictions)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_predictions(path):
    """[(uid, label, prediction)] from a predictions dump."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        uid, label, pred = line.split("\t")
        out.append((uid, int(label), int(pred)))
    return out


def evaluate_checkpoint(checkpoint_path, cfg: ExperimentConfig, mask=None,
                        which: str = "test", dataset: Dataset | None = None):
    """Load a checkpoint against ``cfg`` and score one split of the dataset.

    Returns (acc, wf1, samples, predictions).
    """
    cfg.validate()
    if dataset is None:
        dataset = load_dataset(cfg.data_dir, cfg.num_classes or None)
    model = build_model(cfg, dataset)
    try:
        load_model(checkpoint_path, model)
    except CheckpointError:
        raise
    train_set, val_set, test_set = split(
        dataset.samples, RatioSplit(cfg.train_frac, cfg.val_frac, cfg.test_frac, cfg.seed))
    chosen = {"train": train_set, "val": val_set, "test": test_set,
              "all": dataset.samples}.get(which)
    if chosen is None:
        raise ConfigError(f"unknown split {which!r}; pick train, val, test or all")
    if not chosen:
        raise DataError(f"split {which!r} is empty")
    eval_mask = tuple(mask) if mask else cfg.mask()
    acc, wf1, predictions, _ = evaluate(model, chosen, eval_mask)
    return acc, wf1, chosen, predictions
