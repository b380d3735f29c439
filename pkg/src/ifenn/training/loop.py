"""Mini-batch training with best-validation retention, and test-set evaluation."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import difftensor as dt
from ..errors import ConfigError, InvalidArgumentError, TrainingDivergedError
from ..operatornet import OperatorModel, model_forward, save_model
from .dataset import Dataset
from .metrics import MetricReport, compute_metrics, loss_tensor, nearest_rank_ids
from .schedule import LrSchedule


def check_compatible(model: OperatorModel, ds: Dataset):
    """Raise ConfigError naming the first dimension on which model and dataset disagree."""
    _, _, n_l, n_s, _, n_c, n_d = ds.dims
    expected = {"load": n_l, "strain": n_s}
    for b in model.branches:
        want = expected.get(b.config.name)
        if want is not None and b.config.input_size != want:
            raise ConfigError(f"{b.config.name} branch expects {b.config.input_size} sensors, "
                              f"dataset has N_{'l' if b.config.name == 'load' else 's'} = {want}")
    if model.n_components != n_c:
        raise ConfigError(f"model predicts {model.n_components} components, dataset has N_c = {n_c}")
    if model.trunk_config.input_size != n_d:
        raise ConfigError(f"trunk takes {model.trunk_config.input_size} coordinates, dataset has N_d = {n_d}")


def _normalized_output(model: OperatorModel, y: dt.Tensor) -> dt.Tensor:
    s, m = (np.broadcast_to(a, (model.n_components,)) for a in model.scaling.output)
    return dt.affine(y, 1.0 / s, -m / s)


def forward_rows(model: OperatorModel, ds: Dataset, rows, fused: bool = True) -> dt.Tensor:
    """Model output in label units for dataset rows (inputs normalised with the model's scaling)."""
    return model_forward(model, model.normalize_load(ds.load[rows]), model.normalize_strain(ds.strain[rows]),
                         ds.coords, ds.times, fused=fused)


def predict(model: OperatorModel, ds: Dataset, rows, batch_size: int = 32) -> np.ndarray:
    rows = np.asarray(rows, dtype=int)
    out = []
    with dt.no_grad():
        for k in range(0, rows.size, batch_size):
            out.append(forward_rows(model, ds, rows[k:k + batch_size]).data)
    return np.concatenate(out) if out else np.zeros((0,) + ds.labels.shape[1:])


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    validation_loss: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_validation: float = float("inf")
    seconds: float = 0.0
    checkpoint: Path | None = None

    def rows(self):
        for e, (tr, va, lr) in enumerate(zip(self.train_loss, self.validation_loss, self.learning_rate)):
            yield (e, tr, va, lr)


def _batch_loss(model, ds, rows, kind, targets) -> dt.Tensor:
    pred = _normalized_output(model, forward_rows(model, ds, rows))
    return loss_tensor(kind, pred, targets[rows])


def _split_loss(model, ds, rows, kind, targets, batch_size) -> float:
    """Mean batch loss over ``rows`` in a fixed order, with the current parameters."""
    with dt.no_grad():
        vals = [_batch_loss(model, ds, rows[k:k + batch_size], kind, targets).item()
                for k in range(0, rows.size, batch_size)]
    return float(np.mean(vals))


def train(model: OperatorModel, ds: Dataset, loss: str, schedule: LrSchedule, epochs: int,
          batch_size: int = 16, seed: int = 0, checkpoint: str | Path | None = None,
          log: Callable[[int, float, float, float], None] | None = None) -> TrainReport:
    """Adam on the training rows, one shuffled pass per epoch.

    The loss compares normalised outputs.  Logged epoch losses are measured
    after the epoch's updates, over fixed batches of each split.  Parameters of the epoch with the
    lowest validation loss (training loss when there is no validation split)
    are restored at the end and written to ``checkpoint`` if given.
    """
    if ds.normalization is None:
        raise InvalidArgumentError("dataset has no normalisation; fit one on the training split first")
    check_compatible(model, ds)
    if int(epochs) < 1 or int(batch_size) < 1:
        raise InvalidArgumentError("epochs and batch_size must be >= 1")
    train_rows, val_rows = ds.rows("train"), ds.split.get("validation", np.zeros(0, dtype=int))
    if train_rows.size == 0:
        raise InvalidArgumentError("training split is empty")
    model.scaling = ds.normalization.to_scaling()
    targets = ds.normalization.normalize("output", ds.labels)
    params = model.parameters()
    opt = dt.OptimizerState(lr=schedule.rate(0))
    rng = np.random.default_rng(seed)
    report = TrainReport()
    best = [p.data.copy() for p in params]
    t0 = time.perf_counter()
    for epoch in range(int(epochs)):
        lr = schedule.rate(epoch)
        opt.lr = lr
        order = rng.permutation(train_rows)
        for k in range(0, order.size, batch_size):
            value = _batch_loss(model, ds, order[k:k + batch_size], loss, targets)
            if not np.isfinite(value.item()):
                raise TrainingDivergedError(f"epoch {epoch}: loss became {value.item()}", epoch=epoch)
            try:
                dt.adam_step(params, dt.gradients(value, params), opt)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"epoch {epoch}: {exc}", epoch=epoch) from exc
        report.train_loss.append(_split_loss(model, ds, train_rows, loss, targets, batch_size))
        v = _split_loss(model, ds, val_rows, loss, targets, batch_size) if val_rows.size else float("nan")
        report.validation_loss.append(v)
        report.learning_rate.append(lr)
        score = v if val_rows.size else report.train_loss[-1]
        if not np.isfinite(score):
            raise TrainingDivergedError(f"epoch {epoch}: validation loss became {score}", epoch=epoch)
        if score < report.best_validation:
            report.best_validation, report.best_epoch = score, epoch
            best = [p.data.copy() for p in params]
        if log is not None:
            log(epoch, report.train_loss[-1], v, lr)
    for p, b in zip(params, best):
        p.data[...] = b
    report.seconds = time.perf_counter() - t0
    if checkpoint is not None:
        report.checkpoint = save_model(model, checkpoint)
    return report


@dataclass
class HeldOutEvaluation:
    metrics: MetricReport
    case_ids: np.ndarray
    case_errors: np.ndarray          # L2^LC of the coupled field per case
    percentile_ids: dict[int, int]
    histogram: tuple[np.ndarray, np.ndarray]
    predictions: np.ndarray


def evaluate_testset(model: OperatorModel, ds: Dataset, split: str = "test", bins: int = 10) -> HeldOutEvaluation:
    """Metrics in physical label units, per-case errors and the 10/50/90 percentile cases."""
    rows = ds.rows(split)
    if rows.size == 0:
        raise InvalidArgumentError(f"{split} split is empty")
    check_compatible(model, ds)
    pred = predict(model, ds, rows)
    comps = ds.meta.get("components", "").split() or None
    metrics = compute_metrics(pred, ds.labels[rows], comps)
    errors = metrics.l2_lc[:, 0]
    ids = ds.case_ids[rows]
    return HeldOutEvaluation(metrics, ids, errors, nearest_rank_ids(errors, ids),
                             np.histogram(errors, bins=bins), pred)
