"""Training and evaluation loops, the persistence baseline and checkpoint I/O."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import NormStats, WindowedDataset
from .model import ModelConfig, build_params, model_forward, mse_loss, mse_mae
from .optim import ParamStore, adam_step
from .tensor import NonFiniteError, backward, clear_tape, no_grad

__all__ = [
    "TrainingDivergence",
    "ForecastReport",
    "train",
    "evaluate",
    "predict",
    "persistence_forecast",
    "persistence_report",
    "save_checkpoint",
    "load_checkpoint",
    "write_history",
    "write_alpha_csv",
]

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class ForecastReport:
    mse: float
    mae: float
    per_horizon_mse: list[float] = field(default_factory=list)
    per_horizon_mae: list[float] = field(default_factory=list)
    alpha_stats: list[float] | None = None
    n_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "mse": self.mse,
            "mae": self.mae,
            "per_horizon_mse": self.per_horizon_mse,
            "per_horizon_mae": self.per_horizon_mae,
            "alpha_stats": self.alpha_stats,
            "n_samples": self.n_samples,
        }


def _report(pred: np.ndarray, target: np.ndarray, alpha: np.ndarray | None = None) -> ForecastReport:
    mse, mae = mse_mae(pred, target)
    err = pred - target
    return ForecastReport(
        mse=mse,
        mae=mae,
        per_horizon_mse=np.mean(err * err, axis=(0, 2, 3)).tolist(),
        per_horizon_mae=np.mean(np.abs(err), axis=(0, 2, 3)).tolist(),
        alpha_stats=None if alpha is None else alpha.mean(axis=0).tolist(),
        n_samples=int(pred.shape[0]),
    )


def predict(inputs: np.ndarray, store: ParamStore, cfg: ModelConfig, batch_size: int = 256):
    """Batched inference. Returns ``(forecasts [S, tau, N, 1], alpha [S, B] or None)``."""
    outs, alphas = [], []
    with no_grad():
        for lo in range(0, len(inputs), batch_size):
            out, det = model_forward(inputs[lo : lo + batch_size], cfg, store, return_details=True)
            outs.append(out.data)
            if det["alpha"] is not None:
                alphas.append(det["alpha"])
    pred = np.concatenate(outs) if outs else np.zeros((0, cfg.tau, inputs.shape[2], 1))
    return pred, (np.concatenate(alphas) if alphas else None)


def evaluate(ds: WindowedDataset, store: ParamStore, cfg: ModelConfig, batch_size: int = 256) -> ForecastReport:
    """Metrics over every window of ``ds`` (in the units of the data)."""
    pred, alpha = predict(ds.inputs, store, cfg, batch_size)
    return _report(pred, ds.targets, alpha)


def persistence_forecast(inputs: np.ndarray, tau: int) -> np.ndarray:
    """Repeat each window's last observed target value ``tau`` times."""
    last = np.asarray(inputs)[:, -1:, :, 0:1]
    return np.repeat(last, tau, axis=1)


def persistence_report(ds: WindowedDataset) -> ForecastReport:
    return _report(persistence_forecast(ds.inputs, ds.tau), ds.targets)


def train(
    train_ds: WindowedDataset,
    cfg: ModelConfig,
    val_ds: WindowedDataset | None = None,
    store: ParamStore | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> tuple[ParamStore, list[dict]]:
    """Minimise MSE with Adam over shuffled mini-batches.

    Keeps the parameters with the lowest validation MSE (or the last ones
    without a validation set) and stops after ``cfg.patience`` epochs
    without improvement. Fully determined by ``cfg.seed``.
    """
    N, C = train_ds.inputs.shape[2:]
    cfg.validate(N)
    if train_ds.T_in != cfg.T_in or train_ds.tau != cfg.tau:
        raise ValueError(
            f"dataset windows (T_in={train_ds.T_in}, tau={train_ds.tau}) do not match the config "
            f"(T_in={cfg.T_in}, tau={cfg.tau})"
        )
    if store is None:
        store = build_params(cfg, N, C)
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    best_val = np.inf
    best = store.snapshot()
    stale = 0
    S = len(train_ds)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(S)
        total = 0.0
        for lo in range(0, S, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            try:
                pred = model_forward(train_ds.inputs[idx], cfg, store)
                loss = mse_loss(pred, train_ds.targets[idx])
            except NonFiniteError as exc:
                clear_tape()
                raise TrainingDivergence(f"epoch {epoch}, batch at {lo}: {exc}") from exc
            backward(loss)
            adam_step(store, lr=cfg.lr)
            total += loss.item() * len(idx)
        row = {"epoch": epoch, "train_mse": total / S}
        if val_ds is not None and len(val_ds):
            try:
                row["val_mse"] = evaluate(val_ds, store, cfg).mse
            except NonFiniteError as exc:
                raise TrainingDivergence(f"epoch {epoch}, validation: {exc}") from exc
        else:
            row["val_mse"] = float("nan")
        history.append(row)
        log.info("epoch %d train_mse=%.6f val_mse=%.6f", epoch, row["train_mse"], row["val_mse"])
        if on_epoch is not None:
            on_epoch(row)

        if val_ds is None:
            best = store.snapshot()
            continue
        if row["val_mse"] < best_val:
            best_val = row["val_mse"]
            best = store.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    store.load(best)
    return store, history


def write_history(history: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mse", "val_mse"])
        for row in history:
            w.writerow([row["epoch"], repr(row["train_mse"]), repr(row["val_mse"])])


def write_alpha_csv(alpha: np.ndarray, path) -> None:
    """One row per sample, one column per block weight."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample"] + [f"alpha_{b}" for b in range(alpha.shape[1])])
        for i, row in enumerate(alpha):
            w.writerow([i, *(repr(float(a)) for a in row)])


def save_checkpoint(path, cfg: ModelConfig, store: ParamStore, stats: NormStats | None, meta: dict | None = None) -> None:
    doc = {
        "format": "dimignn-checkpoint/1",
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "params": {k: {"shape": list(p.shape), "values": p.data.ravel().tolist()} for k, p in store.items()},
        "norm_stats": None if stats is None else stats.to_json(),
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[ModelConfig, ParamStore, NormStats | None, dict]:
    """Rebuild the parameter store and audit every stored shape against it."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "dimignn-checkpoint/1":
        raise ValueError(f"{path}: not a checkpoint file")
    cfg = ModelConfig.from_dict(doc["config"])
    meta = doc.get("meta", {})
    N, C = int(meta["N"]), int(meta["C"])
    store = build_params(cfg, N, C)
    values = {}
    for name, entry in doc["params"].items():
        values[name] = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
    store.load(values)
    stats = NormStats.from_json(doc["norm_stats"]) if doc.get("norm_stats") else None
    return cfg, store, stats, meta
