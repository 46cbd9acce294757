"""Supervised MSE training of the generator with overfitting controls.

Three mechanisms run every epoch:

* checkpoint-on-improvement: the best validation loss so far is kept
  whenever it improves by more than ``min_delta``; training returns that
  checkpoint, never the last epoch;
* generalization gap ``val - train``, recorded and flagged above
  ``gap_threshold`` (diagnostic only);
* trend stop: training ends once the moving-average train loss has fallen
  and the moving-average validation loss has risen over ``patience``
  consecutive moving-average values.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _container
from ._container import FormatError
from .dataset import Scaler
from .flow import Triples
from .network import (AdamState, Architecture, GeneratorModel, _adam_update, _forward, _loss_grad,
                      flat_views, init)

MAGIC = b"GQUQ"

# RNG stream tags
_SPLIT, _INIT, _SHUFFLE = 11, 12, 13

MAX_EPOCHS = "max_epochs"
TREND_STOP = "trend_stop"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 1000
    val_fraction: float = 0.1
    min_delta: float = 1e-5
    patience: int = 20
    gap_threshold: float = 0.1
    window: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must lie in (0, 0.5)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    gap: list[float] = field(default_factory=list)
    checkpoint_epochs: list[int] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stop_reason: str | None = None
    gap_flagged: bool = False
    val_r2: float | None = None
    wall_time: float = 0.0

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    @property
    def final_gap(self) -> float | None:
        return self.gap[-1] if self.gap else None

    def to_dict(self, timings: bool = True) -> dict:
        out = asdict(self)
        out["epochs"] = self.epochs
        out["final_gap"] = self.final_gap
        if not timings:
            out.pop("wall_time")
        return out

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


class NonFiniteLoss(FloatingPointError):
    pass


def split_triples(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded disjoint (train, validation) index split of ``n`` triples."""
    n_val = max(1, int(round(n * val_fraction)))
    if n - n_val < 1:
        raise ValueError(f"too few triples ({n}) to split")
    perm = np.random.default_rng([seed, _SPLIT]).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _moving_average(v, w):
    v = np.asarray(v, dtype=np.float64)
    if len(v) < w:
        return v[:0]
    c = np.convolve(v, np.ones(w) / w, mode="valid")
    return c


def should_stop(history, cfg: TrainConfig) -> tuple[bool, str | None]:
    """Trend rule on ``history.train_loss`` / ``history.val_loss``.

    Stops once the last ``patience`` moving-average values of the train loss
    are strictly decreasing while those of the validation loss are strictly
    increasing.
    """
    tr = _moving_average(history.train_loss, cfg.window)
    va = _moving_average(history.val_loss, cfg.window)
    p = max(cfg.patience, 2)
    if len(tr) < p:
        return False, None
    if np.all(np.diff(tr[-p:]) < 0) and np.all(np.diff(va[-p:]) > 0):
        return True, TREND_STOP
    return False, None


def _pooled_r2(truth, pred):
    sst = np.sum((truth - truth.mean()) ** 2)
    if sst == 0:
        return None
    return float(1.0 - np.sum((truth - pred) ** 2) / sst)


def train(triples: Triples, arch: Architecture, cfg: TrainConfig, scaler: Scaler | None = None,
          meta: dict | None = None, checkpoint_path=None) -> tuple[GeneratorModel, TrainReport]:
    """Fit the generator to labeled triples; return the best-validation checkpoint."""
    if len(triples) < 10:
        raise ValueError("need at least 10 triples to train")
    if triples.d != arch.d or triples.q != arch.q:
        raise ValueError("triples and architecture dimensions differ")
    t0 = time.perf_counter()
    tr_idx, va_idx = split_triples(len(triples), cfg.val_fraction, cfg.seed)
    inp = np.hstack([triples.y, triples.z])
    x_tr, in_tr = triples.x[tr_idx], inp[tr_idx]
    x_va, in_va = triples.x[va_idx], inp[va_idx]

    init_seed = int(np.random.default_rng([cfg.seed, _INIT]).integers(2**63))
    model = init(arch, init_seed)
    model.scaler = scaler
    model.meta = dict(meta or {})
    model.meta.update(split_seed=cfg.seed, val_fraction=cfg.val_fraction, n_triples=len(triples))
    # parameters, gradients and Adam moments live in flat buffers
    shapes = arch.param_shapes()
    flat = np.concatenate([p.ravel() for p in model.params])
    model.params = flat_views(shapes, flat)
    gflat = np.zeros_like(flat)
    grads = flat_views(shapes, gflat)
    state = AdamState([np.zeros_like(flat)], [np.zeros_like(flat)])
    rng = np.random.default_rng([cfg.seed, _SHUFFLE])
    keep = 1.0 - arch.dropout_rate
    use_dropout = arch.dropout_rate > 0

    report = TrainReport()
    best_flat = flat.copy()
    n_tr = len(tr_idx)
    bs = cfg.batch_size
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(n_tr)
        total = 0.0
        for s in range(0, n_tr, bs):
            sel = perm[s:s + bs]
            masks = None
            if use_dropout:
                masks = [(rng.random((len(sel), arch.hidden_width)) < keep) / keep
                         for _ in range(arch.hidden_layers)]
            loss, _ = _loss_grad(model.params, in_tr[sel], x_tr[sel], masks, out=grads)
            if not (np.isfinite(loss) and np.isfinite(gflat).all()):
                raise NonFiniteLoss(f"non-finite training loss or gradient at epoch {epoch}")
            state.step += 1
            _adam_update(flat, gflat, state.m[0], state.v[0], state, cfg.lr)
            total += loss * len(sel)
        train_loss = total / n_tr
        out, _ = _forward(model.params, in_va, None)
        val_loss = float(np.mean((out - x_va) ** 2))
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise NonFiniteLoss(f"non-finite loss at epoch {epoch}")
        report.train_loss.append(float(train_loss))
        report.val_loss.append(val_loss)
        report.gap.append(val_loss - float(train_loss))
        if report.gap[-1] > cfg.gap_threshold:
            report.gap_flagged = True
        if val_loss < report.best_val_loss - cfg.min_delta:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            report.checkpoint_epochs.append(epoch)
            best_flat = flat.copy()
            if checkpoint_path is not None:
                snap = GeneratorModel(arch, flat_views(shapes, best_flat), scaler, model.meta)
                save_checkpoint(snap, checkpoint_path)
        stop, reason = should_stop(report, cfg)
        if stop:
            report.stop_reason = reason or TREND_STOP
            break
    else:
        report.stop_reason = MAX_EPOCHS

    model.params = [p.copy() for p in flat_views(shapes, best_flat)]
    out, _ = _forward(model.params, in_va, None)
    report.val_r2 = _pooled_r2(x_va, out)
    report.wall_time = time.perf_counter() - t0
    return model, report


def save_checkpoint(model: GeneratorModel, path) -> None:
    header = {
        "kind": "generator",
        "architecture": asdict(model.arch),
        "meta": model.meta,
        "has_scaler": model.scaler is not None,
    }
    tensors = list(zip(model.arch.param_names(), model.params))
    if model.scaler is not None:
        tensors += list(model.scaler.to_dict().items())
    _container.write(path, MAGIC, header, tensors)


def load_checkpoint(path) -> GeneratorModel:
    header, tensors = _container.read(path, MAGIC)
    try:
        arch = Architecture(**header["architecture"])
        params = [tensors[n] for n in arch.param_names()]
        scaler = None
        if header.get("has_scaler"):
            scaler = Scaler(tensors["x_mean"], tensors["x_std"], tensors["y_mean"], tensors["y_std"])
        return GeneratorModel(arch, params, scaler, header.get("meta", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: inconsistent checkpoint contents: {exc}") from None
