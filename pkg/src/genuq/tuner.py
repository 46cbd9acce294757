"""Hyperparameter search: grid over structure, random over lr and dropout.

Trial ``i`` takes grid cell ``i mod |grid|`` of (depth, width, batch size) in
lexicographic order and draws lr (log-uniform) and dropout (uniform) from a
stream keyed by ``(seed, i)``.  Trials are independent and may run in parallel
processes; results are assembled in trial order.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import Scaler
from .flow import Triples
from .network import Architecture, GeneratorModel
from .trainer import TrainConfig, TrainReport, train

log = logging.getLogger(__name__)

_TRIAL_STREAM = 2
_TRIAL_SEED_STREAM = 3

OK = "ok"
FAILED = "failed"


@dataclass(frozen=True)
class SearchSpace:
    widths: tuple[int, ...] = (32, 64, 128)
    depths: tuple[int, ...] = (1, 2)
    batch_sizes: tuple[int, ...] = (32, 64)
    lr_range: tuple[float, float] = (1e-4, 1e-2)
    dropout_range: tuple[float, float] = (0.01, 0.3)
    n_trials: int = 10
    max_epochs: int = 1000

    def __post_init__(self):
        for name in ("widths", "depths", "batch_sizes"):
            vals = tuple(getattr(self, name))
            if not vals or any(v < 1 for v in vals):
                raise ValueError(f"{name} must be a nonempty list of positive integers")
            object.__setattr__(self, name, vals)
        lo, hi = self.lr_range
        if not 0 < lo <= hi:
            raise ValueError("lr_range must be ordered and positive")
        lo, hi = self.dropout_range
        if not 0 <= lo <= hi < 0.5:
            raise ValueError("dropout_range must be ordered within [0, 0.5)")
        if self.n_trials < 1 or self.max_epochs < 1:
            raise ValueError("n_trials and max_epochs must be >= 1")

    def grid(self) -> list[tuple[int, int, int]]:
        """(depth, width, batch_size) cells in lexicographic order."""
        return list(itertools.product(self.depths, self.widths, self.batch_sizes))


@dataclass(frozen=True)
class TrialConfig:
    trial_id: int
    hidden_layers: int
    hidden_width: int
    batch_size: int
    lr: float
    dropout_rate: float
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrialResult:
    trial_id: int
    config: TrialConfig
    status: str
    best_val_loss: float | None = None
    val_r2: float | None = None
    report: TrainReport | None = None
    error: str | None = None

    def to_dict(self, timings: bool = True) -> dict:
        return {
            "trial_id": self.trial_id,
            "config": self.config.to_dict(),
            "status": self.status,
            "best_val_loss": self.best_val_loss,
            "val_r2": self.val_r2,
            "error": self.error,
            "report": self.report.to_dict(timings) if self.report else None,
        }


def sample_trial(space: SearchSpace, trial_index: int, seed: int) -> TrialConfig:
    if not 0 <= trial_index < space.n_trials:
        raise IndexError(f"trial index {trial_index} outside [0, {space.n_trials})")
    depth, width, bs = space.grid()[trial_index % len(space.grid())]
    rng = np.random.default_rng([seed, _TRIAL_STREAM, trial_index])
    lo, hi = space.lr_range
    lr = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    dropout = float(rng.uniform(*space.dropout_range))
    trial_seed = int(np.random.default_rng([seed, _TRIAL_SEED_STREAM, trial_index]).integers(2**31))
    return TrialConfig(trial_index, depth, width, bs, lr, dropout, trial_seed)


def run_trial(triples: Triples, cfg: TrialConfig, base: TrainConfig, max_epochs: int,
              scaler: Scaler | None = None, meta: dict | None = None):
    """Train one trial; failures are captured in the result, never raised."""
    arch = Architecture(triples.d, triples.q, cfg.hidden_layers, cfg.hidden_width, cfg.dropout_rate)
    tcfg = replace(base, lr=cfg.lr, batch_size=cfg.batch_size, max_epochs=max_epochs, seed=cfg.seed)
    try:
        model, report = train(triples, arch, tcfg, scaler, meta)
    except (FloatingPointError, ValueError, OverflowError) as exc:
        log.warning("trial %d failed: %s", cfg.trial_id, exc)
        return TrialResult(cfg.trial_id, cfg, FAILED, error=str(exc)), None
    return TrialResult(cfg.trial_id, cfg, OK, report.best_val_loss, report.val_r2, report), model


def _trial_job(args):
    return run_trial(*args)


def default_workers(n_trials: int) -> int:
    env = os.environ.get("GENAI4UQ_THREADS")
    n = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(n, n_trials))


@dataclass
class SearchResult:
    best: TrialConfig
    best_trial_id: int
    trials: list[TrialResult]
    model: GeneratorModel = field(repr=False)

    def to_dict(self, timings: bool = True) -> dict:
        return {
            "best_trial_id": self.best_trial_id,
            "best_config": self.best.to_dict(),
            "n_trials": len(self.trials),
            "trials": [t.to_dict(timings) for t in self.trials],
        }

    def to_json(self, path, timings: bool = True) -> None:
        Path(path).write_text(json.dumps(self.to_dict(timings), indent=2))


class SearchFailed(RuntimeError):
    pass


def run_search(triples: Triples, space: SearchSpace, parallelism: int | None = None, seed: int = 0,
               base: TrainConfig | None = None, scaler: Scaler | None = None,
               meta: dict | None = None, overrides: dict[int, dict] | None = None) -> SearchResult:
    """Run ``space.n_trials`` independent trainings and keep the best.

    ``overrides`` maps trial ids to TrialConfig field replacements (used to
    inject faults in tests).
    """
    base = base or TrainConfig()
    workers = parallelism if parallelism is not None else default_workers(space.n_trials)
    if workers < 1:
        raise ValueError("parallelism must be >= 1")
    configs = [sample_trial(space, i, seed) for i in range(space.n_trials)]
    for i, changes in (overrides or {}).items():
        configs[i] = replace(configs[i], **changes)
    jobs = [(triples, c, base, space.max_epochs, scaler, meta) for c in configs]
    if workers == 1:
        outcomes = [_trial_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            outcomes = list(pool.map(_trial_job, jobs))

    results = [r for r, _ in outcomes]
    ok = [r for r in results if r.status == OK]
    if not ok:
        detail = "; ".join(f"trial {r.trial_id}: {r.error}" for r in results)
        raise SearchFailed(f"all {len(results)} trials failed: {detail}")
    best = min(ok, key=lambda r: (r.best_val_loss, r.trial_id))
    model = outcomes[best.trial_id][1]
    model.meta.update(best_trial=best.config.to_dict())
    return SearchResult(best.config, best.trial_id, results, model)
