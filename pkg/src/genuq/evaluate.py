"""Ensemble forecasts from a trained generator and the reported metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import write_matrix_csv
from .flow import Triples
from .network import GeneratorModel, forward

QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)
MIN_BINS, MAX_BINS = 16, 128


class UndefinedMetric(ArithmeticError):
    """The metric is undefined for the given input (e.g. constant truth)."""


@dataclass
class PosteriorSummary:
    mean: np.ndarray
    std: np.ndarray
    quantiles: dict[float, np.ndarray]
    hist_edges: list[np.ndarray]
    hist_counts: list[np.ndarray]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "quantiles": {f"q{int(round(k * 100)):02d}": v.tolist() for k, v in self.quantiles.items()},
            "histogram": [{"edges": e.tolist(), "counts": c.tolist()}
                          for e, c in zip(self.hist_edges, self.hist_counts)],
        }


@dataclass
class EnsembleForecast:
    y_star: np.ndarray
    samples: np.ndarray
    summary: PosteriorSummary

    def to_dict(self) -> dict:
        return {"y_star": self.y_star.tolist(), "n_samples": int(len(self.samples)),
                **self.summary.to_dict()}

    def write(self, samples_csv, summary_json, names=None) -> None:
        names = names or [f"x{i}" for i in range(self.samples.shape[1])]
        write_matrix_csv(samples_csv, names, self.samples)
        Path(summary_json).write_text(json.dumps(self.to_dict(), indent=2))


def _bins(col: np.ndarray) -> int:
    # count computed here, not via bins="fd", which allocates before clipping
    q75, q25 = np.percentile(col, [75, 25])
    width = 2.0 * (q75 - q25) / len(col) ** (1 / 3)
    span = np.ptp(col)
    if not width > 0 or not span > 0:
        return MIN_BINS
    return int(np.clip(np.ceil(span / width), MIN_BINS, MAX_BINS))


def histogram(col: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Freedman-Diaconis histogram with the bin count clipped to [16, 128]."""
    counts, edges = np.histogram(col, bins=_bins(col))
    return edges, counts


def posterior_summary(samples) -> PosteriorSummary:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if len(samples) < 1:
        raise ValueError("need at least one sample")
    qs = np.quantile(samples, QUANTILE_LEVELS, axis=0, method="linear")
    edges, counts = zip(*(histogram(samples[:, i]) for i in range(samples.shape[1])))
    return PosteriorSummary(samples.mean(axis=0), samples.std(axis=0),
                            dict(zip(QUANTILE_LEVELS, qs)), list(edges), list(counts))


def ensemble(model: GeneratorModel, y_star, K: int, seed: int) -> EnsembleForecast:
    """K posterior draws for one observation, in problem units."""
    if K < 1:
        raise ValueError("K must be >= 1")
    y_star = np.asarray(y_star, dtype=np.float64).reshape(-1)
    if y_star.shape[0] != model.arch.q:
        raise ValueError(f"y_star has dimension {y_star.shape[0]}, model expects q={model.arch.q}")
    y_std = model.scaler.apply_y(y_star) if model.scaler is not None else y_star
    z = np.random.default_rng(seed).standard_normal((K, model.arch.d))
    out = forward(model, np.broadcast_to(y_std, (K, model.arch.q)), z)
    if model.scaler is not None:
        out = model.scaler.invert_x(out)
    return EnsembleForecast(y_star, out, posterior_summary(out))


def r2(truth, pred) -> float:
    """Pooled coefficient of determination over every entry."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {pred.shape}")
    if truth.ndim == 1:
        truth, pred = truth[:, None], pred[:, None]
    if truth.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    sst = np.sum((truth - truth.mean()) ** 2)
    if sst == 0:
        raise UndefinedMetric("R^2 undefined: truth is constant")
    return float(1.0 - np.sum((truth - pred) ** 2) / sst)


def r2_per_dim(truth, pred) -> list[float | None]:
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64).T).T
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64).T).T
    out = []
    for i in range(truth.shape[1]):
        try:
            out.append(r2(truth[:, i], pred[:, i]))
        except UndefinedMetric:
            out.append(None)
    return out


def validation_scatter(model: GeneratorModel, triples: Triples):
    """(truth, prediction, pooled R^2) of ``G(y_m, z_m)`` against ``x_m``."""
    if len(triples) == 0:
        raise ValueError("no triples to evaluate")
    pred = forward(model, triples.y, triples.z)
    return triples.x, pred, r2(triples.x, pred)


def truth_rank(samples, truth) -> np.ndarray:
    """Fraction of ensemble members below the true value, per dimension."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    return (samples < np.asarray(truth, dtype=np.float64).reshape(1, -1)).mean(axis=0)
