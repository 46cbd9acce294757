"""End-to-end steps shared by the command line and the demo scripts.

Each function writes its artifacts into an output directory and returns the
in-memory results, so notebooks and tests can drive the same code path as the
``genuq`` command.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import bench
from .dataset import Dataset, Scaler, fit_scaler, make_bimodal, split, write_csv, write_matrix_csv
from .evaluate import EnsembleForecast, ensemble, r2, r2_per_dim, truth_rank, validation_scatter
from .flow import FlowConfig, Triples, generate_labels
from .network import Architecture, GeneratorModel
from .score import LikelihoodModel
from .trainer import TrainConfig, TrainReport, split_triples, train, save_checkpoint
from .tuner import SearchResult, SearchSpace, run_search

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CHECKPOINT = "checkpoint.gquq"
LABELS = "labels.csv"

BIMODAL_SIGMA = 0.01
BIMODAL_N = 10_000
BIMODAL_Y = (0.25, 1.0, 2.25)
# evaluation stream tag, apart from the label and tuner streams
_EVAL = 21


def write_json(path, payload: dict, kind: str) -> None:
    doc = {"schema": f"genuq.{kind}/{SCHEMA_VERSION}", **payload}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")


@dataclass
class Prepared:
    train: Dataset
    test: Dataset
    scaler: Scaler


def prepare(ds: Dataset, test_fraction: float, seed: int) -> Prepared:
    """Split, then standardize with training statistics only."""
    tr, te = split(ds, test_fraction, seed)
    return Prepared(tr, te, fit_scaler(tr))


def labels(prep: Prepared, lik: LikelihoodModel, cfg: FlowConfig, workers: int = 1,
           label_data: Dataset | None = None) -> Triples:
    """Generate labeled triples in standardized units.

    ``label_data`` replaces the training split as the score reference set (for
    example its noiseless forward outputs); it is standardized with the
    training scaler.
    """
    ref = prep.scaler.apply(label_data if label_data is not None else prep.train)
    return generate_labels(ref, lik, cfg, workers=workers)


def model_meta(prep: Prepared, lik: LikelihoodModel, cfg: FlowConfig) -> dict:
    return {
        "x_names": list(prep.train.x_names),
        "y_names": list(prep.train.y_names),
        "likelihood": {"mode": lik.mode, "sigma": _plain(lik.sigma), "bandwidth": _plain(lik.bandwidth)},
        "flow": asdict(cfg),
    }


def _plain(v):
    if v is None:
        return None
    a = np.asarray(v, dtype=np.float64)
    return a.tolist()


def tune(triples: Triples, prep: Prepared, space: SearchSpace, base: TrainConfig, out: Path,
         seed: int, workers: int, meta: dict) -> SearchResult:
    res = run_search(triples, space, parallelism=workers, seed=seed, base=base, scaler=prep.scaler,
                     meta=meta)
    save_checkpoint(res.model, out / CHECKPOINT)
    write_json(out / "search.json", res.to_dict(), "search")
    return res


def train_fixed(triples: Triples, prep: Prepared, arch: Architecture, cfg: TrainConfig, out: Path,
                meta: dict) -> tuple[GeneratorModel, TrainReport]:
    model, report = train(triples, arch, cfg, prep.scaler, meta)
    save_checkpoint(model, out / CHECKPOINT)
    write_json(out / "report.json", report.to_dict(), "report")
    return model, report


def forecasts(model: GeneratorModel, ys, K: int, seed: int, out: Path) -> list[EnsembleForecast]:
    """One ensemble per observation row; writes ``ensemble_<i>.csv`` / ``summary_<i>.json``."""
    names = model.meta.get("x_names") or [f"x{i}" for i in range(model.arch.d)]
    results = []
    for i, y in enumerate(np.atleast_2d(np.asarray(ys, dtype=np.float64))):
        fc = ensemble(model, y, K, [seed, _EVAL, i])
        fc.write(out / f"ensemble_{i}.csv", out / f"summary_{i}.json", names)
        doc = json.loads((out / f"summary_{i}.json").read_text())
        write_json(out / f"summary_{i}.json", doc, "summary")
        results.append(fc)
    return results


def validation_triples(model: GeneratorModel, labels_path) -> Triples | None:
    """Reproduce the validation split the checkpoint was selected on."""
    p = Path(labels_path)
    if not p.is_file():
        return None
    tri = Triples.from_csv(p)
    meta = model.meta
    seed = meta.get("split_seed")
    if seed is None or "val_fraction" not in meta:
        return None
    _, va = split_triples(len(tri), meta["val_fraction"], seed)
    return tri.take(va)


def evaluate(model: GeneratorModel, test: Dataset, K: int, seed: int, out: Path,
             labels_path=None) -> dict:
    """Validation scatter R^2 plus per-row posterior summaries on ``test``.

    Raises UndefinedMetric when a test truth column is constant.
    """
    payload: dict = {"r2": None, "r2_per_dim": None, "n_validation": 0}
    val = validation_triples(model, labels_path) if labels_path is not None else None
    if val is not None and len(val) > 1:
        truth, pred, score = validation_scatter(model, val)
        payload.update(r2=score, r2_per_dim=r2_per_dim(truth, pred), n_validation=len(val))
        names = model.meta.get("x_names") or [f"x{i}" for i in range(model.arch.d)]
        write_matrix_csv(out / "validation_scatter.csv",
                         [f"true_{n}" for n in names] + [f"pred_{n}" for n in names],
                         np.hstack([truth, pred]))

    rows, means, ranks, inside = [], [], [], []
    for i in range(test.n):
        fc = ensemble(model, test.y[i], K, [seed, _EVAL, i])
        rank = truth_rank(fc.samples, test.x[i])
        q = fc.summary.quantiles
        inside.append(((test.x[i] >= q[0.05]) & (test.x[i] <= q[0.95])).mean())
        means.append(fc.summary.mean)
        ranks.append(rank)
        rows.append({"index": i, "y": test.y[i].tolist(), "truth": test.x[i].tolist(),
                     "mean": fc.summary.mean.tolist(), "std": fc.summary.std.tolist(),
                     "q05": q[0.05].tolist(), "q50": q[0.5].tolist(), "q95": q[0.95].tolist(),
                     "truth_rank": rank.tolist()})
    means = np.array(means)
    payload["test"] = {
        "n_rows": test.n,
        "K": K,
        "r2_ensemble_mean": r2(test.x, means),
        "coverage_90": float(np.mean(inside)),
        "mean_truth_rank": float(np.mean(ranks)),
        "rows": rows,
    }
    return payload


def bimodal_checks(model: GeneratorModel, K: int, seed: int, ys=BIMODAL_Y,
                   sigma: float = BIMODAL_SIGMA) -> list[dict]:
    """Compare ensembles with the quadrature reference at each ``y``."""
    out = []
    for i, y in enumerate(ys):
        s = ensemble(model, [y], K, [seed, _EVAL, 1000 + i]).samples[:, 0]
        ref = bench.bimodal_reference(y, sigma)
        neg, pos = bench.sample_modes(s)
        root = float(np.sqrt(y))
        split_ = float(np.mean(s < 0))
        origin = float(np.mean(np.abs(s) < 0.3))
        w1 = ref.wasserstein1(s)
        mode_err = max(abs(neg + root), abs(pos - root)) if neg is not None and pos is not None else None
        out.append({
            "y": y, "modes": [neg, pos], "mode_error": mode_err, "sign_split": split_,
            "origin_mass": origin, "w1": w1,
            "pass": {
                "modes": mode_err is not None and mode_err <= 0.1,
                "sign_split": abs(split_ - 0.5) <= 0.05,
                "origin_mass": origin < 0.05,
                "w1": w1 <= 0.1,
            },
        })
    return out


def bimodal_datasets(seed: int, n: int = BIMODAL_N, sigma: float = BIMODAL_SIGMA,
                     test_fraction: float = 0.2) -> tuple[Dataset, Prepared, Dataset]:
    """(full noisy dataset, prepared split, noiseless copy of the training split)."""
    ds = make_bimodal(n, sigma, seed)
    prep = prepare(ds, test_fraction, seed)
    clean = Dataset(prep.train.x, prep.train.x**2, prep.train.x_names, prep.train.y_names)
    return ds, prep, clean


def run_bimodal_demo(out, seed: int = 0, n_labels: int = 20_000, space: SearchSpace | None = None,
                     K: int = 2000, workers: int = 1, n: int = BIMODAL_N,
                     base: TrainConfig | None = None) -> dict:
    """Synthesize, label, tune and evaluate the x**2 calibration problem.

    Labels use the noiseless forward outputs with an explicit Gaussian
    likelihood of width sigma, every training row in each batch, and rows far
    below the best likelihood pruned.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    space = space or SearchSpace()
    ds, prep, clean = bimodal_datasets(seed, n)
    write_csv(out / "data.csv", ds)
    write_csv(out / "test.csv", prep.test)

    lik = LikelihoodModel.explicit(BIMODAL_SIGMA / float(prep.scaler.y_std[0]))
    fcfg = FlowConfig(batch_size=None, n_labels=n_labels, seed=seed, loglik_cutoff=40.0)
    log.info("generating %d labels", n_labels)
    tri = labels(prep, lik, fcfg, workers, label_data=clean)
    tri.to_csv(out / LABELS)

    base = base or TrainConfig(seed=seed)
    meta = model_meta(prep, lik, fcfg)
    log.info("searching %d trials", space.n_trials)
    res = tune(tri, prep, space, base, out, seed, workers, meta)
    (out / "best.toml").write_text(best_toml(res))

    metrics = evaluate(res.model, prep.test, K, seed, out, out / LABELS)
    metrics["bimodal"] = bimodal_checks(res.model, K, seed)
    forecasts(res.model, [[y] for y in BIMODAL_Y], K, seed, out)
    write_json(out / "metrics.json", metrics, "metrics")
    (out / "summary.txt").write_text(bimodal_summary(res, metrics))
    return metrics


def best_toml(res: SearchResult) -> str:
    import tomli_w
    b = res.best
    return tomli_w.dumps({"train": {"lr": b.lr, "batch_size": b.batch_size,
                                    "hidden_layers": b.hidden_layers,
                                    "hidden_width": b.hidden_width,
                                    "dropout_rate": b.dropout_rate},
                          "run": {"seed": b.seed}})


def bimodal_summary(res: SearchResult, metrics: dict) -> str:
    b = res.best
    lines = [
        "x**2 calibration demo",
        f"best trial {res.best_trial_id}: depth {b.hidden_layers}, width {b.hidden_width}, "
        f"batch {b.batch_size}, lr {b.lr:.3g}, dropout {b.dropout_rate:.3f}",
        f"validation R^2 {metrics['r2']:.4f} on {metrics['n_validation']} held-out triples",
        f"test rows {metrics['test']['n_rows']}, 90% interval coverage "
        f"{metrics['test']['coverage_90']:.3f}",
        "",
        f"{'y':>6} {'mode-':>8} {'mode+':>8} {'split':>6} {'origin':>7} {'W1':>7}",
    ]
    for c in metrics["bimodal"]:
        neg, pos = (f"{m:8.3f}" if m is not None else "       -" for m in c["modes"])
        lines.append(f"{c['y']:6.2f} {neg} {pos} {c['sign_split']:6.3f} {c['origin_mass']:7.3f} "
                     f"{c['w1']:7.4f}")
    return "\n".join(lines) + "\n"
