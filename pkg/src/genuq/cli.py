"""``genuq`` command line.

Exit codes: 0 success, 2 configuration or usage error, 3 I/O or data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, pipeline, reduce
from ._container import FormatError
from .config import DEFAULTS, ConfigError, RunConfig, load
from .dataset import DataError, load_csv, read_matrix_csv, write_csv, write_matrix_csv
from .network import Architecture
from .trainer import load_checkpoint
from .tuner import SearchFailed

log = logging.getLogger("genuq")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(ValueError):
    pass


def _threads(args, n_jobs: int) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("GENAI4UQ_THREADS")
        n = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(n, n_jobs))


def _outdir(path, force: bool) -> Path:
    """Create ``path``; refuse a non-empty directory unless ``force``."""
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise OSError(f"output path is not a directory: {out}")
    if out.is_dir() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty (use --force to overwrite)")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    return out


def _outfile(path, force: bool) -> Path:
    p = Path(path)
    if p.exists() and not force:
        raise UsageError(f"{p} exists (use --force to overwrite)")
    if not p.parent.exists():
        p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _run_config(args, need_data=True) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "output", None):
        overrides.append(f"run.output_dir={json.dumps(str(args.output))}")
    return load(args.config, overrides, need_data=need_data)


def _prepare(cfg: RunConfig, out: Path):
    ds = load_csv(cfg.data_path, cfg.x_cols, cfg.y_cols)
    prep = pipeline.prepare(ds, cfg.test_fraction, cfg.seed)
    write_csv(out / "test.csv", prep.test)
    return prep


def _labels(cfg: RunConfig, prep, args, out: Path):
    fcfg, lik = cfg.flow(), cfg.likelihood()
    log.info("generating %d labels from %d training rows", fcfg.n_labels, prep.train.n)
    tri = pipeline.labels(prep, lik, fcfg, _threads(args, fcfg.n_labels))
    tri.to_csv(out / pipeline.LABELS)
    return tri, pipeline.model_meta(prep, lik, fcfg)


def _y_rows(cfg: RunConfig):
    ys = cfg.raw["eval"]["y_star"]
    if ys is None:
        return None
    return ys if isinstance(ys[0], list) else [ys]


def cmd_tune(args) -> int:
    cfg = _run_config(args)
    out = _outdir(cfg.output_dir, args.force)
    prep = _prepare(cfg, out)
    tri, meta = _labels(cfg, prep, args, out)
    space = cfg.search_space()
    res = pipeline.tune(tri, prep, space, cfg.train_config(), out, cfg.seed,
                        _threads(args, space.n_trials), meta)
    (out / "best.toml").write_text(pipeline.best_toml(res))
    if _y_rows(cfg):
        pipeline.forecasts(res.model, _y_rows(cfg), cfg.raw["eval"]["K"], cfg.seed, out)
    log.info("best trial %d (val loss %.4g)", res.best_trial_id,
             res.trials[res.best_trial_id].best_val_loss)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _outdir(cfg.output_dir, args.force)
    prep = _prepare(cfg, out)
    tri, meta = _labels(cfg, prep, args, out)
    t = cfg.raw["train"]
    arch = Architecture(tri.d, tri.q, t["hidden_layers"], t["hidden_width"], t["dropout_rate"])
    model, report = pipeline.train_fixed(tri, prep, arch, cfg.train_config(), out, meta)
    if _y_rows(cfg):
        pipeline.forecasts(model, _y_rows(cfg), cfg.raw["eval"]["K"], cfg.seed, out)
    log.info("best epoch %d (val loss %.4g, %s)", report.best_epoch, report.best_val_loss,
             report.stop_reason)
    return EXIT_OK


def _load_model(path):
    if not Path(path).is_file():
        raise OSError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_generate(args) -> int:
    if args.K < 1:
        raise UsageError(f"K must be >= 1, got {args.K}")
    model = _load_model(args.checkpoint)
    q = model.arch.q
    if args.y is not None:
        ys = np.asarray(args.y, dtype=np.float64).reshape(1, -1)
    else:
        _, ys = read_matrix_csv(args.y_csv)
        ys = np.atleast_2d(ys)
    if ys.shape[1] != q:
        raise UsageError(f"observation has dimension {ys.shape[1]}, checkpoint expects q={q}")
    out = _outdir(args.output, args.force)
    pipeline.forecasts(model, ys, args.K, args.seed, out)
    log.info("wrote %d ensembles of %d samples to %s", len(ys), args.K, out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.K < 1:
        raise UsageError(f"K must be >= 1, got {args.K}")
    model = _load_model(args.checkpoint)
    x_names = model.meta.get("x_names") or [f"x{i}" for i in range(model.arch.d)]
    y_names = model.meta.get("y_names") or [f"y{i}" for i in range(model.arch.q)]
    test = load_csv(args.test_csv, x_names, y_names)
    out = _outdir(args.output, args.force)
    labels_path = args.labels or Path(args.checkpoint).parent / pipeline.LABELS
    metrics = pipeline.evaluate(model, test, args.K, args.seed, out, labels_path)
    pipeline.write_json(out / "metrics.json", metrics, "metrics")
    log.info("validation R^2 %s, test coverage %.3f", metrics["r2"], metrics["test"]["coverage_90"])
    return EXIT_OK


def cmd_bimodal_demo(args) -> int:
    cfg = load(None, list(args.set or []) + [f"run.seed={args.seed}"], need_data=False)
    out = _outdir(args.output, args.force)
    space = cfg.search_space()
    metrics = pipeline.run_bimodal_demo(
        out, seed=cfg.seed, n_labels=cfg.raw["flow"]["n_labels"], space=space,
        K=cfg.raw["eval"]["K"], workers=_threads(args, max(space.n_trials, 2)),
        base=cfg.train_config())
    sys.stdout.write((out / "summary.txt").read_text())
    log.info("validation R^2 %.4f", metrics["r2"])
    return EXIT_OK


def cmd_reduce(args) -> int:
    if args.action == "fit":
        _, fields = read_matrix_csv(args.input)
        fields = np.atleast_2d(fields)
        if args.k < 1 or args.k > min(fields.shape):
            raise UsageError(f"k={args.k} must lie in [1, min(n, D)] = [1, {min(fields.shape)}]")
        r = reduce.fit(fields, args.k)
        reduce.save(r, _outfile(args.output, args.force))
        log.info("fitted k=%d of D=%d, explained %.4f", r.k, r.D, float(r.explained_ratio.sum()))
    else:
        if args.reducer is None:
            raise UsageError("--reducer is required for encode/decode")
        r = reduce.load(args.reducer)
        _, data = read_matrix_csv(args.input)
        data = np.atleast_2d(data)
        expect = r.D if args.action == "encode" else r.k
        if data.shape[1] != expect:
            raise UsageError(f"input has {data.shape[1]} columns, reducer expects {expect}")
        if args.action == "encode":
            res, names = r.encode(data), [f"z{i}" for i in range(r.k)]
        else:
            res, names = r.decode(data), [f"f{i}" for i in range(r.D)]
        write_matrix_csv(_outfile(args.output, args.force), names, res)
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.problem == "bimodal":
        ref = bench.bimodal_reference(args.y, args.sigma)
    else:
        ref = bench.gaussian_linear_problem(args.sigma, 2, 0).posterior(args.y)
    doc = {"problem": ref.problem, "y": args.y, "sigma": args.sigma, "mean": ref.mean(),
           "std": ref.std(), "modes": ref.modes().tolist(), "mass_below_zero": ref.sign_split(),
           "quantiles": {str(p): float(ref.quantile(p)) for p in (0.05, 0.25, 0.5, 0.75, 0.95)}}
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def _config_reference() -> str:
    lines = ["configuration keys and defaults (override with --set section.key=value):"]
    for section, values in DEFAULTS.items():
        for k, v in values.items():
            lines.append(f"  {section}.{k} = {'(unset)' if v is None else v}")
    lines.append("flow.batch_size = 0 uses every training row in each score batch.")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="genuq", description="Generative posterior sampling for inverse problems.",
        epilog=_config_reference(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--threads", type=int, default=None,
                   help="cap on worker processes (fallback: GENAI4UQ_THREADS, then CPU count)")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp, config=True):
        if config:
            sp.add_argument("config", help="TOML run configuration")
            sp.add_argument("--output", help="output directory (overrides run.output_dir)")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one configuration value (repeatable)")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    sp = sub.add_parser("tune", help="generate labels, search hyperparameters, save the best model",
                        epilog=_config_reference(), formatter_class=argparse.RawDescriptionHelpFormatter)
    common(sp)
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("train", help="generate labels and train one fixed configuration",
                        epilog=_config_reference(), formatter_class=argparse.RawDescriptionHelpFormatter)
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("generate", help="ensemble forecasts for given observations")
    sp.add_argument("checkpoint")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--y", type=float, nargs="+", help="one observation, inline")
    g.add_argument("--y-csv", help="CSV of observations, one per row")
    sp.add_argument("-K", type=int, default=2000, help="ensemble size (default 2000)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", required=True)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("evaluate", help="validation R^2 and posterior summaries on a test CSV")
    sp.add_argument("checkpoint")
    sp.add_argument("test_csv")
    sp.add_argument("--labels", help="labels.csv the checkpoint was trained on "
                                     "(default: next to the checkpoint)")
    sp.add_argument("-K", type=int, default=2000, help="ensemble size (default 2000)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", required=True)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("bimodal-demo", help="end-to-end x**2 calibration example",
                        epilog=_config_reference(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sp.add_argument("--output", required=True)
    sp.add_argument("--seed", type=int, default=0)
    common(sp, config=False)
    sp.set_defaults(func=cmd_bimodal_demo)

    sp = sub.add_parser("reduce", help="fit, encode or decode a linear field reducer")
    sp.add_argument("action", choices=["fit", "encode", "decode"])
    sp.add_argument("input", help="fields CSV (fit, encode) or latent CSV (decode)")
    sp.add_argument("-k", type=int, default=20, help="latent dimension for fit (default 20)")
    sp.add_argument("--reducer", help="reducer file for encode/decode")
    sp.add_argument("--output", required=True)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_reduce)

    sp = sub.add_parser("oracle")  # hidden from the command list on purpose
    sp.add_argument("problem", choices=["bimodal", "gaussian"])
    sp.add_argument("--y", type=float, required=True)
    sp.add_argument("--sigma", type=float, default=0.01)
    sp.set_defaults(func=cmd_oracle)
    sub._choices_actions = [a for a in sub._choices_actions if a.dest != "oracle"]
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        msg, code = f"config error: {exc}", EXIT_CONFIG
    except (DataError, FormatError, OSError) as exc:
        msg, code = f"data error: {exc}", EXIT_DATA
    except (ArithmeticError, SearchFailed) as exc:
        msg, code = f"numerical failure: {exc}", EXIT_NUMERIC
    except (UsageError, ValueError, IndexError) as exc:
        msg, code = f"usage error: {exc}", EXIT_CONFIG
    print(f"genuq: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
