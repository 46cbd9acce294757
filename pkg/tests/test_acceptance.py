"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line with the measured values; the lines
are repeated together in the terminal summary.  Runtime budgets are checked
on the machine running the suite.
"""

import json
import time

import numpy as np
import pytest

from genuq import bench, pipeline, reduce
from genuq.cli import main
from genuq.dataset import fit_scaler, write_matrix_csv
from genuq.evaluate import ensemble
from genuq.flow import FlowConfig, Triples, generate_labels, integrate, integrate_state, velocity
from genuq.network import Architecture, dropout_masks, init, mse_and_gradient
from genuq.schedule import delta, gamma, rho2, tau2
from genuq.score import LikelihoodModel, MiniBatch, normalize_weights, score_estimate
from genuq.trainer import (TREND_STOP, TrainConfig, TrainReport, load_checkpoint, save_checkpoint,
                           should_stop, train)
from genuq.tuner import SearchSpace, run_search, sample_trial

pytestmark = pytest.mark.slow

FLAT = LikelihoodModel.kernel(1e6)


def _ks_uniform(u):
    u = np.sort(u)
    i = np.arange(1, len(u) + 1)
    return max(np.max(i / len(u) - u), np.max(u - (i - 1) / len(u)))


def test_criterion_01_bimodal_end_to_end(tmp_path, verdict):
    t0 = time.perf_counter()
    assert main(["bimodal-demo", "--output", str(tmp_path / "demo"), "--seed", "0"]) == 0
    minutes = (time.perf_counter() - t0) / 60
    m = json.loads((tmp_path / "demo" / "metrics.json").read_text())
    fails = []
    if not m["r2"] >= 0.95:
        fails.append(f"R2 {m['r2']:.4f} < 0.95")
    for c in m["bimodal"]:
        for name, ok in c["pass"].items():
            if not ok:
                value = c["mode_error"] if name == "modes" else c[name]
                fails.append(f"y={c['y']} {name}={value}" if value is None else f"y={c['y']} {name}={value:.4f}")
    if minutes > 20:
        fails.append(f"runtime {minutes:.1f} min > 20")
    table = "; ".join(f"y={c['y']}: modes {c['modes'][0]:.3f}/{c['modes'][1]:.3f} split {c['sign_split']:.3f} "
                      f"origin {c['origin_mass']:.3f} W1 {c['w1']:.3f}" for c in m["bimodal"])
    ok = verdict(1, not fails, f"R2 {m['r2']:.4f}; {table}; {minutes:.1f} min"
                 + (f" | failing: {', '.join(fails)}" if fails else ""))
    assert ok, fails


def test_criterion_02_conjugate_gaussian(verdict):
    t0 = time.perf_counter()
    sigma_obs = 0.5
    prob = bench.gaussian_linear_problem(sigma_obs, 10_000, seed=0)
    sc = fit_scaler(prob.dataset)
    lik = LikelihoodModel.explicit(sigma_obs / float(sc.y_std[0]))
    tri = generate_labels(sc.apply(prob.noiseless()), lik, FlowConfig(n_labels=10_000, seed=0))
    model, _ = train(tri, Architecture(1, 1, 2, 64, 0.05), TrainConfig(max_epochs=200, seed=0), sc)
    rows, ok = [], True
    for i, y in enumerate((-1.0, 0.0, 2.0)):
        s = ensemble(model, [y], 2000, [0, i]).samples[:, 0]
        post = prob.posterior(y)
        mean, std = post.mean(), post.std()
        m_exact, v_exact = prob.closed_form(y)
        assert abs(mean - m_exact) < 1e-8 and abs(std - np.sqrt(v_exact)) < 1e-8
        dm, ds = abs(s.mean() - mean), abs(s.std() - std)
        ok &= dm <= 0.1 and ds <= 0.1
        rows.append(f"y={y}: |dmean| {dm:.3f} |dstd| {ds:.3f}")
    secs = time.perf_counter() - t0
    ok &= secs <= 300
    assert verdict(2, ok, "; ".join(rows) + f"; {secs:.0f} s")


def test_criterion_03_point_mass(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    cfg = FlowConfig(n_steps=100, t_min=1e-3)
    worst, monotone = 0.0, True
    for d in (1, 3, 8):
        for _ in range(100):
            x0 = rng.normal(size=(1, d)) * 2
            z = rng.normal(size=d)
            b = MiniBatch(x0, np.zeros((1, 1)))
            worst = max(worst, float(np.abs(integrate(z, [0.0], b, FLAT, cfg) - x0[0]).max()))
        # raw state against the closed-form trajectory (1 - t) x0 + sqrt(t) z at t_min
        exact = (1 - cfg.t_min) * x0[0] + np.sqrt(cfg.t_min) * z
        errs = [np.abs(integrate_state(z, [0.0], b, FLAT, FlowConfig(n_steps=n)) - exact).max()
                for n in (50, 100, 200, 400)]
        monotone &= all(a > b for a, b in zip(errs, errs[1:]))
    secs = time.perf_counter() - t0
    ok = worst <= 2e-2 and monotone and secs <= 10
    assert verdict(3, ok, f"max terminal error {worst:.2e}; raw-state residual monotone under step "
                          f"halving: {monotone}; {secs:.1f} s")


def test_criterion_04_schedule_identities(verdict):
    t0 = time.perf_counter()
    h = 1e-6
    ts = np.linspace(0.1, 0.9, 9)
    fd_delta = (np.log(1 - (ts + h)) - np.log(1 - (ts - h))) / (2 * h)
    fd_rho2 = ((ts + h) - (ts - h)) / (2 * h)
    err_delta = np.abs(fd_delta - delta(ts)).max()
    err_tau2 = np.abs(fd_rho2 - 2 * fd_delta * rho2(ts) - tau2(ts)).max()
    rng = np.random.default_rng(4)
    err_v = 0.0
    for _ in range(1000):
        t = rng.uniform(1e-3, 0.999)
        z, xb = rng.normal(size=3), rng.normal(size=3)
        s = -(z - gamma(t) * xb) / rho2(t)
        raw = delta(t) * z - 0.5 * tau2(t) * s
        err_v = max(err_v, float(np.max(np.abs(velocity(z, t, xb) - raw) / np.maximum(1, np.abs(raw)))))
    secs = time.perf_counter() - t0
    ok = err_delta <= 1e-6 and err_tau2 <= 1e-6 and err_v <= 1e-10 and secs <= 1
    assert verdict(4, ok, f"delta fd err {err_delta:.1e}; tau2 fd err {err_tau2:.1e}; "
                          f"velocity identity err {err_v:.1e}; {secs:.2f} s")


def test_criterion_05_score_properties(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    lik = LikelihoodModel.kernel(0.3)
    simplex = shift = point = hull = True
    for _ in range(200):
        lw = rng.normal(size=rng.integers(1, 40)) * 30
        w = normalize_weights(lw)
        simplex &= bool(np.all(w >= 0) and abs(w.sum() - 1) < 1e-12)
        shift &= np.allclose(normalize_weights(lw + rng.uniform(-1e3, 1e3)), w, atol=1e-12)
        t = rng.uniform(1e-3, 1)
        x0, z = rng.normal(size=(1, 3)), rng.normal(size=3) * 2
        s, xb = score_estimate(z, t, MiniBatch(x0, np.zeros((1, 1))), [0.0], lik)
        point &= np.array_equal(xb, x0[0]) and np.allclose(s, -(z - (1 - t) * x0[0]) / t, rtol=1e-14)
        b = MiniBatch(rng.normal(size=(20, 3)), rng.normal(size=(20, 1)))
        _, xb = score_estimate(rng.normal(size=3) * 3, t, b, [0.2], lik)
        hull &= bool(np.all(xb >= b.x.min(0) - 1e-12) and np.all(xb <= b.x.max(0) + 1e-12))
    x = rng.standard_normal((100_000, 1))
    b = MiniBatch(x, np.zeros((len(x), 1)))
    conv = 0.0
    for z in (-1.0, 0.0, 1.0):
        s, _ = score_estimate([z], 0.5, b, [0.0], LikelihoodModel.kernel(1.0))
        conv = max(conv, abs(s[0] + z / (0.25 + 0.5)))
    secs = time.perf_counter() - t0
    ok = simplex and shift and point and hull and conv <= 0.02 and secs <= 60
    assert verdict(5, ok, f"simplex {simplex}, shift {shift}, point mass {point}, convex hull {hull}, "
                          f"Gaussian convolution err {conv:.4f}; {secs:.1f} s")


def _grad_rel_error(arch, masks, rng, h=1e-6):
    m = init(arch, 0)
    for i in range(1, len(m.params), 2):
        m.params[i][:] = rng.normal(scale=0.1, size=m.params[i].shape)
    n = masks[0].shape[0] if masks else 4
    y, z, x = rng.normal(size=(n, arch.q)), rng.normal(size=(n, arch.d)), rng.normal(size=(n, arch.d))
    _, grads = mse_and_gradient(m, y, z, x, masks=masks)
    worst = 0.0
    for p, g in zip(m.params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            lp, _ = mse_and_gradient(m, y, z, x, masks=masks)
            flat[k] = old - h
            lm, _ = mse_and_gradient(m, y, z, x, masks=masks)
            flat[k] = old
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - gflat[k]) / max(abs(fd), abs(gflat[k]), 1e-3))
    return worst


def test_criterion_06_network_gradients(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst = 0.0
    for layers in (1, 2):
        for width in (32, 64, 128):
            for dropout in (0.0, 0.2):
                arch = Architecture(2, 3, layers, width, dropout)
                masks = dropout_masks(arch, 4, 1) if dropout else None
                worst = max(worst, _grad_rel_error(arch, masks, rng))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-5 and secs <= 60
    assert verdict(6, ok, f"max relative gradient error {worst:.2e} over 12 configurations; {secs:.1f} s")


def test_criterion_07_early_stopping(tmp_path, verdict):
    t0 = time.perf_counter()
    cfg = TrainConfig(patience=20)

    def first_stop(tr_fn, va_fn, n=400):
        tr, va = [], []
        for k in range(1, n + 1):
            tr.append(tr_fn(k))
            va.append(va_fn(k))
            stop, reason = should_stop(TrainReport(train_loss=tr, val_loss=va), cfg)
            if stop:
                return k, reason
        return None, None

    diverging = first_stop(lambda k: 1 / k, lambda k: 1 + k / 100)
    improving = first_stop(lambda k: 1 / k, lambda k: 2 / k)
    rng = np.random.default_rng(7)
    y, z = rng.standard_normal((400, 1)), rng.standard_normal((400, 1))
    tri = Triples(rng.standard_normal((400, 1)), y, z)
    path = tmp_path / "best.gquq"
    model, rep = train(tri, Architecture(1, 1, 2, 64), TrainConfig(lr=1e-2, max_epochs=60, batch_size=32),
                       checkpoint_path=path)
    saved = load_checkpoint(path)
    same = all(np.array_equal(a, b) for a, b in zip(saved.params, model.params))
    best_is_min = rep.best_val_loss == min(rep.val_loss[e - 1] for e in rep.checkpoint_epochs)
    secs = time.perf_counter() - t0
    ok = diverging == (24, TREND_STOP) and improving == (None, None) and same and best_is_min and secs <= 10
    assert verdict(7, ok, f"diverging series stops at epoch {diverging[0]}; improving series stops: "
                          f"{improving[0] is not None}; returned model = best checkpoint "
                          f"(epoch {rep.best_epoch} of {rep.epochs}): {same and best_is_min}; {secs:.1f} s")


def test_criterion_08_tuner_determinism(verdict):
    t0 = time.perf_counter()
    ds = bench.gaussian_linear_problem(0.3, 500, seed=8).dataset
    sc = fit_scaler(ds)
    tri = generate_labels(sc.apply(ds), LikelihoodModel.kernel(), FlowConfig(n_labels=1000, seed=8))
    space = SearchSpace(n_trials=10, max_epochs=15)
    a = run_search(tri, space, parallelism=1, seed=8, scaler=sc)
    b = run_search(tri, space, parallelism=8, seed=8, scaler=sc)
    same = json.dumps(a.to_dict(timings=False)) == json.dumps(b.to_dict(timings=False))
    big = SearchSpace(n_trials=10_000)
    trials = [sample_trial(big, i, 8) for i in range(big.n_trials)]
    lr = np.array([t.lr for t in trials])
    dr = np.array([t.dropout_rate for t in trials])
    in_range = lr.min() >= 1e-4 and lr.max() <= 1e-2 and dr.min() >= 0.01 and dr.max() <= 0.3
    ks_lr = _ks_uniform((np.log(lr) - np.log(1e-4)) / (np.log(1e-2) - np.log(1e-4)))
    ks_dr = _ks_uniform((dr - 0.01) / 0.29)
    secs = time.perf_counter() - t0
    ok = same and a.best_trial_id == b.best_trial_id and in_range and ks_lr < 0.02 and ks_dr < 0.02 \
        and secs <= 600
    assert verdict(8, ok, f"parallelism 1 vs 8 identical JSON: {same}, best {a.best_trial_id}/{b.best_trial_id}; "
                          f"ranges ok: {in_range}; KS lr {ks_lr:.4f}, dropout {ks_dr:.4f}; {secs:.0f} s")


def test_criterion_09_reproducibility(tmp_path, verdict):
    small = ["--set", "flow.n_labels=2000", "--set", "search.n_trials=2", "--set", "search.max_epochs=20",
             "--set", "eval.K=500"]
    for run in ("a", "b"):
        assert main(["--quiet", "bimodal-demo", "--output", str(tmp_path / run), "--seed", "5"] + small) == 0
    metrics_same = (tmp_path / "a" / "metrics.json").read_bytes() == (tmp_path / "b" / "metrics.json").read_bytes()

    _, prep, clean = pipeline.bimodal_datasets(5)
    lik = LikelihoodModel.explicit(pipeline.BIMODAL_SIGMA / float(prep.scaler.y_std[0]))
    cfg = FlowConfig(batch_size=None, loglik_cutoff=40.0, n_labels=3000, chunk_size=256, seed=5)
    one = pipeline.labels(prep, lik, cfg, 1, clean)
    four = pipeline.labels(prep, lik, cfg, 4, clean)
    one.to_csv(tmp_path / "one.csv")
    four.to_csv(tmp_path / "four.csv")
    labels_same = (tmp_path / "one.csv").read_bytes() == (tmp_path / "four.csv").read_bytes()

    ck = tmp_path / "a" / pipeline.CHECKPOINT
    model = load_checkpoint(ck)
    save_checkpoint(model, tmp_path / "copy.gquq")
    bitwise = ck.read_bytes() == (tmp_path / "copy.gquq").read_bytes()
    again = load_checkpoint(tmp_path / "copy.gquq")
    ens_same = np.array_equal(ensemble(model, [1.0], 500, 3).samples, ensemble(again, [1.0], 500, 3).samples)
    ok = metrics_same and labels_same and bitwise and ens_same
    assert verdict(9, ok, f"rerun metrics.json identical: {metrics_same}; labels workers 1 vs 4 identical: "
                          f"{labels_same}; checkpoint round trip bitwise: {bitwise}, ensembles identical: "
                          f"{ens_same}")


def _smooth_fields(rng, n, h=64, w=128, modes=6):
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    out = np.zeros((n, h * w))
    for i in range(modes):
        for j in range(modes):
            basis = (np.cos(np.pi * i * yy) * np.cos(np.pi * j * xx)).ravel()
            out += np.outer(rng.standard_normal(n) / (1 + i + j) ** 2, basis)
    return out


def test_criterion_10_nonlinear_and_reduction(tmp_path, verdict):
    t0 = time.perf_counter()
    prob = bench.nonlinear_problem(1000, seed=0)
    names_x = [f"p{i}" for i in range(8)]
    names_y = [f"o{i}" for i in range(5)]
    write_matrix_csv(tmp_path / "data.csv", names_x + names_y, np.hstack([prob.dataset.x, prob.dataset.y]))
    (tmp_path / "run.toml").write_text(
        f'[data]\npath = "data.csv"\nx_cols = {json.dumps(names_x)}\ny_cols = {json.dumps(names_y)}\n')
    assert main(["--quiet", "tune", str(tmp_path / "run.toml"), "--output", str(tmp_path / "out")]) == 0
    search = json.loads((tmp_path / "out" / "search.json").read_text())
    r2 = search["trials"][search["best_trial_id"]]["val_r2"]

    rng = np.random.default_rng(10)
    X = _smooth_fields(rng, 500)
    r = reduce.fit(X, 20)
    ortho = np.abs(r.basis.T @ r.basis - np.eye(20)).max()
    e = r.encode(X[:50])
    idem = np.abs(r.encode(r.decode(e)) - e).max()
    ratios_ok = bool(np.all(np.diff(r.explained_ratio) <= 0) and np.all((r.explained_ratio >= 0) & (r.explained_ratio <= 1)))
    v = X[0] + rng.standard_normal(X.shape[1]) * 0.01
    proj = np.linalg.norm(v - r.decode(r.encode(v)))
    optimal = all(proj <= np.linalg.norm(v - r.decode(rng.standard_normal(20))) for _ in range(100))
    minutes = (time.perf_counter() - t0) / 60
    pca_ok = ortho <= 1e-10 and idem <= 1e-10 and ratios_ok and optimal
    ok = r2 >= 0.7 and pca_ok and minutes <= 15
    assert verdict(10, ok, f"nonlinear 8->5 best validation R2 {r2:.4f} (bar 0.7); PCA D=8192 k=20: "
                           f"orthonormality {ortho:.1e}, idempotence {idem:.1e}, ratios ok {ratios_ok}, "
                           f"projection optimal {optimal}; {minutes:.1f} min")
