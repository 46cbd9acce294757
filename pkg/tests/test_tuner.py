import json

import numpy as np
import pytest

from genuq.flow import Triples
from genuq.tuner import (FAILED, OK, SearchFailed, SearchSpace, default_workers, run_search,
                         run_trial, sample_trial)
from genuq.trainer import TrainConfig


def _ks_uniform(u):
    """Kolmogorov-Smirnov statistic of a sample against U(0, 1)."""
    u = np.sort(u)
    n = len(u)
    i = np.arange(1, n + 1)
    return max(np.max(i / n - u), np.max(u - (i - 1) / n))


@pytest.fixture(scope="module")
def triples():
    rng = np.random.default_rng(0)
    y, z = rng.standard_normal((300, 1)), rng.standard_normal((300, 1))
    return Triples(np.tanh(y) + 0.1 * z, y, z)


def test_grid_order_default():
    g = SearchSpace().grid()
    assert len(g) == 12
    assert g[0] == (1, 32, 32)
    assert g[1] == (1, 32, 64) and g[2] == (1, 64, 32) and g[-1] == (2, 128, 64)


def test_trial_zero_and_wraparound():
    space = SearchSpace(n_trials=30)
    t0 = sample_trial(space, 0, 0)
    assert (t0.hidden_layers, t0.hidden_width, t0.batch_size) == (1, 32, 32)
    t12 = sample_trial(space, 12, 0)
    assert (t12.hidden_layers, t12.hidden_width, t12.batch_size) == (1, 32, 32)
    assert (t12.lr, t12.seed) != (t0.lr, t0.seed)


def test_sample_deterministic():
    assert sample_trial(SearchSpace(), 7, 5) == sample_trial(SearchSpace(), 7, 5)


@pytest.mark.parametrize("i", [-1, 10])
def test_index_out_of_range(i):
    with pytest.raises(IndexError):
        sample_trial(SearchSpace(), i, 0)


def test_lr_dropout_distribution():
    space = SearchSpace(n_trials=10_000)
    trials = [sample_trial(space, i, 0) for i in range(space.n_trials)]
    lr = np.array([t.lr for t in trials])
    dr = np.array([t.dropout_rate for t in trials])
    assert lr.min() >= 1e-4 and lr.max() <= 1e-2
    assert dr.min() >= 0.01 and dr.max() <= 0.3
    assert _ks_uniform((np.log(lr) - np.log(1e-4)) / (np.log(1e-2) - np.log(1e-4))) < 0.02
    assert _ks_uniform((dr - 0.01) / 0.29) < 0.02


@pytest.mark.parametrize("kw", [dict(widths=()), dict(depths=(0,)), dict(lr_range=(1e-2, 1e-4)),
                                dict(dropout_range=(0.1, 0.6)), dict(n_trials=0)])
def test_space_validation(kw):
    with pytest.raises(ValueError):
        SearchSpace(**kw)


def test_default_workers(monkeypatch):
    monkeypatch.setenv("GENAI4UQ_THREADS", "64")
    assert default_workers(10) == 10
    monkeypatch.setenv("GENAI4UQ_THREADS", "3")
    assert default_workers(10) == 3


def _dump(res):
    return json.dumps(res.to_dict(timings=False), sort_keys=True)


def test_parallel_matches_serial(triples):
    space = SearchSpace(n_trials=4, max_epochs=4)
    a = run_search(triples, space, parallelism=1, seed=2)
    b = run_search(triples, space, parallelism=4, seed=2)
    assert _dump(a) == _dump(b)
    assert a.best_trial_id == b.best_trial_id
    assert [t.trial_id for t in a.trials] == list(range(4))


def test_best_is_min_val_loss(triples):
    res = run_search(triples, SearchSpace(n_trials=5, max_epochs=4), parallelism=1, seed=1)
    losses = [t.best_val_loss for t in res.trials]
    assert res.best_trial_id == int(np.argmin(losses))
    # dropping any non-best trial leaves the choice unchanged
    for drop in range(5):
        if drop != res.best_trial_id:
            rest = [t for t in res.trials if t.trial_id != drop]
            assert min(rest, key=lambda t: (t.best_val_loss, t.trial_id)).trial_id == res.best_trial_id


def test_trial_standalone_reproduces(triples):
    space = SearchSpace(n_trials=3, max_epochs=3)
    res = run_search(triples, space, parallelism=1, seed=9)
    alone, _ = run_trial(triples, sample_trial(space, 2, 9), TrainConfig(), space.max_epochs)
    assert alone.to_dict(timings=False) == res.trials[2].to_dict(timings=False)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_poisoned_trial_isolated(triples):
    res = run_search(triples, SearchSpace(n_trials=3, max_epochs=3), parallelism=1, seed=0,
                     overrides={1: {"lr": 1e300}})
    assert [t.status for t in res.trials] == [OK, FAILED, OK]
    assert res.trials[1].error
    assert res.best_trial_id != 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_all_failed(triples):
    with pytest.raises(SearchFailed, match="trial 0"):
        run_search(triples, SearchSpace(n_trials=2, max_epochs=2), parallelism=1,
                   overrides={0: {"lr": 1e300}, 1: {"lr": 1e300}})
