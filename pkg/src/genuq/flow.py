"""Reverse-time probability-flow ODE and labeled-triple generation.

Each reference draw ``z ~ N(0, I)`` is transported from t=1 down to ``t_min``
with classical RK4 under the Monte Carlo score of :mod:`genuq.score`.  The
terminal estimate is the weighted batch mean at ``t_min`` (one-step
denoising), which removes the residual ``sqrt(t_min) * z`` noise of the raw
state.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .dataset import Dataset, DataError, read_matrix_csv, write_matrix_csv
from .score import LikelihoodModel, MiniBatch, batched_weighted_mean

log = logging.getLogger(__name__)

# RNG stream tag for per-trajectory draws, keeps them apart from tuner streams
_STREAM = 1
# trajectories integrated together inside a chunk
_BLOCK = 64


@dataclass(frozen=True)
class FlowConfig:
    n_steps: int = 100
    t_min: float = 1e-3
    batch_size: int | None = 256  # None: every training row
    n_labels: int = 20000
    seed: int = 0
    # drop batch rows whose log-likelihood is this far below the best row
    loglik_cutoff: float | None = None
    denoise: bool = True
    chunk_size: int = 1024

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError("n_steps must be >= 2")
        if not 0.0 < self.t_min < 0.5:
            raise ValueError("t_min must lie in (0, 0.5)")
        if self.n_labels < 1:
            raise ValueError("n_labels must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loglik_cutoff is not None and self.loglik_cutoff <= 0:
            raise ValueError("loglik_cutoff must be > 0")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")


class LabeledTriple(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray


@dataclass
class Triples:
    """M labeled (x, y, z) records in standardized space, ordered by index."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    index: np.ndarray | None = None
    failures: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        self.z = np.atleast_2d(np.asarray(self.z, dtype=np.float64))
        if not (len(self.x) == len(self.y) == len(self.z)):
            raise ValueError("x, y, z row counts differ")
        if self.x.shape[1] != self.z.shape[1]:
            raise ValueError("x and z must share dimension d")
        if self.index is None:
            self.index = np.arange(len(self.x))

    def __len__(self):
        return len(self.x)

    def __getitem__(self, i) -> LabeledTriple:
        return LabeledTriple(self.x[i], self.y[i], self.z[i])

    def __iter__(self) -> Iterator[LabeledTriple]:
        return (self[i] for i in range(len(self)))

    @property
    def d(self):
        return self.x.shape[1]

    @property
    def q(self):
        return self.y.shape[1]

    def take(self, idx) -> "Triples":
        idx = np.asarray(idx, dtype=np.intp)
        return Triples(self.x[idx], self.y[idx], self.z[idx], self.index[idx])

    def header(self) -> list[str]:
        return ([f"x_{i}" for i in range(self.d)] + [f"y_{i}" for i in range(self.q)]
                + [f"z_{i}" for i in range(self.d)])

    def to_csv(self, path) -> None:
        write_matrix_csv(path, self.header(), np.hstack([self.x, self.y, self.z]))

    @classmethod
    def from_csv(cls, path) -> "Triples":
        header, data = read_matrix_csv(path)
        d = sum(h.startswith("x_") for h in header)
        q = sum(h.startswith("y_") for h in header)
        if d == 0 or q == 0 or len(header) != 2 * d + q:
            raise DataError(f"{path}: not a labeled-triple CSV (columns x_*, y_*, z_*)")
        return cls(data[:, :d], data[:, d:d + q], data[:, d + q:])


def velocity(z_t, t: float, x_bar, t_min: float = 1e-3):
    """``dZ/dt`` of the flow with the Monte Carlo score substituted.

    ``delta(t) z - tau2(t)/2 * score`` collapses to ``(z - (1+t) x_bar) / (2t)``
    when ``score = -(z - gamma(t) x_bar) / rho2(t)``.
    """
    if t < t_min or t > 1.0:
        raise ValueError(f"t={t} outside [{t_min}, 1]")
    return (np.asarray(z_t) - (1.0 + t) * np.asarray(x_bar)) / (2.0 * t)


def _rk4(z1, xb, loglik, n_steps, t_min, denoise):
    """Integrate a block of trajectories (B, d) from t=1 to t_min."""
    ts = np.linspace(1.0, t_min, n_steps + 1)
    z = np.array(z1, dtype=np.float64)
    xx = np.einsum("bnd,bnd->bn", xb, xb)

    def f(z, t):
        return (z - (1.0 + t) * batched_weighted_mean(z, t, xb, loglik, xx)) / (2.0 * t)

    with np.errstate(over="raise", invalid="raise", divide="raise", under="ignore"):
        for i in range(n_steps):
            t, h = ts[i], ts[i + 1] - ts[i]
            k1 = f(z, t)
            k2 = f(z + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(z + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(z + h * k3, ts[i + 1])
            z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(z).all():
            raise FloatingPointError("non-finite ODE state")
        if denoise:
            return batched_weighted_mean(z, t_min, xb, loglik, xx)
    return z


def integrate(z1, y_star, batch: MiniBatch, lik: LikelihoodModel, cfg: FlowConfig,
              n_ref: int | None = None) -> np.ndarray:
    """Transport one reference draw to its terminal estimate of ``x | y_star``."""
    z1 = np.asarray(z1, dtype=np.float64).reshape(1, -1)
    if not np.isfinite(z1).all():
        raise ValueError("z1 must be finite")
    if z1.shape[1] != batch.x.shape[1]:
        raise ValueError(f"z1 has dimension {z1.shape[1]}, batch x has {batch.x.shape[1]}")
    ll = lik.log_likelihood(y_star, batch.y, n_ref)
    keep = _kept(ll, cfg.loglik_cutoff)
    out = _rk4(z1, batch.x[keep][None], ll[keep][None], cfg.n_steps, cfg.t_min, cfg.denoise)
    return out[0]


def integrate_state(z1, y_star, batch: MiniBatch, lik: LikelihoodModel, cfg: FlowConfig,
                    n_ref: int | None = None) -> np.ndarray:
    """Raw ODE state at ``t_min`` (no final denoising)."""
    raw = FlowConfig(cfg.n_steps, cfg.t_min, cfg.batch_size, cfg.n_labels, cfg.seed,
                     cfg.loglik_cutoff, False, cfg.chunk_size)
    return integrate(z1, y_star, batch, lik, raw, n_ref)


def _kept(ll, cutoff):
    if cutoff is None:
        return np.arange(len(ll))
    return np.flatnonzero(ll >= ll.max() - cutoff)


def trajectory_draws(m: int, n_rows: int, d: int, cfg: FlowConfig):
    """(row index of y_m, z_m, mini-batch row indices) for trajectory ``m``."""
    rng = np.random.default_rng([cfg.seed, _STREAM, m])
    j = int(rng.integers(n_rows))
    z = rng.standard_normal(d)
    n = n_rows if cfg.batch_size is None else min(cfg.batch_size, n_rows)
    if n >= n_rows:
        rows = np.arange(n_rows)
    else:
        rows = np.sort(rng.choice(n_rows, size=n, replace=False))
    return j, z, rows


# worker-process state, set once per worker by _init_worker
_W: dict = {}


def _init_worker(x, y, lik, cfg):
    _W.update(x=x, y=y, lik=lik, cfg=cfg)


def _draw(ms, x, y, lik, cfg):
    n_rows, d = x.shape
    js, zs, idx, lls = [], [], [], []
    for m in ms:
        j, z, rows = trajectory_draws(m, n_rows, d, cfg)
        ll = lik.log_likelihood(y[j], y[rows], len(rows))
        keep = _kept(ll, cfg.loglik_cutoff)
        js.append(j)
        zs.append(z)
        idx.append(rows[keep])
        lls.append(ll[keep])
    return np.array(js), np.array(zs), idx, lls


def _pad(idx, lls):
    width = max(len(r) for r in idx)
    pad_idx = np.zeros((len(idx), width), dtype=np.int64)
    pad_ll = np.full((len(idx), width), -np.inf)
    for b, (r, ll) in enumerate(zip(idx, lls)):
        pad_idx[b, :len(r)] = r
        pad_ll[b, :len(r)] = ll
    return pad_idx, pad_ll


def _run_block(zs, x, idx, lls, cfg):
    pad_idx, pad_ll = _pad(idx, lls)
    try:
        return _rk4(zs, x[pad_idx], pad_ll, cfg.n_steps, cfg.t_min, cfg.denoise), []
    except FloatingPointError:
        pass
    # isolate the failing trajectories one by one
    out = np.full_like(zs, np.nan)
    failures = []
    for b in range(len(zs)):
        try:
            out[b] = _rk4(zs[b:b + 1], x[pad_idx[b:b + 1]], pad_ll[b:b + 1],
                          cfg.n_steps, cfg.t_min, cfg.denoise)[0]
        except FloatingPointError as exc:
            failures.append((b, str(exc)))
    return out, failures


def _run_chunk(ms, x=None, y=None, lik=None, cfg=None):
    """Integrate one fixed chunk of trajectory indices.

    Trajectories are grouped into blocks of similar kept-batch size to limit
    padding; grouping depends only on the chunk contents.
    """
    if x is None:
        x, y, lik, cfg = _W["x"], _W["y"], _W["lik"], _W["cfg"]
    js, zs, idx, lls = _draw(ms, x, y, lik, cfg)
    order = np.argsort([len(r) for r in idx], kind="stable")
    out = np.empty_like(zs)
    failures = []
    for s in range(0, len(order), _BLOCK):
        sel = order[s:s + _BLOCK]
        res, fails = _run_block(zs[sel], x, [idx[i] for i in sel], [lls[i] for i in sel], cfg)
        out[sel] = res
        failures += [(int(ms[sel[b]]), msg) for b, msg in fails]
    return js, zs, out, failures


def generate_labels(ds_train: Dataset, lik: LikelihoodModel, cfg: FlowConfig,
                    workers: int = 1, max_failure_rate: float = 0.01) -> Triples:
    """Produce ``cfg.n_labels`` triples from standardized training data.

    Trajectory ``m`` draws its conditioning row, reference variable and
    mini-batch from a stream keyed by ``(cfg.seed, m)``, and chunk boundaries
    depend only on ``m``, so the output does not depend on ``workers``.
    """
    x, y = np.asarray(ds_train.x), np.asarray(ds_train.y)
    M = cfg.n_labels
    chunks = [list(range(s, min(s + cfg.chunk_size, M))) for s in range(0, M, cfg.chunk_size)]
    if workers <= 1 or len(chunks) == 1:
        results = [_run_chunk(c, x, y, lik, cfg) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(x, y, lik, cfg)) as pool:
            results = list(pool.map(_run_chunk, chunks))

    js = np.concatenate([r[0] for r in results])
    zs = np.concatenate([r[1] for r in results])
    xs = np.concatenate([r[2] for r in results])
    failures = [f for r in results for f in r[3]]
    for m, msg in failures:
        log.warning("trajectory %d failed: %s", m, msg)
    if len(failures) > max_failure_rate * M:
        raise FloatingPointError(
            f"{len(failures)} of {M} trajectories failed (first: m={failures[0][0]}: "
            f"{failures[0][1]})")
    ok = np.isfinite(xs).all(axis=1)
    return Triples(xs[ok], y[js[ok]], zs[ok], np.flatnonzero(ok), failures)
