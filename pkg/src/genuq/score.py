"""Training-free mini-batch Monte Carlo score estimator.

The score of the diffused conditional density at ``(z_t, t)`` is a weighted sum
of Gaussian point-mass scores centred on ``gamma(t) * x_n`` for the samples of a
mini-batch.  Weights are the normalised product of the forward Gaussian kernel
``Q_{t|0}(z_t | x_n)`` and the likelihood ``p(y* | x_n)``.  The prior factor
``p(x_n)`` is dropped: the batch is drawn from the prior samples themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import gamma as _gamma, rho2 as _rho2

EXPLICIT = "explicit_gaussian"
KERNEL = "observation_kernel"


def silverman_bandwidth(q: int, n: int) -> float:
    """Silverman's rule for unit-variance data in ``q`` dimensions."""
    return (4.0 / (q + 2)) ** (1.0 / (q + 4)) * n ** (-1.0 / (q + 4))


@dataclass(frozen=True)
class LikelihoodModel:
    """How ``log p(y* | x_n)`` is evaluated from the stored ``y_n``.

    ``explicit_gaussian`` treats ``y_n`` as the noiseless forward output of
    ``x_n`` and uses Gaussian noise of std ``sigma``; ``observation_kernel``
    uses a Gaussian kernel of width ``bandwidth`` around the observed ``y_n``.
    Both widths are in standardized-y units, scalar or one per y column.
    """

    mode: str = KERNEL
    sigma: float | tuple[float, ...] | None = None
    bandwidth: float | tuple[float, ...] | None = None

    def __post_init__(self):
        if self.mode == EXPLICIT:
            if self.sigma is None or np.any(np.asarray(self.sigma) <= 0):
                raise ValueError("explicit_gaussian likelihood needs sigma > 0")
        elif self.mode == KERNEL:
            if self.bandwidth is not None and np.any(np.asarray(self.bandwidth) <= 0):
                raise ValueError("observation_kernel bandwidth must be > 0")
        else:
            raise ValueError(f"unknown likelihood mode {self.mode!r}")

    @classmethod
    def explicit(cls, sigma) -> "LikelihoodModel":
        return cls(EXPLICIT, sigma=_as_param(sigma))

    @classmethod
    def kernel(cls, bandwidth=None) -> "LikelihoodModel":
        return cls(KERNEL, bandwidth=None if bandwidth is None else _as_param(bandwidth))

    def width(self, q: int, n: int) -> np.ndarray:
        """Effective per-dimension width; Silverman default for the kernel mode."""
        if self.mode == EXPLICIT:
            w = self.sigma
        elif self.bandwidth is None:
            w = silverman_bandwidth(q, n)
        else:
            w = self.bandwidth
        return np.broadcast_to(np.asarray(w, dtype=np.float64), (q,))

    def log_likelihood(self, y_star, y_batch, n_ref: int | None = None) -> np.ndarray:
        """``log p(y* | x_n)`` up to a constant, for each row of ``y_batch``.

        ``n_ref`` is the sample count fed to Silverman's rule (defaults to the
        batch length).
        """
        y_batch = np.atleast_2d(np.asarray(y_batch, dtype=np.float64))
        y_star = np.asarray(y_star, dtype=np.float64).reshape(-1)
        if y_star.shape[0] != y_batch.shape[1]:
            raise ValueError(
                f"y_star has dimension {y_star.shape[0]}, batch y has {y_batch.shape[1]}")
        h = self.width(y_batch.shape[1], n_ref or y_batch.shape[0])
        r = (y_star - y_batch) / h
        return -0.5 * np.einsum("nq,nq->n", r, r)


def _as_param(v):
    a = np.asarray(v, dtype=np.float64)
    return float(a) if a.ndim == 0 else tuple(float(x) for x in a.reshape(-1))


@dataclass(frozen=True)
class MiniBatch:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        if x.shape[0] != y.shape[0] or x.shape[0] < 1:
            raise ValueError("mini-batch x and y need the same, nonzero row count")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.x.shape[0]


def _check_t(t):
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t must lie in (0, 1], got {t}")


def log_weights(z_t, t: float, batch: MiniBatch, y_star, lik: LikelihoodModel,
                n_ref: int | None = None) -> np.ndarray:
    """Unnormalized log-weights, one per batch sample."""
    _check_t(t)
    z_t = np.asarray(z_t, dtype=np.float64).reshape(-1)
    if z_t.shape[0] != batch.x.shape[1]:
        raise ValueError(f"z_t has dimension {z_t.shape[0]}, batch x has {batch.x.shape[1]}")
    diff = z_t - _gamma(t) * batch.x
    log_q = -np.einsum("nd,nd->n", diff, diff) / (2.0 * _rho2(t))
    return log_q + lik.log_likelihood(y_star, batch.y, n_ref)


def normalize_weights(log_w) -> np.ndarray:
    log_w = np.asarray(log_w, dtype=np.float64)
    if log_w.size == 0:
        raise ValueError("no weights to normalize")
    top = log_w.max()
    if not np.isfinite(top):
        raise FloatingPointError(
            "all log-weights are -inf or non-finite; widen the likelihood width")
    w = np.exp(log_w - top)
    return w / w.sum()


def score_estimate(z_t, t: float, batch: MiniBatch, y_star, lik: LikelihoodModel,
                   n_ref: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(score, x_bar)`` with ``score = -(z_t - gamma x_bar) / rho2``."""
    w = normalize_weights(log_weights(z_t, t, batch, y_star, lik, n_ref))
    x_bar = w @ batch.x
    z_t = np.asarray(z_t, dtype=np.float64).reshape(-1)
    return -(z_t - _gamma(t) * x_bar) / _rho2(t), x_bar


def batched_weighted_mean(z, t: float, xb: np.ndarray, loglik: np.ndarray,
                          xx: np.ndarray | None = None) -> np.ndarray:
    """Weighted batch mean ``x_bar`` for many trajectories at once.

    z: (B, d) states; xb: (B, N, d) per-trajectory batches; loglik: (B, N)
    precomputed likelihood terms (``-inf`` marks padding); xx: optional cached
    squared norms of ``xb`` rows.  The ``|z|^2`` term is constant per row and
    cancels in the normalisation, so it is never formed.
    """
    if xx is None:
        xx = np.einsum("bnd,bnd->bn", xb, xb)
    g = 1.0 - t
    zx = np.einsum("bd,bnd->bn", z, xb)
    lw = (2.0 * g * zx - g * g * xx) / (2.0 * t)
    lw += loglik
    top = lw.max(axis=1, keepdims=True)
    if not np.isfinite(top).all():
        raise FloatingPointError("all log-weights vanished for some trajectory")
    lw -= top
    w = np.exp(lw, out=lw)
    w /= w.sum(axis=1, keepdims=True)
    return np.einsum("bn,bnd->bd", w, xb)
