"""Synthetic benchmark problems with quadrature-normalised reference posteriors.

These oracles share no code with the generative pipeline: densities are
written out directly and normalised by adaptive Simpson quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import Dataset


def adaptive_simpson(f: Callable, a: float, b: float, tol: float = 1e-10,
                     panels: int = 1024, max_depth: int = 50) -> float:
    """Adaptive Simpson integral of vectorized ``f`` over [a, b].

    The interval is first cut into ``panels`` equal pieces so narrow peaks are
    seen by the initial estimate.
    """
    edges = np.linspace(a, b, panels + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    fa, fm, fb = f(edges[:-1]), f(mids), f(edges[1:])
    h = edges[1:] - edges[:-1]
    whole = h / 6.0 * (fa + 4 * fm + fb)
    stack = [(edges[i], edges[i + 1], fa[i], fm[i], fb[i], whole[i], tol / panels, 0)
             for i in range(panels)]
    total = 0.0
    while stack:
        lo, hi, flo, fmid, fhi, s, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        fl, fr = f(np.array([0.5 * (lo + mid), 0.5 * (mid + hi)]))
        left = (mid - lo) / 6.0 * (flo + 4 * fl + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4 * fr + fhi)
        err = left + right - s
        if depth >= max_depth or abs(err) <= 15 * eps:
            total += left + right + err / 15.0
        else:
            stack.append((lo, mid, flo, fl, fmid, left, eps / 2, depth + 1))
            stack.append((mid, hi, fmid, fr, fhi, right, eps / 2, depth + 1))
    return float(total)


@dataclass
class AnalyticPosterior:
    """Reference posterior density over a bounded support.

    ``log_density`` is unnormalised and vectorized; it is shifted by its
    maximum on a dense grid before exponentiation.
    """

    problem: str
    log_density: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float]
    grid_size: int = 400_001
    tol: float = 1e-10
    _shift: float = field(init=False, repr=False)
    _z: float = field(init=False, repr=False)
    _grid: np.ndarray = field(init=False, repr=False)
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a, b = self.support
        self._grid = np.linspace(a, b, self.grid_size)
        lg = self.log_density(self._grid)
        self._shift = float(np.max(lg))
        self._z = adaptive_simpson(self._unnorm, a, b, self.tol)
        pdf = self.pdf(self._grid)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(self._grid))])
        self._cdf = cdf / cdf[-1]

    def _unnorm(self, x):
        return np.exp(self.log_density(np.asarray(x, dtype=np.float64)) - self._shift)

    def pdf(self, x):
        return self._unnorm(x) / self._z

    def integral(self, g: Callable | None = None, a=None, b=None) -> float:
        """Quadrature of ``g(x) * pdf(x)`` over [a, b] (default: full support)."""
        lo, hi = self.support
        a = lo if a is None else max(a, lo)
        b = hi if b is None else min(b, hi)
        if b <= a:
            return 0.0
        fn = self.pdf if g is None else (lambda x: g(x) * self.pdf(x))
        return adaptive_simpson(fn, a, b, self.tol)

    def mean(self) -> float:
        return self.integral(lambda x: x)

    def std(self) -> float:
        m = self.mean()
        return float(np.sqrt(self.integral(lambda x: (x - m) ** 2)))

    def mass(self, a=None, b=None) -> float:
        return self.integral(None, a, b)

    def sign_split(self) -> float:
        """Probability mass on x < 0."""
        return self.mass(None, 0.0)

    def cdf(self, x):
        return np.interp(x, self._grid, self._cdf)

    def quantile(self, p):
        return np.interp(p, self._cdf, self._grid)

    def modes(self, rel_height: float = 1e-3) -> np.ndarray:
        """Local maxima of the density on the grid, above ``rel_height`` of the peak."""
        p = self.pdf(self._grid)
        inner = (p[1:-1] > p[:-2]) & (p[1:-1] >= p[2:]) & (p[1:-1] > rel_height * p.max())
        return self._grid[1:-1][inner]

    def wasserstein1(self, samples) -> float:
        """W1 between an empirical sample and this density (1-d)."""
        s = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
        lo = min(self.support[0], s[0])
        hi = max(self.support[1], s[-1])
        x = np.linspace(lo, hi, self.grid_size)
        emp = np.searchsorted(s, x, side="right") / len(s)
        return float(np.trapezoid(np.abs(emp - self.cdf(x)), x))


def bimodal_reference(y: float, sigma: float) -> AnalyticPosterior:
    """Posterior of x ~ U[-2, 2] given y = x**2 + N(0, sigma**2)."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    return AnalyticPosterior("bimodal", lambda x: -((y - x**2) ** 2) / (2.0 * sigma**2), (-2.0, 2.0))


@dataclass
class GaussianLinearProblem:
    """x ~ N(0, 1), y = x + N(0, sigma_obs**2)."""

    sigma_obs: float
    dataset: Dataset

    def forward(self, x):
        return np.asarray(x, dtype=np.float64)

    def noiseless(self) -> Dataset:
        """The same parameter draws paired with their forward-model outputs."""
        return Dataset(self.dataset.x, self.forward(self.dataset.x), self.dataset.x_names,
                       self.dataset.y_names)

    def closed_form(self, y: float) -> tuple[float, float]:
        """(mean, variance) of the conjugate posterior."""
        s2 = self.sigma_obs**2
        return y / (1.0 + s2), s2 / (1.0 + s2)

    def posterior(self, y: float) -> AnalyticPosterior:
        s2 = self.sigma_obs**2
        return AnalyticPosterior(
            "gaussian_linear", lambda x: -0.5 * x**2 - (y - x) ** 2 / (2.0 * s2), (-12.0, 12.0),
            grid_size=200_001)


def gaussian_linear_problem(sigma_obs: float, n: int, seed: int = 0) -> GaussianLinearProblem:
    if sigma_obs <= 0:
        raise ValueError("sigma_obs must be > 0")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 1))
    y = x + sigma_obs * rng.standard_normal((n, 1))
    return GaussianLinearProblem(sigma_obs, Dataset(x, y, ("x0",), ("y0",)))


@dataclass
class NonlinearProblem:
    """Eight parameters in [0, 1] observed through five smooth nonlinear outputs.

    Every output mixes several parameters; the observation noise is small
    relative to the output spread.
    """

    dataset: Dataset
    noise: float

    @staticmethod
    def forward(x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        u = 2.0 * x - 1.0
        return np.stack([
            np.sin(np.pi * u[:, 0] / 2) + 0.5 * u[:, 1],
            u[:, 1] ** 2 + 0.8 * u[:, 2] - 0.3 * u[:, 3],
            np.tanh(2.0 * u[:, 3]) + 0.4 * u[:, 4] * u[:, 0],
            u[:, 5] + 0.5 * np.cos(np.pi * u[:, 6] / 2) + 0.3 * u[:, 2],
            np.exp(0.5 * u[:, 7]) + 0.4 * u[:, 6] - 0.2 * u[:, 4],
        ], axis=1)


def nonlinear_problem(n: int = 1000, noise: float = 0.02, seed: int = 0) -> NonlinearProblem:
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, 8))
    y = NonlinearProblem.forward(x) + noise * rng.standard_normal((n, 5))
    return NonlinearProblem(Dataset(x, y), noise)


def sample_modes(samples, bw: float = 0.05) -> tuple[float | None, float | None]:
    """Density peak of a 1-d sample on each side of zero (Gaussian KDE).

    ``bw`` is the kernel width in sample units; a side holding fewer than two
    draws reports None.
    """
    s = np.asarray(samples, dtype=np.float64).reshape(-1)
    out = []
    for side in (s[s < 0], s[s >= 0]):
        if len(side) < 2:
            out.append(None)
            continue
        grid = np.linspace(side.min(), side.max(), 2001)
        dens = np.exp(-0.5 * ((grid[:, None] - side[None, :]) / bw) ** 2).sum(axis=1)
        out.append(float(grid[np.argmax(dens)]))
    return out[0], out[1]
