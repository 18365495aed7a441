"""Analytic ground truth for the backorder inventory model.

All value functions are for order-up-to policies ``u = [L - x]_+`` with cost
``c u + psi(x + u, D)`` and ``psi(y, d) = b [d - y]_+ + h [y - d]_+``.
For ``x <= L`` every such policy has the closed form

    V_L(x) = -c x + (gamma c E[D] + (1 - gamma) c L + E psi(L, D)) / (1 - gamma).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy import integrate, stats

from .bayes import ConjugateFamily, DomainError, PosteriorState


@dataclass(frozen=True)
class InventoryParams:
    c: float = 1.0
    h: float = 2.0
    b: float = 3.0
    gamma: float = 0.6

    def __post_init__(self):
        if not (self.b > self.c > 0 and self.h > 0 and 0 < self.gamma < 1):
            raise DomainError(f"need b > c > 0, h > 0, 0 < gamma < 1; got {self}")

    @property
    def kappa(self) -> float:
        return kappa(self)


def kappa(params: InventoryParams) -> float:
    return (params.b - (1 - params.gamma) * params.c) / (params.b + params.h)


def psi(params: InventoryParams, y, d):
    y = np.asarray(y, float)
    d = np.asarray(d, float)
    return params.b * np.maximum(d - y, 0.0) + params.h * np.maximum(y - d, 0.0)


# -------------------------------------------------------------- demand laws


class _ContinuousDemand:
    def expected_psi(self, params: InventoryParams, y):
        """``E psi(y, D)`` through ``E(D - y)_+`` and ``E(y - D)_+ = y - E D + E(D - y)_+``."""
        up = self.excess(y)
        return params.b * up + params.h * (np.asarray(y, float) - self.mean + up)


@dataclass(frozen=True)
class ExponentialDemand(_ContinuousDemand):
    theta: float

    @property
    def mean(self) -> float:
        return self.theta

    def excess(self, y):
        """``E(D - y)_+``."""
        y = np.asarray(y, float)
        return np.where(y >= 0, self.theta * np.exp(-np.maximum(y, 0) / self.theta), self.theta - y)

    def sf(self, d):
        d = np.asarray(d, float)
        return np.where(d <= 0, 1.0, np.exp(-np.maximum(d, 0) / self.theta))

    def pdf(self, d):
        d = np.asarray(d, float)
        return np.where(d < 0, 0.0, np.exp(-np.maximum(d, 0) / self.theta) / self.theta)

    def quantile(self, q: float) -> float:
        return -self.theta * math.log1p(-q)

    def sample(self, rng, size):
        return rng.exponential(self.theta, size)


@dataclass(frozen=True)
class LomaxDemand(_ContinuousDemand):
    """Posterior predictive of exponential demand under a Gamma(alpha, beta) rate:
    ``P(D > d) = (beta / (beta + d))^alpha``."""

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha <= 1:
            raise DomainError("predictive mean is infinite for alpha <= 1")

    @classmethod
    def from_posterior(cls, state: PosteriorState) -> "LomaxDemand":
        if state.family is not ConjugateFamily.GAMMA_EXPONENTIAL:
            raise DomainError("Lomax predictive needs the Gamma-Exponential family")
        return cls(state.alpha, state.beta)

    @property
    def mean(self) -> float:
        return self.beta / (self.alpha - 1)

    def excess(self, y):
        y = np.asarray(y, float)
        a, b = self.alpha, self.beta
        pos = b / (a - 1) * (b / (b + np.maximum(y, 0))) ** (a - 1)
        return np.where(y >= 0, pos, self.mean - y)

    def sf(self, d):
        d = np.asarray(d, float)
        return np.where(d <= 0, 1.0, (self.beta / (self.beta + np.maximum(d, 0))) ** self.alpha)

    def pdf(self, d):
        d = np.asarray(d, float)
        a, b = self.alpha, self.beta
        return np.where(d < 0, 0.0, a / b * (b / (b + np.maximum(d, 0))) ** (a + 1))

    def quantile(self, q: float) -> float:
        return self.beta * ((1 - q) ** (-1 / self.alpha) - 1)

    def sample(self, rng, size):
        lam = rng.gamma(self.alpha, 1 / self.beta, size)
        return rng.exponential(1 / lam)


@dataclass(frozen=True)
class EmpiricalDemand(_ContinuousDemand):
    """Monte Carlo stand-in for a demand law, from a fixed sample."""

    samples: np.ndarray

    @classmethod
    def draw(cls, law, rng, size: int = 100_000) -> "EmpiricalDemand":
        return cls(np.sort(law.sample(rng, size)))

    @property
    def mean(self) -> float:
        return float(self.samples.mean())

    def excess(self, y):
        y = np.asarray(y, float)
        return np.maximum(self.samples - y[..., None], 0).mean(axis=-1)

    def quantile(self, q: float) -> float:
        """Smallest ``y`` with empirical CDF ``>= q``, by bisection."""
        s = self.samples
        lo, hi = float(s[0]) - 1.0, float(s[-1])
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if np.searchsorted(s, mid, side="right") / s.size >= q:
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-12 * max(1.0, abs(hi)):
                break
        return hi


def base_stock_level(params: InventoryParams, demand) -> float:
    """``H^{-1}(kappa)``; for Poisson demand the smallest integer with CDF >= kappa."""
    k = kappa(params)
    if isinstance(demand, PoissonDemand):
        return float(stats.poisson.ppf(k, demand.theta))
    return float(demand.quantile(k))


def order_up_to_constant(params: InventoryParams, demand, level: float) -> float:
    """``V_L(x) + c x`` for ``x <= L``."""
    g, c = params.gamma, params.c
    return float((g * c * demand.mean + (1 - g) * c * level + demand.expected_psi(params, level)) / (1 - g))


def true_value_exponential(params: InventoryParams, x, theta: float, mc_samples: Optional[int] = None,
                           rng: Optional[np.random.Generator] = None):
    """Optimal value at ``x <= x*`` for Exponential(theta) demand.

    Closed form by default. With ``mc_samples`` the expectation is a Monte
    Carlo average and ``(value, stderr)`` is returned.
    """
    law = ExponentialDemand(theta)
    xs = base_stock_level(params, law)
    x = np.asarray(x, float)
    if np.any(x > xs + 1e-12):
        raise DomainError(f"closed form holds for x <= x* = {xs:g}")
    if mc_samples is None:
        return -params.c * x + order_up_to_constant(params, law, xs)
    rng = rng or np.random.default_rng(0)
    d = rng.exponential(theta, mc_samples)
    g, c = params.gamma, params.c
    z = (g * c * d + (1 - g) * c * xs + psi(params, xs, d)) / (1 - g)
    return -c * x + z.mean(), float(z.std(ddof=1) / math.sqrt(mc_samples))


def order_up_to_value(params: InventoryParams, demand, x, level: float, step: float = 1e-3) -> np.ndarray:
    """Value of the level-``L`` policy for a continuous demand law at any ``x``.

    Above ``L`` nothing is ordered and ``V(x) = E psi(x, D) + gamma E V(x - D)``.
    This Volterra equation is marched forward from ``L`` on a grid of width
    ``step`` with trapezoidal quadrature.
    """
    x = np.atleast_1d(np.asarray(x, float))
    K = order_up_to_constant(params, demand, level)
    out = -params.c * x + K
    above = x > level
    if not np.any(above):
        return out
    top = float(x[above].max())
    n = int(math.ceil((top - level) / step))
    grid = level + step * np.arange(n + 1)
    f = np.empty(n + 1)
    f[0] = -params.c * level + K
    g, c = params.gamma, params.c
    p0 = float(demand.pdf(0.0))
    for i in range(1, n + 1):
        xi = grid[i]
        s = xi - level
        sf = float(demand.sf(s))
        # E[V_lo(x - D); D >= s] with V_lo(z) = -c z + K
        tail_d = s * sf + float(demand.excess(s))
        low = -c * (xi * sf - tail_d) + K * sf
        d = xi - grid[: i + 1]  # d from s down to 0
        w = np.full(i + 1, step)
        w[0] = w[-1] = step / 2
        dens = demand.pdf(d)
        inner = float(np.sum(w[:-1] * dens[:-1] * f[:i]))
        rhs = float(demand.expected_psi(params, xi)) + g * (low + inner)
        f[i] = rhs / (1 - g * w[-1] * p0)
    out[above] = np.interp(x[above], grid, f)
    return out


def episodic_value(params: InventoryParams, state: PosteriorState, x) -> np.ndarray:
    """Optimal value of the Bayesian-average problem, demand ~ posterior predictive."""
    law = LomaxDemand.from_posterior(state)
    return order_up_to_value(params, law, x, base_stock_level(params, law))


def stationary_states(level: float, demand, rng: np.random.Generator, burn: int = 200, steps: int = 2000,
                      x0: float = 0.0) -> np.ndarray:
    """States visited by the order-up-to-``level`` policy after a burn-in."""
    d = demand.sample(rng, burn + steps)
    out = np.empty(steps)
    x = x0
    for t in range(burn + steps):
        x = max(x, level) - d[t]
        if t >= burn:
            out[t - burn] = x
    return out


def integrated_gap(params: InventoryParams, state: PosteriorState, theta: float, states: np.ndarray) -> float:
    """Average of ``|V_N - V*|`` over sampled states (all at or below x*)."""
    vs = true_value_exponential(params, states, theta)
    vn = episodic_value(params, state, states)
    return float(np.mean(np.abs(vn - vs)))


def asymptotic_sigma(params: InventoryParams, theta: float) -> float:
    """Delta-method standard deviation of ``sqrt(N) (V_N(x) - V*(x))`` for exponential demand.

    ``(1 - gamma)^-1 sqrt(I^-1 E[Z S]^2)`` with ``Z = gamma c D + psi(x*, D)``,
    score ``S = -1/theta + D/theta^2`` and Fisher information ``1/theta^2``.
    """
    return float(theta * abs(_score_moment(params, theta)) / (1 - params.gamma))


def _zs(params: InventoryParams, theta: float, xs: float, d):
    z = params.gamma * params.c * d + psi(params, xs, d)
    return z * (-1 / theta + d / theta**2)


def _score_moment(params: InventoryParams, theta: float) -> float:
    xs = base_stock_level(params, ExponentialDemand(theta))
    f = lambda d: _zs(params, theta, xs, d) * math.exp(-d / theta) / theta
    a, _ = integrate.quad(f, 0, xs, epsabs=1e-12, epsrel=1e-12)
    b, _ = integrate.quad(f, xs, np.inf, epsabs=1e-12, epsrel=1e-12)
    return a + b


def score_moment_mc(params: InventoryParams, theta: float, rng: np.random.Generator, n: int = 1_000_000):
    """Monte Carlo ``E[Z S]`` and its standard error."""
    xs = base_stock_level(params, ExponentialDemand(theta))
    v = _zs(params, theta, xs, rng.exponential(theta, n))
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n))


# ------------------------------------------------------------------ Poisson


@dataclass(frozen=True)
class PoissonDemand:
    theta: float

    @property
    def mean(self) -> float:
        return self.theta

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        kmax = int(self.theta + 40 * math.sqrt(self.theta) + 40)
        k = np.arange(kmax + 1)
        return k.astype(float), stats.poisson.pmf(k, self.theta)

    def expected_psi(self, params: InventoryParams, y):
        k, p = self.support()
        y = np.asarray(y, float)
        return psi(params, y[..., None], k) @ p

    def sample(self, rng, size):
        return rng.poisson(self.theta, size).astype(float)


POISSON_TRUNCATION = 30


def poisson_value(params: InventoryParams, theta: float, x, level: float) -> float:
    """Value at ``x`` of ordering up to ``level`` under Poisson(theta) demand.

    For ``x > level`` the recursion
    ``V(x) = (1 - gamma e^-theta)^-1 [E psi(x, D) + gamma sum_{k=1..30} p_k V(x - k)]``
    is used.
    """
    return _poisson_value(params, float(theta), float(x), float(level))


@lru_cache(maxsize=200_000)
def _poisson_constant(params: InventoryParams, theta: float, level: float) -> float:
    return order_up_to_constant(params, PoissonDemand(theta), level)


@lru_cache(maxsize=16)
def _poisson_pk(theta: float) -> np.ndarray:
    return stats.poisson.pmf(np.arange(POISSON_TRUNCATION + 1), theta)


@lru_cache(maxsize=200_000)
def _poisson_value(params: InventoryParams, theta: float, x: float, level: float) -> float:
    if x <= level:
        return -params.c * x + _poisson_constant(params, theta, level)
    return _poisson_recursion(params, theta, x, level)


def _poisson_recursion(params: InventoryParams, theta: float, x: float, level: float) -> float:
    p = _poisson_pk(theta)
    g = params.gamma
    tail = sum(p[k] * _poisson_value(params, theta, x - k, level) for k in range(1, POISSON_TRUNCATION + 1))
    epsi = float(PoissonDemand(theta).expected_psi(params, x))
    return (epsi + g * tail) / (1 - g * p[0])


def poisson_value_recursion(params: InventoryParams, theta: float, x: float, level: float) -> float:
    """The ``x > level`` branch evaluated at any ``x`` (for boundary checks)."""
    return _poisson_recursion(params, float(theta), float(x), float(level))


# --------------------------------------------------- discretized oracle


def discretized_inventory_value(c: float, h: float, b: float, gamma: float, scenarios, weights, grid,
                                tol: float = 1e-6, max_iter: int = 100_000):
    """Fixed point of the weighted sample-average Bellman operator for 1-D inventory.

    Uses ``V(x) = min_{y >= x} G(y) - c x`` with
    ``G(y) = c y + M^-1 sum_j w_j [psi(y, xi_j) + gamma V(y - xi_j)]``. The
    order-up-to level ``y`` ranges over ``grid`` plus the scenario values;
    ``V`` is linear between nodes and has slope ``-c`` below the grid.
    Returns a callable evaluating ``V`` at arbitrary states.
    """
    xi = np.asarray(scenarios, float).ravel()
    w = np.asarray(weights, float).ravel() / xi.size
    params = InventoryParams(c, h, b, gamma)
    grid = np.asarray(grid, float)
    extra = xi[(xi > grid[0]) & (xi < grid[-1])]
    y = np.unique(np.concatenate([grid, extra]))
    nxt = y[:, None] - xi[None, :]
    stage = c * y + psi(params, y[:, None], xi[None, :]) @ w
    V = np.zeros_like(y)
    disc = gamma * w.sum()
    if disc >= 1:
        raise DomainError("weighted operator is not a contraction")
    lo = y[0]
    # the expectation over scenarios of the interpolated V is a fixed sparse
    # linear map of the node values plus the affine tail below the grid
    N, M = nxt.shape
    below = nxt < lo
    k = np.clip(np.searchsorted(y, nxt, side="right") - 1, 0, N - 2)
    t = np.where(below, 0.0, (nxt - y[k]) / (y[k + 1] - y[k]))
    t = np.minimum(t, 1.0)
    rows = np.repeat(np.arange(N), M)
    wt = np.broadcast_to(w, (N, M))
    P = sp.csr_matrix(
        (np.concatenate([(wt * (1 - t)).ravel(), (wt * t).ravel()]),
         (np.concatenate([rows, rows]), np.concatenate([np.where(below, 0, k).ravel(), (k + 1).ravel()]))),
        shape=(N, N),
    )
    tail = (np.where(below, -c * (nxt - lo), 0.0) * w).sum(axis=1)
    for _ in range(max_iter):
        G = stage + gamma * (P @ V + tail)
        newV = np.minimum.accumulate(G[::-1])[::-1] - c * y
        diff = float(np.max(np.abs(newV - V)))
        V = newV
        if disc / (1 - disc) * diff <= tol:
            break

    def value(x):
        x = np.asarray(x, float)
        out = np.interp(x, y, V)
        return np.where(x < lo, V[0] - c * (x - lo), out)

    return value


def discretized_inventory_value_nd(c, h, b, gamma, scenarios, weights, grids, tol: float = 1e-6):
    """Separable multi-product version: the sum of per-product 1-D fixed points."""
    sc = np.atleast_2d(np.asarray(scenarios, float))
    parts = [
        discretized_inventory_value(c[i], h[i], b[i], gamma, sc[:, i], weights, grids[i], tol)
        for i in range(sc.shape[1])
    ]

    def value(X):
        X = np.atleast_2d(np.asarray(X, float))
        return sum(p(X[:, i]) for i, p in enumerate(parts))

    return value
