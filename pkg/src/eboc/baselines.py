"""Order-up-to comparison policies for the Poisson inventory benchmark and their regret."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .bayes import ConjugateFamily, ContractError, PosteriorState, sample_theta, update_posterior
from .oracle import InventoryParams, PoissonDemand, base_stock_level, kappa, poisson_value


class Provenance(str, enum.Enum):
    LAZY_PSRL = "LazyPSRL"
    EBOC_QUANTILE = "EbocQuantile"
    DRSC = "DRSC"
    TRUE_OPTIMAL = "TrueOptimal"


@dataclass(frozen=True)
class PolicyLevel:
    level: float
    provenance: Provenance

    def control(self, x: float) -> float:
        return max(self.level - x, 0.0)


def _require_poisson(state: PosteriorState) -> None:
    if state.family is not ConjugateFamily.GAMMA_POISSON:
        raise ContractError("Poisson benchmark policies need a GammaPoisson posterior")


def poisson_quantile(q: float, theta: float) -> float:
    """Smallest integer ``k`` with ``P(Poisson(theta) <= k) >= q``."""
    return float(stats.poisson.ppf(q, theta))


def lazy_psrl_policy(posterior: PosteriorState, params: InventoryParams, rng: np.random.Generator) -> PolicyLevel:
    """Base-stock level of one environment drawn from the posterior."""
    _require_poisson(posterior)
    theta = float(sample_theta(posterior, rng, 1)[0])
    return PolicyLevel(poisson_quantile(kappa(params), theta), Provenance.LAZY_PSRL)


def lazy_psrl_should_recompute(current: PosteriorState, at_last: PosteriorState, factor: float = 0.5) -> bool:
    if current.family is not at_last.family:
        raise ContractError("posteriors of different families")
    return current.variance <= factor * at_last.variance


def eboc_quantile_policy(posterior: PosteriorState, params: InventoryParams, n_theta: int, mc: int,
                         rng: np.random.Generator, method: str = "lower", target: str = "mean") -> PolicyLevel:
    """``kappa``-quantile of ``Y = n^-1 sum_i Y_i``, ``Y_i ~ Poisson(theta_i)``, from ``mc`` draws.

    ``target="mixture"`` instead takes the quantile of the equal-weight mixture
    of the ``Poisson(theta_i)``, i.e. ``Y = Y_I`` with ``I`` uniform.
    """
    _require_poisson(posterior)
    if n_theta < 1 or mc < 1:
        raise ContractError("n_theta and mc must be >= 1")
    thetas = sample_theta(posterior, rng, n_theta)
    if target == "mean":
        y = rng.poisson(thetas[None, :], size=(mc, n_theta)).mean(axis=1)
    elif target == "mixture":
        y = rng.poisson(thetas[rng.integers(n_theta, size=mc)]).astype(float)
    else:
        raise ContractError(f"unknown quantile target {target!r}")
    return PolicyLevel(float(np.quantile(y, kappa(params), method=method)), Provenance.EBOC_QUANTILE)


def drsc_policy(theta_hat: float, t: int, params: InventoryParams) -> PolicyLevel:
    """Robust level ``theta_hat -/+ 1 / (2 sqrt t)`` (minus when kappa < 1/2), clamped at zero."""
    if t < 1:
        raise ContractError("t must be >= 1")
    r = 1.0 / (2.0 * math.sqrt(t))
    level = theta_hat - r if kappa(params) < 0.5 else theta_hat + r
    return PolicyLevel(max(level, 0.0), Provenance.DRSC)


def true_optimal_level(params: InventoryParams, theta_star: float) -> PolicyLevel:
    return PolicyLevel(base_stock_level(params, PoissonDemand(theta_star)), Provenance.TRUE_OPTIMAL)


def regret(level, x: float, theta_star: float, params: InventoryParams) -> float:
    """``V^level(x) - V*(x)`` under Poisson(theta_star) demand."""
    lv = level.level if isinstance(level, PolicyLevel) else float(level)
    opt = true_optimal_level(params, theta_star).level
    return poisson_value(params, theta_star, x, lv) - poisson_value(params, theta_star, x, opt)


# ---------------------------------------------------------- simulation


@dataclass(frozen=True)
class AlgorithmSpec:
    """One compared policy. ``kind`` in {eboc, lazy_psrl, drsc}; ``schedule`` in {constant, lazy, every}."""

    name: str
    kind: str
    n_theta: int = 1
    schedule: str = "constant"
    episode_length: int = 5


DEFAULT_ALGORITHMS = (
    AlgorithmSpec("EBOC(n=2)", "eboc", n_theta=2, schedule="constant", episode_length=5),
    AlgorithmSpec("EBOC(n=5)", "eboc", n_theta=5, schedule="constant", episode_length=5),
    AlgorithmSpec("LazyPSRL", "lazy_psrl", schedule="lazy"),
    AlgorithmSpec("DRSC", "drsc", schedule="every"),
)


@dataclass
class RegretTrace:
    """Rows ``(replication, t, algorithm, level, state, regret)``."""

    rows: list = field(default_factory=list)

    def add(self, replication: int, t: int, algorithm: str, level: float, state: float, value: float) -> None:
        self.rows.append((replication, t, algorithm, level, state, value))

    def extend(self, other: "RegretTrace") -> None:
        self.rows.extend(other.rows)

    def matrix(self, algorithm: str) -> np.ndarray:
        """Regret array of shape ``(replications, iterations)`` for one algorithm."""
        sel = sorted((r[0], r[1], r[5]) for r in self.rows if r[2] == algorithm)
        reps = sorted({s[0] for s in sel})
        its = sorted({s[1] for s in sel})
        out = np.full((len(reps), len(its)), np.nan)
        ri = {r: i for i, r in enumerate(reps)}
        ti = {t: i for i, t in enumerate(its)}
        for r, t, v in sel:
            out[ri[r], ti[t]] = v
        return out


def simulate_replication(params: InventoryParams, theta_star: float, prior: PosteriorState, n_init: int,
                         iterations: int, rng: np.random.Generator, replication: int = 0,
                         algorithms=DEFAULT_ALGORITHMS, mc: int = 100, lazy_factor: float = 0.5,
                         x0: float = 0.0, quantile_method: str = "lower", quantile_target: str = "mean") -> RegretTrace:
    """Run every algorithm on a shared demand path and record regret at each visited state.

    Iterations are 1-based; the level used at iteration ``t`` is computed from
    the data observed before ``t``.
    """
    _require_poisson(prior)
    init = rng.poisson(theta_star, n_init).astype(float)
    demand = rng.poisson(theta_star, iterations).astype(float)
    trace = RegretTrace()
    for spec in algorithms:
        arng = np.random.default_rng(rng.integers(2**63))
        post = update_posterior(prior, init)
        data_sum, data_n = float(init.sum()), n_init
        x = x0
        level: Optional[PolicyLevel] = None
        at_last = post
        for t in range(1, iterations + 1):
            if spec.kind == "drsc":
                theta_hat = data_sum / data_n if data_n else prior.mean
                level = drsc_policy(theta_hat, t, params)
            elif spec.kind == "eboc":
                if spec.schedule == "lazy":
                    due = level is None or lazy_psrl_should_recompute(post, at_last, lazy_factor)
                else:
                    due = level is None or (t - 1) % spec.episode_length == 0
                if due:
                    at_last = post
                    level = eboc_quantile_policy(post, params, spec.n_theta, mc, arng, quantile_method,
                                                 quantile_target)
            elif spec.kind == "lazy_psrl":
                if level is None or lazy_psrl_should_recompute(post, at_last, lazy_factor):
                    level = lazy_psrl_policy(post, params, arng)
                    at_last = post
            else:
                raise ContractError(f"unknown algorithm kind {spec.kind!r}")
            trace.add(replication, t, spec.name, level.level, x, regret(level, x, theta_star, params))
            d = demand[t - 1]
            x = max(x, level.level) - d
            post = update_posterior(post, [d])
            data_sum += d
            data_n += 1
    return trace
