"""Conjugate Gamma learning of the unknown disturbance distribution.

Two families are supported:

* ``GAMMA_EXPONENTIAL``: disturbance ``xi ~ Exponential(mean theta)`` with a
  Gamma(alpha, beta) prior on the *rate* ``1/theta``.
* ``GAMMA_POISSON``: disturbance ``xi ~ Poisson(theta)`` with a Gamma(alpha,
  beta) prior on the mean ``theta``.

``alpha`` is the shape and ``beta`` the rate of the Gamma law. Multi-product
models use a tuple of independent states, one per coordinate; every function
here that takes a ``posterior`` accepts either form.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import special


class ConjugateFamily(str, enum.Enum):
    GAMMA_EXPONENTIAL = "GammaExponential"
    GAMMA_POISSON = "GammaPoisson"


class DomainError(ValueError):
    """Argument outside the support of the model."""


class ContractError(ValueError):
    """Caller violated a precondition of the API."""


@dataclass(frozen=True)
class PosteriorState:
    family: ConjugateFamily
    alpha: float
    beta: float
    n_obs: int = 0
    data_sum: float = 0.0
    # prior parameters are kept so the sufficient-statistic invariant can be checked
    alpha0: float = field(default=None, repr=False)  # type: ignore[assignment]
    beta0: float = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "family", ConjugateFamily(self.family))
        if not (self.alpha > 0 and self.beta > 0):
            raise DomainError(f"alpha and beta must be positive, got ({self.alpha}, {self.beta})")
        if self.alpha0 is None:
            object.__setattr__(self, "alpha0", self.alpha)
        if self.beta0 is None:
            object.__setattr__(self, "beta0", self.beta)

    @classmethod
    def prior(cls, family, alpha: float, beta: float) -> "PosteriorState":
        return cls(ConjugateFamily(family), float(alpha), float(beta))

    @property
    def mean(self) -> float:
        """Mean of the Gamma-distributed natural parameter."""
        return self.alpha / self.beta

    @property
    def variance(self) -> float:
        return self.alpha / self.beta**2

    def to_json(self) -> dict:
        return {
            "family": self.family.value,
            "alpha": self.alpha,
            "beta": self.beta,
            "n_obs": self.n_obs,
            "data_sum": self.data_sum,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PosteriorState":
        fam = ConjugateFamily(obj["family"])
        alpha, beta = float(obj["alpha"]), float(obj["beta"])
        n, s = int(obj.get("n_obs", 0)), float(obj.get("data_sum", 0.0))
        if fam is ConjugateFamily.GAMMA_EXPONENTIAL:
            a0, b0 = alpha - n, beta - s
        else:
            a0, b0 = alpha - s, beta - n
        return cls(fam, alpha, beta, n, s, a0, b0)

    def summary(self) -> tuple[float, float, int]:
        return (self.alpha, self.beta, self.n_obs)


Posterior = Union[PosteriorState, Sequence[PosteriorState]]


def as_tuple(posterior: Posterior) -> tuple[PosteriorState, ...]:
    if isinstance(posterior, PosteriorState):
        return (posterior,)
    return tuple(posterior)


def _check_data(family: ConjugateFamily, data: np.ndarray) -> None:
    if np.any(~np.isfinite(data)):
        raise DomainError(f"{family.value}: data must be finite")
    if np.any(data < 0):
        raise DomainError(f"{family.value}: negative observation {data.min()}")
    if family is ConjugateFamily.GAMMA_POISSON and np.any(data != np.round(data)):
        raise DomainError(f"{family.value}: Poisson observations must be integers")


def update_posterior(state: Posterior, data) -> Posterior:
    """Absorb ``data`` into the posterior and return the new state.

    For a product posterior, ``data`` has shape ``(n, d)``.
    """
    if not isinstance(state, PosteriorState):
        arr = np.asarray(data, dtype=float)
        if arr.size == 0:
            return tuple(state)
        arr = arr.reshape(-1, len(state))
        return tuple(update_posterior(s, arr[:, i]) for i, s in enumerate(state))

    arr = np.asarray(data, dtype=float).ravel()
    if arr.size == 0:
        return state
    _check_data(state.family, arr)
    n = int(arr.size)
    total = float(arr.sum())
    if state.family is ConjugateFamily.GAMMA_EXPONENTIAL:
        alpha, beta = state.alpha + n, state.beta + total
    else:
        alpha, beta = state.alpha + total, state.beta + n
    return PosteriorState(
        state.family, alpha, beta, state.n_obs + n, state.data_sum + total, state.alpha0, state.beta0
    )


def sample_theta(state: PosteriorState, rng: np.random.Generator, k: int) -> np.ndarray:
    """Draw ``k`` values of the mean parameter theta from the posterior."""
    if k < 1:
        raise ContractError("k must be >= 1")
    lam = rng.gamma(shape=state.alpha, scale=1.0 / state.beta, size=k)
    if state.family is ConjugateFamily.GAMMA_EXPONENTIAL:
        return 1.0 / lam
    return lam


def sample_disturbance(family: ConjugateFamily, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One disturbance per entry of ``theta`` (the mean parameter)."""
    theta = np.asarray(theta, dtype=float)
    if family is ConjugateFamily.GAMMA_EXPONENTIAL:
        return rng.exponential(theta)
    return rng.poisson(theta).astype(float)


@dataclass(frozen=True)
class ScenarioBatch:
    """``M`` disturbances with the theta draws that generated them.

    ``scenarios`` and ``thetas`` have shape ``(M, d)``; ``weights`` shape ``(M,)``.
    """

    scenarios: np.ndarray
    thetas: np.ndarray
    weights: np.ndarray
    source_posterior: tuple

    def __post_init__(self):
        sc = np.atleast_1d(np.asarray(self.scenarios, dtype=float))
        th = np.atleast_1d(np.asarray(self.thetas, dtype=float))
        if sc.ndim == 1:
            sc = sc[:, None]
        if th.ndim == 1:
            th = th[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if not (len(sc) == len(th) == len(w) >= 1):
            raise ContractError("scenarios, thetas and weights must have equal nonzero length")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ContractError("weights must be strictly positive and finite")
        object.__setattr__(self, "scenarios", sc)
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return len(self.weights)

    def reweighted(self, weights) -> "ScenarioBatch":
        return ScenarioBatch(self.scenarios, self.thetas, np.asarray(weights, float), self.source_posterior)


def sample_scenarios(posterior: Posterior, rng: np.random.Generator, k1: int, k2: int = 1) -> ScenarioBatch:
    """``k1`` theta draws and ``k2`` conditional disturbances for each.

    Rows are grouped by theta draw: rows ``i*k2 .. i*k2+k2-1`` share ``thetas[i*k2]``.
    """
    if k1 < 1 or k2 < 1:
        raise ContractError("k1 and k2 must be >= 1")
    states = as_tuple(posterior)
    thetas = np.column_stack([sample_theta(s, rng, k1) for s in states])
    thetas = np.repeat(thetas, k2, axis=0)
    xi = np.column_stack([sample_disturbance(s.family, thetas[:, i], rng) for i, s in enumerate(states)])
    return ScenarioBatch(xi, thetas, np.ones(k1 * k2), tuple(s.summary() for s in states))


def _natural(state: PosteriorState, theta):
    """Map the mean parameter to the variable the Gamma law lives on."""
    theta = np.asarray(theta, dtype=float)
    if state.family is ConjugateFamily.GAMMA_EXPONENTIAL:
        return 1.0 / theta
    return theta


def log_posterior_pdf(state: PosteriorState, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("posterior density is supported on x > 0")
    a, b = state.alpha, state.beta
    return a * math.log(b) - special.gammaln(a) + (a - 1) * np.log(x) - b * x


def posterior_pdf(state: PosteriorState, x):
    """Gamma(alpha, beta) density at ``x`` (rate for exponential, mean for Poisson)."""
    out = np.exp(log_posterior_pdf(state, x))
    return float(out) if np.ndim(out) == 0 else out


def likelihood_ratio(old: Posterior, new: Posterior, x):
    """``p_new(x) / p_old(x)`` evaluated at the natural parameter ``x``.

    For product posteriors ``x`` has trailing dimension ``d`` and the ratio is
    the product over coordinates.
    """
    olds, news = as_tuple(old), as_tuple(new)
    if len(olds) != len(news) or any(o.family != n.family for o, n in zip(olds, news)):
        raise ContractError("likelihood ratio needs posteriors of the same family and dimension")
    x = np.asarray(x, dtype=float)
    if len(olds) == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    total = np.zeros(x.shape[:-1])
    for i, (o, n) in enumerate(zip(olds, news)):
        if o.alpha == n.alpha and o.beta == n.beta:
            continue
        total = total + (log_posterior_pdf(n, x[..., i]) - log_posterior_pdf(o, x[..., i]))
    out = np.exp(total)
    return float(out) if np.ndim(out) == 0 else out


def scenario_likelihood_ratios(old: Posterior, new: Posterior, batch: ScenarioBatch) -> np.ndarray:
    """Likelihood ratio at each scenario's generating theta."""
    olds = as_tuple(old)
    nat = np.column_stack([_natural(s, batch.thetas[:, i]) for i, s in enumerate(olds)])
    return np.atleast_1d(likelihood_ratio(olds, new, nat))


def posterior_mass_near(state: PosteriorState, center: float, eps: float) -> float:
    """Posterior probability that the natural parameter lies in ``[center-eps, center+eps]``."""
    lo = max(center - eps, 0.0)
    hi = center + eps
    return float(special.gammainc(state.alpha, state.beta * hi) - special.gammainc(state.alpha, state.beta * lo))
