"""Stochastic control problem instances with convex PWL cost and affine dynamics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .bayes import ConjugateFamily, PosteriorState
from .lp import FEAS_TOL, LinearProgram, solve_lp


class ParameterError(ValueError):
    pass


class InfeasibleControlError(ValueError):
    pass


@dataclass(frozen=True)
class AffineDynamics:
    """``x' = A(xi) x + B(xi) u + b(xi)``.

    ``coeffs`` maps a batch of disturbances of shape ``(M, d)`` to arrays of
    shape ``(M, n, n)``, ``(M, n, m)`` and ``(M, n)``.
    """

    n: int
    m: int
    coeffs: Callable[[np.ndarray], tuple]

    @classmethod
    def linear_in_xi(cls, A, B, b0, G) -> "AffineDynamics":
        """Constant ``A``, ``B`` and ``b(xi) = b0 + G xi``."""
        A = np.atleast_2d(np.asarray(A, float))
        B = np.atleast_2d(np.asarray(B, float))
        b0 = np.asarray(b0, float).ravel()
        G = np.atleast_2d(np.asarray(G, float))

        def coeffs(xi):
            xi = np.atleast_2d(xi)
            M = xi.shape[0]
            return (
                np.broadcast_to(A, (M,) + A.shape),
                np.broadcast_to(B, (M,) + B.shape),
                b0[None, :] + xi @ G.T,
            )

        return cls(A.shape[0], B.shape[1], coeffs)


@dataclass(frozen=True)
class PwlTerm:
    """``max_p (Px[p] x + Pu[p] u + Pxi[p] xi + p0[p])``."""

    Px: np.ndarray
    Pu: np.ndarray
    Pxi: np.ndarray
    p0: np.ndarray

    @property
    def n_pieces(self) -> int:
        return len(self.p0)

    def pieces(self, x, u, xi) -> np.ndarray:
        """Piece values, shape ``(M, p)`` for a scenario batch ``xi`` of shape ``(M, d)``."""
        xi = np.atleast_2d(xi)
        base = self.Px @ np.asarray(x, float) + self.Pu @ np.asarray(u, float) + self.p0
        return base[None, :] + xi @ self.Pxi.T


@dataclass(frozen=True)
class PwlConvexCost:
    """Stage cost as a sum of terms, each the max of affine pieces.

    A single term is the plain max-of-affines form; sums keep the piece count
    linear in the dimension for separable costs.
    """

    terms: tuple

    def __post_init__(self):
        if not self.terms:
            raise ParameterError("cost needs at least one piece")

    def evaluate(self, x, u, xi) -> np.ndarray:
        """Cost per scenario, shape ``(M,)``."""
        return sum(t.pieces(x, u, xi).max(axis=1) for t in self.terms)

    def grad_x(self, x, u, xi) -> np.ndarray:
        """x-gradient of the active pieces (lowest index on ties), shape ``(M, n)``."""
        out = 0.0
        for t in self.terms:
            k = np.argmax(t.pieces(x, u, xi), axis=1)
            out = out + t.Px[k]
        return out


@dataclass(frozen=True)
class ControlPolytope:
    """``G u <= h``, ``lo <= u <= hi`` and joint rows ``Dx x + Du u <= f``."""

    m: int
    G: np.ndarray = None
    h: np.ndarray = None
    lo: np.ndarray = None
    hi: np.ndarray = None
    Dx: np.ndarray = None
    Du: np.ndarray = None
    f: np.ndarray = None

    def __post_init__(self):
        m = self.m
        z = lambda *s: np.zeros(s)
        object.__setattr__(self, "G", z(0, m) if self.G is None else np.atleast_2d(np.asarray(self.G, float)))
        object.__setattr__(self, "h", z(0) if self.h is None else np.asarray(self.h, float).ravel())
        object.__setattr__(self, "lo", np.full(m, -np.inf) if self.lo is None else np.asarray(self.lo, float))
        object.__setattr__(self, "hi", np.full(m, np.inf) if self.hi is None else np.asarray(self.hi, float))
        object.__setattr__(self, "Du", z(0, m) if self.Du is None else np.atleast_2d(np.asarray(self.Du, float)))
        object.__setattr__(self, "f", z(0) if self.f is None else np.asarray(self.f, float).ravel())
        if self.Dx is not None:
            object.__setattr__(self, "Dx", np.atleast_2d(np.asarray(self.Dx, float)))
        # certify that the base set is nonempty
        lp = LinearProgram(np.zeros(m), self.G, self.h, ["<="] * len(self.h), self.lo, self.hi)
        if not solve_lp(lp).optimal:
            raise ParameterError("control set U is empty")

    def joint_Dx(self, n: int) -> np.ndarray:
        return np.zeros((len(self.f), n)) if self.Dx is None else self.Dx

    def violations(self, x, u, tol: float = FEAS_TOL) -> list[str]:
        u = np.asarray(u, float)
        x = np.asarray(x, float)
        bad = []
        for i in np.flatnonzero(u < self.lo - tol):
            bad.append(f"u[{i}] = {u[i]:g} < lower bound {self.lo[i]:g}")
        for i in np.flatnonzero(u > self.hi + tol):
            bad.append(f"u[{i}] = {u[i]:g} > upper bound {self.hi[i]:g}")
        if len(self.h):
            r = self.G @ u - self.h
            for i in np.flatnonzero(r > tol):
                bad.append(f"U row {i}: G u - h = {r[i]:g} > 0")
        if len(self.f):
            r = self.joint_Dx(x.size) @ x + self.Du @ u - self.f
            for i in np.flatnonzero(r > tol):
                bad.append(f"joint row {i}: g(x, u) = {r[i]:g} > 0")
        return bad


@dataclass(frozen=True)
class ControlProblem:
    dynamics: AffineDynamics
    cost: PwlConvexCost
    controls: ControlPolytope
    gamma: float
    cost_bound: float
    # certified lower bound on the stage cost; seeds the initial cut
    cost_floor: float = 0.0
    # compactification box |u| <= u_max for the cutting-plane subproblems
    u_max: float = 1e6
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ParameterError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.cost_bound > 0:
            raise ParameterError("cost_bound must be positive")

    @property
    def n(self) -> int:
        return self.dynamics.n

    @property
    def m(self) -> int:
        return self.dynamics.m


def step(problem: ControlProblem, x, u, xi) -> np.ndarray:
    bad = problem.controls.violations(x, u)
    if bad:
        raise InfeasibleControlError("infeasible control: " + "; ".join(bad))
    A, B, b = problem.dynamics.coeffs(np.atleast_2d(np.asarray(xi, float)))
    return A[0] @ np.asarray(x, float) + B[0] @ np.asarray(u, float) + b[0]


def stage_cost(problem: ControlProblem, x, u, xi) -> float:
    return float(problem.cost.evaluate(x, u, np.atleast_2d(np.asarray(xi, float)))[0])


# ------------------------------------------------------------------ inventory


def kappa(c: float, h: float, b: float, gamma: float) -> float:
    """Critical fractile of the discounted backorder inventory model."""
    return (b - (1 - gamma) * c) / (b + h)


def sinusoid_params(dims: int) -> tuple[list, list, list]:
    """Per-product costs ``1 + 0.5 sin(i-1)``, ``2 + ...``, ``3 + ...``."""
    s = 0.5 * np.sin(np.arange(dims))
    return list(1 + s), list(2 + s), list(3 + s)


def build_inventory(dims: int, c, h, b, gamma: float, demand_mean=None, cost_bound: Optional[float] = None,
                    rng: Optional[np.random.Generator] = None) -> ControlProblem:
    """Multi-product backorder inventory with ``x' = x + u - D``.

    Stage cost ``c^T u + sum_i max(b_i (D_i - y_i), h_i (y_i - D_i))`` with
    ``y = x + u``. ``demand_mean`` sizes the control box and calibrates the
    cost bound with exponential demand when ``cost_bound`` is not given.
    """
    if dims < 1:
        raise ParameterError("dims must be >= 1")
    c, h, b = (np.broadcast_to(np.asarray(v, float), (dims,)).copy() for v in (c, h, b))
    for i in range(dims):
        if not (b[i] > c[i] > 0):
            raise ParameterError(f"product {i}: need b > c > 0 (got b={b[i]}, c={c[i]})")
        if not h[i] > 0:
            raise ParameterError(f"product {i}: need h > 0")
        k = kappa(c[i], h[i], b[i], gamma)
        assert 0 < k < 1
    eye = np.eye(dims)
    dyn = AffineDynamics.linear_in_xi(eye, eye, np.zeros(dims), -eye)
    terms = [PwlTerm(np.zeros((1, dims)), c[None, :], np.zeros((1, dims)), np.zeros(1))]
    for i in range(dims):
        e = eye[i]
        Px = np.vstack([-b[i] * e, h[i] * e])
        Pxi = np.vstack([b[i] * e, -h[i] * e])
        terms.append(PwlTerm(Px, Px.copy(), Pxi, np.zeros(2)))
    cost = PwlConvexCost(tuple(terms))
    mean = None if demand_mean is None else np.broadcast_to(np.asarray(demand_mean, float), (dims,)).copy()
    u_max = 1e6 if mean is None else float(20 * mean.max())
    controls = ControlPolytope(dims, lo=np.zeros(dims))
    meta = {"kind": "inventory", "c": c, "h": h, "b": b, "demand_mean": mean}
    prob = ControlProblem(dyn, cost, controls, gamma, 1.0, 0.0, u_max, meta)
    if cost_bound is None:
        cost_bound = 1.0 if mean is None else calibrate_cost_bound(prob, mean, rng or np.random.default_rng(0))
    return ControlProblem(dyn, cost, controls, gamma, float(cost_bound), 0.0, u_max, meta)


def calibrate_cost_bound(problem: ControlProblem, demand_mean, rng: np.random.Generator,
                         steps: int = 1000, safety: float = 2.0) -> float:
    """Largest stage cost over a myopic-policy simulation, times ``safety``.

    The myopic policy orders up to the single-period newsvendor fractile
    ``(b - c) / (b + h)`` of exponential demand.
    """
    meta = problem.meta
    mean = np.asarray(demand_mean, float)
    c, h, b = meta["c"], meta["h"], meta["b"]
    level = -mean * np.log1p(-(b - c) / (b + h))
    x = np.zeros_like(mean)
    worst = 0.0
    for _ in range(steps):
        u = np.maximum(level - x, 0.0)
        d = rng.exponential(mean)
        worst = max(worst, abs(stage_cost(problem, x, u, d)))
        x = x + u - d
    return safety * worst


def inventory_state_box(level, demand_mean) -> tuple[np.ndarray, np.ndarray]:
    """Working box ``[x* - 5 mean, x* + 2 mean]`` per coordinate."""
    level = np.atleast_1d(np.asarray(level, float))
    mean = np.broadcast_to(np.asarray(demand_mean, float), level.shape)
    return level - 5 * mean, level + 2 * mean


@dataclass
class ProblemConfig:
    dims: int = 1
    c: Sequence[float] = (1.0,)
    h: Sequence[float] = (2.0,)
    b: Sequence[float] = (3.0,)
    gamma: float = 0.6
    family: str = "GammaExponential"
    prior_alpha: float = 1.0
    prior_beta: float = 1.0
    theta_true: Sequence[float] = (10.0,)

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemConfig":
        d = dict(d)
        prior = d.pop("prior", {})
        dims = int(d.get("dims", 1))
        if d.pop("sinusoidal", False):
            c, h, b = sinusoid_params(dims)
            d.setdefault("c", c)
            d.setdefault("h", h)
            d.setdefault("b", b)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown problem keys: {sorted(unknown)}")
        out = cls(**d)
        try:
            ConjugateFamily(out.family)
        except ValueError:
            raise ParameterError(f"unknown family {out.family!r}") from None
        if not 0 < float(out.gamma) < 1:
            raise ParameterError(f"gamma must lie in (0, 1), got {out.gamma}")
        if prior:
            out.prior_alpha = float(prior.get("alpha", out.prior_alpha))
            out.prior_beta = float(prior.get("beta", out.prior_beta))
        for name in ("c", "h", "b", "theta_true"):
            v = getattr(out, name)
            v = [float(t) for t in (v if isinstance(v, (list, tuple)) else [v])]
            if len(v) == 1 and dims > 1:
                v = v * dims
            if len(v) != dims:
                raise ParameterError(f"{name} needs {dims} entries, got {len(v)}")
            setattr(out, name, tuple(v))
        return out

    def build(self, rng: Optional[np.random.Generator] = None) -> ControlProblem:
        return build_inventory(self.dims, self.c, self.h, self.b, self.gamma, self.theta_true, rng=rng)

    def prior(self):
        fam = ConjugateFamily(self.family)
        states = tuple(PosteriorState.prior(fam, self.prior_alpha, self.prior_beta) for _ in range(self.dims))
        return states[0] if self.dims == 1 else states
