"""Cutting-plane solver for the sample-average Bayesian Bellman equation.

The value function is approximated from below by ``max_k (alpha_k^T x + beta_k)``.
Each iteration solves one stage LP at a trial point, appends the supporting
cut and moves the trial point along a sampled transition. Between episodes,
cuts are carried over only if a likelihood-ratio reweighted LP certifies that
they remain sub-solutions of the updated Bellman operator.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .bayes import (
    ConjugateFamily,
    ContractError,
    Posterior,
    PosteriorState,
    ScenarioBatch,
    as_tuple,
    sample_disturbance,
    sample_scenarios,
    scenario_likelihood_ratios,
    update_posterior,
)
from .lp import LinearProgram, LpStatus, solve_lp
from .model import ControlProblem

VALID_TOL = 1e-6
_TIE_TOL = 1e-9


class NumericalContractError(RuntimeError):
    """A solver-level guarantee failed (unbounded LP, active compactification box...)."""


@dataclass(frozen=True)
class Cut:
    alpha: np.ndarray
    beta: float
    episode: int = 0

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.alpha, float))
        if not (np.all(np.isfinite(a)) and math.isfinite(self.beta)):
            raise ContractError("cut coefficients must be finite")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", float(self.beta))

    def __call__(self, x) -> float:
        return float(self.alpha @ np.asarray(x, float) + self.beta)

    def to_json(self) -> dict:
        return {"alpha": self.alpha.tolist(), "beta": self.beta, "episode": self.episode}


class CutSet:
    """Append-only ordered collection of cuts."""

    def __init__(self, cuts: Sequence[Cut] = ()):
        self._cuts: list[Cut] = []
        self._alphas = None
        self._betas = None
        for c in cuts:
            self.append(c)

    def append(self, cut: Cut) -> None:
        if self._cuts and cut.alpha.shape != self._cuts[0].alpha.shape:
            raise ContractError("cut dimension mismatch")
        self._cuts.append(cut)
        self._alphas = None

    def __len__(self) -> int:
        return len(self._cuts)

    def __iter__(self):
        return iter(self._cuts)

    def __getitem__(self, i):
        return self._cuts[i]

    def prefix(self, k: int) -> "CutSet":
        return CutSet(self._cuts[:k])

    @property
    def alphas(self) -> np.ndarray:
        if self._alphas is None:
            self._alphas = np.array([c.alpha for c in self._cuts])
            self._betas = np.array([c.beta for c in self._cuts])
        return self._alphas

    @property
    def betas(self) -> np.ndarray:
        self.alphas
        return self._betas

    def values(self, X) -> np.ndarray:
        """``max_k l_k(x)`` for each row of ``X``."""
        if not self._cuts:
            raise ContractError("empty cut set")
        X = np.atleast_2d(np.asarray(X, float))
        if X.shape[1] != self.alphas.shape[1]:
            X = X.reshape(-1, self.alphas.shape[1])
        return (X @ self.alphas.T + self.betas).max(axis=1)

    def to_json(self) -> list:
        return [c.to_json() for c in self._cuts]

    @classmethod
    def from_json(cls, obj: list) -> "CutSet":
        return cls([Cut(np.asarray(c["alpha"]), c["beta"], int(c.get("episode", 0))) for c in obj])


def evaluate_lb(cuts: CutSet, x) -> tuple[float, int]:
    """Value of the cut envelope at ``x`` and the lowest index attaining it."""
    if len(cuts) == 0:
        raise ContractError("evaluate_lb needs a nonempty cut set")
    vals = cuts.alphas @ np.atleast_1d(np.asarray(x, float)) + cuts.betas
    k = int(np.argmax(vals))
    return float(vals[k]), k


def initial_cut(problem: ControlProblem) -> Cut:
    """Constant cut ``c_min / (1 - gamma)``, valid for every posterior."""
    return Cut(np.zeros(problem.n), problem.cost_floor / (1 - problem.gamma), 0)


def truncation_horizon(gamma: float, kappa_bound: float, epsilon: float) -> int:
    """Smallest ``T >= 1`` with ``gamma^T kappa / (1 - gamma) <= epsilon``."""
    if not (0 < gamma < 1 and kappa_bound > 0 and epsilon > 0):
        raise ContractError("need 0 < gamma < 1, kappa_bound > 0, epsilon > 0")
    t = math.log(epsilon * (1 - gamma) / kappa_bound) / math.log(gamma)
    return max(1, math.ceil(t - 1e-12))


# ------------------------------------------------------------ stage LP


def _control_bounds(problem: ControlProblem):
    ctl = problem.controls
    lo = np.maximum(ctl.lo, -problem.u_max)
    hi = np.minimum(ctl.hi, problem.u_max)
    # positions where the compactification box, not U, is binding
    box_lo = ctl.lo < -problem.u_max
    box_hi = ctl.hi > problem.u_max
    return lo, hi, box_lo, box_hi


def _split_terms(problem: ControlProblem):
    single = [t for t in problem.cost.terms if t.n_pieces == 1]
    multi = [t for t in problem.cost.terms if t.n_pieces > 1]
    return single, multi


@dataclass
class _StageLp:
    """Stage LP in variables ``(x?, u, e, z)`` with bookkeeping for sensitivities."""

    lp: LinearProgram
    const: float
    rhs_dx: np.ndarray  # d(rhs)/d(xbar), shape (rows, n); unused when x is a variable
    direct_dx: np.ndarray  # d(const)/d(xbar)
    n_x: int
    m: int


def _build_stage_lp(problem: ControlProblem, xbar, cuts: CutSet, batch: ScenarioBatch, omega: np.ndarray,
                    x_box=None, cut_in_objective: Optional[Cut] = None) -> _StageLp:
    """Assemble the weighted sample-average stage LP.

    With ``x_box=None`` the state is fixed at ``xbar``. Otherwise ``x`` becomes
    a decision variable on the box and the LP minimises the Bellman residual
    of ``cut_in_objective`` (used by the cut-validity check).
    """
    n, m = problem.n, problem.m
    gamma = problem.gamma
    xi = batch.scenarios
    M = xi.shape[0]
    A, B, b = problem.dynamics.coeffs(xi)
    A = np.asarray(A)
    B = np.asarray(B)
    b = np.asarray(b)
    single, multi = _split_terms(problem)
    n_e = M * len(multi)
    free_x = x_box is not None
    with_z = cut_in_objective is None
    n_z = M if with_z else 0
    nx = n if free_x else 0
    nv = nx + m + n_e + n_z
    ox, ou, oe, oz = 0, nx, nx + m, nx + m + n_e
    xbar = np.zeros(n) if xbar is None else np.asarray(xbar, float)

    c = np.zeros(nv)
    const = 0.0
    direct_dx = np.zeros(n)
    for t in single:
        Pu = t.Pu[0]
        c[ou:ou + m] += omega.sum() * Pu
        piece_const = xi @ t.Pxi[0] + t.p0[0]
        const += float(omega @ piece_const)
        if free_x:
            c[ox:ox + n] += omega.sum() * t.Px[0]
        else:
            const += float(omega.sum() * (t.Px[0] @ xbar))
            direct_dx += omega.sum() * t.Px[0]
    c[oe:oe + n_e] = np.repeat(omega, len(multi)) if multi else 0.0
    if with_z:
        c[oz:oz + M] = gamma * omega
    else:
        cut = cut_in_objective
        # gamma * sum_j omega_j alpha^T (A_j x + B_j u + b_j) + beta terms - (alpha^T x + beta)
        aB = np.einsum("i,jik->jk", cut.alpha, B)
        c[ou:ou + m] += gamma * (omega @ aB)
        aA = np.einsum("i,jik->jk", cut.alpha, A)
        c[ox:ox + n] += gamma * (omega @ aA) - cut.alpha
        const += gamma * float(omega @ (b @ cut.alpha + cut.beta)) - cut.beta

    rows, cols, vals, rhs, dx = [], [], [], [], []
    r = 0

    def add_block(coef_x, coef_u, var_col, rhs_vec):
        # rows: coef_x x + coef_u u - var <= rhs_vec ; coef_x given per row (R, n)
        nonlocal r
        R = len(rhs_vec)
        idx = np.arange(r, r + R)
        if free_x:
            for k in range(n):
                rows.append(idx); cols.append(np.full(R, ox + k)); vals.append(coef_x[:, k])
        for k in range(m):
            rows.append(idx); cols.append(np.full(R, ou + k)); vals.append(coef_u[:, k])
        if var_col is not None:
            rows.append(idx); cols.append(var_col); vals.append(-np.ones(R))
        rhs.append(rhs_vec)
        dx.append(-coef_x)
        r += R

    for ti, t in enumerate(multi):
        P = t.n_pieces
        jj = np.repeat(np.arange(M), P)
        pp = np.tile(np.arange(P), M)
        coef_x = t.Px[pp]
        coef_u = t.Pu[pp]
        base = (xi @ t.Pxi.T + t.p0)[jj, pp]
        rhs_vec = -(base + (0.0 if free_x else coef_x @ xbar))
        add_block(coef_x, coef_u, oe + jj * len(multi) + ti, rhs_vec)

    if with_z and len(cuts):
        K = len(cuts)
        al, be = cuts.alphas, cuts.betas
        jj = np.repeat(np.arange(M), K)
        kk = np.tile(np.arange(K), M)
        aA = np.einsum("ki,jil->jkl", al, A).reshape(M * K, n)  # alpha_k^T A_j
        aB = np.einsum("ki,jil->jkl", al, B).reshape(M * K, m)
        ab = (b @ al.T).reshape(M * K)
        rhs_vec = -(ab + be[kk] + (0.0 if free_x else aA @ xbar))
        add_block(aA, aB, oz + jj, rhs_vec)

    ctl = problem.controls
    if len(ctl.h):
        add_block(np.zeros((len(ctl.h), n)), ctl.G, None, ctl.h.copy())
    if len(ctl.f):
        Dx = ctl.joint_Dx(n)
        add_block(Dx, ctl.Du, None, ctl.f - (0.0 if free_x else Dx @ xbar))

    if rows:
        Amat = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r, nv)
        )
        rhs_all = np.concatenate(rhs)
        dx_all = np.vstack(dx)
    else:
        Amat = sp.csr_matrix((0, nv))
        rhs_all = np.zeros(0)
        dx_all = np.zeros((0, n))

    ulo, uhi, _, _ = _control_bounds(problem)
    lo = np.full(nv, -np.inf)
    hi = np.full(nv, np.inf)
    lo[ou:ou + m], hi[ou:ou + m] = ulo, uhi
    if free_x:
        lo[ox:ox + n], hi[ox:ox + n] = x_box
    lp = LinearProgram(c, Amat, rhs_all, ["<="] * r, lo, hi)
    return _StageLp(lp, const, dx_all, direct_dx, nx, m)


@dataclass(frozen=True)
class StageSolution:
    u: np.ndarray
    value: float
    subgradient: np.ndarray
    subgradient_primal: np.ndarray


def _omega(batch: ScenarioBatch) -> np.ndarray:
    return batch.weights / batch.size


def solve_stage_subproblem(problem: ControlProblem, xbar, cuts: CutSet, batch: ScenarioBatch,
                           lp_method: str = "highs") -> StageSolution:
    """Minimise ``M^-1 sum_j w_j [c_j(xbar, u) + gamma V(F_j(xbar, u))]`` over ``u``.

    ``subgradient`` is read from the LP multipliers and is a subgradient of the
    stage value in ``xbar`` at every point. ``subgradient_primal`` is the
    active-piece / active-cut formula; it coincides with the former whenever
    the active pieces and cuts are unique.
    """
    if len(cuts) == 0:
        raise ContractError("solve_stage_subproblem needs a nonempty cut set")
    xbar = np.atleast_1d(np.asarray(xbar, float))
    omega = _omega(batch)
    st = _build_stage_lp(problem, xbar, cuts, batch, omega)
    sol = solve_lp(st.lp, method=lp_method)
    if sol.status is LpStatus.INFEASIBLE:
        raise ContractError("stage LP infeasible although U was certified nonempty")
    if sol.status is LpStatus.UNBOUNDED:
        raise NumericalContractError(
            "stage LP unbounded: the initial cut underestimates too weakly; raise cost_floor or bound U"
        )
    u = sol.primal[: problem.m]
    _, _, box_lo, box_hi = _control_bounds(problem)
    tol = 1e-7 * max(1.0, problem.u_max)
    if np.any(box_hi & (u >= problem.u_max - tol)) or np.any(box_lo & (u <= -problem.u_max + tol)):
        raise NumericalContractError("control compactification box is active at the optimum; increase u_max")
    value = float(sol.objective_value + st.const)
    g = st.direct_dx + st.rhs_dx.T @ sol.duals
    return StageSolution(u.copy(), value, g, _primal_subgradient(problem, xbar, u, cuts, batch, omega))


def _primal_subgradient(problem, xbar, u, cuts, batch, omega) -> np.ndarray:
    xi = batch.scenarios
    A, B, b = problem.dynamics.coeffs(xi)
    nxt = np.einsum("jik,k->ji", A, xbar) + np.einsum("jik,k->ji", B, u) + b
    vals = nxt @ cuts.alphas.T + cuts.betas
    act = np.argmax(vals >= vals.max(axis=1, keepdims=True) - _TIE_TOL, axis=1)
    grad_c = 0.0
    for t in problem.cost.terms:
        pv = t.pieces(xbar, u, xi)
        k = np.argmax(pv >= pv.max(axis=1, keepdims=True) - _TIE_TOL, axis=1)
        grad_c = grad_c + t.Px[k]
    grad_v = np.einsum("jik,ji->jk", A, cuts.alphas[act])
    return omega @ (grad_c + problem.gamma * grad_v)


def policy_control(problem: ControlProblem, x, cuts: CutSet, batch: ScenarioBatch, lp_method: str = "highs"):
    return solve_stage_subproblem(problem, x, cuts, batch, lp_method).u


def transition(problem: ControlProblem, x, u, xi) -> np.ndarray:
    A, B, b = problem.dynamics.coeffs(np.atleast_2d(xi))
    return A[0] @ x + B[0] @ u + b[0]


def sddp_iteration(problem: ControlProblem, xbar, cuts: CutSet, batch: ScenarioBatch, rng: np.random.Generator,
                   episode: int = 0, lp_method: str = "highs") -> tuple[Cut, np.ndarray]:
    """Append the supporting cut at ``xbar`` and return it with the next trial state."""
    xbar = np.atleast_1d(np.asarray(xbar, float))
    s = solve_stage_subproblem(problem, xbar, cuts, batch, lp_method)
    cut = Cut(s.subgradient, s.value - float(s.subgradient @ xbar), episode)
    cuts.append(cut)
    j = int(rng.integers(batch.size))
    return cut, transition(problem, xbar, s.u, batch.scenarios[j])


# ------------------------------------------------------ policy evaluation


@dataclass(frozen=True)
class TrueModel:
    """Known disturbance law: independent coordinates of ``family`` with mean ``theta``."""

    family: ConjugateFamily
    theta: tuple

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.atleast_1d(sample_disturbance(ConjugateFamily(self.family), np.asarray(self.theta, float), rng))


def _disturbance_sampler(model, batch: ScenarioBatch) -> Callable[[np.random.Generator], np.ndarray]:
    if model is None:
        return lambda rng: batch.scenarios[int(rng.integers(batch.size))]
    if isinstance(model, TrueModel):
        return model.sample
    states = as_tuple(model)
    return lambda rng: sample_scenarios(states, rng, 1).scenarios[0]


def evaluate_policy(problem: ControlProblem, cuts: CutSet, x1, batch: ScenarioBatch, T: int,
                    rng: np.random.Generator, reps: int, model=None, lp_method: str = "highs") -> tuple[float, float]:
    """Truncated discounted cost of the cut policy, averaged over ``reps`` paths.

    Disturbances are drawn uniformly from ``batch`` when ``model`` is None,
    from a posterior predictive when ``model`` is a posterior, or from a
    :class:`TrueModel`.
    """
    if T < 1 or reps < 1:
        raise ContractError("T and reps must be >= 1")
    draw = _disturbance_sampler(model, batch)
    totals = np.empty(reps)
    for r in range(reps):
        x = np.atleast_1d(np.asarray(x1, float))
        acc, disc = 0.0, 1.0
        for _ in range(T):
            u = policy_control(problem, x, cuts, batch, lp_method)
            xi = draw(rng)
            acc += disc * float(problem.cost.evaluate(x, u, xi[None, :])[0])
            disc *= problem.gamma
            x = transition(problem, x, u, xi)
        totals[r] = acc
    se = float(totals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    return float(totals.mean()), se


# ------------------------------------------------------------ warm start


def validity_weights(old: Posterior, new: Posterior, batch: ScenarioBatch, normalize: bool = False) -> np.ndarray:
    """Scenario weights of the reweighted operator; ``normalize`` rescales them to mean one."""
    w = batch.weights * scenario_likelihood_ratios(old, new, batch)
    return w / w.mean() if normalize else w


def cut_validity_margin(problem: ControlProblem, cut: Cut, old: Posterior, new: Posterior, batch: ScenarioBatch,
                        state_box, lp_method: str = "highs", normalize: bool = False) -> float:
    """``min_{x in box, u in U} T_new(l)(x) - l(x)`` with likelihood-ratio weights."""
    lo, hi = (np.atleast_1d(np.asarray(v, float)) for v in state_box)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ContractError("cut validity needs a bounded state box")
    w = validity_weights(old, new, batch, normalize)
    st = _build_stage_lp(problem, None, CutSet(), batch, w / batch.size, x_box=(lo, hi), cut_in_objective=cut)
    sol = solve_lp(st.lp, method=lp_method)
    if sol.status is LpStatus.UNBOUNDED:
        raise ContractError("cut validity LP unbounded; the state box and control set must be bounded")
    if not sol.optimal:
        raise ContractError("cut validity LP infeasible")
    return float(sol.objective_value + st.const)


def cut_validity_check(problem: ControlProblem, cut: Cut, old: Posterior, new: Posterior, batch: ScenarioBatch,
                       state_box, lp_method: str = "highs", tol: float = VALID_TOL, normalize: bool = False) -> bool:
    return cut_validity_margin(problem, cut, old, new, batch, state_box, lp_method, normalize) >= -tol


def warm_start_cuts(problem: ControlProblem, prev: CutSet, old: Posterior, new: Posterior, batch: ScenarioBatch,
                    state_box, lp_method: str = "highs", normalize: bool = False,
                    current_batch: Optional[ScenarioBatch] = None) -> tuple[CutSet, float]:
    """Initial cut plus every previous cut that is individually valid under ``new``.

    A cut is kept when it passes the reweighted check on ``batch`` and, if
    ``current_batch`` (a sample from ``new``) is given, the plain check on
    that batch as well. Returns the new cut set and the accepted fraction of
    carried-over candidates (the initialization cut is not a candidate).
    """
    init = initial_cut(problem)
    out = CutSet([init])
    candidates = [c for c in prev if not (np.all(c.alpha == init.alpha) and c.beta == init.beta)]
    kept = 0
    for c in candidates:
        ok = cut_validity_check(problem, c, old, new, batch, state_box, lp_method, normalize=normalize)
        if ok and current_batch is not None:
            ok = cut_validity_check(problem, c, new, new, current_batch, state_box, lp_method)
        if ok:
            out.append(c)
            kept += 1
    return out, (kept / len(candidates) if candidates else 0.0)


# ------------------------------------------------------------- episodes


@dataclass
class EpisodeResult:
    episode: int
    start_state: np.ndarray
    posterior: tuple
    cuts: CutSet
    n_start_cuts: int
    lb_at_x0: list
    reused_cut_fraction: float
    trial_points: list
    batch: Optional[ScenarioBatch] = None
    policy_value_estimate: Optional[tuple] = None

    def cuts_at_iteration(self, k: int) -> CutSet:
        """Cut set after ``k`` iterations of this episode."""
        return self.cuts.prefix(self.n_start_cuts + k)

    def to_json(self) -> dict:
        return {
            "episode": self.episode,
            "start_state": np.asarray(self.start_state).tolist(),
            "posterior": [s.to_json() for s in self.posterior],
            "cuts": self.cuts.to_json(),
            "n_start_cuts": self.n_start_cuts,
            "lb_at_x0": list(self.lb_at_x0),
            "reused_cut_fraction": self.reused_cut_fraction,
            "trial_points": [np.asarray(p).tolist() for p in self.trial_points],
            "policy_value_estimate": None if self.policy_value_estimate is None else list(self.policy_value_estimate),
        }


@dataclass
class EbocRun:
    episodes: list
    trajectory: list = field(default_factory=list)  # rows: episode, t, state, control, cost, alpha, beta, n_obs
    final_posterior: tuple = ()

    def to_json(self) -> str:
        return json.dumps({"episodes": [e.to_json() for e in self.episodes], "trajectory": self.trajectory})

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "iteration", "lb_at_x0", "ub_mean", "ub_stderr", "reused_fraction"])
        for e in self.episodes:
            ub = e.policy_value_estimate or ("", "")
            for k, lb in enumerate(e.lb_at_x0):
                last = k == len(e.lb_at_x0) - 1
                w.writerow([e.episode, k, repr(float(lb)), ub[0] if last else "", ub[1] if last else "",
                            repr(e.reused_cut_fraction)])
        return buf.getvalue()


@dataclass(frozen=True)
class PolicyEvalSpec:
    horizon: int
    reps: int
    true_model: bool = False


def run_eboc(problem: ControlProblem, prior: Posterior, true_theta, n_episodes: int, iters: int, batch_size: int,
             rng: np.random.Generator, *, horizon: int = 1, x1=None, warm_start: bool = True,
             batch_mode: str = "resample", k2: int = 1, state_box=None, lb_state=None,
             evaluate: Optional[PolicyEvalSpec] = None, lb_stall_tol: Optional[float] = None,
             lp_method: str = "highs", validity: str = "reweighted", normalize_weights: bool = False) -> EbocRun:
    """Episodic loop: warm start, ``iters`` cut iterations, exercise ``horizon`` steps, learn.

    ``batch_mode="resample"`` draws a fresh scenario batch every iteration;
    ``"fixed"`` draws one batch per episode so that the episode solves one
    fixed sample-average problem. ``batch_size`` counts scenarios, i.e.
    ``k1 * k2``.

    ``validity`` selects the warm-start certificate: ``"reweighted"`` checks
    carried cuts on the previous batch with likelihood-ratio weights;
    ``"both"`` additionally requires validity for the first batch of the new
    episode, which makes every kept cut a sub-solution of the operator that
    episode solves when ``batch_mode="fixed"``.
    """
    if iters < 1 or batch_size < 1 or n_episodes < 1:
        raise ContractError("iters, batch_size and n_episodes must be >= 1")
    if batch_mode not in ("resample", "fixed"):
        raise ContractError(f"unknown batch_mode {batch_mode!r}")
    if validity not in ("reweighted", "both"):
        raise ContractError(f"unknown validity mode {validity!r}")
    if batch_size % k2:
        raise ContractError("batch_size must be a multiple of k2")
    k1 = batch_size // k2
    posterior = as_tuple(prior)
    family = posterior[0].family
    truth = TrueModel(family, tuple(np.atleast_1d(np.asarray(true_theta, float))))
    x = np.zeros(problem.n) if x1 is None else np.atleast_1d(np.asarray(x1, float)).copy()
    if warm_start and state_box is None:
        raise ContractError("warm start needs a bounded state box")

    run = EbocRun([])
    prev: Optional[EpisodeResult] = None
    for ep in range(1, n_episodes + 1):
        batch = sample_scenarios(posterior, rng, k1, k2)
        if prev is None or not warm_start:
            cuts, reused = CutSet([initial_cut(problem)]), 0.0
        else:
            cuts, reused = warm_start_cuts(problem, prev.cuts, prev.posterior, posterior, prev.batch, state_box,
                                           lp_method, normalize_weights,
                                           batch if validity == "both" else None)
        n_start = len(cuts)
        x_lb = x if lb_state is None else np.atleast_1d(np.asarray(lb_state, float))
        lbs = [evaluate_lb(cuts, x_lb)[0]]
        trial = [x.copy()]
        xbar = x.copy()
        for k in range(iters):
            if batch_mode == "resample" and k > 0:
                batch = sample_scenarios(posterior, rng, k1, k2)
            _, xbar = sddp_iteration(problem, xbar, cuts, batch, rng, ep, lp_method)
            trial.append(xbar.copy())
            lbs.append(evaluate_lb(cuts, x_lb)[0])
            if lb_stall_tol is not None and k > 0 and lbs[-1] - lbs[-2] <= lb_stall_tol * max(1.0, abs(lbs[-1])):
                break
        res = EpisodeResult(ep, x.copy(), posterior, cuts, n_start, lbs, reused, trial, batch)
        if evaluate is not None:
            model = truth if evaluate.true_model else None
            res.policy_value_estimate = evaluate_policy(problem, cuts, x, batch, evaluate.horizon, rng,
                                                        evaluate.reps, model, lp_method)
        observed = []
        for t in range(horizon):
            u = policy_control(problem, x, cuts, batch, lp_method)
            xi = truth.sample(rng)
            cost = float(problem.cost.evaluate(x, u, xi[None, :])[0])
            run.trajectory.append({
                "episode": ep, "t": t, "state": x.tolist(), "control": u.tolist(), "cost": cost,
                "posterior": [list(s.summary()) for s in posterior],
            })
            observed.append(xi)
            x = transition(problem, x, u, xi)
        posterior = as_tuple(update_posterior(posterior if len(posterior) > 1 else posterior[0],
                                              np.array(observed)))
        run.episodes.append(res)
        prev = res
    run.final_posterior = posterior
    return run
