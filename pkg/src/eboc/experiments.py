"""Experiment drivers: analytic convergence, normality, cutting-plane gap traces, regret comparison.

Every driver is a pure function of its config. Replication ``r`` draws from
``np.random.default_rng([base_seed, r])`` so results do not depend on how the
replications are scheduled across workers.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .baselines import AlgorithmSpec, RegretTrace, simulate_replication
from .bayes import ConjugateFamily, PosteriorState, as_tuple, update_posterior
from .config import ExperimentConfig
from .model import build_inventory, inventory_state_box
from .oracle import (
    ExponentialDemand,
    InventoryParams,
    LomaxDemand,
    asymptotic_sigma,
    base_stock_level,
    discretized_inventory_value_nd,
    episodic_value,
    integrated_gap,
    stationary_states,
    true_value_exponential,
)
from .sddp import EbocRun, run_eboc

# stream ids outside the replication range, for quantities shared across replications
_SHARED_STREAM = 2**32 - 1


def replication_rng(base: int, rep: int) -> np.random.Generator:
    return np.random.default_rng([base, rep])


def map_replications(fn: Callable, args: Sequence, workers: int = 1) -> list:
    """Apply ``fn`` to each argument tuple, in parallel when ``workers > 1``; order is preserved."""
    if workers <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, *zip(*args)))


# ------------------------------------------------------------- outputs


@dataclass
class Table:
    """Named columns written as CSV and as a gnuplot data file."""

    name: str
    columns: list
    rows: list = field(default_factory=list)

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def gnuplot(self) -> str:
        lines = ["# " + " ".join(self.columns)]
        for r in self.rows:
            lines.append(" ".join(_fmt(v) if not isinstance(v, str) else f'"{v}"' for v in r))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_tables(tables: Sequence[Table], out_dir, experiment: str, label: str = "") -> list[Path]:
    """First table goes to ``<experiment>_<label>.csv``, the rest get a ``_<name>`` suffix."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, t in enumerate(tables):
        stem = "_".join(p for p in (experiment, label, t.name if i else "") if p)
        for suffix, text in ((".csv", t.csv()), (".dat", t.gnuplot())):
            p = out / (stem + suffix)
            p.write_text(text)
            paths.append(p)
    return paths


# --------------------------------------------------------- convergence


@dataclass(frozen=True)
class PowerLawFit:
    a: float
    b_exp: float
    rss: float
    n_excluded: int = 0


def fit_power_law(n, gaps) -> PowerLawFit:
    """Least squares of ``log gap = log a + b log n`` over strictly positive gaps."""
    n = np.asarray(n, float)
    g = np.asarray(gaps, float)
    keep = g > 0
    dropped = int((~keep).sum())
    if dropped:
        warnings.warn(f"{dropped} nonpositive gaps excluded from the power-law fit")
    if keep.sum() < 2:
        raise ValueError("need at least two positive gaps")
    X = np.column_stack([np.ones(keep.sum()), np.log(n[keep])])
    y = np.log(g[keep])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    rss = float(np.sum((y - X @ coef) ** 2))
    return PowerLawFit(float(math.exp(coef[0])), float(coef[1]), rss, dropped)


def _params(cfg: ExperimentConfig, i: int = 0) -> InventoryParams:
    p = cfg.problem
    return InventoryParams(p.c[i], p.h[i], p.b[i], p.gamma)


def _prior_state(cfg: ExperimentConfig) -> PosteriorState:
    p = cfg.problem
    return PosteriorState.prior(p.family, p.prior_alpha, p.prior_beta)


def _convergence_rep(cfg: ExperimentConfig, rep: int, states: np.ndarray) -> np.ndarray:
    params = _params(cfg)
    theta = cfg.problem.theta_true[0]
    opt = cfg.options
    rng = replication_rng(cfg.seeds.base, rep)
    post = _prior_state(cfg)
    gaps = np.empty(opt.n_episodes)
    for ep in range(opt.n_episodes):
        post = update_posterior(post, rng.exponential(theta, opt.batch))
        gaps[ep] = integrated_gap(params, post, theta, states)
    return gaps


@dataclass
class ConvergenceResult:
    episodes: np.ndarray
    gaps: np.ndarray  # (replications, episodes)
    mean_gap: np.ndarray
    fit: PowerLawFit

    def tables(self) -> list[Table]:
        t = Table("gaps", ["episode", "mean_gap", "stderr", "fit"])
        R = self.gaps.shape[0]
        se = self.gaps.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros_like(self.mean_gap)
        for n, g, s in zip(self.episodes, self.mean_gap, se):
            t.rows.append([int(n), g, s, self.fit.a * n**self.fit.b_exp])
        f = Table("fit", ["a", "b_exp", "rss", "n_excluded", "replications"])
        f.rows.append([self.fit.a, self.fit.b_exp, self.fit.rss, self.fit.n_excluded, R])
        return [t, f]


def run_convergence(cfg: ExperimentConfig, workers: int = 1) -> ConvergenceResult:
    """Integrated gap between episodic and true value functions, averaged over replications."""
    if ConjugateFamily(cfg.problem.family) is not ConjugateFamily.GAMMA_EXPONENTIAL:
        raise ValueError("convergence experiment uses the exponential benchmark")
    params = _params(cfg)
    theta = cfg.problem.theta_true[0]
    xs = base_stock_level(params, ExponentialDemand(theta))
    states = stationary_states(xs, ExponentialDemand(theta), replication_rng(cfg.seeds.base, _SHARED_STREAM),
                               cfg.options.burn_in, cfg.options.stationary_steps)
    gaps = np.array(map_replications(_convergence_rep, [(cfg, r, states) for r in range(cfg.seeds.replications)],
                                     workers))
    episodes = np.arange(1, cfg.options.n_episodes + 1)
    mean = gaps.mean(axis=0)
    return ConvergenceResult(episodes, gaps, mean, fit_power_law(episodes, mean))


# ----------------------------------------------------------- normality


def _normality_rep(cfg: ExperimentConfig, rep: int) -> float:
    params = _params(cfg)
    theta = cfg.problem.theta_true[0]
    opt = cfg.options
    rng = replication_rng(cfg.seeds.base, rep)
    post = update_posterior(_prior_state(cfg), rng.exponential(theta, opt.n_obs))
    vn = float(episodic_value(params, post, opt.x0)[0])
    return vn - float(true_value_exponential(params, opt.x0, theta))


@dataclass
class NormalityResult:
    z: np.ndarray
    sigma: float
    ks: float
    ks_pvalue: float
    bins: int = 30

    def tables(self) -> list[Table]:
        s = Table("samples", ["replication", "z"], [[i, v] for i, v in enumerate(self.z)])
        zs = np.sort(self.z)
        n = zs.size
        theo = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
        qq = Table("qq", ["theoretical", "empirical"], [[a, b] for a, b in zip(theo, zs)])
        dens, edges = np.histogram(self.z, bins=self.bins, density=True)
        mid = 0.5 * (edges[1:] + edges[:-1])
        hist = Table("hist", ["center", "density", "normal_pdf"],
                     [[m, d, stats.norm.pdf(m)] for m, d in zip(mid, dens)])
        ks = Table("ks", ["ks_statistic", "p_value", "sigma", "replications"], [[self.ks, self.ks_pvalue, self.sigma, n]])
        return [s, qq, hist, ks]


def run_normality(cfg: ExperimentConfig, workers: int = 1) -> NormalityResult:
    """Samples of ``sqrt(N) (V_N(x0) - V*(x0)) / sigma`` and their KS distance to N(0, 1)."""
    params = _params(cfg)
    theta = cfg.problem.theta_true[0]
    opt = cfg.options
    sigma = asymptotic_sigma(params, theta) * opt.sigma_scale
    d = np.array(map_replications(_normality_rep, [(cfg, r) for r in range(cfg.seeds.replications)], workers))
    z = math.sqrt(opt.n_obs) * d / sigma
    ks = stats.kstest(z, "norm")
    return NormalityResult(z, sigma, float(ks.statistic), float(ks.pvalue), opt.bins)


# ------------------------------------------------------------ SDDP gap


def _episodic_value_nd(cfg: ExperimentConfig, posterior, X) -> np.ndarray:
    X = np.atleast_2d(X)
    return sum(episodic_value(_params(cfg, i), s, X[:, i]) for i, s in enumerate(as_tuple(posterior)))


def _policy_states(cfg: ExperimentConfig, posterior, rng, n: int) -> np.ndarray:
    """Stationary states of the episodic base-stock policy under true demand."""
    cols = []
    for i, s in enumerate(as_tuple(posterior)):
        level = base_stock_level(_params(cfg, i), LomaxDemand.from_posterior(s))
        cols.append(level - rng.exponential(cfg.problem.theta_true[i], n))
    return np.column_stack(cols)


def _initial_posterior(cfg: ExperimentConfig, rng):
    p = cfg.problem
    prior = tuple(_prior_state(cfg) for _ in range(p.dims))
    data = rng.exponential(np.asarray(p.theta_true), (cfg.episodes.horizon, p.dims))
    post = update_posterior(prior, data)
    return post if p.dims > 1 else post[0]


def sddp_setup(cfg: ExperimentConfig, rep: int):
    """Problem, initial posterior, working box and generator for one replication."""
    rng = replication_rng(cfg.seeds.base, rep)
    prob = build_inventory(cfg.problem.dims, cfg.problem.c, cfg.problem.h, cfg.problem.b, cfg.problem.gamma,
                           cfg.problem.theta_true, rng=replication_rng(cfg.seeds.base, _SHARED_STREAM))
    post = _initial_posterior(cfg, rng)
    theta = np.asarray(cfg.problem.theta_true)
    levels = [base_stock_level(_params(cfg, i), ExponentialDemand(theta[i])) for i in range(cfg.problem.dims)]
    return prob, post, inventory_state_box(levels, theta), rng


def _sddp_rep(cfg: ExperimentConfig, rep: int, warm: bool) -> EbocRun:
    prob, post, box, rng = sddp_setup(cfg, rep)
    e = cfg.episodes
    x0 = np.full(cfg.problem.dims, cfg.options.x0)
    return run_eboc(prob, post, cfg.problem.theta_true, e.n_episodes, e.iters, e.batch_size, rng,
                    horizon=e.horizon, x1=x0, warm_start=warm, batch_mode=e.batch_mode, k2=e.k2, state_box=box,
                    lb_state=x0, lp_method=e.lp_method, validity=e.validity, normalize_weights=e.normalize_weights)


def discretized_oracle(cfg: ExperimentConfig, episode):
    """Fixed point of the sample-average operator on the episode's batch (fixed-batch mode)."""
    p = cfg.problem
    theta = np.asarray(p.theta_true)
    step = cfg.options.oracle_step if hasattr(cfg.options, "oracle_step") else 0.01
    grids = []
    for i in range(p.dims):
        lvl = base_stock_level(_params(cfg, i), ExponentialDemand(theta[i]))
        grids.append(np.arange(lvl - 3 * theta[i], lvl + 2 * theta[i] + step, step))
    return discretized_inventory_value_nd(p.c, p.h, p.b, p.gamma, episode.batch.scenarios, episode.batch.weights,
                                         grids)


def soundness_grid(box, n: int, seed: int = 0) -> np.ndarray:
    """``n`` points spread over the box: a uniform grid in 1-D, a Latin hypercube otherwise."""
    lo, hi = (np.atleast_1d(v) for v in box)
    if lo.size == 1:
        return np.linspace(lo[0], hi[0], n)[:, None]
    rng = np.random.default_rng(seed)
    u = np.column_stack([rng.permutation(n) for _ in range(lo.size)]) / (n - 1)
    return lo + u * (hi - lo)


@dataclass
class SddpGapResult:
    runs: dict  # variant -> list of EbocRun (one per replication)
    gaps: dict  # variant -> array (replications, episodes, iters + 1)
    reuse: dict  # variant -> array (replications, episodes)
    oracle_rel_error: dict = field(default_factory=dict)  # variant -> (replications, episodes, iters + 1)
    max_violation: dict = field(default_factory=dict)  # variant -> float

    def tables(self) -> list[Table]:
        t = Table("trace", ["variant", "episode", "iteration", "step", "gap", "lb_at_x0", "reused_fraction"])
        for v, g in self.gaps.items():
            mg = g.mean(axis=0)
            lb = np.mean([[ep.lb_at_x0 for ep in run.episodes] for run in self.runs[v]], axis=0)
            ru = self.reuse[v].mean(axis=0)
            E, K1 = mg.shape
            for e in range(E):
                for k in range(K1):
                    t.rows.append([v, e + 1, k, e * K1 + k, mg[e, k], lb[e, k], ru[e]])
        out = [t]
        if self.oracle_rel_error:
            o = Table("oracle", ["variant", "episode", "iteration", "rel_error", "max_violation"])
            for v, r in self.oracle_rel_error.items():
                mr = r.max(axis=0)
                for e in range(mr.shape[0]):
                    for k in range(mr.shape[1]):
                        o.rows.append([v, e + 1, k, mr[e, k], self.max_violation[v]])
            out.append(o)
        return out


def _gap_trace(cfg: ExperimentConfig, run: EbocRun, rng) -> np.ndarray:
    out = []
    for ep in run.episodes:
        X = _policy_states(cfg, ep.posterior, rng, cfg.options.stationary_samples)
        vstar = _episodic_value_nd(cfg, ep.posterior, X)
        out.append([float(np.mean(vstar - ep.cuts_at_iteration(k).values(X))) for k in range(len(ep.lb_at_x0))])
    return np.array(out)


def _oracle_trace(cfg: ExperimentConfig, run: EbocRun, rep: int):
    _, _, box, _ = sddp_setup(cfg, rep)
    pts = soundness_grid(box, cfg.options.soundness_points)
    x0 = np.full((1, cfg.problem.dims), cfg.options.x0)
    rel, worst = [], -np.inf
    for ep in run.episodes:
        V = discretized_oracle(cfg, ep)
        v0 = float(V(x0)[0])
        vg = V(pts)
        row = []
        for k in range(len(ep.lb_at_x0)):
            row.append(abs(v0 - ep.lb_at_x0[k]) / abs(v0))
            worst = max(worst, float(np.max(ep.cuts_at_iteration(k).values(pts) - vg)))
        rel.append(row)
    return np.array(rel), worst


def _sddp_gap_rep(cfg: ExperimentConfig, rep: int, warm: bool):
    run = _sddp_rep(cfg, rep, warm)
    gaps = _gap_trace(cfg, run, np.random.default_rng([cfg.seeds.base, rep, 1]))
    oracle = _oracle_trace(cfg, run, rep) if cfg.options.oracle_checks else None
    return run, gaps, oracle


def run_sddp_gap(cfg: ExperimentConfig, workers: int = 1) -> SddpGapResult:
    """Per-iteration integrated gap ``E_mu_N[V*_N - V_lower]`` with and without warm start."""
    res = SddpGapResult({}, {}, {})
    for variant in cfg.options.variants:
        warm = variant == "warm"
        outs = map_replications(_sddp_gap_rep, [(cfg, r, warm) for r in range(cfg.seeds.replications)], workers)
        res.runs[variant] = [o[0] for o in outs]
        res.gaps[variant] = np.array([o[1] for o in outs])
        res.reuse[variant] = np.array([[ep.reused_cut_fraction for ep in o[0].episodes] for o in outs])
        if cfg.options.oracle_checks:
            res.oracle_rel_error[variant] = np.array([o[2][0] for o in outs])
            res.max_violation[variant] = max(o[2][1] for o in outs)
    return res


# ------------------------------------------------------------- compare


def compare_algorithms(cfg: ExperimentConfig, schedule: str) -> tuple:
    o = cfg.options
    algs = [AlgorithmSpec(f"EBOC(n={n})", "eboc", n_theta=n, schedule=schedule, episode_length=o.episode_length)
            for n in o.n_thetas]
    algs.append(AlgorithmSpec("LazyPSRL", "lazy_psrl", schedule="lazy"))
    algs.append(AlgorithmSpec("DRSC", "drsc", schedule="every"))
    return tuple(algs)


def _compare_rep(cfg: ExperimentConfig, rep: int, schedule: str) -> RegretTrace:
    o = cfg.options
    p = cfg.problem
    params = InventoryParams(p.c[0], p.h[0], p.b[0], p.gamma)
    prior = PosteriorState.prior(ConjugateFamily.GAMMA_POISSON, p.prior_alpha, p.prior_beta)
    return simulate_replication(params, o.theta_star, prior, o.n_init, o.iterations,
                                replication_rng(cfg.seeds.base, rep), rep, compare_algorithms(cfg, schedule), o.mc,
                                o.lazy_factor, 0.0, o.quantile_method, o.quantile_target)


@dataclass
class RegretSummary:
    algorithm: str
    late_mean: float
    late_ci_half: float
    early_mean: float

    @property
    def late_early_ratio(self) -> float:
        return self.late_mean / self.early_mean if self.early_mean else float("inf")


@dataclass
class CompareResult:
    traces: dict  # schedule -> RegretTrace
    algorithms: dict  # schedule -> tuple of AlgorithmSpec
    late_window: int = 20

    def summary(self, schedule: str) -> dict:
        out = {}
        for a in self.algorithms[schedule]:
            m = self.traces[schedule].matrix(a.name)
            w = self.late_window
            late = m[:, -w:].mean(axis=1)
            early = m[:, :w].mean(axis=1)
            R = m.shape[0]
            half = 1.96 * late.std(ddof=1) / math.sqrt(R) if R > 1 else float("nan")
            out[a.name] = RegretSummary(a.name, float(late.mean()), float(half), float(early.mean()))
        return out

    def tables(self) -> list[Table]:
        reg = Table("regret", ["schedule", "replication", "t", "algorithm", "level", "state", "regret"])
        curve = Table("curve", ["schedule", "algorithm", "t", "mean", "ci_low", "ci_high"])
        summ = Table("summary", ["schedule", "algorithm", "late_mean", "late_ci_half", "early_mean", "late_early_ratio"])
        for s, tr in self.traces.items():
            for r in tr.rows:
                reg.rows.append([s, *r])
            for a in self.algorithms[s]:
                m = tr.matrix(a.name)
                R = m.shape[0]
                mean = m.mean(axis=0)
                half = 1.96 * m.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros_like(mean)
                for t in range(m.shape[1]):
                    curve.rows.append([s, a.name, t + 1, mean[t], mean[t] - half[t], mean[t] + half[t]])
            for a, v in self.summary(s).items():
                summ.rows.append([s, a, v.late_mean, v.late_ci_half, v.early_mean, v.late_early_ratio])
        return [reg, curve, summ]


def run_compare(cfg: ExperimentConfig, workers: int = 1) -> CompareResult:
    """Regret of EBOC(n), LazyPSRL and DRSC on the Poisson benchmark for each episode schedule."""
    o = cfg.options
    res = CompareResult({}, {}, o.late_window)
    for s in o.schedules:
        traces = map_replications(_compare_rep, [(cfg, r, s) for r in range(cfg.seeds.replications)], workers)
        tr = RegretTrace()
        for t in traces:
            tr.extend(t)
        res.traces[s] = tr
        res.algorithms[s] = compare_algorithms(cfg, s)
    return res


RUNNERS = {
    "convergence": run_convergence,
    "normality": run_normality,
    "sddp_gap": run_sddp_gap,
    "compare": run_compare,
}
