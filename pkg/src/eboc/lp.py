"""Small linear-programming kernel.

``solve_lp`` returns primal values, objective and row multipliers for

    min c^T x  s.t.  A_i x (<=, =, >=) b_i,  lo <= x <= hi.

The default method is a dense two-phase tableau simplex with Bland's
anti-cycling rule. ``method="highs"`` routes the same problem through
scipy's HiGHS for the larger cutting-plane subproblems.

Row multipliers follow the sensitivity convention ``y_i = d(objective)/d(b_i)``,
so ``>=`` rows carry ``y >= 0`` and ``<=`` rows ``y <= 0`` at a minimum.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

FEAS_TOL = 1e-8
DUALITY_TOL = 1e-7
_PIVOT_TOL = 1e-11


class LpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


class Sense(str, enum.Enum):
    LE = "<="
    EQ = "="
    GE = ">="


_SENSES = {s.value: s for s in Sense}


@dataclass
class LinearProgram:
    c: np.ndarray
    A: object  # dense ndarray or scipy sparse matrix, shape (m, n)
    b: np.ndarray
    senses: list
    lo: np.ndarray = None
    hi: np.ndarray = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        if sp.issparse(self.A):
            self.A = sp.csr_matrix(self.A, dtype=float)
        else:
            self.A = np.asarray(self.A, dtype=float).reshape(-1, n) if np.size(self.A) else np.zeros((0, n))
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.senses = [s if isinstance(s, Sense) else (_SENSES.get(s) or Sense(s)) for s in self.senses]
        m = self.A.shape[0]
        if self.A.shape[1] != n or self.b.size != m or len(self.senses) != m:
            raise ValueError(
                f"dimension mismatch: c has {n} entries, A is {self.A.shape}, "
                f"b has {self.b.size}, {len(self.senses)} senses"
            )
        self.lo = np.zeros(n) if self.lo is None else np.asarray(self.lo, dtype=float).ravel()
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).ravel()
        if self.lo.size != n or self.hi.size != n:
            raise ValueError("bounds must have one entry per variable")
        if np.any(self.lo > self.hi):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def dense_A(self) -> np.ndarray:
        return self.A.toarray() if sp.issparse(self.A) else self.A


@dataclass
class LpSolution:
    status: LpStatus
    primal: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective_value: float = float("nan")
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reduced_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def dual_objective(lp: LinearProgram, sol: LpSolution) -> float:
    """Lagrangian dual value of the row multipliers and bound multipliers."""
    r = np.where(np.abs(sol.reduced_costs) <= 1e-9, 0.0, sol.reduced_costs)
    val = float(lp.b @ sol.duals)
    pos = r > 0
    neg = r < 0
    with np.errstate(invalid="ignore"):
        val += float(np.sum(r[pos] * lp.lo[pos])) + float(np.sum(r[neg] * lp.hi[neg]))
    return val


def primal_residual(lp: LinearProgram, x: np.ndarray) -> float:
    """Largest violation of rows and bounds at ``x``."""
    ax = lp.A @ x
    worst = 0.0
    for i, s in enumerate(lp.senses):
        d = ax[i] - lp.b[i]
        if s is Sense.LE:
            worst = max(worst, d)
        elif s is Sense.GE:
            worst = max(worst, -d)
        else:
            worst = max(worst, abs(d))
    if x.size:
        worst = max(worst, float(np.max(lp.lo - x)), float(np.max(x - lp.hi)))
    return worst


def solve_lp(lp: LinearProgram, method: str = "simplex") -> LpSolution:
    if method == "simplex":
        return _solve_simplex(lp)
    if method == "highs":
        return _solve_highs(lp)
    raise ValueError(f"unknown LP method {method!r}")


# ---------------------------------------------------------------- simplex


def _standardize(lp: LinearProgram):
    """Rewrite as min c's^T z, A_s z = b_s, z >= 0 with x = shift + P z."""
    m, n = lp.shape
    A = lp.dense_A()
    cols = []  # (original var, coefficient) per standard column
    shift = np.zeros(n)
    ub_rows = []  # (std col, bound) rows z <= bound
    for j in range(n):
        lo, hi = lp.lo[j], lp.hi[j]
        if np.isfinite(lo):
            shift[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                ub_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    nz = len(cols)
    P = np.zeros((n, nz))
    for k, (j, s) in enumerate(cols):
        P[j, k] = s
    rows = A @ P if m else np.zeros((0, nz))
    rhs = lp.b - (A @ shift if m else 0.0)
    senses = list(lp.senses)
    if ub_rows:
        extra = np.zeros((len(ub_rows), nz))
        for r, (k, bnd) in enumerate(ub_rows):
            extra[r, k] = 1.0
        rows = np.vstack([rows, extra])
        rhs = np.concatenate([rhs, [bnd for _, bnd in ub_rows]])
        senses += [Sense.LE] * len(ub_rows)
    cz = P.T @ lp.c
    return rows, rhs, senses, cz, P, shift


def _pivot(T: np.ndarray, r: int, e: int) -> None:
    T[r] /= T[r, e]
    col = T[:, e].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run_bland(T: np.ndarray, basis: list, allowed: np.ndarray) -> str:
    """Primal simplex on tableau ``T`` (objective row last). Returns status."""
    m = T.shape[0] - 1
    max_iter = 50 * (T.shape[1] + m) + 1000
    for _ in range(max_iter):
        red = T[-1, :-1]
        cand = np.flatnonzero((red < -1e-10) & allowed)
        if cand.size == 0:
            return "optimal"
        e = int(cand[0])
        col = T[:m, e]
        pos = col > _PIVOT_TOL
        if not np.any(pos):
            return "unbounded"
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
        r = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, r, e)
        basis[r] = e
    raise RuntimeError("simplex iteration limit reached")


def _solve_simplex(lp: LinearProgram) -> LpSolution:
    rows, rhs, senses, cz, P, shift = _standardize(lp)
    m, nz = rows.shape
    n_user = lp.shape[0]

    # slacks and row signs
    slack_cols = []
    slack_of_row = [-1] * m
    for i, s in enumerate(senses):
        if s is not Sense.EQ:
            slack_of_row[i] = nz + len(slack_cols)
            slack_cols.append((i, 1.0 if s is Sense.LE else -1.0))
    ns = len(slack_cols)
    A_s = np.zeros((m, nz + ns))
    A_s[:, :nz] = rows
    for k, (i, sg) in enumerate(slack_cols):
        A_s[i, nz + k] = sg
    b_s = rhs.copy()
    sign = np.ones(m)
    neg = b_s < 0
    A_s[neg] *= -1
    b_s[neg] *= -1
    sign[neg] = -1

    # initial basis: slack with +1 coefficient, else an artificial
    basis = []
    art = []
    for i in range(m):
        k = slack_of_row[i]
        if k >= 0 and A_s[i, k] > 0:
            basis.append(k)
        else:
            basis.append(-1)
            art.append(i)
    n_tot = nz + ns + len(art)
    T = np.zeros((m + 1, n_tot + 1))
    T[:m, : nz + ns] = A_s
    T[:m, -1] = b_s
    for a, i in enumerate(art):
        T[i, nz + ns + a] = 1.0
        basis[i] = nz + ns + a

    # phase 1
    if art:
        T[-1, nz + ns : n_tot] = 1.0
        for i in art:
            T[-1] -= T[i]
        status = _run_bland(T, basis, np.ones(n_tot, dtype=bool))
        if -T[-1, -1] > FEAS_TOL * max(1.0, np.abs(b_s).max(initial=0.0)):
            return LpSolution(LpStatus.INFEASIBLE)
        # drive remaining artificials out of the basis
        for r in range(m):
            if basis[r] >= nz + ns:
                nonart = np.flatnonzero(np.abs(T[r, : nz + ns]) > 1e-9)
                if nonart.size:
                    _pivot(T, r, int(nonart[0]))
                    basis[r] = int(nonart[0])
    allowed = np.zeros(n_tot, dtype=bool)
    allowed[: nz + ns] = True

    # phase 2
    T[-1] = 0.0
    T[-1, :nz] = cz
    for r in range(m):
        if basis[r] < nz + ns and T[-1, basis[r]] != 0.0:
            T[-1] -= T[-1, basis[r]] * T[r]
    status = _run_bland(T, basis, allowed)
    if status == "unbounded":
        return LpSolution(LpStatus.UNBOUNDED)

    z = np.zeros(n_tot)
    for r in range(m):
        z[basis[r]] = T[r, -1]
    x = shift + P @ z[:nz]

    # duals from the final basis: B^T y = c_B (rows still carrying an
    # artificial are redundant and get multiplier 0)
    c_full = np.zeros(nz + ns)
    c_full[:nz] = cz
    real = [r for r in range(m) if basis[r] < nz + ns]
    y = np.zeros(m)
    if real:
        B = A_s[np.ix_(real, [basis[r] for r in real])]
        # keep only rows present in a nonsingular basis
        y_real = np.linalg.lstsq(B.T, c_full[[basis[r] for r in real]], rcond=None)[0]
        y[real] = y_real
    y *= sign
    duals = y[:n_user]
    reduced = lp.c - (lp.A.T @ duals if n_user else 0.0)
    obj = float(lp.c @ x)
    return LpSolution(LpStatus.OPTIMAL, x, obj, duals, np.asarray(reduced, dtype=float))


# ---------------------------------------------------------------- HiGHS


def _solve_highs(lp: LinearProgram) -> LpSolution:
    A = lp.A if sp.issparse(lp.A) else sp.csr_matrix(lp.A)
    le = np.array([s is Sense.LE for s in lp.senses], dtype=bool)
    ge = np.array([s is Sense.GE for s in lp.senses], dtype=bool)
    eq = np.array([s is Sense.EQ for s in lp.senses], dtype=bool)
    ub_idx = np.flatnonzero(le | ge)
    flip = np.where(ge[ub_idx], -1.0, 1.0)
    A_ub = sp.diags(flip) @ A[ub_idx] if ub_idx.size else None
    b_ub = flip * lp.b[ub_idx] if ub_idx.size else None
    eq_idx = np.flatnonzero(eq)
    A_eq = A[eq_idx] if eq_idx.size else None
    b_eq = lp.b[eq_idx] if eq_idx.size else None
    bounds = [
        (None if not np.isfinite(l) else l, None if not np.isfinite(h) else h) for l, h in zip(lp.lo, lp.hi)
    ]
    res = linprog(
        lp.c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9},
    )
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE)
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED)
    if res.status != 0:
        raise RuntimeError(f"HiGHS failed: {res.message}")
    duals = np.zeros(lp.shape[0])
    if ub_idx.size:
        duals[ub_idx] = flip * res.ineqlin.marginals
    if eq_idx.size:
        duals[eq_idx] = res.eqlin.marginals
    reduced = lp.c - lp.A.T @ duals
    return LpSolution(LpStatus.OPTIMAL, np.asarray(res.x, float), float(res.fun), duals, np.asarray(reduced).ravel())
