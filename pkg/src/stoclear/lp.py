"""Sparse linear programs, a primal-dual solve contract and KKT certificates.

Dual convention: the dual of a row is the sensitivity of the optimal objective
to that row's right-hand side, so the Lagrangian reads
``c.x - sum_i y_i (a_i.x - b_i)``.  Under this convention ``>=`` rows have
``y >= 0`` and ``<=`` rows have ``y <= 0`` for a minimization.  The reduced cost
of a variable is ``r = c - A^T y``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

EQ, LE, GE = "=", "<=", ">="

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class LpError(RuntimeError):
    """Numerical failure of the underlying solver (distinct from infeasibility)."""


class LpModel:
    """Minimization LP assembled row by row.

    Variables carry ``[lower, upper]`` bounds that may be infinite.  Rows are
    sparse: ``sum(coef * x[col]) <sense> rhs``.
    """

    def __init__(self, name: str = "lp"):
        self.name = name
        self.var_names: List[str] = []
        self.lower: List[float] = []
        self.upper: List[float] = []
        self.cost: List[float] = []
        self.row_names: List[str] = []
        self.row_cols: List[List[int]] = []
        self.row_vals: List[List[float]] = []
        self.senses: List[str] = []
        self.rhs: List[float] = []

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_rows(self) -> int:
        return len(self.row_names)

    def add_var(self, name: str, lower: float = 0.0, upper: float = math.inf,
                cost: float = 0.0) -> int:
        self.var_names.append(name)
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self.cost.append(float(cost))
        return len(self.var_names) - 1

    def add_row(self, name: str, coefs: Dict[int, float], sense: str, rhs: float = 0.0) -> int:
        if sense not in (EQ, LE, GE):
            raise ValueError(f"unknown sense {sense!r}")
        cols = list(coefs)
        self.row_names.append(name)
        self.row_cols.append(cols)
        self.row_vals.append([float(coefs[c]) for c in cols])
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        return len(self.row_names) - 1

    def add_cost(self, col: int, value: float) -> None:
        self.cost[col] += value

    def matrix(self) -> sp.csr_matrix:
        indptr = [0]
        indices: List[int] = []
        data: List[float] = []
        for cols, vals in zip(self.row_cols, self.row_vals):
            indices.extend(cols)
            data.extend(vals)
            indptr.append(len(indices))
        return sp.csr_matrix((data, indices, indptr), shape=(self.n_rows, self.n_vars))

    def check(self) -> None:
        n = self.n_vars
        for name, cols, vals, b in zip(self.row_names, self.row_cols, self.row_vals, self.rhs):
            if any(c < 0 or c >= n for c in cols):
                raise ValueError(f"row {name}: column index out of range")
            if not math.isfinite(b) or any(math.isnan(v) for v in vals):
                raise ValueError(f"row {name}: non-finite data")
        for j in range(n):
            if math.isnan(self.cost[j]) or math.isnan(self.lower[j]) or math.isnan(self.upper[j]):
                raise ValueError(f"variable {self.var_names[j]}: NaN data")

    def copy(self) -> "LpModel":
        m = LpModel(self.name)
        m.var_names = list(self.var_names)
        m.lower = list(self.lower)
        m.upper = list(self.upper)
        m.cost = list(self.cost)
        m.row_names = list(self.row_names)
        m.row_cols = [list(c) for c in self.row_cols]
        m.row_vals = [list(v) for v in self.row_vals]
        m.senses = list(self.senses)
        m.rhs = list(self.rhs)
        return m


@dataclass
class LpSolution:
    status: str
    primal: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reduced_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = math.nan
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def solve_lp(model: LpModel) -> LpSolution:
    """Solve ``model`` to optimality and return primal values and exact duals.

    Raises :class:`LpError` on solver failure; infeasibility and unboundedness
    are reported through ``status``.
    """
    model.check()
    n = model.n_vars
    A = model.matrix()
    senses = np.array(model.senses)
    b = np.array(model.rhs)
    eq = np.flatnonzero(senses == EQ)
    le = np.flatnonzero(senses == LE)
    ge = np.flatnonzero(senses == GE)
    ub_rows = np.concatenate([le, ge])
    ub_sign = np.concatenate([np.ones(len(le)), -np.ones(len(ge))])

    A_ub = sp.diags(ub_sign) @ A[ub_rows] if len(ub_rows) else None
    b_ub = ub_sign * b[ub_rows] if len(ub_rows) else None
    A_eq = A[eq] if len(eq) else None
    b_eq = b[eq] if len(eq) else None
    bounds = [(None if math.isinf(lo) else lo, None if math.isinf(hi) else hi)
              for lo, hi in zip(model.lower, model.upper)]
    res = linprog(np.array(model.cost), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs-ds",
                  options={"presolve": True, "primal_feasibility_tolerance": 1e-9,
                           "dual_feasibility_tolerance": 1e-9})
    if res.status == 2:
        return LpSolution(INFEASIBLE, message=res.message)
    if res.status == 3:
        return LpSolution(UNBOUNDED, message=res.message)
    if res.status != 0:
        if "infeasible" in res.message.lower():
            return LpSolution(INFEASIBLE, message=res.message)
        raise LpError(f"{model.name}: {res.message}")

    duals = np.zeros(model.n_rows)
    if len(eq):
        duals[eq] = res.eqlin.marginals
    if len(ub_rows):
        duals[ub_rows] = ub_sign * res.ineqlin.marginals
    x = np.asarray(res.x, dtype=float)
    reduced = np.asarray(model.cost) - A.T @ duals if n else np.zeros(0)
    return LpSolution(OPTIMAL, x, duals, np.asarray(reduced, dtype=float),
                      float(np.dot(model.cost, x)), res.message)


@dataclass
class KktReport:
    primal_residual: float
    dual_residual: float
    complementarity: float
    duality_gap: float
    tol: float
    objective: float = 0.0
    worst: Dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        gap_tol = self.tol * (1.0 + abs(self.objective)) if math.isfinite(self.tol) else math.inf
        return (self.primal_residual <= self.tol and self.dual_residual <= self.tol
                and self.complementarity <= self.tol and self.duality_gap <= gap_tol)

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (f"KKT {verdict}: primal {self.primal_residual:.2e}, dual {self.dual_residual:.2e}, "
                f"compl {self.complementarity:.2e}, gap {self.duality_gap:.2e} {self.worst}")


def check_kkt(model: LpModel, sol: LpSolution, tol: float = 1e-7) -> KktReport:
    """Primal/dual feasibility, complementary slackness and duality gap of ``sol``."""
    if not sol.optimal:
        raise ValueError("KKT check needs an optimal solution")
    x = sol.primal
    y = sol.duals
    A = model.matrix()
    c = np.asarray(model.cost)
    lo = np.asarray(model.lower)
    hi = np.asarray(model.upper)
    b = np.asarray(model.rhs)
    senses = model.senses
    worst: Dict[str, str] = {}

    def track(kind, values, names):
        if len(values) == 0:
            return 0.0
        k = int(np.argmax(values))
        if values[k] > 0:
            worst[kind] = names[k]
        return float(values[k])

    ax = A @ x if model.n_rows else np.zeros(0)
    row_viol = np.zeros(model.n_rows)
    row_slack = np.zeros(model.n_rows)
    dual_sign = np.zeros(model.n_rows)
    for i, s in enumerate(senses):
        r = ax[i] - b[i]
        if s == EQ:
            row_viol[i] = abs(r)
        elif s == LE:
            row_viol[i] = max(r, 0.0)
            row_slack[i] = abs(r)
            dual_sign[i] = max(y[i], 0.0)
        else:
            row_viol[i] = max(-r, 0.0)
            row_slack[i] = abs(r)
            dual_sign[i] = max(-y[i], 0.0)
    with np.errstate(invalid="ignore"):
        bound_viol = np.maximum(np.maximum(lo - x, x - hi), 0.0)
    primal = max(track("primal", row_viol, model.row_names),
                 track("primal", bound_viol, model.var_names))

    r = c - (A.T @ y if model.n_rows else 0.0)
    r_pos = np.maximum(r, 0.0)
    r_neg = np.maximum(-r, 0.0)
    # positive reduced cost needs a finite lower bound, negative a finite upper bound
    var_dual_viol = np.where(np.isinf(lo), r_pos, 0.0) + np.where(np.isinf(hi), r_neg, 0.0)
    dual = max(track("dual", dual_sign, model.row_names),
               track("dual", var_dual_viol, model.var_names))

    with np.errstate(invalid="ignore"):
        gap_lo = np.where(np.isinf(lo), 0.0, r_pos * np.abs(x - lo))
        gap_hi = np.where(np.isinf(hi), 0.0, r_neg * np.abs(hi - x))
    compl = max(track("complementarity", np.abs(y) * row_slack, model.row_names),
                track("complementarity", np.maximum(gap_lo, gap_hi), model.var_names))

    dual_obj = float(b @ y) if model.n_rows else 0.0
    dual_obj += float(np.sum(np.where(np.isinf(lo), 0.0, r_pos * np.where(np.isinf(lo), 0.0, lo))))
    dual_obj -= float(np.sum(np.where(np.isinf(hi), 0.0, r_neg * np.where(np.isinf(hi), 0.0, hi))))
    primal_obj = float(c @ x)
    return KktReport(primal, dual, compl, abs(primal_obj - dual_obj), tol, primal_obj, worst)


@dataclass
class DualFace:
    """Optimal dual set ``{y : A_eq y = b_eq, A_ub y <= b_ub}`` of an LP.

    Obtained by imposing complementary slackness against one optimal primal
    point, which characterizes every optimal dual regardless of which primal
    optimum is used.
    """

    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray


def optimal_dual_face(model: LpModel, sol: LpSolution, tol: float = 1e-7) -> DualFace:
    if not sol.optimal:
        raise ValueError("dual face needs an optimal solution")
    A = model.matrix()
    AT = A.T.tocsr()
    c = np.asarray(model.cost)
    lo = np.asarray(model.lower)
    hi = np.asarray(model.upper)
    x = sol.primal
    with np.errstate(invalid="ignore"):
        at_lo = np.isfinite(lo) & (np.abs(x - lo) <= tol * (1 + np.abs(lo)))
        at_hi = np.isfinite(hi) & (np.abs(hi - x) <= tol * (1 + np.abs(hi)))
    free = ~at_lo & ~at_hi
    only_lo = at_lo & ~at_hi
    only_hi = at_hi & ~at_lo
    # reduced cost c - A^T y: zero off the bounds, >= 0 at a lower, <= 0 at an upper
    eq_blocks = [AT[free]]
    eq_rhs = [c[free]]
    ub_blocks = [AT[only_lo], -AT[only_hi]]
    ub_rhs = [c[only_lo], -c[only_hi]]

    m = model.n_rows
    senses = np.array(model.senses)
    if m:
        slack = np.abs(A @ x - np.asarray(model.rhs)) > tol * (1 + np.abs(np.asarray(model.rhs)))
        ident = sp.identity(m, format="csr")
        zero_rows = np.flatnonzero((senses != EQ) & slack)
        eq_blocks.append(ident[zero_rows])
        eq_rhs.append(np.zeros(len(zero_rows)))
        le = np.flatnonzero((senses == LE) & ~slack)
        ge = np.flatnonzero((senses == GE) & ~slack)
        ub_blocks += [ident[le], -ident[ge]]
        ub_rhs += [np.zeros(len(le)), np.zeros(len(ge))]
    return DualFace(sp.vstack(eq_blocks).tocsr(), np.concatenate(eq_rhs),
                    sp.vstack(ub_blocks).tocsr(), np.concatenate(ub_rhs))


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "+inf" if v > 0 else "-inf"
    return f"{v:.12g}"


def write_lp_format(model: LpModel) -> str:
    """Render ``model`` in CPLEX LP text format for cross-checking with other solvers."""
    def clean(name: str) -> str:
        return "".join(ch if ch.isalnum() or ch in "_.[]" else "_" for ch in name)

    names = [clean(v) for v in model.var_names]

    def expr(cols: Sequence[int], vals: Sequence[float]) -> str:
        terms = [f"{'+' if v >= 0 else '-'} {_fmt(abs(v))} {names[c]}"
                 for c, v in zip(cols, vals) if v != 0.0]
        return " ".join(terms) if terms else "0"

    out = [f"\\ {model.name}", "Minimize", " obj: " + expr(range(model.n_vars), model.cost),
           "Subject To"]
    for name, cols, vals, s, b in zip(model.row_names, model.row_cols, model.row_vals,
                                      model.senses, model.rhs):
        out.append(f" {clean(name)}: {expr(cols, vals)} {s} {_fmt(b)}")
    out.append("Bounds")
    for nm, lo, hi in zip(names, model.lower, model.upper):
        if math.isinf(lo) and math.isinf(hi):
            out.append(f" {nm} free")
        else:
            out.append(f" {_fmt(lo)} <= {nm} <= {_fmt(hi)}")
    out.append("End")
    return "\n".join(out) + "\n"
