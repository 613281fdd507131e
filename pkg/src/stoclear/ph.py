"""Progressive hedging for the mean-vector clearing.

Each iteration solves one clairvoyant problem per scenario, augmented with the
multiplier term ``w . x`` and the proximal term ``(rho/2) |x - x_bar|^2``.
The proximal term is either exact (a QP, solved with Clarabel) or a secant
stand-in that keeps subproblems linear: it interpolates the quadratic at
breakpoints placed geometrically around ``x_bar``, so it is exact at the
consensus point and its slope there is negligible.  The secant form can stall
in a two-cycle between breakpoints on degenerate instances.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import clarabel
import numpy as np
import scipy.sparse as sp

from .formulations import MEAN_VECTOR, DispatchSolution, build_clairvoyant
from .lp import EQ, GE, LE, LpModel, LpSolution, solve_lp
from .model import Instance, require_valid

CONVERGED, MAX_ITERS = "converged", "max_iters"
QUADRATIC, SECANT = "quadratic", "secant"


@dataclass
class PhParams:
    penalty: float = 1.0
    max_iters: int = 3000
    primal_tol: float = 1e-4
    dual_tol: float = 1e-4
    proximal: str = QUADRATIC
    breakpoints: int = 21
    finest_fraction: float = 1e-6

    def __post_init__(self):
        if not (self.penalty > 0 and self.max_iters > 0 and self.primal_tol > 0
                and self.dual_tol > 0):
            raise ValueError("PH parameters must be positive")
        if self.breakpoints < 3 or self.breakpoints % 2 == 0:
            raise ValueError("breakpoints must be an odd number >= 3")
        if not 0 < self.finest_fraction < 1:
            raise ValueError("finest_fraction must lie in (0, 1)")
        if self.proximal not in (QUADRATIC, SECANT):
            raise ValueError(f"proximal must be {QUADRATIC!r} or {SECANT!r}")


@dataclass
class PhTrace:
    spread: List[float] = field(default_factory=list)
    objective: List[float] = field(default_factory=list)
    multiplier_norm: List[float] = field(default_factory=list)
    drift: List[float] = field(default_factory=list)
    multiplier_mean: List[float] = field(default_factory=list)

    def __len__(self):
        return len(self.spread)


@dataclass
class PhResult:
    status: str
    dispatch: Optional[DispatchSolution]
    w: Dict[tuple, np.ndarray]
    trace: PhTrace
    iterations: int
    seconds: float

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


class PhSolveError(RuntimeError):
    """A scenario subproblem did not solve to optimality."""


class QuadraticSubproblem:
    """One scenario LP with a diagonal proximal term, in Clarabel's conic form.

    Constraint data is assembled once; each solve only changes the linear
    cost and the proximal centre.
    """

    def __init__(self, model: LpModel, cols: Dict[tuple, int], penalty: float):
        self.model = model
        self.cols = cols
        n = model.n_vars
        A = model.matrix().tocsr()
        senses = np.array(model.senses)
        rhs = np.asarray(model.rhs, dtype=float)
        lo, hi = np.asarray(model.lower), np.asarray(model.upper)
        eq = np.flatnonzero(senses == EQ)
        fixed = np.flatnonzero(lo == hi)
        ident = sp.identity(n, format="csr")
        has_hi = np.flatnonzero(np.isfinite(hi) & (lo != hi))
        has_lo = np.flatnonzero(np.isfinite(lo) & (lo != hi))
        le, ge = np.flatnonzero(senses == LE), np.flatnonzero(senses == GE)
        blocks_eq = [A[eq], ident[fixed]]
        blocks_in = [A[le], -A[ge], ident[has_hi], -ident[has_lo]]
        self.A = sp.vstack(blocks_eq + blocks_in).tocsc()
        self.b = np.concatenate([rhs[eq], lo[fixed], rhs[le], -rhs[ge], hi[has_hi], -lo[has_lo]])
        n_eq = len(eq) + len(fixed)
        self.cones = [clarabel.ZeroConeT(n_eq), clarabel.NonnegativeConeT(self.A.shape[0] - n_eq)]
        diag = np.zeros(n)
        diag[list(cols.values())] = penalty
        self.P = sp.diags(diag, format="csc")
        self.penalty = penalty
        self.settings = clarabel.DefaultSettings()
        self.settings.verbose = False
        self.settings.tol_gap_abs = self.settings.tol_gap_rel = 1e-10
        self.settings.tol_feas = 1e-10

    def solve(self, w: Dict[tuple, float], center: Optional[Dict[tuple, float]]) -> np.ndarray:
        q = np.array(self.model.cost, dtype=float)
        P = self.P
        for key, col in self.cols.items():
            q[col] += w[key]
            if center is not None:
                q[col] -= self.penalty * center[key]
        if center is None:
            P = sp.csc_matrix(P.shape)
        sol = clarabel.DefaultSolver(P, q, self.A, self.b, self.cones, self.settings).solve()
        if str(sol.status) not in ("Solved", "AlmostSolved"):
            raise PhSolveError(f"{self.model.name}: {sol.status}")
        return np.asarray(sol.x)


def breakpoint_offsets(half_width: float, count: int, finest_fraction: float) -> np.ndarray:
    """Symmetric offsets ``0, +-h_1, ..., +-half_width`` with geometric spacing."""
    per_side = count // 2
    if per_side == 1:
        side = np.array([half_width])
    else:
        side = half_width * np.geomspace(finest_fraction, 1.0, per_side)
    return np.concatenate([-side[::-1], [0.0], side])


def _segments(center: float, half_width: float, params: PhParams):
    """Secant lines ``(slope, intercept)`` of the proximal quadratic between breakpoints."""
    t = center + breakpoint_offsets(half_width, params.breakpoints, params.finest_fraction)
    q = 0.5 * params.penalty * (t - center) ** 2
    slope = np.diff(q) / np.diff(t)
    return slope, q[:-1] - slope * t[:-1]


def _half_width(lo: float, hi: float, center: float) -> float:
    if math.isfinite(lo) and math.isfinite(hi) and hi > lo:
        return hi - lo
    return max(1.0, 2.0 * abs(center), 1e3 if not (math.isfinite(lo) and math.isfinite(hi)) else 1.0)


def _augment(base: LpModel, cols: Dict[tuple, int], w: Dict[tuple, float],
             center: Optional[Dict[tuple, float]], params: PhParams) -> LpModel:
    m = base.copy()
    for key, col in cols.items():
        m.add_cost(col, w[key])
        if center is None:
            continue
        lo, hi = base.lower[col], base.upper[col]
        if lo == hi:
            continue
        slope, icpt = _segments(center[key], _half_width(lo, hi, center[key]), params)
        eta = m.add_var(f"prox[{key[0]}:{key[1]}]", 0.0, math.inf, 1.0)
        for k, (a, b) in enumerate(zip(slope, icpt)):
            m.add_row(f"prox[{key[0]}:{key[1]}:{k}]", {eta: 1.0, col: -a}, GE, b)
    return m


def _first_stage_columns(im) -> Dict[tuple, int]:
    cols = {("x", i): im.x[i, 0] for i in im.participants}
    cols.update({("f", l): im.f[l, 0] for l in im.lines})
    return cols


def _solve(model: LpModel) -> LpSolution:
    sol = solve_lp(model)
    if not sol.optimal:
        raise PhSolveError(f"{model.name}: {sol.status}")
    return sol


def solve_progressive_hedging(inst: Instance, params: Optional[PhParams] = None) -> PhResult:
    """Run PH to consensus; the returned dispatch is evaluated at the consensus decision."""
    params = params or PhParams()
    require_valid(inst)
    start = time.perf_counter()
    probs = np.asarray(inst.probs, dtype=float)
    S = range(len(probs))
    built = [build_clairvoyant(inst, s) for s in S]
    cols = [_first_stage_columns(im) for _, im in built]
    keys = list(cols[0])
    w = {k: np.zeros(len(probs)) for k in keys}

    quadratic = [QuadraticSubproblem(model, cols[s], params.penalty)
                 for s, (model, _) in enumerate(built)] if params.proximal == QUADRATIC else None

    def solve_scenario(s, center):
        model, _ = built[s]
        w_s = {k: w[k][s] for k in keys}
        if quadratic is not None:
            return quadratic[s].solve(w_s, center)
        return _solve(_augment(model, cols[s], w_s, center, params)).primal[:model.n_vars]

    def solve_all(center):
        values = {k: np.zeros(len(probs)) for k in keys}
        base_obj = np.zeros(len(probs))
        for s in S:
            model, _ = built[s]
            z = solve_scenario(s, center)
            base_obj[s] = float(np.dot(model.cost, z))
            for k in keys:
                values[k][s] = z[cols[s][k]]
        return values, base_obj

    trace = PhTrace()
    values, base_obj = solve_all(None)
    x_bar = {k: float(probs @ v) for k, v in values.items()}
    status = MAX_ITERS
    for it in range(params.max_iters):
        for k in keys:
            w[k] = w[k] + params.penalty * (values[k] - x_bar[k])
        spread = max((float(np.max(np.abs(values[k] - x_bar[k]))) for k in keys), default=0.0)
        trace.spread.append(spread)
        trace.objective.append(float(probs @ base_obj))
        trace.multiplier_norm.append(max((float(np.max(np.abs(v))) for v in w.values()), default=0.0))
        trace.multiplier_mean.append(max((abs(float(probs @ v)) for v in w.values()), default=0.0))
        if it > 0 and spread <= params.primal_tol and trace.drift[-1] <= params.dual_tol:
            status = CONVERGED
            break
        if it == 0 and spread <= params.primal_tol:
            trace.drift.append(0.0)
            status = CONVERGED
            break
        values, base_obj = solve_all(x_bar)
        new_bar = {k: float(probs @ v) for k, v in values.items()}
        trace.drift.append(params.penalty * max((abs(new_bar[k] - x_bar[k]) for k in keys), default=0.0))
        x_bar = new_bar

    dispatch = _evaluate(inst, built, cols, x_bar, probs) if status == CONVERGED else None
    return PhResult(status, dispatch, w, trace, len(trace), time.perf_counter() - start)


def _evaluate(inst, built, cols, x_bar, probs) -> DispatchSolution:
    """Fix the first stage at ``x_bar`` and re-solve each scenario's recourse exactly."""
    x = {i: np.full(len(probs), x_bar["x", i]) for i in (p.id for p in inst.participants)}
    f = {l: np.full(len(probs), x_bar["f", l]) for l in (ln.id for ln in inst.lines)}
    X = {i: np.zeros(len(probs)) for i in x}
    F = {l: np.zeros(len(probs)) for l in f}
    total = 0.0
    for s, (model, im) in enumerate(built):
        fixed = model.copy()
        for key, col in cols[s].items():
            v = min(max(x_bar[key], model.lower[col]), model.upper[col])
            fixed.lower[col] = fixed.upper[col] = v
        sol = _solve(fixed)
        total += probs[s] * sol.objective
        for i in X:
            X[i][s] = sol.primal[im.X[i, 0]]
        for l in F:
            F[l][s] = sol.primal[im.F[l, 0]]
    return DispatchSolution(MEAN_VECTOR, probs, x, X, f, F,
                            {i: v[0] for i, v in x.items()}, {l: v[0] for l, v in f.items()},
                            total, list(range(len(probs))))
