"""Dual extraction, settlements under the three pricing mechanisms, and price distortion.

Sign ledger: a payment ``rho`` is positive when the ISO pays the participant
(generators) and negative when the participant pays (loads).  ISO net income
is therefore ``-sum(rho)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .formulations import (CANONICAL, CLAIRVOYANT, MEAN_VECTOR, STATE_VECTOR,
                           DispatchSolution, IndexMap, NotOptimalError, build,
                           extract_dispatch)
from .lp import LpModel, LpSolution, check_kkt, optimal_dual_face, solve_lp
from .model import Instance, perturb_bids, require_valid

RC, RM, RS = "Rc", "Rm", "Rs"
MECHANISM_OF = {CANONICAL: RC, CLAIRVOYANT: RC, MEAN_VECTOR: RM, STATE_VECTOR: RS}


@dataclass
class DualSolution:
    """Probability-rescaled multipliers, each an array over scenarios.

    ``pi`` is constant across scenarios for the canonical and clairvoyant
    forms.  ``mu_*`` is filled for the mean-vector form and ``sigma_*`` for the
    state-vector form.
    """

    kind: str
    probs: np.ndarray
    pi: Dict[int, np.ndarray]
    Pi: Dict[int, np.ndarray]
    mu_x: Dict[str, np.ndarray] = field(default_factory=dict)
    mu_f: Dict[str, np.ndarray] = field(default_factory=dict)
    sigma_x: Dict[str, np.ndarray] = field(default_factory=dict)
    sigma_f: Dict[str, np.ndarray] = field(default_factory=dict)

    def expect(self, arr: np.ndarray) -> float:
        return float(self.probs @ arr)

    @property
    def na_x(self) -> Dict[str, np.ndarray]:
        """Nonanticipativity multipliers of day-ahead quantities, whichever form applies."""
        return self.mu_x if self.kind == MEAN_VECTOR else self.sigma_x


def extract_duals(kind: str, model: LpModel, sol: LpSolution, im: IndexMap) -> DualSolution:
    """Rescale raw constraint duals by scenario probability.

    The canonical day-ahead price is taken unscaled, since its balance row is
    shared by every scenario.
    """
    if not sol.optimal:
        raise NotOptimalError(f"{kind} solve is {sol.status}")
    y = sol.duals
    probs = np.asarray(im.probs, dtype=float)
    S = range(len(probs))
    per_scenario = kind in (MEAN_VECTOR, STATE_VECTOR)
    if per_scenario:
        pi = {n: np.array([y[im.da_balance[n, s]] / probs[s] for s in S]) for n in im.buses}
    else:
        pi = {n: np.full(len(probs), y[im.da_balance[n, 0]]) for n in im.buses}
    Pi = {n: np.array([y[im.rt_balance[n, s]] / probs[s] for s in S]) for n in im.buses}
    out = DualSolution(kind, probs, pi, Pi)
    if per_scenario:
        nx = {i: np.array([y[im.na_x[i, s]] / probs[s] for s in S]) for i in im.participants}
        nf = {l: np.array([y[im.na_f[l, s]] / probs[s] for s in S]) for l in im.lines}
        if kind == MEAN_VECTOR:
            out.mu_x, out.mu_f = nx, nf
        else:
            out.sigma_x, out.sigma_f = nx, nf
    return out


VERTEX, SELECTED = "vertex", "selected"
TIE_BREAK = 1e-3
TRANSFER_TOL = 1e-6
SELECTION_OPTIONS = {"primal_feasibility_tolerance": 1e-9,
                     "dual_feasibility_tolerance": 1e-9}
# presolve occasionally misjudges the dependent face rows as infeasible
SELECTION_ATTEMPTS = (("highs-ds", True), ("highs-ipm", True), ("highs-ipm", False))


class DualSelectionError(RuntimeError):
    """A selection LP over the optimal dual face did not solve."""


def _selector(m: int, entries) -> sp.csr_matrix:
    """Sparse map from raw row duals to derived quantities; ``entries`` is a list of {row: coef}."""
    rows, cols, vals = [], [], []
    for k, coefs in enumerate(entries):
        for j, a in coefs.items():
            rows.append(k)
            cols.append(j)
            vals.append(a)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(entries), m))


def _tie_break_weights(k: int) -> np.ndarray:
    # low-discrepancy, index-determined, so every formulation uses the same weights
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    return np.mod((np.arange(k) + 1) * golden, 1.0) - 0.5


def _selection_stages(kind: str, m: int, im: IndexMap):
    """Selection stages as ``(G, anchor, weights)``; a stage minimizes ``sum w |G z - h|``.

    ``z`` is the row-dual vector followed by one expected day-ahead price per
    bus.  ``anchor`` is ``None`` (``h = 0``) or ``(k, R)`` with
    ``h = R @ (G_k z)`` taken from the values pinned by the earlier stage ``k``.
    """
    probs = np.asarray(im.probs, dtype=float)
    S = range(len(probs))
    nb = len(im.buses)
    width = m + nb
    # real-time prices measured from the expected day-ahead price of their bus
    spread = _selector(width, [{im.rt_balance[n, s]: 1.0 / probs[s], m + b: -1.0}
                               for b, n in enumerate(im.buses) for s in S])
    stages = [(spread, None, np.tile(probs, nb)),
              (_selector(width, [{m + b: 1.0} for b in range(nb)]), None, np.ones(nb))]
    if kind not in (MEAN_VECTOR, STATE_VECTOR):
        return stages
    # day-ahead price deviations, measured from the expectation pinned in stage 2
    deviations = _selector(width, [{im.da_balance[n, s]: 1.0 / probs[s]}
                                   for n in im.buses for s in S])
    stages.append((deviations, (1, sp.kron(sp.identity(nb), np.ones((len(probs), 1)), format="csr")),
                   np.ones(nb * len(probs))))
    groups = [[im.na_x[i, s] for s in S] for i in im.participants]
    groups += [[im.na_f[l, s] for s in S] for l in im.lines]
    rows = []
    for g in groups:
        for s in S:
            # mean-vector multipliers enter centered, matching the state-vector ones
            coefs = {g[t]: -1.0 for t in S} if kind == MEAN_VECTOR else {}
            coefs[g[s]] = coefs.get(g[s], 0.0) + 1.0 / probs[s]
            rows.append(coefs)
    stages.append((_selector(width, rows), None, np.ones(len(rows))))
    if kind == MEAN_VECTOR:
        stages.append((_selector(width, [{r: 1.0 for r in g} for g in groups]), None,
                       np.ones(len(groups))))
    return stages


def _expected_price_rows(kind: str, m: int, im: IndexMap) -> sp.csr_matrix:
    """Rows tying each auxiliary expected-price column to the day-ahead balance duals."""
    S = range(len(im.probs))
    nb = len(im.buses)
    entries = []
    for b, n in enumerate(im.buses):
        coefs = ({im.da_balance[n, s]: -1.0 for s in S} if kind in (MEAN_VECTOR, STATE_VECTOR)
                 else {im.da_balance[n, 0]: -1.0})
        coefs[m + b] = 1.0
        entries.append(coefs)
    return _selector(m + nb, entries)


def _solve_stage(cost, A_ub, b_ub, A_eq, b_eq, bounds):
    res = None
    for method, presolve in SELECTION_ATTEMPTS:
        res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                      method=method, options={**SELECTION_OPTIONS, "presolve": presolve})
        if res.status == 0:
            break
    return res


def select_duals(kind: str, model: LpModel, sol: LpSolution, im: IndexMap) -> LpSolution:
    """Replace the solver's vertex duals by a reproducible point of the optimal dual face.

    Row duals in the stochastic forms are not unique: nonanticipativity rows are
    linearly dependent and day-ahead bounds create primal degeneracy that no
    bid perturbation removes.  The representative is chosen lexicographically,
    minimizing in turn the L1 norm (plus a small generic tie-break) of

    1. real-time price minus expected day-ahead price, weighted by probability,
    2. expected day-ahead prices,
    3. scenario deviations of day-ahead prices from that expectation,
    4. nonanticipativity multipliers (centered for the mean-vector form),
    5. expected mean-vector multipliers.

    Each stage looks only at quantities the formulations share, and each LP
    optimum is unique for generic tie-break weights, so canonical, mean-vector
    and state-vector solves of one instance land on corresponding duals.  When
    the two stages agree, as in a market without uncertainty, the first stage
    returns equal day-ahead and real-time prices.
    """
    face = optimal_dual_face(model, sol)
    m = model.n_rows
    nb = len(im.buses)
    width = m + nb
    tie = _expected_price_rows(kind, m, im)
    face_eq = sp.vstack([sp.hstack([face.A_eq, sp.csr_matrix((face.A_eq.shape[0], nb))]),
                         tie]).tocsr()
    face_ub = sp.hstack([face.A_ub, sp.csr_matrix((face.A_ub.shape[0], nb))]).tocsr()
    value = np.concatenate([sol.duals, np.zeros(nb)])
    value[m:] = -(tie[:, :m] @ sol.duals)
    pins, targets = [], []
    fixed = np.zeros(width, dtype=bool)
    for stage, (G, anchor, weights) in enumerate(_selection_stages(kind, m, im)):
        h = np.zeros(G.shape[0]) if anchor is None else anchor[1] @ targets[anchor[0]]
        # The current point lies on the face; align the right-hand sides with
        # it so rounding residuals don't make presolve declare the face empty.
        eq_rows = sp.vstack([face_eq] + pins).tocsr()
        b_eq = eq_rows @ value
        k = G.shape[0]
        cost = np.concatenate([TIE_BREAK * (G.T @ (weights * _tie_break_weights(k))), weights])
        ident = sp.identity(k, format="csr")
        A_ub = sp.vstack([sp.hstack([face_ub, sp.csr_matrix((face_ub.shape[0], k))]),
                          sp.hstack([G, -ident]), sp.hstack([-G, -ident])]).tocsr()
        b_ub = np.concatenate([np.maximum(face.b_ub, face_ub @ value), h, -h])
        A_eq = sp.hstack([eq_rows, sp.csr_matrix((eq_rows.shape[0], k))]).tocsr()
        bounds = [(v, v) if f else (None, None) for v, f in zip(value, fixed)] + [(0, None)] * k
        res = _solve_stage(cost, A_ub, b_ub, A_eq, b_eq, bounds)
        if res.status != 0:
            raise DualSelectionError(f"{kind}: selection stage {stage + 1} failed: {res.message}")
        value = np.asarray(res.x[:width])
        targets.append(G @ value)
        # pin this stage's quantities before the next one: single-entry rows
        # fix their entry outright, the others become equality rows
        single = G.getnnz(axis=1) == 1
        fixed[G[single].indices] = True
        if not single.all():
            pins.append(G[~single])
    y = value[:m]
    reduced = np.asarray(model.cost) - model.matrix().T @ y
    return LpSolution(sol.status, sol.primal, y, reduced, sol.objective, sol.message)


def derive_sigma_from_mu(mu: Dict[str, np.ndarray], probs) -> Dict[str, np.ndarray]:
    """Center mean-vector multipliers: ``sigma(w) = mu(w) - E[mu]``."""
    probs = np.asarray(probs, dtype=float)
    return {k: v - float(probs @ v) for k, v in mu.items()}


@dataclass
class PaymentTable:
    mechanism: str
    probs: np.ndarray
    rho: Dict[str, np.ndarray]

    @property
    def expected_rho(self) -> Dict[str, float]:
        return {i: float(self.probs @ v) for i, v in self.rho.items()}

    def total(self) -> np.ndarray:
        """Net payment by the ISO in each scenario."""
        return np.sum(list(self.rho.values()), axis=0)


def _payments(inst: Instance, d: DispatchSolution, day_ahead: Dict[str, np.ndarray],
              Pi: Dict[int, np.ndarray], mechanism: str) -> PaymentTable:
    rho = {}
    for p in inst.participants:
        x, X = d.x[p.id], d.X[p.id]
        rho[p.id] = day_ahead[p.id] * x + Pi[p.bus] * (X - x)
    return PaymentTable(mechanism, np.asarray(d.probs), rho)


def payments_canonical(inst: Instance, d: DispatchSolution, duals: DualSolution) -> PaymentTable:
    """``rho = pi_n x + Pi_n(w) (X(w) - x)``; also used for clairvoyant prices."""
    return _payments(inst, d, {p.id: duals.pi[p.bus] for p in inst.participants}, duals.Pi, RC)


def payments_mean_vector(inst: Instance, d: DispatchSolution, duals: DualSolution) -> PaymentTable:
    """``rho = (pi_n(w) + mu_i(w)) x(w) + Pi_n(w) (X(w) - x(w))``."""
    da = {p.id: duals.pi[p.bus] + duals.mu_x[p.id] for p in inst.participants}
    return _payments(inst, d, da, duals.Pi, RM)


def payments_state_vector(inst: Instance, d: DispatchSolution, duals: DualSolution) -> PaymentTable:
    """``rho = (pi_n(w) + sigma_i(w)) x(w) + Pi_n(w) (X(w) - x(w))``."""
    da = {p.id: duals.pi[p.bus] + duals.sigma_x[p.id] for p in inst.participants}
    return _payments(inst, d, da, duals.Pi, RS)


def payments(inst: Instance, d: DispatchSolution, duals: DualSolution) -> PaymentTable:
    fn = {CANONICAL: payments_canonical, CLAIRVOYANT: payments_canonical,
          MEAN_VECTOR: payments_mean_vector, STATE_VECTOR: payments_state_vector}[duals.kind]
    return fn(inst, d, duals)


@dataclass
class DistortionTable:
    """Day-ahead minus real-time unit price, keyed by bus (Rc) or participant (Rm, Rs)."""

    mechanism: str
    probs: np.ndarray
    M: Dict[object, np.ndarray]

    @property
    def expected_M(self) -> Dict[object, float]:
        return {k: float(self.probs @ v) for k, v in self.M.items()}


def price_distortion(inst: Instance, duals: DualSolution) -> DistortionTable:
    kind = duals.kind
    if kind in (CANONICAL, CLAIRVOYANT):
        M = {n: duals.pi[n] - duals.Pi[n] for n in inst.bus_ids}
    else:
        na = duals.na_x
        M = {p.id: duals.pi[p.bus] + na[p.id] - duals.Pi[p.bus] for p in inst.participants}
    return DistortionTable(MECHANISM_OF[kind], duals.probs, M)


@dataclass
class Clearing:
    """One solved formulation with its dispatch, duals and settlement."""

    instance: Instance
    kind: str
    model: LpModel
    index: IndexMap
    solution: LpSolution
    dispatch: DispatchSolution
    duals: DualSolution
    payments: PaymentTable
    dual_policy: str = SELECTED


def clear_and_price(inst: Instance, kind: str, scenario: Optional[int] = None,
                    perturb_seed: Optional[int] = None, dual_policy: str = SELECTED) -> Clearing:
    """Build, solve, pick duals and settle ``inst`` under formulation ``kind``.

    ``perturb_seed`` jitters every bid and premium first (the clearing then
    carries the perturbed instance); ``dual_policy`` is ``"selected"``
    (reproducible point of the optimal dual face) or ``"vertex"`` (whatever
    the simplex returns).  If selection fails the vertex duals are kept, with
    a warning, and ``Clearing.dual_policy`` says so.
    """
    if dual_policy not in (SELECTED, VERTEX):
        raise ValueError(f"unknown dual policy {dual_policy!r}")
    require_valid(inst)
    if perturb_seed is not None:
        inst = perturb_bids(inst, perturb_seed)
    model, im = build(inst, kind, scenario)
    sol = solve_lp(model)
    dispatch = extract_dispatch(kind, sol, im)
    if dual_policy == SELECTED:
        try:
            sol = (_mean_vector_selection(inst, model, sol, im) if kind == MEAN_VECTOR
                   else select_duals(kind, model, sol, im))
        except DualSelectionError as exc:
            warnings.warn(f"{exc}; keeping vertex duals", RuntimeWarning, stacklevel=2)
            dual_policy = VERTEX
    duals = extract_duals(kind, model, sol, im)
    return Clearing(inst, kind, model, im, sol, dispatch, duals,
                    payments(inst, dispatch, duals), dual_policy)


def _mean_vector_selection(inst: Instance, model: LpModel, sol: LpSolution,
                           im: IndexMap) -> LpSolution:
    """Selected mean-vector duals, obtained from the state-vector form.

    A state-vector dual is a mean-vector dual with ``E[mu] = 0``, and that is
    where the last selection stage lands, so the state-vector face gives the
    same point more cheaply.  Shared rows are matched by name; rows defining
    the mean take the sum of their unit's nonanticipativity duals.  The result
    is checked against the mean-vector optimality conditions and the direct
    selection is used if it does not hold.
    """
    sv, sv_im = build(inst, STATE_VECTOR)
    col = {name: j for j, name in enumerate(model.var_names)}
    sv.cost = [model.cost[col[name]] if name in col else 0.0 for name in sv.var_names]
    sv_sol = solve_lp(sv)
    if not sv_sol.optimal:
        return select_duals(MEAN_VECTOR, model, sol, im)
    sv_y = select_duals(STATE_VECTOR, sv, sv_sol, sv_im).duals
    sv_row = {name: r for r, name in enumerate(sv.row_names)}
    S = range(im.n_scenarios)
    sums = {f"mean_def_x[{i}]": sum(sv_y[sv_im.na_x[i, s]] for s in S) for i in im.participants}
    sums.update({f"mean_def_f[{l}]": sum(sv_y[sv_im.na_f[l, s]] for s in S) for l in im.lines})
    try:
        y = np.array([sv_y[sv_row[name]] if name in sv_row else sums[name]
                      for name in model.row_names])
    except KeyError:
        return select_duals(MEAN_VECTOR, model, sol, im)
    reduced = np.asarray(model.cost) - model.matrix().T @ y
    moved = LpSolution(sol.status, sol.primal, y, reduced, sol.objective, sol.message)
    if not check_kkt(model, moved, TRANSFER_TOL).passed:
        return select_duals(MEAN_VECTOR, model, sol, im)
    return moved
