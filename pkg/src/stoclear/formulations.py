"""Extensive-form LPs for the clairvoyant, canonical, mean-vector and state-vector clearings.

Every builder returns an :class:`LpModel` plus an :class:`IndexMap` from domain
objects (participants, lines, buses, scenarios) to columns and rows.  Real-time
deviations are split as ``X - x = u - v`` with ``u, v >= 0``; scenario terms are
weighted by probability in the objective while balance and nonanticipativity
rows stay unweighted.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .lp import EQ, LpModel, LpSolution, solve_lp
from .model import INF, Instance, Scenario, ScenarioSet, require_valid, social_surplus

CLAIRVOYANT = "clairvoyant"
CANONICAL = "canonical"
MEAN_VECTOR = "mean_vector"
STATE_VECTOR = "state_vector"
KINDS = (CLAIRVOYANT, CANONICAL, MEAN_VECTOR, STATE_VECTOR)


class NotOptimalError(RuntimeError):
    """Raised when quantities are requested from a non-optimal solve."""


@dataclass
class IndexMap:
    kind: str
    probs: List[float]
    participants: List[str]
    lines: List[str]
    buses: List[int]
    copies: List[int]
    copy_of: List[int]
    scenario_ids: List[int] = field(default_factory=list)
    x: Dict[Tuple[str, int], int] = field(default_factory=dict)
    f: Dict[Tuple[str, int], int] = field(default_factory=dict)
    theta_da: Dict[Tuple[int, int], int] = field(default_factory=dict)
    X: Dict[Tuple[str, int], int] = field(default_factory=dict)
    u: Dict[Tuple[str, int], int] = field(default_factory=dict)
    v: Dict[Tuple[str, int], int] = field(default_factory=dict)
    F: Dict[Tuple[str, int], int] = field(default_factory=dict)
    theta_rt: Dict[Tuple[int, int], int] = field(default_factory=dict)
    chi_x: Dict[str, int] = field(default_factory=dict)
    chi_f: Dict[str, int] = field(default_factory=dict)
    mean_x: Dict[str, int] = field(default_factory=dict)
    mean_f: Dict[str, int] = field(default_factory=dict)
    da_balance: Dict[Tuple[int, int], int] = field(default_factory=dict)
    rt_balance: Dict[Tuple[int, int], int] = field(default_factory=dict)
    na_x: Dict[Tuple[str, int], int] = field(default_factory=dict)
    na_f: Dict[Tuple[str, int], int] = field(default_factory=dict)

    @property
    def n_scenarios(self) -> int:
        return len(self.probs)


@dataclass
class DispatchSolution:
    """Cleared quantities keyed by participant/line id, one entry per scenario.

    ``x`` is stored per scenario for every formulation; for the canonical and
    clairvoyant forms all entries coincide.  ``x_bar``/``f_bar`` hold the
    implementable first-stage decision (the single copy, the mean, or the state).
    """

    kind: str
    probs: np.ndarray
    x: Dict[str, np.ndarray]
    X: Dict[str, np.ndarray]
    f: Dict[str, np.ndarray]
    F: Dict[str, np.ndarray]
    x_bar: Dict[str, float]
    f_bar: Dict[str, float]
    objective: float
    scenario_ids: List[int] = field(default_factory=list)

    def spread(self) -> float:
        """Largest deviation of a scenario copy from the implementable decision."""
        vals = [np.max(np.abs(v - self.x_bar[k])) for k, v in self.x.items()]
        vals += [np.max(np.abs(v - self.f_bar[k])) for k, v in self.f.items()]
        return float(max(vals, default=0.0))


def _tau(inst: Instance) -> Dict[int, Dict[str, float]]:
    """Net-inflow coefficients of each line at each bus."""
    tau: Dict[int, Dict[str, float]] = {b: {} for b in inst.bus_ids}
    for ln in inst.lines:
        tau[ln.to_bus][ln.id] = tau[ln.to_bus].get(ln.id, 0.0) + 1.0
        tau[ln.from_bus][ln.id] = tau[ln.from_bus].get(ln.id, 0.0) - 1.0
    return tau


def _build(inst: Instance, kind: str, scenario_ids: List[int],
           dense: bool = False) -> Tuple[LpModel, IndexMap]:
    scen = [inst.scenario_set[k] for k in scenario_ids]
    probs = [s.prob for s in scen]
    if kind == CLAIRVOYANT:
        probs = [1.0]
    S = range(len(scen))
    per_scenario = kind in (MEAN_VECTOR, STATE_VECTOR)
    copies = list(S) if per_scenario else [0]
    copy_of = list(S) if per_scenario else [0] * len(scen)
    parts = inst.participants
    m = LpModel(f"{kind}:{inst.name}")
    im = IndexMap(kind, probs, [p.id for p in parts], [ln.id for ln in inst.lines],
                  inst.bus_ids, copies, copy_of, list(scenario_ids))
    tau = _tau(inst)
    ref = inst.reference_bus

    def theta_bounds(n):
        return (0.0, 0.0) if n == ref else (inst.theta_min, inst.theta_max)

    # first-stage copies
    for k in copies:
        w = probs[k] if per_scenario else 1.0
        for p in parts:
            im.x[p.id, k] = m.add_var(f"x[{p.id},{k}]", p.x_min, p.x_max, w * p.c)
        for ln in inst.lines:
            im.f[ln.id, k] = m.add_var(f"f[{ln.id},{k}]", ln.f_min, ln.f_max)
        for n in inst.bus_ids:
            im.theta_da[n, k] = m.add_var(f"theta[{n},{k}]", *theta_bounds(n))
    if kind == STATE_VECTOR:
        for p in parts:
            im.chi_x[p.id] = m.add_var(f"chi_x[{p.id}]", -INF, INF)
        for ln in inst.lines:
            im.chi_f[ln.id] = m.add_var(f"chi_f[{ln.id}]", -INF, INF)

    # second stage
    for s in S:
        ps = probs[s]
        for p in parts:
            lo, hi = inst.rt_bounds(p, scen[s])
            im.X[p.id, s] = m.add_var(f"X[{p.id},{s}]", lo, hi)
            im.u[p.id, s] = m.add_var(f"u[{p.id},{s}]", 0.0, INF, ps * (p.c + p.delta_plus))
            im.v[p.id, s] = m.add_var(f"v[{p.id},{s}]", 0.0, INF, -ps * (p.c - p.delta_minus))
        for ln in inst.lines:
            im.F[ln.id, s] = m.add_var(f"F[{ln.id},{s}]", ln.F_min, ln.F_max)
        for n in inst.bus_ids:
            im.theta_rt[n, s] = m.add_var(f"Theta[{n},{s}]", *theta_bounds(n))

    by_bus: Dict[int, List[str]] = {n: [] for n in inst.bus_ids}
    for p in parts:
        by_bus[p.bus].append(p.id)

    for k in copies:
        for n in inst.bus_ids:
            row = {im.f[l, k]: a for l, a in tau[n].items()}
            for pid in by_bus[n]:
                row[im.x[pid, k]] = 1.0
            im.da_balance[n, k] = m.add_row(f"da_balance[{n},{k}]", row, EQ)
        for ln in inst.lines:
            m.add_row(f"da_flow[{ln.id},{k}]",
                      {im.f[ln.id, k]: 1.0, im.theta_da[ln.from_bus, k]: -ln.beta,
                       im.theta_da[ln.to_bus, k]: ln.beta}, EQ)

    for s in S:
        k = copy_of[s]
        for n in inst.bus_ids:
            row: Dict[int, float] = {}
            for l, a in tau[n].items():
                row[im.F[l, s]] = a
                row[im.f[l, k]] = -a
            for pid in by_bus[n]:
                row[im.X[pid, s]] = 1.0
                row[im.x[pid, k]] = -1.0
            im.rt_balance[n, s] = m.add_row(f"rt_balance[{n},{s}]", row, EQ)
        for ln in inst.lines:
            m.add_row(f"rt_flow[{ln.id},{s}]",
                      {im.F[ln.id, s]: 1.0, im.theta_rt[ln.from_bus, s]: -ln.beta,
                       im.theta_rt[ln.to_bus, s]: ln.beta}, EQ)
        for p in parts:
            m.add_row(f"split[{p.id},{s}]",
                      {im.X[p.id, s]: 1.0, im.x[p.id, k]: -1.0, im.u[p.id, s]: -1.0,
                       im.v[p.id, s]: 1.0}, EQ)

    if kind == MEAN_VECTOR and dense:
        for s in S:
            for p in parts:
                row = {im.x[p.id, t]: -probs[t] for t in S}
                row[im.x[p.id, s]] += 1.0
                im.na_x[p.id, s] = m.add_row(f"na_x[{p.id},{s}]", row, EQ)
            for ln in inst.lines:
                row = {im.f[ln.id, t]: -probs[t] for t in S}
                row[im.f[ln.id, s]] += 1.0
                im.na_f[ln.id, s] = m.add_row(f"na_f[{ln.id},{s}]", row, EQ)
    elif kind == MEAN_VECTOR:
        # x(w) = E[x] through a defined mean column: same duals, O(S) nonzeros per unit
        for p in parts:
            im.mean_x[p.id] = m.add_var(f"mean_x[{p.id}]", -INF, INF)
            row = {im.x[p.id, t]: -probs[t] for t in S}
            row[im.mean_x[p.id]] = 1.0
            m.add_row(f"mean_def_x[{p.id}]", row, EQ)
        for ln in inst.lines:
            im.mean_f[ln.id] = m.add_var(f"mean_f[{ln.id}]", -INF, INF)
            row = {im.f[ln.id, t]: -probs[t] for t in S}
            row[im.mean_f[ln.id]] = 1.0
            m.add_row(f"mean_def_f[{ln.id}]", row, EQ)
        for s in S:
            for p in parts:
                im.na_x[p.id, s] = m.add_row(f"na_x[{p.id},{s}]",
                                             {im.x[p.id, s]: 1.0, im.mean_x[p.id]: -1.0}, EQ)
            for ln in inst.lines:
                im.na_f[ln.id, s] = m.add_row(f"na_f[{ln.id},{s}]",
                                              {im.f[ln.id, s]: 1.0, im.mean_f[ln.id]: -1.0}, EQ)
    elif kind == STATE_VECTOR:
        for s in S:
            for p in parts:
                im.na_x[p.id, s] = m.add_row(f"na_x[{p.id},{s}]",
                                             {im.x[p.id, s]: 1.0, im.chi_x[p.id]: -1.0}, EQ)
            for ln in inst.lines:
                im.na_f[ln.id, s] = m.add_row(f"na_f[{ln.id},{s}]",
                                              {im.f[ln.id, s]: 1.0, im.chi_f[ln.id]: -1.0}, EQ)
    return m, im


def build_clairvoyant(inst: Instance, k: int) -> Tuple[LpModel, IndexMap]:
    """Deterministic clearing with full knowledge of scenario ``k``."""
    if not 0 <= k < inst.n_scenarios:
        raise KeyError(f"unknown scenario {k}")
    return _build(inst, CLAIRVOYANT, [k])


def build_canonical(inst: Instance) -> Tuple[LpModel, IndexMap]:
    return _build(inst, CANONICAL, list(range(inst.n_scenarios)))


def build_mean_vector(inst: Instance, dense: bool = False) -> Tuple[LpModel, IndexMap]:
    """Rows ``x(w) - E[x] = 0``; ``dense`` writes the expectation out in every row.

    The default routes it through one mean column per unit, which has the same
    feasible set and the same nonanticipativity duals with far fewer nonzeros.
    """
    return _build(inst, MEAN_VECTOR, list(range(inst.n_scenarios)), dense)


def build_state_vector(inst: Instance) -> Tuple[LpModel, IndexMap]:
    return _build(inst, STATE_VECTOR, list(range(inst.n_scenarios)))


BUILDERS = {CANONICAL: build_canonical, MEAN_VECTOR: build_mean_vector,
            STATE_VECTOR: build_state_vector}


def build(inst: Instance, kind: str, scenario: Optional[int] = None) -> Tuple[LpModel, IndexMap]:
    if kind == CLAIRVOYANT:
        return build_clairvoyant(inst, 0 if scenario is None else scenario)
    try:
        return BUILDERS[kind](inst)
    except KeyError:
        raise ValueError(f"unknown formulation {kind!r}") from None


def extract_dispatch(kind: str, sol: LpSolution, im: IndexMap) -> DispatchSolution:
    if not sol.optimal:
        raise NotOptimalError(f"{kind} solve is {sol.status}")
    z = sol.primal
    S = range(im.n_scenarios)
    probs = np.asarray(im.probs)
    x = {i: np.array([z[im.x[i, im.copy_of[s]]] for s in S]) for i in im.participants}
    f = {l: np.array([z[im.f[l, im.copy_of[s]]] for s in S]) for l in im.lines}
    X = {i: np.array([z[im.X[i, s]] for s in S]) for i in im.participants}
    F = {l: np.array([z[im.F[l, s]] for s in S]) for l in im.lines}
    if kind == STATE_VECTOR:
        x_bar = {i: float(z[im.chi_x[i]]) for i in im.participants}
        f_bar = {l: float(z[im.chi_f[l]]) for l in im.lines}
    else:
        x_bar = {i: float(probs @ v) for i, v in x.items()}
        f_bar = {l: float(probs @ v) for l, v in f.items()}
    return DispatchSolution(kind, probs, x, X, f, F, x_bar, f_bar, sol.objective,
                            list(im.scenario_ids))


def clear(inst: Instance, kind: str, scenario: Optional[int] = None):
    """Build, solve and extract in one call; returns ``(model, index_map, solution, dispatch)``."""
    require_valid(inst)
    model, im = build(inst, kind, scenario)
    sol = solve_lp(model)
    return model, im, sol, extract_dispatch(kind, sol, im)


def dispatch_surplus(inst: Instance, d: DispatchSolution, s: int) -> float:
    """Social surplus realized by dispatch ``d`` in its ``s``-th scenario."""
    return social_surplus(inst, {i: v[s] for i, v in d.x.items()},
                          {i: v[s] for i, v in d.X.items()})


def single_scenario(inst: Instance, k: int) -> Instance:
    """Copy of ``inst`` keeping only scenario ``k`` with probability one."""
    s = inst.scenario_set[k]
    return inst.with_scenarios(ScenarioSet((Scenario(1.0, dict(s.x_avail), s.name),)))
