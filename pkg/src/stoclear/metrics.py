"""Market metrics and guarantee verdicts computed from clearings.

All money verdicts use an absolute tolerance of 1e-6, scaled by ``1 + |value|``
once the value exceeds 1e3 in magnitude.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .formulations import CANONICAL, CLAIRVOYANT, MEAN_VECTOR, STATE_VECTOR, DispatchSolution
from .model import Instance, realized_value
from .pricing import (RC, RM, RS, Clearing, DistortionTable, DualSolution, PaymentTable,
                      derive_sigma_from_mu, price_distortion)

MONEY_TOL = 1e-6
PRICE_TOL = 1e-6
SCENARIO, EXPECTATION = "scenario", "expectation"


def money_tol(value: float) -> float:
    return MONEY_TOL * (1.0 + abs(value)) if abs(value) > 1e3 else MONEY_TOL


def realized_values(inst: Instance, d: DispatchSolution) -> Dict[str, np.ndarray]:
    """Realized value of every participant in every scenario of ``d``."""
    out = {}
    for p in inst.participants:
        out[p.id] = np.array([realized_value(p, x, X) for x, X in zip(d.x[p.id], d.X[p.id])])
    return out


@dataclass
class RecoveryVerdict:
    profit: np.ndarray
    expected_profit: float
    mode: str
    passed: bool


def cost_recovery(inst: Instance, pay: PaymentTable, realized: Dict[str, np.ndarray],
                  mode: str = SCENARIO) -> Dict[str, RecoveryVerdict]:
    """Generator profit ``rho + phi`` and whether it is nonnegative per scenario or on average."""
    if set(pay.rho) != set(realized):
        raise ValueError("payments and realized values cover different participants")
    out = {}
    for p in inst.generators():
        profit = pay.rho[p.id] + realized[p.id]
        expected = float(pay.probs @ profit)
        if mode == SCENARIO:
            ok = all(v >= -money_tol(v) for v in profit)
        elif mode == EXPECTATION:
            ok = expected >= -money_tol(expected)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        out[p.id] = RecoveryVerdict(profit, expected, mode, bool(ok))
    return out


@dataclass
class AdequacyVerdict:
    net_income: np.ndarray
    expected_net_income: float
    mode: str
    adequate: bool


def revenue_adequacy(pay: PaymentTable, mode: str = EXPECTATION) -> AdequacyVerdict:
    net = -pay.total()
    expected = float(pay.probs @ net)
    if mode == SCENARIO:
        ok = all(v >= -money_tol(v) for v in net)
    elif mode == EXPECTATION:
        ok = expected >= -money_tol(expected)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return AdequacyVerdict(net, expected, mode, bool(ok))


@dataclass
class SettlementTotals:
    """Expected cash flows of the ISO: paid to generators, collected from loads."""

    cost: float
    revenue: float

    @property
    def net_income(self) -> float:
        return self.revenue - self.cost


def settlement_totals(inst: Instance, pay: PaymentTable) -> SettlementTotals:
    exp = pay.expected_rho
    cost = sum(exp[p.id] for p in inst.participants if p.is_generator)
    revenue = -sum(exp[p.id] for p in inst.participants if not p.is_generator)
    return SettlementTotals(cost, revenue)


@dataclass
class MvConditions:
    aggregate: float
    expected_mu: Dict[str, float]
    expected_x: Dict[str, float]

    @property
    def adequacy_guaranteed(self) -> bool:
        return self.aggregate <= money_tol(self.aggregate)

    def recovery_guaranteed(self, pid: str) -> bool:
        return self.expected_mu[pid] >= -PRICE_TOL


def mv_conditions(inst: Instance, duals: DualSolution, d: DispatchSolution) -> MvConditions:
    """``sum_i E[mu_i] E[x_i]`` over all participants, and each ``E[mu_i]``."""
    if duals.kind != MEAN_VECTOR:
        raise ValueError("conditions apply to mean-vector duals")
    e_mu = {p.id: duals.expect(duals.mu_x[p.id]) for p in inst.participants}
    e_x = {p.id: float(d.probs @ d.x[p.id]) for p in inst.participants}
    return MvConditions(sum(e_mu[i] * e_x[i] for i in e_mu), e_mu, e_x)


@dataclass
class BandViolation:
    key: object
    scenario: Optional[int]
    value: float
    lower: float
    upper: float


def distortion_violations(inst: Instance, table: DistortionTable,
                          duals: Optional[DualSolution] = None) -> List[BandViolation]:
    """Entries of ``table`` outside the premium band.

    Rc: expected nodal distortion against ``[max(-delta+), min(delta-)]`` over
    the node's participants.  Rs: every participant and scenario against
    ``[-delta+, delta-]``.  Rm: the same band after subtracting ``p(w) mu(w)``,
    which needs ``duals``.
    """
    out = []
    if table.mechanism == RC:
        expected = table.expected_M
        for n in inst.bus_ids:
            here = [p for p in inst.participants if p.bus == n]
            if not here:
                continue
            lo = max(-p.delta_plus for p in here)
            hi = min(p.delta_minus for p in here)
            v = expected[n]
            if v < lo - PRICE_TOL or v > hi + PRICE_TOL:
                out.append(BandViolation(n, None, v, lo, hi))
        return out
    for p in inst.participants:
        values = table.M[p.id]
        if table.mechanism == RM:
            if duals is None:
                raise ValueError("mean-vector band check needs the duals")
            values = values - duals.probs * duals.mu_x[p.id]
        for s, v in enumerate(values):
            if v < -p.delta_plus - PRICE_TOL or v > p.delta_minus + PRICE_TOL:
                out.append(BandViolation(p.id, s, float(v), -p.delta_plus, p.delta_minus))
    return out


def minimums_are_zero(inst: Instance) -> bool:
    """Whether every generator has zero minimum output in both stages."""
    return all(p.x_min == 0 and p.X_min == 0 for p in inst.generators())


@dataclass
class RelationshipReport:
    """Residuals of the cross-formulation dual relationships.

    Price and multiplier residuals above ``tol`` point to dual multiplicity
    rather than a wrong solve, so they raise ``multiplicity_suspected``; the
    report fails only on ``E[sigma]`` or on unequal objectives.
    """

    day_ahead_mean: float
    sigma_mean: float
    sigma_vs_mu: float
    real_time: float
    objective_spread: float
    tol: float
    objective: float = 0.0

    def limit(self, name: str) -> float:
        return self.tol * (1 + abs(self.objective)) if name == "objective spread" else self.tol

    @property
    def multiplicity_suspected(self) -> bool:
        return max(self.day_ahead_mean, self.sigma_vs_mu, self.real_time) > self.tol

    @property
    def passed(self) -> bool:
        return (self.sigma_mean <= self.tol
                and self.objective_spread <= self.limit("objective spread"))

    def rows(self):
        return [("pi_c vs E[pi]", self.day_ahead_mean), ("E[sigma]", self.sigma_mean),
                ("sigma vs mu - E[mu]", self.sigma_vs_mu), ("Pi across forms", self.real_time),
                ("objective spread", self.objective_spread)]


def relationship_checks(canonical: Clearing, mv: Clearing, sv: Clearing, tol: float = 1e-5) -> RelationshipReport:
    """Residuals of the dual relationships between the three formulations."""
    if not (canonical.instance is mv.instance is sv.instance
            or canonical.instance == mv.instance == sv.instance):
        raise ValueError("clearings come from different instances")
    if (canonical.kind, mv.kind, sv.kind) != (CANONICAL, MEAN_VECTOR, STATE_VECTOR):
        raise ValueError("expected canonical, mean-vector and state-vector clearings")
    c, m, s = canonical.duals, mv.duals, sv.duals
    buses = list(c.pi)
    da = max((max(abs(c.pi[n][0] - m.expect(m.pi[n])), abs(c.pi[n][0] - s.expect(s.pi[n])))
              for n in buses), default=0.0)
    rt = max((max(np.max(np.abs(c.Pi[n] - m.Pi[n])), np.max(np.abs(c.Pi[n] - s.Pi[n])))
              for n in buses), default=0.0)
    sig_all = {**s.sigma_x, **{("line", k): v for k, v in s.sigma_f.items()}}
    e_sigma = max((abs(s.expect(v)) for v in sig_all.values()), default=0.0)
    centered = derive_sigma_from_mu(m.mu_x, m.probs)
    centered_f = derive_sigma_from_mu(m.mu_f, m.probs)
    gap = [np.max(np.abs(centered[i] - s.sigma_x[i])) for i in centered]
    gap += [np.max(np.abs(centered_f[k] - s.sigma_f[k])) for k in centered_f]
    objs = [canonical.dispatch.objective, mv.dispatch.objective, sv.dispatch.objective]
    return RelationshipReport(float(da), float(e_sigma), float(max(gap, default=0.0)), float(rt),
                       float(max(objs) - min(objs)), tol, float(objs[0]))


@dataclass
class MetricsReport:
    """Settlement metrics of one clearing under its pricing mechanism."""

    mechanism: str
    kind: str
    profit: Dict[str, np.ndarray]
    expected_profit: Dict[str, float]
    recovery_scenario: Dict[str, bool]
    recovery_expected: Dict[str, bool]
    totals: SettlementTotals
    net_income: np.ndarray
    adequate_scenario: bool
    adequate_expected: bool
    distortion: DistortionTable
    band_violations: List[BandViolation]
    guarantees_covered: bool
    mv: Optional[MvConditions] = None
    notes: List[str] = field(default_factory=list)


def evaluate(clearing: Clearing) -> MetricsReport:
    inst = clearing.instance
    realized = realized_values(inst, clearing.dispatch)
    pay = clearing.payments
    by_scenario = cost_recovery(inst, pay, realized, SCENARIO)
    in_expectation = cost_recovery(inst, pay, realized, EXPECTATION)
    adequacy_s = revenue_adequacy(pay, SCENARIO)
    adequacy_e = revenue_adequacy(pay, EXPECTATION)
    table = price_distortion(inst, clearing.duals)
    mv = None
    if clearing.kind == MEAN_VECTOR:
        mv = mv_conditions(inst, clearing.duals, clearing.dispatch)
    covered = minimums_are_zero(inst)
    notes = [] if covered else ["generator minimums are nonzero: guarantees assume zero minimums"]
    return MetricsReport(
        pay.mechanism, clearing.kind,
        {g: v.profit for g, v in by_scenario.items()},
        {g: v.expected_profit for g, v in by_scenario.items()},
        {g: v.passed for g, v in by_scenario.items()},
        {g: v.passed for g, v in in_expectation.items()},
        settlement_totals(inst, pay), adequacy_s.net_income,
        adequacy_s.adequate, adequacy_e.adequate, table,
        distortion_violations(inst, table, clearing.duals), covered, mv, notes)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


def guarantee_checks(report: MetricsReport) -> List[Check]:
    """Properties the pricing mechanism of ``report`` is claimed to guarantee."""
    checks = []
    mech = report.mechanism
    if report.kind == CLAIRVOYANT:
        checks.append(Check("clairvoyant cost recovery", all(report.recovery_scenario.values())))
        checks.append(Check("clairvoyant revenue adequacy", report.adequate_scenario))
        return checks
    checks.append(Check(f"{mech} expected revenue adequacy", report.adequate_expected,
                        f"net income {report.totals.net_income:.6g}")
                  if mech != RM else _mv_adequacy(report))
    if mech == RS and report.guarantees_covered:
        bad = [g for g, ok in report.recovery_scenario.items() if not ok]
        checks.append(Check("Rs scenario cost recovery", not bad, ", ".join(bad)))
    if mech == RC and report.guarantees_covered:
        bad = [g for g, ok in report.recovery_expected.items() if not ok]
        checks.append(Check("Rc expected cost recovery", not bad, ", ".join(bad)))
    if mech == RM and report.mv is not None:
        bad = [g for g, ok in report.recovery_expected.items()
               if report.mv.recovery_guaranteed(g) and not ok]
        checks.append(Check("Rm expected cost recovery where E[mu] >= 0", not bad, ", ".join(bad)))
    v = report.band_violations
    checks.append(Check(f"{mech} distortion band", not v,
                        f"{len(v)} entries outside band" if v else ""))
    return checks


def _mv_adequacy(report: MetricsReport) -> Check:
    if report.mv.adequacy_guaranteed:
        return Check("Rm expected revenue adequacy under condition", report.adequate_expected,
                     f"condition {report.mv.aggregate:.6g}")
    return Check("Rm expected revenue adequacy under condition", True,
                 f"condition {report.mv.aggregate:.6g} > 0, no guarantee")
