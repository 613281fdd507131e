"""Acceptance criteria, one test per criterion.

Each test appends a ``PASS``/``FAIL``/``SKIP`` line to ``ACCEPTANCE``; the
lines are printed in the terminal summary.  Distortion-band criteria (3c, 4c,
5c) are strict xfails: the band fails on instances with unique prices, so the
check runs at its stated tolerance and is expected to fail.
"""
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE, STOCHASTIC

from oracles import breakpoint_oracle
from stoclear import (clear_and_price, evaluate, load_embedded, random_instance, relationship_checks,
                      solve_progressive_hedging)
from stoclear.formulations import clear, single_scenario
from stoclear.metrics import distortion_violations, mv_conditions, realized_values

N_INSTANCES = 100
TOL = 1e-6
BAND_REASON = ("premium band fails for unique prices; see the one-scenario counterexample "
               "in test_pricing")


def record(criterion, passed, detail):
    status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
    ACCEPTANCE.append((criterion, f"criterion {criterion:<3} {status:<5} {detail}"))


def family():
    return [random_instance(seed) for seed in range(N_INSTANCES)]


@pytest.fixture(scope="module")
def instances():
    return family()


@pytest.fixture(scope="module")
def clearings(instances):
    return [{k: clear_and_price(inst, k) for k in STOCHASTIC} for inst in instances]


@pytest.fixture(scope="module")
def reports(clearings):
    return [{k: evaluate(c) for k, c in row.items()} for row in clearings]


def expected_total(c):
    return float(c.payments.probs @ np.sum(list(c.payments.rho.values()), axis=0))


def generator_profits(c):
    phi = realized_values(c.instance, c.dispatch)
    return {p.id: c.payments.rho[p.id] + phi[p.id] for p in c.instance.generators()}


def test_1_formulation_equivalence(instances):
    start = time.perf_counter()
    worst = 0.0
    for inst in instances:
        objs = [clear(inst, k)[3].objective for k in STOCHASTIC]
        worst = max(worst, (max(objs) - min(objs)) / max(1.0, abs(objs[0])))
    seconds = time.perf_counter() - start
    ok = worst <= 1e-6 and seconds < 60
    record("1", ok, f"{N_INSTANCES} instances, worst relative spread {worst:.2e}, {seconds:.1f} s")
    assert ok


def test_2_cross_formulation_duals(instances, clearings):
    worst, worst_sigma = 0.0, 0.0
    for seed, inst in enumerate(instances):
        cl = [clear_and_price(inst, k, perturb_seed=seed) for k in STOCHASTIC]
        rep = relationship_checks(*cl)
        worst = max(worst, max(v for name, v in rep.rows() if name != "objective spread"))
    for row in clearings:
        worst_sigma = max(worst_sigma, relationship_checks(*row.values()).sigma_mean)
    ok = worst <= 1e-5 and worst_sigma <= 1e-7
    record("2", ok, f"perturbed worst residual {worst:.2e}; unperturbed E[sigma] {worst_sigma:.2e}")
    assert ok


def test_3ab_state_vector_recovery_and_adequacy(instances, clearings):
    assert all(p.x_min == 0 and p.X_min == 0 for inst in instances for p in inst.generators())
    worst_profit, worst_total = np.inf, -np.inf
    for row in clearings:
        c = row["state_vector"]
        worst_profit = min([worst_profit] + [float(v.min()) for v in generator_profits(c).values()])
        worst_total = max(worst_total, expected_total(c))
    ok = worst_profit >= -TOL and worst_total <= TOL
    record("3ab", ok, f"Rs min scenario profit {worst_profit:.3g}, max E[sum rho] {worst_total:.3g}")
    assert ok


@pytest.mark.xfail(strict=True, reason=BAND_REASON)
def test_3c_state_vector_band(reports):
    bad = sum(bool(r["state_vector"].band_violations) for r in reports)
    record("3c", bad == 0, f"Rs band violated on {bad}/{N_INSTANCES} instances (unattainable)")
    assert bad == 0


def test_4ab_mean_vector_conditional_guarantees(clearings):
    conditioned = recovered = 0
    ok = True
    for row in clearings:
        c = row["mean_vector"]
        cond = mv_conditions(c.instance, c.duals, c.dispatch)
        if cond.aggregate <= 0:
            conditioned += 1
            ok &= expected_total(c) <= TOL
        for gid, profit in generator_profits(c).items():
            if cond.expected_mu[gid] >= 0:
                recovered += 1
                ok &= float(c.payments.probs @ profit) >= -TOL
    record("4ab", ok, f"adequacy on {conditioned} conditioned instances, "
                      f"recovery on {recovered} generators with E[mu] >= 0")
    assert ok


@pytest.mark.xfail(strict=True, reason=BAND_REASON)
def test_4c_mean_vector_band(clearings, reports):
    bad = sum(bool(distortion_violations(row["mean_vector"].instance, rep["mean_vector"].distortion,
                                         row["mean_vector"].duals))
              for row, rep in zip(clearings, reports))
    record("4c", bad == 0, f"shifted Rm band violated on {bad}/{N_INSTANCES} instances (unattainable)")
    assert bad == 0


def test_5ab_canonical_recovery_and_adequacy(clearings):
    worst_profit, worst_total = np.inf, -np.inf
    for row in clearings:
        c = row["canonical"]
        profits = [float(c.payments.probs @ v) for v in generator_profits(c).values()]
        worst_profit = min([worst_profit] + profits)
        worst_total = max(worst_total, expected_total(c))
    ok = worst_profit >= -TOL and worst_total <= TOL
    record("5ab", ok, f"Rc min expected profit {worst_profit:.3g}, max E[sum rho] {worst_total:.3g}")
    assert ok


@pytest.mark.xfail(strict=True, reason=BAND_REASON)
def test_5c_canonical_band(reports):
    bad = sum(bool(r["canonical"].band_violations) for r in reports)
    record("5c", bad == 0, f"Rc nodal band violated on {bad}/{N_INSTANCES} instances (unattainable)")
    assert bad == 0


def test_6_clairvoyant_scenario_guarantees(instances):
    solves = failures = 0
    for inst in instances:
        for s in range(inst.n_scenarios):
            c = clear_and_price(inst, "clairvoyant", s)
            solves += 1
            phi = realized_values(inst, c.dispatch)
            profit_ok = all(c.payments.rho[p.id][0] + phi[p.id][0] >= -TOL for p in inst.participants)
            failures += not (profit_ok and expected_total(c) <= TOL)
    record("6", failures == 0, f"{solves} clairvoyant clearings, {failures} failures")
    assert failures == 0


def oracle_agrees(inst):
    oracle = breakpoint_oracle(inst)
    d = clear(inst, "canonical")[3]
    if abs(d.objective - oracle["objective"]) > 1e-9 * max(1.0, abs(oracle["objective"])):
        return False
    gap = max(max(abs(d.x[i][0] - oracle["x"][i]), float(np.max(np.abs(d.X[i] - oracle["X"][i]))))
              for i in oracle["x"])
    return gap <= 1e-7


def test_7_breakpoint_oracle(micro1):
    extra = [random_instance(1000 + k, max_buses=1, max_participants=4, max_scenarios=4)
             for k in range(30)]
    micro_ok = oracle_agrees(micro1)
    clairvoyant_ok = all(oracle_agrees(single_scenario(micro1, s)) for s in range(2))
    passed = sum(oracle_agrees(inst) for inst in extra)
    ok = micro_ok and clairvoyant_ok and passed == len(extra)
    record("7", ok, f"MICRO-1 {'agrees' if micro_ok else 'differs'}, "
                    f"{passed}/{len(extra)} one-bus instances agree")
    assert ok


def test_8_progressive_hedging():
    cases = [load_embedded(n) for n in ("micro1", "pzp6", "zkab6")]
    cases += [random_instance(seed) for seed in range(5)]
    start = time.perf_counter()
    worst = {"objective": 0.0, "E[w]": 0.0, "x_bar": 0.0}
    ok = True
    for inst in cases:
        assert inst.n_scenarios <= 50
        r = solve_progressive_hedging(inst)
        d = clear(inst, "mean_vector")[3]
        ok &= r.converged
        if not r.converged:
            continue
        gaps = {"objective": abs(r.dispatch.objective - d.objective) / max(1.0, abs(d.objective)),
                "E[w]": max(abs(float(inst.probs @ v)) for v in r.w.values()),
                "x_bar": max(abs(r.dispatch.x_bar[k] - d.x_bar[k]) for k in d.x_bar)}
        worst = {k: max(worst[k], gaps[k]) for k in worst}
    seconds = time.perf_counter() - start
    ok &= (worst["objective"] <= 1e-4 and worst["E[w]"] <= 1e-10 and worst["x_bar"] <= 1e-3
           and seconds < 120)
    record("8", ok, f"{len(cases)} instances, worst " +
           ", ".join(f"{k} {v:.2e}" for k, v in worst.items()) + f", {seconds:.1f} s")
    assert ok


def test_9_golden_numbers():
    fixtures = [load_embedded(n) for n in ("pzp6", "zkab6", "soda30")]
    incomplete = [inst.name for inst in fixtures if not inst.fixture_complete]
    if incomplete:
        record("9", "SKIP", "fixtures reconstructed, not complete: " + ", ".join(incomplete))
        pytest.skip("golden numbers need complete fixtures")
    record("9", "FAIL", "complete fixtures present but no golden comparison is wired")
    pytest.fail("complete fixtures need golden-number checks")
