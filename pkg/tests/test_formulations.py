import numpy as np
import pytest
from conftest import STOCHASTIC, gen, load, one_bus

from oracles import breakpoint_oracle
from stoclear import Scenario, build_mean_vector, check_kkt, clear_and_price, random_instance, solve_lp
from stoclear.formulations import clear, dispatch_surplus, extract_dispatch, single_scenario


@pytest.mark.parametrize("k, objective, x_g, X_g", [(0, -1600.0, 40.0, 40.0),
                                                      (1, -3120.0, 60.0, 80.0)])
def test_micro1_clairvoyant(micro1, k, objective, x_g, X_g):
    oracle = breakpoint_oracle(single_scenario(micro1, k))
    assert oracle["objective"] == pytest.approx(objective, abs=1e-9)
    *_, d = clear(micro1, "clairvoyant", k)
    assert d.objective == pytest.approx(objective, abs=1e-9)
    assert d.x["G"][0] == pytest.approx(x_g, abs=1e-9)
    assert d.X["G"][0] == pytest.approx(X_g, abs=1e-9)
    assert d.X["D"][0] == pytest.approx(-X_g, abs=1e-9)


def test_micro1_canonical_matches_breakpoint_oracle(micro1):
    oracle = breakpoint_oracle(micro1)
    *_, d = clear(micro1, "canonical")
    assert oracle["objective"] == pytest.approx(-2320.0, abs=1e-9)
    assert d.objective == pytest.approx(-2320.0, abs=1e-9)
    assert d.x["G"] == pytest.approx([40.0, 40.0], abs=1e-9)
    assert d.X["G"] == pytest.approx([40.0, 80.0], abs=1e-9)
    assert d.X["D"] == pytest.approx([-40.0, -80.0], abs=1e-9)


def test_objective_is_negative_expected_surplus(micro1):
    *_, d = clear(micro1, "canonical")
    surplus = [dispatch_surplus(micro1, d, s) for s in range(2)]
    assert surplus == pytest.approx([1600.0, 3040.0])
    assert d.objective == pytest.approx(-float(d.probs @ surplus), abs=1e-9)


@pytest.mark.parametrize("kind", ["mean_vector", "state_vector"])
def test_micro1_nonanticipative_forms(micro1, kind):
    *_, d = clear(micro1, kind)
    assert d.objective == pytest.approx(-2320.0, rel=1e-7)
    assert d.x["G"] == pytest.approx([40.0, 40.0], abs=1e-7)
    assert d.x_bar["G"] == pytest.approx(40.0, abs=1e-7)
    assert d.spread() <= 1e-7


def test_zero_demand_market_is_idle():
    inst = one_bus([gen("g", 10, 1, 2, 0, 100), load("d", 50, 3, 3, 0.0)], [Scenario(1.0)])
    for kind in STOCHASTIC + ("clairvoyant",):
        *_, d = clear(inst, kind, 0 if kind == "clairvoyant" else None)
        assert d.objective == 0
        assert all(np.all(v == 0) for v in (*d.x.values(), *d.X.values()))


def test_single_scenario_collapses_to_clairvoyant(single_scenario_market):
    cv = clear(single_scenario_market, "clairvoyant", 0)[3].objective
    for kind in STOCHASTIC:
        assert clear(single_scenario_market, kind)[3].objective == pytest.approx(cv, abs=1e-9)


def test_single_scenario_nonanticipativity_duals_vanish(single_scenario_market):
    mv = clear_and_price(single_scenario_market, "mean_vector")
    sv = clear_and_price(single_scenario_market, "state_vector")
    assert all(np.all(v == 0) for v in mv.duals.mu_x.values())
    assert all(np.all(v == 0) for v in sv.duals.sigma_x.values())


def test_flat_market_has_no_information_value(flat_market):
    sv = clear_and_price(flat_market, "state_vector")
    cv = clear(flat_market, "clairvoyant", 0)[3]
    for pid, sig in sv.duals.sigma_x.items():
        assert np.max(np.abs(sig)) <= 1e-9
        assert sv.dispatch.x_bar[pid] == pytest.approx(cv.x[pid][0], abs=1e-9)
        assert sv.dispatch.x[pid] == pytest.approx([cv.x[pid][0]] * 2, abs=1e-9)


@pytest.mark.parametrize("seed", [0, 3, 11, 42])
def test_sparse_and_dense_mean_vector_agree(seed):
    inst = random_instance(seed)
    results = []
    for dense in (False, True):
        model, im = build_mean_vector(inst, dense=dense)
        sol = solve_lp(model)
        assert check_kkt(model, sol, 1e-7).passed
        results.append(extract_dispatch("mean_vector", sol, im))
    sparse, dense = results
    assert sparse.objective == pytest.approx(dense.objective, rel=1e-9, abs=1e-9)
    for pid in sparse.x:
        assert sparse.x_bar[pid] == pytest.approx(dense.x_bar[pid], abs=1e-6)


def test_dense_mean_vector_rows_reference_every_scenario(micro1):
    model, im = build_mean_vector(micro1, dense=True)
    row = im.na_x["G", 0]
    assert len(model.row_cols[row]) == 2
    sparse, sim = build_mean_vector(micro1)
    assert "mean_x[G]" in sparse.var_names
    assert sim.mean_x


@pytest.mark.parametrize("seed", range(8))
def test_formulations_share_the_optimum(seed):
    inst = random_instance(seed)
    objs = [clear(inst, kind)[3].objective for kind in STOCHASTIC]
    assert max(objs) - min(objs) <= 1e-6 * (1 + abs(objs[0]))


def test_state_vector_reports_state_variables(micro1):
    *_, d = clear(micro1, "state_vector")
    assert set(d.x_bar) == {"G", "D"}
    assert d.x_bar["D"] == pytest.approx(-40.0, abs=1e-7)
