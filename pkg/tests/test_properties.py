import numpy as np
from conftest import STOCHASTIC
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from oracles import breakpoint_oracle
from stoclear import clear_and_price, dump_instance, loads_instance, perturb_bids, random_instance
from stoclear.formulations import clear

seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)
quick = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@quick
@given(seeds)
def test_formulations_agree(seed):
    inst = random_instance(seed, max_buses=3, max_participants=6, max_scenarios=6)
    objs = [clear(inst, k)[3].objective for k in STOCHASTIC]
    assert max(objs) - min(objs) <= 1e-6 * max(1.0, abs(objs[0]))


@quick
@given(seeds)
def test_information_prices_have_zero_mean(seed):
    inst = random_instance(seed, max_buses=3, max_participants=6, max_scenarios=6)
    duals = clear_and_price(inst, "state_vector").duals
    for v in (*duals.sigma_x.values(), *duals.sigma_f.values()):
        assert abs(float(duals.probs @ v)) <= 1e-7


@quick
@given(seeds)
def test_clairvoyant_bound(seed):
    inst = random_instance(seed, max_buses=3, max_participants=6, max_scenarios=5)
    stochastic = clear(inst, "canonical")[3].objective
    waits = [clear(inst, "clairvoyant", s)[3].objective for s in range(inst.n_scenarios)]
    assert float(np.dot(inst.probs, waits)) <= stochastic + 1e-7 * (1 + abs(stochastic))


@quick
@given(seeds)
def test_single_bus_lp_matches_oracle(seed):
    inst = random_instance(seed, max_buses=1, max_participants=4, max_scenarios=4)
    oracle = breakpoint_oracle(inst)
    d = clear(inst, "canonical")[3]
    assert abs(d.objective - oracle["objective"]) <= 1e-9 * max(1.0, abs(oracle["objective"]))


@quick
@given(seeds)
def test_json_round_trip(seed):
    inst = random_instance(seed)
    assert loads_instance(dump_instance(inst)) == inst


@quick
@given(seeds, seeds)
def test_perturbation_is_small_and_reproducible(instance_seed, seed):
    inst = random_instance(instance_seed, max_scenarios=3)
    a, b = perturb_bids(inst, seed), perturb_bids(inst, seed)
    assert a == b
    for p, q in zip(inst.participants, a.participants):
        assert abs(p.c - q.c) <= 1e-7 * abs(p.c)
        assert (q.delta_plus > 0) and (q.delta_minus > 0)
