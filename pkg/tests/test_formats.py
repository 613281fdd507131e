import json
import math

import pytest

from stoclear import dump_instance, load_embedded, loads_instance, parse_instance, resolve_instance
from stoclear.formats import (EMBEDDED, InstanceFormatError, instance_to_dict, parse_scenarios_csv,
                              scenarios_from_csv_text)
from stoclear.model import InstanceError, validate_instance


@pytest.mark.parametrize("name", EMBEDDED)
def test_embedded_instances_validate(name):
    report = validate_instance(load_embedded(name))
    assert report.errors == []


@pytest.mark.parametrize("name", EMBEDDED)
def test_round_trip_is_field_for_field(name):
    inst = load_embedded(name)
    again = loads_instance(dump_instance(inst))
    assert again == inst
    assert dump_instance(again) == dump_instance(inst)


def test_micro1_golden(micro1):
    assert micro1.name == "MICRO-1"
    g, d = micro1.participants
    assert (g.c, g.delta_plus, g.delta_minus, g.x_max) == (10, 1, 2, 100)
    assert (d.c, d.x_min, d.X_min, d.is_stochastic) == (50, -60, -100, True)
    assert [s.x_avail["D"] for s in micro1.scenario_set] == [40, 80]
    assert micro1.probs == [0.5, 0.5]


def test_pzp6_shape(pzp6):
    assert len(pzp6.buses) == 6
    assert len(pzp6.generators()) == 6
    assert sum(not p.is_generator for p in pzp6.participants) == 1
    line = next(ln for ln in pzp6.lines if {ln.from_bus, ln.to_bus} == {1, 6})
    assert (line.f_min, line.f_max) == (-150, 150)
    t2 = pzp6.participant("thermal2")
    assert (t2.delta_plus, t2.delta_minus) == (9, 12)
    assert pzp6.n_scenarios == 25


def test_soda30_wind_file():
    inst = load_embedded("soda30")
    assert inst.n_scenarios == 200
    assert all(p == 0.005 for p in inst.probs)
    assert [p.c for p in inst.generators()][:4] == [200, 175, 100, 300]


def test_unknown_field_is_named(micro1):
    data = instance_to_dict(micro1)
    data["participants"][0]["ramp_mw"] = 5
    with pytest.raises(InstanceFormatError, match="participants\\[0\\]: unknown field 'ramp_mw'"):
        loads_instance(json.dumps(data))


def test_missing_field_is_named(micro1):
    data = instance_to_dict(micro1)
    del data["lines"]
    del data["participants"][1]["bid_usd_per_mwh"]
    with pytest.raises(InstanceFormatError, match="missing field 'bid_usd_per_mwh'"):
        loads_instance(json.dumps(data))


def test_bad_number_is_located(micro1):
    data = instance_to_dict(micro1)
    data["participants"][0]["da_max_mw"] = "lots"
    with pytest.raises(InstanceFormatError, match="participants\\[0\\].da_max_mw"):
        loads_instance(json.dumps(data))


def test_json_syntax_error_has_line_and_column():
    with pytest.raises(InstanceFormatError, match=r"bad.json:2:\d+"):
        loads_instance('{\n  "name": ,\n}', source="bad.json")


def test_infinite_bounds_round_trip(pzp6):
    text = dump_instance(pzp6)
    assert '"inf"' in text
    assert math.isinf(loads_instance(text).lines[0].f_max)


def test_parse_instance_surfaces_validation_errors(tmp_path, micro1):
    data = instance_to_dict(micro1)
    data["participants"][0]["da_min_mw"] = 500
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    with pytest.raises(InstanceError, match="bound inversion"):
        parse_instance(path)


def test_resolve_prefers_files_then_names(tmp_path, micro1):
    path = tmp_path / "m.json"
    path.write_text(dump_instance(micro1))
    assert resolve_instance(str(path)) == micro1
    assert resolve_instance("micro1") == micro1
    with pytest.raises(InstanceFormatError, match="no such file or embedded instance"):
        resolve_instance("nowhere")


def test_csv_uniform_probabilities(micro1):
    scen = scenarios_from_csv_text("D\n40\n60\n80\n90\n", micro1)
    assert len(scen) == 4
    assert scen.probs == [0.25] * 4
    assert scen[2].x_avail == {"D": 80.0}


def test_csv_single_row(micro1):
    scen = scenarios_from_csv_text("D\n55\n", micro1)
    assert len(scen) == 1 and scen[0].prob == 1.0


def test_csv_probabilities_must_sum_to_one(micro1):
    with pytest.raises(InstanceFormatError, match="probabilities sum to 0.98"):
        scenarios_from_csv_text("D,prob\n40,0.5\n80,0.48\n", micro1)


def test_csv_unknown_column(micro1):
    with pytest.raises(InstanceFormatError, match="unknown participant column 'W9'"):
        scenarios_from_csv_text("D,W9\n40,1\n", micro1)


def test_csv_negative_availability_has_line(micro1):
    with pytest.raises(InstanceFormatError, match=":3: negative availability for 'D'"):
        scenarios_from_csv_text("D\n40\n-1\n", micro1)


def test_csv_file_reference(tmp_path, micro1):
    (tmp_path / "scen.csv").write_text("name,D,prob\nlow,40,0.25\nhigh,80,0.75\n")
    data = instance_to_dict(micro1)
    data["scenarios"] = {"csv": "scen.csv"}
    (tmp_path / "inst.json").write_text(json.dumps(data))
    inst = parse_instance(tmp_path / "inst.json")
    assert [s.name for s in inst.scenario_set] == ["low", "high"]
    assert inst.probs == [0.25, 0.75]
    assert parse_scenarios_csv(tmp_path / "scen.csv", inst) == inst.scenario_set


def test_product_form_in_file(micro1):
    data = instance_to_dict(micro1)
    data["scenarios"] = {"product_mw": {"D": [40, 60, 80]}}
    inst = loads_instance(json.dumps(data))
    assert [s.x_avail["D"] for s in inst.scenario_set] == [40, 60, 80]
