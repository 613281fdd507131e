"""JSON instance files, scenario CSV files and the embedded test systems.

Instance files are JSON objects with unit-suffixed field names; see
``docs/instance_format.md``.  Unknown fields are rejected.  Infinite bounds are
written as the strings ``"inf"`` and ``"-inf"``.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

from .model import (Bus, Instance, InstanceError, Line, Participant, Scenario, ScenarioSet,
                    product_scenarios, validate_instance)

EMBEDDED = ("micro1", "pzp6", "zkab6", "soda30")

TOP_FIELDS = {"name", "fixture_complete", "reference_bus", "theta_min_rad", "theta_max_rad",
              "buses", "lines", "participants", "scenarios", "notes", "reconstructed"}
BUS_FIELDS = {"id", "name"}
LINE_FIELDS = {"id", "from_bus", "to_bus", "da_flow_min_mw", "da_flow_max_mw",
               "rt_flow_min_mw", "rt_flow_max_mw", "beta_mw_per_rad"}
PART_FIELDS = {"id", "kind", "bus", "bid_usd_per_mwh", "premium_up_usd_per_mwh",
               "premium_down_usd_per_mwh", "da_min_mw", "da_max_mw", "rt_min_mw", "rt_max_mw",
               "stochastic"}
SCEN_FORMS = {"list", "product_mw", "csv"}
SCEN_ITEM_FIELDS = {"name", "prob", "avail_mw"}


class InstanceFormatError(InstanceError):
    """Malformed instance or scenario file; the message names the location."""


def _number(value: Any, where: str) -> float:
    if isinstance(value, str) and value in ("inf", "+inf", "-inf"):
        return -math.inf if value.startswith("-") else math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InstanceFormatError(f"{where}: expected a number, got {value!r}")
    v = float(value)
    if math.isnan(v):
        raise InstanceFormatError(f"{where}: NaN is not allowed")
    return v


def _emit(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return int(v) if float(v).is_integer() and abs(v) < 2 ** 53 else v


def _fields(obj: Any, allowed: set, required: set, where: str) -> dict:
    if not isinstance(obj, dict):
        raise InstanceFormatError(f"{where}: expected an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise InstanceFormatError(f"{where}: unknown field '{unknown[0]}'")
    missing = sorted(required - set(obj))
    if missing:
        raise InstanceFormatError(f"{where}: missing field '{missing[0]}'")
    return obj


def instance_from_dict(data: dict, base_dir: Optional[Path] = None) -> Instance:
    data = _fields(data, TOP_FIELDS, {"buses", "participants", "scenarios"}, "instance")
    buses = []
    for k, b in enumerate(data["buses"]):
        b = _fields(b, BUS_FIELDS, {"id"}, f"buses[{k}]")
        if isinstance(b["id"], bool) or not isinstance(b["id"], int):
            raise InstanceFormatError(f"buses[{k}].id: expected an integer")
        buses.append(Bus(b["id"], str(b.get("name", ""))))

    lines = []
    for k, ln in enumerate(data.get("lines", [])):
        where = f"lines[{k}]"
        ln = _fields(ln, LINE_FIELDS, LINE_FIELDS - {"beta_mw_per_rad"}, where)
        lines.append(Line(str(ln["id"]), ln["from_bus"], ln["to_bus"],
                          *(_number(ln[f], f"{where}.{f}") for f in
                            ("da_flow_min_mw", "da_flow_max_mw", "rt_flow_min_mw", "rt_flow_max_mw")),
                          _number(ln.get("beta_mw_per_rad", 1.0), f"{where}.beta_mw_per_rad")))

    parts = []
    for k, p in enumerate(data["participants"]):
        where = f"participants[{k}]"
        p = _fields(p, PART_FIELDS, PART_FIELDS - {"stochastic"}, where)
        parts.append(Participant(
            str(p["id"]), p["kind"], p["bus"],
            *(_number(p[f], f"{where}.{f}") for f in
              ("bid_usd_per_mwh", "premium_up_usd_per_mwh", "premium_down_usd_per_mwh",
               "da_min_mw", "da_max_mw", "rt_min_mw", "rt_max_mw")),
            bool(p.get("stochastic", False))))

    theta_min = _number(data.get("theta_min_rad", -math.pi), "theta_min_rad")
    theta_max = _number(data.get("theta_max_rad", math.pi), "theta_max_rad")
    skeleton = Instance(buses, lines, parts, ScenarioSet(()), theta_min, theta_max,
                        data.get("reference_bus"), str(data.get("name", "")),
                        bool(data.get("fixture_complete", True)))
    return skeleton.with_scenarios(_scenarios(data["scenarios"], skeleton, base_dir))


def _scenarios(spec: Any, inst: Instance, base_dir: Optional[Path]) -> ScenarioSet:
    if not isinstance(spec, dict) or len(spec) != 1 or next(iter(spec)) not in SCEN_FORMS:
        raise InstanceFormatError(f"scenarios: expected exactly one of {sorted(SCEN_FORMS)}")
    form, body = next(iter(spec.items()))
    if form == "product_mw":
        if not isinstance(body, dict):
            raise InstanceFormatError("scenarios.product_mw: expected an object")
        try:
            return product_scenarios({pid: [_number(v, f"scenarios.product_mw.{pid}") for v in vals]
                                      for pid, vals in body.items()})
        except ValueError as exc:
            raise InstanceFormatError(f"scenarios.product_mw: {exc}") from None
    if form == "csv":
        path = Path(body)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        return parse_scenarios_csv(path, inst)
    out = []
    for k, item in enumerate(body):
        where = f"scenarios.list[{k}]"
        item = _fields(item, SCEN_ITEM_FIELDS, {"prob"}, where)
        avail = {str(pid): _number(v, f"{where}.avail_mw.{pid}")
                 for pid, v in item.get("avail_mw", {}).items()}
        out.append(Scenario(_number(item["prob"], f"{where}.prob"), avail,
                            str(item.get("name", f"s{k + 1}"))))
    return ScenarioSet(tuple(out))


def instance_to_dict(inst: Instance) -> dict:
    return {
        "name": inst.name,
        "fixture_complete": inst.fixture_complete,
        "reference_bus": inst.reference_bus,
        "theta_min_rad": _emit(inst.theta_min),
        "theta_max_rad": _emit(inst.theta_max),
        "buses": [{"id": b.id, "name": b.name} for b in inst.buses],
        "lines": [{"id": ln.id, "from_bus": ln.from_bus, "to_bus": ln.to_bus,
                   "da_flow_min_mw": _emit(ln.f_min), "da_flow_max_mw": _emit(ln.f_max),
                   "rt_flow_min_mw": _emit(ln.F_min), "rt_flow_max_mw": _emit(ln.F_max),
                   "beta_mw_per_rad": _emit(ln.beta)} for ln in inst.lines],
        "participants": [{"id": p.id, "kind": p.kind, "bus": p.bus,
                          "bid_usd_per_mwh": _emit(p.c),
                          "premium_up_usd_per_mwh": _emit(p.delta_plus),
                          "premium_down_usd_per_mwh": _emit(p.delta_minus),
                          "da_min_mw": _emit(p.x_min), "da_max_mw": _emit(p.x_max),
                          "rt_min_mw": _emit(p.X_min), "rt_max_mw": _emit(p.X_max),
                          "stochastic": p.is_stochastic} for p in inst.participants],
        "scenarios": {"list": [{"name": s.name, "prob": s.prob,
                                "avail_mw": {k: _emit(v) for k, v in sorted(s.x_avail.items())}}
                               for s in inst.scenario_set]},
    }


def dump_instance(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), indent=2) + "\n"


def loads_instance(text: str, base_dir: Optional[Path] = None, source: str = "<string>") -> Instance:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return instance_from_dict(data, base_dir)
    except InstanceFormatError as exc:
        raise InstanceFormatError(f"{source}: {exc}") from None
    except (TypeError, KeyError) as exc:
        raise InstanceFormatError(f"{source}: malformed content ({exc})") from None


def parse_instance(path) -> Instance:
    """Read and validate an instance file; validation errors are raised together."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InstanceFormatError(f"{path}: {exc.strerror or exc}") from None
    inst = loads_instance(text, path.parent, str(path))
    report = validate_instance(inst)
    if not report.ok:
        raise InstanceError(f"{path}: " + "; ".join(report.errors))
    return inst


def parse_scenarios_csv(path, inst: Instance) -> ScenarioSet:
    """Scenario availabilities, one row per scenario; an optional ``prob`` column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InstanceFormatError(f"{path}: {exc.strerror or exc}") from None
    return scenarios_from_csv_text(text, inst, str(path))


def scenarios_from_csv_text(text: str, inst: Instance, source: str = "<csv>") -> ScenarioSet:
    reader = csv.reader(_io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise InstanceFormatError(f"{source}: empty file") from None
    known = {p.id for p in inst.participants}
    for col in header:
        if col not in known and col not in ("prob", "name"):
            raise InstanceFormatError(f"{source}:1: unknown participant column '{col}'")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise InstanceFormatError(f"{source}:{lineno}: expected {len(header)} cells")
        rec = dict(zip(header, (c.strip() for c in row)))
        avail = {}
        for col, cell in rec.items():
            if col in ("prob", "name"):
                continue
            try:
                v = float(cell)
            except ValueError:
                raise InstanceFormatError(f"{source}:{lineno}: column '{col}' is not a number") from None
            if v < 0 or math.isnan(v):
                raise InstanceFormatError(f"{source}:{lineno}: negative availability for '{col}'")
            avail[col] = v
        rows.append((rec, avail, lineno))
    if not rows:
        raise InstanceFormatError(f"{source}: no scenario rows")
    scen = []
    for k, (rec, avail, lineno) in enumerate(rows):
        if "prob" in rec:
            try:
                prob = float(rec["prob"])
            except ValueError:
                raise InstanceFormatError(f"{source}:{lineno}: prob is not a number") from None
        else:
            prob = 1.0 / len(rows)
        scen.append(Scenario(prob, avail, rec.get("name") or f"s{k + 1}"))
    total = math.fsum(s.prob for s in scen)
    if abs(total - 1.0) > 1e-12:
        raise InstanceFormatError(f"{source}: probabilities sum to {total:g}")
    return ScenarioSet(tuple(scen))


def load_embedded(name: str) -> Instance:
    if name not in EMBEDDED:
        raise InstanceFormatError(f"unknown embedded instance '{name}' (have {', '.join(EMBEDDED)})")
    folder = resources.files("stoclear") / "data"
    with resources.as_file(folder) as base:
        return parse_instance(Path(base) / f"{name}.json")


def resolve_instance(ref: str) -> Instance:
    """A path to an instance file, or the name of an embedded instance."""
    path = Path(ref)
    if path.exists():
        return parse_instance(path)
    if ref in EMBEDDED:
        return load_embedded(ref)
    raise InstanceFormatError(f"{ref}: no such file or embedded instance")
