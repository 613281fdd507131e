"""Experiment runner: solve, settle, check and write CSV/JSON artifacts.

Column order of every table is fixed by the ``*_COLUMNS`` tuples below.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .formats import resolve_instance
from .formulations import CANONICAL, CLAIRVOYANT, MEAN_VECTOR, STATE_VECTOR
from .lp import check_kkt
from .metrics import (Check, MetricsReport, RelationshipReport, evaluate, guarantee_checks,
                      realized_values, relationship_checks)
from .model import Instance
from .ph import PhParams, PhResult, solve_progressive_hedging
from .pricing import MECHANISM_OF, RC, RM, RS, Clearing, clear_and_price

EXTENSIVE, PH = "extensive", "ph"
ALL = "all"
STOCHASTIC_KINDS = (CANONICAL, MEAN_VECTOR, STATE_VECTOR)
MECHANISM_FLAGS = {"rc": RC, "rm": RM, "rs": RS}

DISPATCH_COLUMNS = ("formulation", "scenario", "prob", "entity", "id", "day_ahead_mw", "real_time_mw")
DUAL_COLUMNS = ("formulation", "scenario", "multiplier", "key", "value_usd_per_mwh")
PAYMENT_COLUMNS = ("formulation", "mechanism", "scenario", "participant", "kind",
                   "rho_usd", "phi_usd", "profit_usd")
DISTORTION_COLUMNS = ("formulation", "mechanism", "scenario", "key", "M_usd_per_mwh")
METRIC_COLUMNS = ("formulation", "mechanism", "check", "passed", "detail")
RELATION_COLUMNS = ("relationship", "residual", "tol", "passed")
PH_COLUMNS = ("iteration", "spread_mw", "objective_usd", "multiplier_max", "drift")


class ConfigError(ValueError):
    """The requested run is not meaningful."""


@dataclass
class ExperimentConfig:
    instance: str
    out_dir: Path
    formulation: str = ALL
    solver: str = EXTENSIVE
    mechanism: str = ALL
    perturb: bool = False
    seed: int = 0
    relation_tol: float = 1e-5
    kkt_tol: float = 1e-6
    ph: PhParams = field(default_factory=PhParams)

    def kinds(self, inst: Instance) -> List[Tuple[str, Optional[int]]]:
        """Formulations to solve, as ``(kind, scenario)`` pairs."""
        form = self.formulation
        if form.startswith(CLAIRVOYANT):
            return [(CLAIRVOYANT, _scenario_index(inst, form))]
        if form == ALL:
            return [(k, None) for k in STOCHASTIC_KINDS]
        if form in STOCHASTIC_KINDS:
            return [(form, None)]
        raise ConfigError(f"unknown formulation {form!r}")

    def mechanisms(self) -> List[str]:
        if self.mechanism == ALL:
            return [RC, RM, RS]
        if self.mechanism not in MECHANISM_FLAGS:
            raise ConfigError(f"unknown mechanism {self.mechanism!r}")
        return [MECHANISM_FLAGS[self.mechanism]]

    def check(self, inst: Instance) -> None:
        if self.solver not in (EXTENSIVE, PH):
            raise ConfigError(f"unknown solver {self.solver!r}")
        kinds = [k for k, _ in self.kinds(inst)]
        mechs = self.mechanisms()
        if self.solver == PH and kinds != [MEAN_VECTOR] and kinds != [STATE_VECTOR]:
            raise ConfigError("the ph solver only applies to mean_vector or state_vector")
        if self.formulation != ALL and MECHANISM_OF[kinds[0]] not in mechs:
            raise ConfigError(f"{kinds[0]} prices under {MECHANISM_OF[kinds[0]]}, "
                              f"not {self.mechanism}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


def _scenario_index(inst: Instance, form: str) -> int:
    """Resolve ``clairvoyant:<name or 1-based index>``."""
    _, _, ref = form.partition(":")
    if not ref:
        raise ConfigError("clairvoyant needs a scenario, as clairvoyant:<name|index>")
    names = [s.name for s in inst.scenario_set]
    if ref in names:
        return names.index(ref)
    try:
        k = int(ref)
    except ValueError:
        raise ConfigError(f"unknown scenario {ref!r}") from None
    if not 1 <= k <= len(names):
        raise ConfigError(f"scenario index {k} outside 1..{len(names)}")
    return k - 1


@dataclass
class RunArtifacts:
    out_dir: Path
    files: Dict[str, Path]
    summary: dict
    clearings: Dict[str, Clearing] = field(default_factory=dict)
    reports: Dict[str, MetricsReport] = field(default_factory=dict)
    checks: List[Tuple[str, Check]] = field(default_factory=list)
    relations: Optional[RelationshipReport] = None
    ph: Optional[PhResult] = None

    @property
    def violations(self) -> List[Tuple[str, Check]]:
        return [(k, c) for k, c in self.checks if not c.passed]


# number formatting

def _fixed(value: float, digits: int) -> str:
    if not math.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    text = f"{value:.{digits}f}"
    return text[1:] if text.startswith("-") and float(text) == 0 else text


def money(v: float) -> str:
    return _fixed(float(v), 2)


def price(v: float) -> str:
    return _fixed(float(v), 6)


def quantity(v: float) -> str:
    return _fixed(float(v), 4)


def _csv(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


# tables

def _label(c: Clearing) -> str:
    if c.kind == CLAIRVOYANT:
        return f"{CLAIRVOYANT}:{c.instance.scenario_set[c.dispatch.scenario_ids[0]].name}"
    return c.kind


def _scenario_names(inst: Instance, d) -> List[str]:
    return [inst.scenario_set[s].name for s in d.scenario_ids]


def dispatch_rows(inst: Instance, label: str, d) -> List[list]:
    rows = []
    for s, name in enumerate(_scenario_names(inst, d)):
        for p in inst.participants:
            rows.append([label, name, price(d.probs[s]), "participant", p.id,
                         quantity(d.x[p.id][s]), quantity(d.X[p.id][s])])
        for ln in inst.lines:
            rows.append([label, name, price(d.probs[s]), "line", ln.id,
                         quantity(d.f[ln.id][s]), quantity(d.F[ln.id][s])])
    return rows


def dual_rows(c: Clearing) -> List[list]:
    label, duals = _label(c), c.duals
    rows = []
    tables = [("pi", duals.pi), ("Pi", duals.Pi), ("mu_x", duals.mu_x), ("mu_f", duals.mu_f),
              ("sigma_x", duals.sigma_x), ("sigma_f", duals.sigma_f)]
    for s, name in enumerate(_scenario_names(c.instance, c.dispatch)):
        for mult, table in tables:
            for key, values in table.items():
                rows.append([label, name, mult, key, price(values[s])])
    return rows


def payment_rows(c: Clearing) -> List[list]:
    inst, label = c.instance, _label(c)
    realized = realized_values(inst, c.dispatch)
    rows = []
    for s, name in enumerate(_scenario_names(inst, c.dispatch)):
        for p in inst.participants:
            rho, phi = c.payments.rho[p.id][s], realized[p.id][s]
            rows.append([label, c.payments.mechanism, name, p.id, p.kind,
                         money(rho), money(phi), money(rho + phi)])
    return rows


def distortion_rows(c: Clearing, report: MetricsReport) -> List[list]:
    label, table = _label(c), report.distortion
    rows = []
    names = _scenario_names(c.instance, c.dispatch)
    for key, values in table.M.items():
        for s, name in enumerate(names):
            rows.append([label, table.mechanism, name, key, price(values[s])])
        rows.append([label, table.mechanism, "expected", key, price(table.expected_M[key])])
    return rows


def kkt_check(c: Clearing, tol: float) -> Check:
    rep = check_kkt(c.model, c.solution, tol)
    return Check("KKT optimality", rep.passed, str(rep))


def mechanism_summary(report: MetricsReport) -> dict:
    """Per-mechanism summary: condition, cost, revenue and net income in expectation."""
    condition = report.mv.aggregate if report.mv is not None else None
    return {"condition": None if condition is None else float(money(condition)),
            "cost": float(money(report.totals.cost)),
            "revenue": float(money(report.totals.revenue)),
            "net_income": float(money(report.totals.net_income))}


# orchestration

def run_experiment(config: ExperimentConfig) -> RunArtifacts:
    """Solve the requested formulations and write every artifact into ``config.out_dir``.

    Raises ``InstanceError``/``ConfigError`` on bad input and solver errors on
    failed solves; nothing is left behind in those cases.
    """
    inst = resolve_instance(config.instance)
    config.check(inst)
    if config.solver == PH:
        return _write(config, *_run_ph(config, inst))
    return _write(config, *_run_extensive(config, inst))


def _run_extensive(config: ExperimentConfig, inst: Instance):
    seed = config.seed if config.perturb else None
    mechs = set(config.mechanisms())
    clearings, reports, checks = {}, {}, []
    tables = {k: [] for k in ("dispatch", "duals", "payments", "distortion", "metrics")}
    summary = _summary_head(config, inst)
    for kind, scenario in config.kinds(inst):
        c = clear_and_price(inst, kind, scenario, perturb_seed=seed)
        label = _label(c)
        clearings[label] = c
        tables["dispatch"] += dispatch_rows(inst, label, c.dispatch)
        tables["duals"] += dual_rows(c)
        summary["formulations"][label] = {"objective": float(money(c.dispatch.objective)),
                                          "dual_policy": c.dual_policy}
        local = [kkt_check(c, config.kkt_tol)]
        if c.payments.mechanism in mechs:
            rep = evaluate(c)
            reports[label] = rep
            tables["payments"] += payment_rows(c)
            tables["distortion"] += distortion_rows(c, rep)
            local += guarantee_checks(rep)
            summary["mechanisms"][rep.mechanism] = mechanism_summary(rep)
        for chk in local:
            checks.append((label, chk))
            mech = c.payments.mechanism if label in reports else ""
            tables["metrics"].append([label, mech, chk.name, str(chk.passed).lower(), chk.detail])

    relations = None
    if config.formulation == ALL:
        relations = relationship_checks(clearings[CANONICAL], clearings[MEAN_VECTOR],
                                    clearings[STATE_VECTOR], config.relation_tol)
        tables["relationships"] = [[name, _fixed(v, 12), _fixed(relations.limit(name), 12),
                                    str(v <= relations.limit(name)).lower()]
                                   for name, v in relations.rows()]
        summary["relationships"] = {"passed": relations.passed,
                                    "multiplicity_suspected": relations.multiplicity_suspected}
        note = "dual multiplicity suspected" if relations.multiplicity_suspected else ""
        checks.append((ALL, Check("cross-formulation relationships", relations.passed, note)))
    summary["violations"] = [f"{k}: {c.name}" for k, c in checks if not c.passed]
    art = RunArtifacts(config.out_dir, {}, summary, clearings, reports, checks, relations)
    return art, tables


def _run_ph(config: ExperimentConfig, inst: Instance):
    result = solve_progressive_hedging(inst, config.ph)
    label = f"{config.formulation}+ph"
    summary = _summary_head(config, inst)
    summary["ph"] = {"status": result.status, "iterations": result.iterations,
                     "final_spread": result.trace.spread[-1] if len(result.trace) else None}
    tables = {"ph_trace": [[str(k + 1), quantity(result.trace.spread[k]),
                            money(result.trace.objective[k]),
                            price(result.trace.multiplier_norm[k]),
                            price(result.trace.drift[k]) if k < len(result.trace.drift) else ""]
                           for k in range(len(result.trace))]}
    names = [s.name for s in inst.scenario_set]
    tables["duals"] = [[label, names[s], f"w_{key[0]}", key[1], price(vals[s])]
                       for key, vals in result.w.items() for s in range(len(names))]
    checks = [(label, Check("PH converged", result.converged, result.status))]
    if result.dispatch is not None:
        tables["dispatch"] = dispatch_rows(inst, label, result.dispatch)
        summary["formulations"][label] = {"objective": float(money(result.dispatch.objective))}
    summary["violations"] = [f"{k}: {c.name}" for k, c in checks if not c.passed]
    art = RunArtifacts(config.out_dir, {}, summary, checks=checks, ph=result)
    return art, tables


def _summary_head(config: ExperimentConfig, inst: Instance) -> dict:
    return {"instance": inst.name, "scenarios": inst.n_scenarios,
            "formulation": config.formulation, "solver": config.solver,
            "mechanism": config.mechanism, "perturb": config.perturb,
            "seed": config.seed if config.perturb else None,
            "formulations": {}, "mechanisms": {}}


TABLE_FILES = {"dispatch": ("dispatch.csv", DISPATCH_COLUMNS),
               "duals": ("duals.csv", DUAL_COLUMNS),
               "payments": ("payments.csv", PAYMENT_COLUMNS),
               "distortion": ("distortion.csv", DISTORTION_COLUMNS),
               "metrics": ("metrics.csv", METRIC_COLUMNS),
               "relationships": ("relationships.csv", RELATION_COLUMNS),
               "ph_trace": ("ph_trace.csv", PH_COLUMNS)}


def _write(config: ExperimentConfig, art: RunArtifacts, tables: Dict[str, list]) -> RunArtifacts:
    out = Path(config.out_dir)
    created = not out.exists()
    written: List[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for key, rows in tables.items():
            name, columns = TABLE_FILES[key]
            path = out / name
            path.write_text(_csv(columns, rows), encoding="utf-8")
            written.append(path)
            art.files[key] = path
        path = out / "summary.json"
        path.write_text(json.dumps(art.summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)
        art.files["summary"] = path
    except OSError:
        for path in written:
            path.unlink(missing_ok=True)
        if created and out.exists() and not any(out.iterdir()):
            out.rmdir()
        raise
    return art


def verify(inst: Instance, tol: float = 1e-5, kkt_tol: float = 1e-6,
           clairvoyant_limit: int = 50) -> List[Tuple[str, Check]]:
    """Every property check on ``inst``: optimality, guarantees, equivalence, cross-form duals.

    Clairvoyant checks run for each scenario when there are at most
    ``clairvoyant_limit`` of them.
    """
    checks: List[Tuple[str, Check]] = []
    clearings = {}
    for kind in STOCHASTIC_KINDS:
        c = clear_and_price(inst, kind)
        clearings[kind] = c
        checks.append((kind, kkt_check(c, kkt_tol)))
        checks += [(kind, chk) for chk in guarantee_checks(evaluate(c))]
    objs = [c.dispatch.objective for c in clearings.values()]
    spread = max(objs) - min(objs)
    checks.append((ALL, Check("equal objectives across formulations",
                              spread <= tol * (1 + abs(objs[0])), f"spread {spread:.3g}")))
    rep = relationship_checks(clearings[CANONICAL], clearings[MEAN_VECTOR],
                              clearings[STATE_VECTOR], tol)
    for name, v in rep.rows():
        checks.append((ALL, Check(f"relationship {name}", v <= rep.limit(name), f"residual {v:.3g}")))
    if inst.n_scenarios <= clairvoyant_limit:
        cv = []
        for s in range(inst.n_scenarios):
            c = clear_and_price(inst, CLAIRVOYANT, s)
            label = _label(c)
            cv.append(c.dispatch.objective)
            checks.append((label, kkt_check(c, kkt_tol)))
            checks += [(label, chk) for chk in guarantee_checks(evaluate(c))]
        gap = float(np.dot(inst.probs, cv)) - clearings[CANONICAL].dispatch.objective
        checks.append((ALL, Check("clairvoyant bound", gap <= tol * (1 + abs(objs[0])),
                                  f"E[clairvoyant] - stochastic = {gap:.6g}")))
    return checks
