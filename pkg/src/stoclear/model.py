"""Market data types, instance validation and realized-value accounting."""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

GENERATOR = "generator"
LOAD = "load"

INF = math.inf
PROB_TOL = 1e-12


@dataclass(frozen=True)
class Bus:
    id: int
    name: str = ""


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: int
    to_bus: int
    f_min: float
    f_max: float
    F_min: float
    F_max: float
    beta: float = 1.0


@dataclass(frozen=True)
class Participant:
    """One market participant operating a single unit.

    Quantities are signed: generators clear ``x >= 0`` and loads ``x <= 0``.
    ``c`` is the day-ahead bid and ``delta_plus``/``delta_minus`` the premiums
    charged for upward/downward real-time deviation from the day-ahead position.
    """

    id: str
    kind: str
    bus: int
    c: float
    delta_plus: float
    delta_minus: float
    x_min: float
    x_max: float
    X_min: float
    X_max: float
    is_stochastic: bool = False

    @property
    def is_generator(self) -> bool:
        return self.kind == GENERATOR


@dataclass(frozen=True)
class Scenario:
    prob: float
    x_avail: Mapping[str, float] = field(default_factory=dict)
    name: str = ""

    def avail(self, pid: str) -> float:
        # deterministic participants carry no entry: +inf sentinel
        return self.x_avail.get(pid, INF)


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: tuple

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))

    def __len__(self) -> int:
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    def __getitem__(self, k):
        return self.scenarios[k]

    @property
    def probs(self) -> List[float]:
        return [s.prob for s in self.scenarios]


@dataclass(frozen=True)
class Instance:
    buses: tuple
    lines: tuple
    participants: tuple
    scenario_set: ScenarioSet
    theta_min: float = -math.pi
    theta_max: float = math.pi
    reference_bus: Optional[int] = None
    name: str = ""
    fixture_complete: bool = True

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "participants", tuple(self.participants))
        if self.reference_bus is None and self.buses:
            object.__setattr__(self, "reference_bus", self.buses[0].id)

    @property
    def bus_ids(self) -> List[int]:
        return [b.id for b in self.buses]

    @property
    def probs(self) -> List[float]:
        return self.scenario_set.probs

    @property
    def n_scenarios(self) -> int:
        return len(self.scenario_set)

    def participant(self, pid: str) -> Participant:
        for p in self.participants:
            if p.id == pid:
                return p
        raise KeyError(pid)

    def generators(self) -> List[Participant]:
        return [p for p in self.participants if p.is_generator]

    def rt_bounds(self, p: Participant, scenario: Scenario):
        """Real-time clearing bounds of ``p`` once ``scenario`` is observed."""
        avail = scenario.avail(p.id) if p.is_stochastic else INF
        return max(p.X_min, -avail), min(p.X_max, avail)

    def with_scenarios(self, scenario_set: ScenarioSet) -> "Instance":
        return Instance(self.buses, self.lines, self.participants, scenario_set,
                        self.theta_min, self.theta_max, self.reference_bus,
                        self.name, self.fixture_complete)

    def with_participants(self, participants: Sequence[Participant]) -> "Instance":
        return Instance(self.buses, self.lines, tuple(participants), self.scenario_set,
                        self.theta_min, self.theta_max, self.reference_bus,
                        self.name, self.fixture_complete)


def perturb_bids(inst: Instance, seed: int, scale: float = 1e-7) -> Instance:
    """Copy of ``inst`` with every bid and premium scaled by ``1 + scale * U(-1, 1)``.

    Draws follow participant order, so each formulation of the perturbed
    instance clears the same market.
    """
    rng = np.random.default_rng(seed)
    out = []
    for p in inst.participants:
        a, b, c = 1.0 + scale * rng.uniform(-1.0, 1.0, size=3)
        out.append(replace(p, c=p.c * a, delta_plus=p.delta_plus * b, delta_minus=p.delta_minus * c))
    return inst.with_participants(out)


@dataclass
class ValidationReport:
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __str__(self) -> str:
        lines = [f"error: {e}" for e in self.errors]
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines) if lines else "ok"


class InstanceError(ValueError):
    """Raised when an instance cannot be used for clearing."""


def validate_instance(inst: Instance) -> ValidationReport:
    rep = ValidationReport()
    err, warn = rep.errors.append, rep.warnings.append

    ids = [b.id for b in inst.buses]
    if len(set(ids)) != len(ids):
        err("duplicate bus ids")
    bus_set = set(ids)
    if not bus_set:
        err("instance has no buses")
    if inst.reference_bus not in bus_set:
        err(f"reference bus {inst.reference_bus} does not exist")
    if inst.theta_min > 0 or inst.theta_max < 0:
        err("angle bounds must contain 0")

    for ln in inst.lines:
        if ln.from_bus not in bus_set or ln.to_bus not in bus_set:
            err(f"line {ln.id}: dangling bus reference")
        if ln.from_bus == ln.to_bus:
            err(f"line {ln.id}: from and to bus coincide")
        if ln.f_min > ln.f_max:
            err(f"line {ln.id}: bound inversion f_min > f_max")
        if ln.F_min > ln.F_max:
            err(f"line {ln.id}: bound inversion F_min > F_max")
        if not ln.beta > 0:
            err(f"line {ln.id}: beta must be positive")

    pids = [p.id for p in inst.participants]
    if len(set(pids)) != len(pids):
        err("duplicate participant ids")
    kinds = {p.kind for p in inst.participants}
    if GENERATOR not in kinds:
        err("instance needs at least one generator")
    if LOAD not in kinds:
        err("instance needs at least one load")
    for p in inst.participants:
        tag = f"participant {p.id}"
        if p.kind not in (GENERATOR, LOAD):
            err(f"{tag}: unknown kind {p.kind!r}")
        if p.bus not in bus_set:
            err(f"{tag}: dangling bus reference {p.bus}")
        if not (p.delta_plus > 0 and p.delta_minus > 0):
            err(f"{tag}: premiums must be strictly positive")
        if p.x_min > p.x_max:
            err(f"{tag}: bound inversion x_min > x_max")
        if p.X_min > p.X_max:
            err(f"{tag}: bound inversion X_min > X_max")
        if p.kind == GENERATOR and p.x_min < 0:
            err(f"{tag}: generator x_min must be >= 0")
        if p.kind == LOAD and p.x_max > 0:
            err(f"{tag}: load x_max must be <= 0")
        if p.kind == GENERATOR and p.c - p.delta_minus < 0:
            warn(f"{tag}: c - delta_minus < 0")

    scen = inst.scenario_set
    if len(scen) == 0:
        err("scenario set is empty")
    total = sum(s.prob for s in scen)
    if abs(total - 1.0) > PROB_TOL:
        err(f"probabilities sum to {total:g}")
    for k, s in enumerate(scen):
        if not 0 < s.prob <= 1:
            err(f"scenario {k}: probability {s.prob} outside (0, 1]")
        for pid, val in s.x_avail.items():
            if pid not in pids:
                err(f"scenario {k}: unknown participant {pid}")
            elif val < 0:
                err(f"scenario {k}: negative availability for {pid}")
        for p in inst.participants:
            if p.is_stochastic and p.id not in s.x_avail:
                err(f"scenario {k}: missing availability for {p.id}")

    if bus_set and not _connected(inst):
        warn("network is not connected")
    return rep


def _connected(inst: Instance) -> bool:
    adj: Dict[int, set] = {b.id: set() for b in inst.buses}
    for ln in inst.lines:
        if ln.from_bus in adj and ln.to_bus in adj:
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
    start = inst.buses[0].id
    seen = {start}
    todo = deque([start])
    while todo:
        for nb in adj[todo.popleft()] - seen:
            seen.add(nb)
            todo.append(nb)
    return len(seen) == len(adj)


def require_valid(inst: Instance) -> Instance:
    rep = validate_instance(inst)
    if not rep.ok:
        raise InstanceError("; ".join(rep.errors))
    return inst


def product_scenarios(outcomes: Mapping[str, Sequence[float]]) -> ScenarioSet:
    """Equiprobable cartesian product of per-participant availability outcomes.

    Participants are ordered by id; the last id varies fastest.
    """
    keys = sorted(outcomes)
    for k in keys:
        if len(outcomes[k]) == 0:
            raise ValueError(f"empty outcome list for {k}")
    combos = list(itertools.product(*(outcomes[k] for k in keys)))
    prob = 1.0 / len(combos)
    return ScenarioSet(tuple(
        Scenario(prob, {k: float(v) for k, v in zip(keys, combo)}, name=f"s{j + 1}")
        for j, combo in enumerate(combos)))


def pos(a: float) -> float:
    return max(a, 0.0)


def neg(a: float) -> float:
    """Negative part, returned as a nonnegative number so that a = pos(a) - neg(a)."""
    return max(-a, 0.0)


def realized_value(p: Participant, x: float, X: float) -> float:
    """Value realized by ``p`` after clearing ``x`` day-ahead and ``X`` in real time.

    Negative for generators (their cost), positive for loads.
    """
    d = X - x
    return -p.c * x - (p.c + p.delta_plus) * pos(d) + (p.c - p.delta_minus) * neg(d)


def social_surplus(inst: Instance, x: Mapping[str, float], X: Mapping[str, float]) -> float:
    """Sum of realized values for one scenario's dispatch (``x`` day-ahead, ``X`` real-time)."""
    return sum(realized_value(p, x[p.id], X[p.id]) for p in inst.participants)
