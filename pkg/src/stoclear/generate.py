"""Random market instances for property testing."""
from __future__ import annotations

import numpy as np

from .model import (GENERATOR, LOAD, Bus, Instance, Line, Participant, Scenario,
                    ScenarioSet)


def random_instance(seed, max_buses=5, max_participants=8, max_scenarios=10,
                    zero_minimums=True, min_scenarios=1, name=None) -> Instance:
    """Draw a connected network with at least one generator and one load.

    Availabilities of stochastic participants vary by scenario; probabilities
    are drawn from a flat Dirichlet.  With ``zero_minimums`` every generator
    has ``x_min = X_min = 0``.
    """
    rng = np.random.default_rng(seed)
    n_bus = int(rng.integers(1, max_buses + 1))
    buses = [Bus(b, f"b{b}") for b in range(1, n_bus + 1)]

    lines = []
    for b in range(2, n_bus + 1):
        # spanning tree, then a few extra links
        lines.append((int(rng.integers(1, b)), b))
    for _ in range(int(rng.integers(0, n_bus))):
        i, j = sorted(int(v) for v in rng.choice(np.arange(1, n_bus + 1), 2, replace=False)) if n_bus > 1 else (1, 1)
        if i != j and (i, j) not in lines:
            lines.append((i, j))
    line_objs = []
    for k, (i, j) in enumerate(lines):
        cap = float(np.round(rng.uniform(10, 80), 3))
        rt_cap = float(np.round(cap * rng.uniform(1.0, 1.5), 3))
        line_objs.append(Line(f"l{k + 1}", i, j, -cap, cap, -rt_cap, rt_cap,
                              float(np.round(rng.uniform(50, 200), 3))))

    n_part = int(rng.integers(2, max_participants + 1))
    n_gen = int(rng.integers(1, n_part))
    n_scen = int(rng.integers(min_scenarios, max_scenarios + 1))
    probs = rng.dirichlet(np.ones(n_scen))
    probs = probs / probs.sum()

    parts = []
    avail = [dict() for _ in range(n_scen)]
    for k in range(n_part):
        is_gen = k < n_gen
        bus = int(rng.integers(1, n_bus + 1))
        stochastic = bool(rng.random() < 0.4)
        d_plus = float(np.round(rng.uniform(0.5, 6), 3))
        d_minus = float(np.round(rng.uniform(0.5, 6), 3))
        if is_gen:
            pid = f"g{k + 1}"
            cap = float(np.round(rng.uniform(20, 120), 3))
            c = float(np.round(rng.uniform(max(d_minus, 5), 40), 3))
            lo = 0.0 if zero_minimums else float(np.round(rng.uniform(0, 0.3 * cap), 3))
            parts.append(Participant(pid, GENERATOR, bus, c, d_plus, d_minus,
                                     lo, cap, lo, cap, stochastic))
            draw = lambda: float(np.round(rng.uniform(0, cap), 3))  # noqa: E731
        else:
            pid = f"d{k + 1}"
            demand = float(np.round(rng.uniform(10, 80), 3))
            c = float(np.round(rng.uniform(45, 100), 3))
            parts.append(Participant(pid, LOAD, bus, c, d_plus, d_minus,
                                     -demand, 0.0, -1.5 * demand, 0.0, stochastic))
            draw = lambda: float(np.round(rng.uniform(0.5 * demand, 1.5 * demand), 3))  # noqa: E731
        if stochastic:
            for s in range(n_scen):
                avail[s][pid] = draw()

    scen = ScenarioSet(tuple(Scenario(float(p), a, f"s{s + 1}")
                             for s, (p, a) in enumerate(zip(probs, avail))))
    return Instance(buses, line_objs, parts, scen, reference_bus=1,
                    name=name or f"random-{seed}")
