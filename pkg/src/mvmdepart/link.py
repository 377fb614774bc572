"""Single-link travel-time distributions on a discretised speed process.

Speeds may only change at multiples of the step ``delta`` after entering the
link. The two-state case runs on a recombining binomial lattice; a literal
per-branch tree is kept as a test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache, singledispatch

import numpy as np

from . import kernels
from .distribution import DROP_MASS, TravelTimeDistribution, drop_light, merge_atoms
from .model import Arc, ModelError

SAFETY = 0.99


@dataclass(frozen=True)
class GranularityBudget:
    """Error budgets for the step size: ``eps_transition`` bounds the chance of
    two or more transitions within one step, ``eps_distance`` the expected
    relative distance error of freezing the speed over a step."""

    eps_transition: float = 0.01
    eps_distance: float = 0.01
    delta_cap: float | None = None

    def __post_init__(self) -> None:
        for name in ("eps_transition", "eps_distance"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if self.delta_cap is not None and not self.delta_cap > 0:
            raise ValueError("delta_cap must be positive")


DEFAULT_BUDGET = GranularityBudget()


@dataclass(frozen=True)
class TreeNode:
    """Lattice node: distance covered, split by the speed used in the last step."""

    distance: float
    prob_ending_free: float
    prob_ending_incident: float


def choose_delta(arc: Arc, budget: GranularityBudget = DEFAULT_BUDGET) -> float:
    a, b = arc.onset_rate, arc.clearance_rate
    bound = math.sqrt(2 * budget.eps_transition / (a * b))
    dv = abs(arc.speed_free - arc.speed_incident)
    if dv > 0:
        bound = min(bound, math.sqrt(2 * budget.eps_distance / (dv / arc.length_km * max(a, b))))
    delta = SAFETY * bound
    if budget.delta_cap is not None:
        delta = min(delta, budget.delta_cap)
    return delta


def _check(arc: Arc, initial: int, delta: float) -> None:
    if not delta > 0:
        raise ModelError(f"step size must be positive, got {delta}")
    if initial not in (1, 2):
        raise ModelError(f"initial phase must be 1 or 2, got {initial}")


@lru_cache(maxsize=4096)
def _lattice(d, v1, v2, a, b, delta, initial):
    p, q = math.exp(-a * delta), math.exp(-b * delta)
    times, probs = kernels.lattice_two_state(d, v1, v2, p, q, delta, initial)
    times, probs = merge_atoms(times, probs)
    times, probs = drop_light(times, probs, DROP_MASS)
    times.setflags(write=False)
    probs.setflags(write=False)
    return times, probs


def link_distribution(arc: Arc, initial: int, delta: float) -> TravelTimeDistribution:
    """Travel-time distribution of ``arc`` entered in phase ``initial``."""
    _check(arc, initial, delta)
    times, probs = _lattice(
        arc.length_km, arc.speed_free, arc.speed_incident, arc.onset_rate, arc.clearance_rate, delta, initial
    )
    return TravelTimeDistribution(times.copy(), probs.copy())


def binomial_tree(arc: Arc, initial: int, delta: float) -> list[list[TreeNode]]:
    """Lattice levels as :class:`TreeNode` lists, including nodes past the link end.

    Level ``m`` lists the distances reachable after ``m + 1`` steps from the
    nodes of level ``m - 1`` that had not yet finished the link.
    """
    _check(arc, initial, delta)
    d, v1, v2 = arc.length_km, arc.speed_free, arc.speed_incident
    p, q = math.exp(-arc.onset_rate * delta), math.exp(-arc.clearance_rate * delta)
    level = {0 if initial == 1 else 1: (1.0, 0.0) if initial == 1 else (0.0, 1.0)}
    levels = []
    m = 0
    while level:
        nodes = [TreeNode(delta * ((m + 1 - j) * v1 + j * v2), pf, pi) for j, (pf, pi) in sorted(level.items())]
        levels.append(sorted(nodes, key=lambda n: -n.distance))
        nxt: dict[int, list[float]] = {}
        for j, (pf, pi) in level.items():
            if delta * ((m + 1 - j) * v1 + j * v2) >= d:
                continue
            nxt.setdefault(j, [0.0, 0.0])[0] += pf * p + pi * (1 - q)
            nxt.setdefault(j + 1, [0.0, 0.0])[1] += pf * (1 - p) + pi * q
        level = {j: tuple(v) for j, v in nxt.items()}
        m += 1
    return levels


def naive_link_distribution(arc: Arc, initial: int, delta: float, max_steps: int = 20) -> TravelTimeDistribution:
    """Literal branch-per-outcome tree; exponential cost, for cross-checking only."""
    _check(arc, initial, delta)
    d, speeds = arc.length_km, arc.speeds
    steps = math.ceil(d / (arc.min_speed * delta))
    if steps > max_steps:
        raise ModelError(f"naive tree needs about {steps} steps (limit {max_steps})")
    p, q = math.exp(-arc.onset_rate * delta), math.exp(-arc.clearance_rate * delta)
    if speeds[initial - 1] * delta >= d:
        return TravelTimeDistribution.point(d / speeds[initial - 1])
    out: list[tuple[float, float]] = []
    frontier = [(initial, delta * speeds[initial - 1], 1.0)]
    m = 0
    while frontier:
        nxt = []
        for s, dist, prob in frontier:
            p1 = prob * (p if s == 1 else 1 - q)
            p2 = prob * (1 - p if s == 1 else q)
            for phase, branch in ((1, p1), (2, p2)):
                v = speeds[phase - 1]
                if dist + v * delta < d:
                    nxt.append((phase, dist + v * delta, branch))
                else:
                    out.append(((m + 1) * delta + (d - dist) / v, branch))
        frontier = nxt
        m += 1
    times, probs = merge_atoms(np.array([o[0] for o in out]), np.array([o[1] for o in out]))
    times, probs = drop_light(times, probs, DROP_MASS)
    return TravelTimeDistribution(times, probs)


@singledispatch
def arc_delta(arc, budget: GranularityBudget) -> float:
    raise TypeError(f"unsupported arc type {type(arc).__name__}")


@arc_delta.register
def _(arc: Arc, budget: GranularityBudget) -> float:
    return choose_delta(arc, budget)


@singledispatch
def arc_link_lists(arc, budget: GranularityBudget) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Per-entry-phase ``(times, probs)`` arrays for ``arc`` at its budgeted step."""
    raise TypeError(f"unsupported arc type {type(arc).__name__}")


@arc_link_lists.register
def _(arc: Arc, budget: GranularityBudget):
    return _two_state_lists(arc, budget)


@lru_cache(maxsize=8192)
def _two_state_lists(arc: Arc, budget: GranularityBudget):
    delta = choose_delta(arc, budget)
    return tuple(
        _lattice(arc.length_km, arc.speed_free, arc.speed_incident, arc.onset_rate, arc.clearance_rate, delta, s)
        for s in (1, 2)
    )
