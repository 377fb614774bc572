"""On-time probabilities and latest-departure solvers for a fixed path."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .model import ModelError, Network, NetworkState
from .path import DEFAULT_SETTINGS, EngineSettings, Path, fold_path, travel_time_bounds

ARRIVAL_ATOL = 1e-12
INFEASIBLE = -math.inf


@dataclass(frozen=True)
class DepartureQuery:
    deadline: float
    reliability: float
    update_interval: float | None = None
    bisection_tol: float = 1e-4

    def __post_init__(self) -> None:
        if not self.deadline > 0:
            raise ValueError(f"deadline must be positive, got {self.deadline}")
        if not 0 < self.reliability < 1:
            raise ValueError(f"reliability must lie in (0, 1), got {self.reliability}")
        if self.update_interval is not None and not self.update_interval > 0:
            raise ValueError("update_interval must be positive")
        if not self.bisection_tol > 0:
            raise ValueError("bisection_tol must be positive")

    def with_deadline(self, deadline: float) -> "DepartureQuery":
        return DepartureQuery(deadline, self.reliability, self.update_interval, self.bisection_tol)


@dataclass(frozen=True)
class DepartureAdvice:
    """``departure`` is ``-inf`` when no departure time reaches the target.

    Online runs fill ``trace`` with ``(request time, advised departure)`` pairs;
    ``forced`` marks a departure taken because the fresh solve was infeasible.
    """

    departure: float
    achieved_probability: float
    trace: tuple[tuple[float, float], ...] = ()
    forced: bool = False

    @property
    def feasible(self) -> bool:
        return self.departure > INFEASIBLE

    def __str__(self) -> str:
        if not self.feasible:
            return "INFEASIBLE"
        return f"depart at {self.departure:.6f} h (P = {self.achieved_probability:.6f})"


def on_time_probability(
    network: Network,
    path: Path,
    state: NetworkState,
    t: float,
    deadline: float,
    settings: EngineSettings = DEFAULT_SETTINGS,
) -> float:
    """P(arrival <= deadline) when departing at ``t`` (hours after the request)."""
    if not t >= 0:
        raise ModelError(f"departure time must be nonnegative, got {t}")
    if not path.arcs:
        return 1.0 if t <= deadline else 0.0
    times, probs = fold_path(network, path.arcs, state, t, settings)
    k = np.searchsorted(times, deadline + ARRIVAL_ATOL, side="right")
    return float(min(1.0, probs[:k].sum()))


def bisect_latest(prob, lo: float, hi: float, target: float, tol: float) -> tuple[float, float]:
    """Latest ``t`` in ``[lo, hi]`` with ``prob(t) >= target`` for non-increasing ``prob``.

    Assumes ``prob(lo) >= target``. Returns ``(t, prob(t))``.
    """
    p_lo = prob(lo)
    p_hi = prob(hi)
    if p_hi >= target:
        return hi, p_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        p_mid = prob(mid)
        if p_mid >= target:
            lo, p_lo = mid, p_mid
        else:
            hi = mid
    return lo, p_lo


def optimal_departure_offline(
    network: Network,
    path: Path,
    state: NetworkState,
    query: DepartureQuery,
    settings: EngineSettings = DEFAULT_SETTINGS,
) -> DepartureAdvice:
    def prob(t):
        return on_time_probability(network, path, state, t, query.deadline, settings)

    return latest_departure(prob, *travel_time_bounds(network, path), query)


def latest_departure(prob, t_min: float, t_max: float, query: DepartureQuery) -> DepartureAdvice:
    """Bisection for the latest feasible departure given ``prob(t)`` and the
    path's travel-time bounds."""
    M = query.deadline
    lo, hi = max(0.0, M - t_max), max(0.0, M - t_min)
    if hi == 0.0:
        return DepartureAdvice(INFEASIBLE, 0.0)
    p_lo = prob(lo)
    if p_lo < query.reliability:
        return DepartureAdvice(INFEASIBLE, p_lo)
    t_star, p_star = bisect_latest(prob, lo, hi, query.reliability, query.bisection_tol)
    return DepartureAdvice(t_star, p_star)


# --------------------------------------------------------------------------
# Online re-planning
# --------------------------------------------------------------------------


class StateSourceExhausted(RuntimeError):
    pass


class StateSource(Protocol):
    def state_at(self, u: float) -> NetworkState:
        """Observed background state at request-relative time ``u``."""


@dataclass(frozen=True)
class FrozenStateSource:
    state: NetworkState

    def state_at(self, u: float) -> NetworkState:
        return self.state


@dataclass(frozen=True)
class ReplayStateSource:
    """States observed at ``0, interval, 2*interval, ...``."""

    states: Sequence[NetworkState]
    interval: float

    def state_at(self, u: float) -> NetworkState:
        j = round(u / self.interval)
        if abs(j * self.interval - u) > 1e-9 * max(1.0, u):
            raise ValueError(f"time {u} is not on the replay grid")
        if j >= len(self.states):
            raise StateSourceExhausted(f"replay log has {len(self.states)} states; needed index {j}")
        return self.states[j]


def _state_key(network: Network, path: Path, state: NetworkState) -> tuple:
    return tuple(tuple(state.vector(network.arc(a)).tolist()) for a in path.arcs)


@dataclass
class OfflineMemo:
    """Thread-safe cache of offline solves keyed on the path's entry phases and budget."""

    network: Network
    path: Path
    settings: EngineSettings = DEFAULT_SETTINGS
    _table: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    hits: int = 0
    misses: int = 0

    def solve(self, state: NetworkState, query: DepartureQuery) -> DepartureAdvice:
        key = (_state_key(self.network, self.path, state), round(query.deadline, 12), query.reliability,
               query.bisection_tol)
        found = self._table.get(key)
        if found is not None:
            self.hits += 1
            return found
        advice = optimal_departure_offline(self.network, self.path, state, query, self.settings)
        with self._lock:
            self._table[key] = advice
            self.misses += 1
        return advice


def optimal_departure_online(
    network: Network,
    path: Path,
    state_source: StateSource,
    query: DepartureQuery,
    settings: EngineSettings = DEFAULT_SETTINGS,
    memo: OfflineMemo | None = None,
) -> DepartureAdvice:
    """Re-solve every ``query.update_interval`` with the freshest state.

    Departs at the first request time ``u`` where the advice falls within one
    interval of ``u``. If a later solve turns infeasible the traveller leaves
    at once; an infeasible first solve is reported as infeasible.
    """
    if query.update_interval is None:
        raise ValueError("online solving needs query.update_interval")
    step = query.update_interval
    memo = memo if memo is not None else OfflineMemo(network, path, settings)
    trace: list[tuple[float, float]] = []
    j = 0
    while True:
        u = j * step
        state = state_source.state_at(u)
        remaining = query.deadline - u
        if remaining <= 0:
            trace.append((u, INFEASIBLE))
            return DepartureAdvice(u, 0.0, tuple(trace), forced=True)
        advice = memo.solve(state, query.with_deadline(remaining))
        if not advice.feasible:
            trace.append((u, INFEASIBLE))
            if j == 0:
                return DepartureAdvice(INFEASIBLE, advice.achieved_probability, tuple(trace))
            return DepartureAdvice(u, advice.achieved_probability, tuple(trace), forced=True)
        t_u = u + advice.departure
        trace.append((u, t_u))
        if t_u - u < step:
            return DepartureAdvice(t_u, advice.achieved_probability, tuple(trace))
        j += 1
