"""Origin-destination solvers: max-probability label search, bisection over it,
and the k-shortest-paths heuristic."""

from __future__ import annotations

import heapq
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .departure import INFEASIBLE, DepartureAdvice, DepartureQuery, bisect_latest, optimal_departure_offline
from .distribution import TravelTimeDistribution
from .model import ModelError, Network, NetworkState
from .path import DEFAULT_SETTINGS, EngineSettings, Path, _Fold

CDF_TOL = 1e-12
THREADS_ENV = "MVM_THREADS"


def dominates(a: TravelTimeDistribution, b: TravelTimeDistribution, tol: float = CDF_TOL) -> bool:
    """First-order stochastic dominance: ``a`` is at least as early everywhere and
    strictly earlier somewhere."""
    if abs(a.mass - b.mass) > 1e-9:
        raise ValueError("dominance needs equal total mass")
    pts = np.union1d(a.times, b.times)
    diff = a.cdf(pts) - b.cdf(pts)
    return bool(np.all(diff >= -tol) and np.any(diff > tol))


def _dominates_raw(at, ap, bt, bp, tol=CDF_TOL) -> bool:
    pts = np.union1d(at, bt)
    ca = np.concatenate(([0.0], np.cumsum(ap)))[np.searchsorted(at, pts, side="right")]
    cb = np.concatenate(([0.0], np.cumsum(bp)))[np.searchsorted(bt, pts, side="right")]
    diff = ca - cb
    return bool(np.all(diff >= -tol) and np.any(diff > tol))


# --------------------------------------------------------------------------
# Deterministic shortest paths
# --------------------------------------------------------------------------


def _dijkstra_to(network: Network, target: str, weight: Callable) -> dict[str, float]:
    dist = {node: math.inf for node in network.nodes}
    dist[target] = 0.0
    heap = [(0.0, target)]
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist[node]:
            continue
        for arc in network.in_arcs(node):
            nd = d + weight(arc)
            if nd < dist[arc.tail]:
                dist[arc.tail] = nd
                heapq.heappush(heap, (nd, arc.tail))
    return dist


@dataclass(frozen=True)
class MinTimeTable:
    destination: str
    times: dict

    def __getitem__(self, node: str) -> float:
        return self.times[node]


def min_time_table(network: Network, destination: str) -> MinTimeTable:
    """Fastest possible time from every node to ``destination`` (each arc at its top speed)."""
    if destination not in network.nodes:
        raise ModelError(f"unknown node {destination!r}")
    return MinTimeTable(destination, _dijkstra_to(network, destination, lambda a: a.length_km / a.max_speed))


def _slowest_time_table(network: Network, destination: str) -> dict[str, float]:
    return _dijkstra_to(network, destination, lambda a: a.length_km / a.min_speed)


# --------------------------------------------------------------------------
# Max-probability label search
# --------------------------------------------------------------------------


@dataclass
class LabelEntry:
    bound: float
    times: np.ndarray
    probs: np.ndarray
    node: str
    arcs: tuple[str, ...]
    nodes: frozenset
    alive: bool = True

    @property
    def distribution(self) -> TravelTimeDistribution:
        return TravelTimeDistribution(self.times, self.probs)

    def path(self, origin: str) -> Path:
        return Path(self.arcs, origin, self.node)


@dataclass
class SearchStats:
    pushed: int = 0
    popped: int = 0
    pruned: int = 0
    evicted: int = 0


def _prob_by(times, probs, limit) -> float:
    k = np.searchsorted(times, limit + CDF_TOL, side="right")
    return float(min(1.0, probs[:k].sum()))


def max_prob_path(
    network: Network,
    origin: str,
    destination: str,
    state: NetworkState,
    t: float,
    deadline: float,
    settings: EngineSettings = DEFAULT_SETTINGS,
    prune: bool = True,
    order: str = "max",
    table: MinTimeTable | None = None,
    stats: SearchStats | None = None,
) -> tuple[float, Path]:
    """Simple path maximising P(arrival <= deadline) when leaving ``origin`` at ``t``.

    Queue entries are ranked by P(T + fastest remaining time <= deadline), an
    optimistic bound. With ``order="max"`` the search stops when the destination
    is first extracted; ``order="min"`` pops the smallest bound first and
    therefore drains the whole queue before answering.
    """
    if origin == destination:
        raise ModelError("origin and destination must differ")
    for node in (origin, destination):
        if node not in network.nodes:
            raise ModelError(f"unknown node {node!r}")
    if order not in ("max", "min"):
        raise ValueError("order must be 'max' or 'min'")
    table = table if table is not None else min_time_table(network, destination)
    stats = stats if stats is not None else SearchStats()
    empty = (0.0, Path((), origin, origin))
    if t + table[origin] > deadline:
        return empty

    fold = _Fold(settings)
    sign = -1.0 if order == "max" else 1.0
    counter = itertools.count()
    labels: dict[str, list[LabelEntry]] = {}
    t0, p0 = fold.start(t)
    first = LabelEntry(_prob_by(t0, p0, deadline - table[origin]), t0, p0, origin, (), frozenset([origin]))
    labels[origin] = [first]
    heap = [(sign * first.bound, 0, (), next(counter), first)]
    stats.pushed += 1
    best: LabelEntry | None = None

    while heap:
        _, _, _, _, entry = heapq.heappop(heap)
        if not entry.alive:
            continue
        stats.popped += 1
        if entry.node == destination:
            if order == "max":
                return entry.bound, entry.path(origin)
            if best is None or entry.bound > best.bound or (
                entry.bound == best.bound and (len(entry.arcs), entry.arcs) < (len(best.arcs), best.arcs)
            ):
                best = entry
            continue
        for arc in network.out_arcs(entry.node):
            head = arc.head
            if head in entry.nodes or math.isinf(table[head]):
                continue
            times, probs = fold.step(entry.times, entry.probs, arc, state.vector(arc))
            bound = _prob_by(times, probs, deadline - table[head])
            if bound <= 0.0:
                continue
            new = LabelEntry(bound, times, probs, head, entry.arcs + (arc.id,), entry.nodes | {head})
            if prune:
                live = [lab for lab in labels.get(head, []) if lab.alive]
                if any(_dominates_raw(lab.times, lab.probs, times, probs) for lab in live):
                    stats.pruned += 1
                    continue
                for lab in live:
                    if _dominates_raw(times, probs, lab.times, lab.probs):
                        lab.alive = False
                        stats.evicted += 1
                labels[head] = [lab for lab in live if lab.alive] + [new]
            heapq.heappush(heap, (sign * bound, len(new.arcs), new.arcs, next(counter), new))
            stats.pushed += 1
    if best is None or best.bound <= 0:
        return empty
    return best.bound, best.path(origin)


def optimal_departure_od_bisection(
    network: Network,
    origin: str,
    destination: str,
    state: NetworkState,
    query: DepartureQuery,
    settings: EngineSettings = DEFAULT_SETTINGS,
    **search_options,
) -> tuple[DepartureAdvice, Path]:
    """Latest departure whose best path still reaches the target probability."""
    table = min_time_table(network, destination)
    slow = _slowest_time_table(network, destination)
    M = query.deadline
    lo, hi = max(0.0, M - slow[origin]), max(0.0, M - table[origin])
    empty = Path((), origin, origin)
    if hi == 0.0:
        return DepartureAdvice(INFEASIBLE, 0.0), empty
    found: dict[float, tuple[float, Path]] = {}

    def solve(t):
        if t not in found:
            found[t] = max_prob_path(network, origin, destination, state, t, M, settings, table=table,
                                     **search_options)
        return found[t]

    p_lo = solve(lo)[0]
    if p_lo < query.reliability:
        return DepartureAdvice(INFEASIBLE, p_lo), empty
    t_star, p_star = bisect_latest(lambda t: solve(t)[0], lo, hi, query.reliability, query.bisection_tol)
    return DepartureAdvice(t_star, p_star), solve(t_star)[1]


# --------------------------------------------------------------------------
# k shortest loopless paths
# --------------------------------------------------------------------------


def _metric(name: str) -> Callable:
    if name == "km":
        return lambda a: a.length_km
    if name == "time":
        return lambda a: a.length_km / a.speeds[0]
    raise ValueError("metric must be 'km' or 'time'")


def _shortest(network, source, target, weight, banned_arcs, banned_nodes):
    dist = {source: 0.0}
    prev: dict[str, tuple[str, str]] = {}
    heap = [(0.0, (), source)]
    done = set()
    while heap:
        d, _, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        if node == target:
            arcs = []
            while node != source:
                arc_id, node = prev[node]
                arcs.append(arc_id)
            return d, tuple(reversed(arcs))
        for arc in sorted(network.out_arcs(node), key=lambda a: a.id):
            if arc.id in banned_arcs or arc.head in banned_nodes or arc.head in done:
                continue
            nd = d + weight(arc)
            if nd < dist.get(arc.head, math.inf):
                dist[arc.head] = nd
                prev[arc.head] = (arc.id, node)
                heapq.heappush(heap, (nd, (), arc.head))
    return None


def yen_k_shortest(network: Network, origin: str, destination: str, k: int, metric: str = "km") -> list[Path]:
    """The ``k`` shortest loopless paths, shortest first (ties by arc ids)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    weight = _metric(metric)
    first = _shortest(network, origin, destination, weight, set(), set())
    if first is None:
        return []
    found = [first]
    candidates: list[tuple[float, tuple[str, ...]]] = []
    seen = {first[1]}
    while len(found) < k:
        _, last = found[-1]
        nodes = [origin] + [network.arc(a).head for a in last]
        for i in range(len(last)):
            spur, root = nodes[i], last[:i]
            banned_arcs = {p[i] for _, p in found if p[:i] == root and len(p) > i}
            banned_nodes = set(nodes[:i])
            tail = _shortest(network, spur, destination, weight, banned_arcs, banned_nodes)
            if tail is None:
                continue
            full = root + tail[1]
            if full in seen:
                continue
            seen.add(full)
            cost = sum(weight(network.arc(a)) for a in full)
            heapq.heappush(candidates, (cost, full))
        if not candidates:
            break
        found.append(heapq.heappop(candidates))
    return [Path.from_arcs(network, arcs) for _, arcs in found]


def _threads(n: int) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return max(1, min(n, os.cpu_count() or 1))


def optimal_departure_od_ksp(
    network: Network,
    origin: str,
    destination: str,
    state: NetworkState,
    query: DepartureQuery,
    k: int,
    settings: EngineSettings = DEFAULT_SETTINGS,
    metric: str = "km",
    threads: int | None = None,
) -> tuple[DepartureAdvice, Path]:
    """Offline solve on each of the k shortest paths; keep the latest departure."""
    paths = yen_k_shortest(network, origin, destination, k, metric)
    empty = Path((), origin, origin)
    if not paths:
        return DepartureAdvice(INFEASIBLE, 0.0), empty

    def run(path):
        return optimal_departure_offline(network, path, state, query, settings)

    workers = threads if threads is not None else _threads(len(paths))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            advice = list(pool.map(run, paths))
    else:
        advice = [run(p) for p in paths]
    best = max(range(len(paths)), key=lambda i: (advice[i].departure, -i))
    if not advice[best].feasible:
        return DepartureAdvice(INFEASIBLE, max(a.achieved_probability for a in advice)), empty
    return advice[best], paths[best]


def mape(exact: Sequence[float], approx: Sequence[float]) -> float:
    exact = np.asarray(exact, dtype=float)
    approx = np.asarray(approx, dtype=float)
    if exact.shape != approx.shape:
        raise ValueError("exact and approx must have equal length")
    if exact.size == 0:
        raise ValueError("need at least one scenario")
    if np.any(exact <= 0):
        raise ValueError("exact departure times must be positive")
    return float(np.mean(np.abs(exact - approx) / exact))


def all_simple_paths(network: Network, origin: str, destination: str) -> list[Path]:
    """Exhaustive enumeration; for tests and small networks."""
    out = []

    def walk(node, arcs, seen):
        if node == destination:
            out.append(Path(tuple(arcs), origin, destination))
            return
        for arc in sorted(network.out_arcs(node), key=lambda a: a.id):
            if arc.head not in seen:
                walk(arc.head, arcs + [arc.id], seen | {arc.head})

    walk(origin, [], {origin})
    return out
