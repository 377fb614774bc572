"""Continuous-time Monte Carlo of the speed process: the ground truth for tests
and the driver of the online-versus-offline experiment."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

from .departure import (
    DepartureAdvice,
    DepartureQuery,
    OfflineMemo,
    StateSourceExhausted,
    optimal_departure_online,
)
from .model import Network, NetworkState
from .path import DEFAULT_SETTINGS, EngineSettings, Path

KS_ATOL = 1e-9


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    samples: int = 100_000
    record_trajectory: bool = False

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError("samples must be >= 1")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


class EmpiricalCdf:
    def __init__(self, samples):
        samples = np.sort(np.asarray(samples, dtype=float).ravel())
        if samples.size == 0 or not np.all(np.isfinite(samples)):
            raise ValueError("need at least one finite sample")
        samples.setflags(write=False)
        self.samples = samples

    def __len__(self) -> int:
        return self.samples.size

    def cdf(self, x, atol: float = 0.0):
        out = np.searchsorted(self.samples, np.asarray(x, dtype=float) + atol, side="right") / self.samples.size
        return float(out) if np.ndim(out) == 0 else out

    __call__ = cdf

    @property
    def support_points(self) -> np.ndarray:
        return np.unique(self.samples)

    @property
    def mean(self) -> float:
        return float(self.samples.mean())


def _points(x) -> np.ndarray:
    return x.support_points if isinstance(x, EmpiricalCdf) else np.asarray(x.times)


def ks_distance(a, b, atol: float = KS_ATOL) -> float:
    """Sup-distance between two CDFs; both are step functions, so checking the
    union of their jump points is exact."""
    pts = np.union1d(_points(a), _points(b))
    return float(np.max(np.abs(a.cdf(pts, atol=atol) - b.cdf(pts, atol=atol))))


# --------------------------------------------------------------------------
# Traversal sampling
# --------------------------------------------------------------------------


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of ``probs``; returns 0-based indices."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cum[:, -1]
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def _jump_table(gen: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    exit_rates = -np.diag(gen).copy()
    jumps = np.clip(gen, 0, None)
    np.fill_diagonal(jumps, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        jumps = np.where(exit_rates[:, None] > 0, jumps / exit_rates[:, None], 0.0)
    return exit_rates, jumps


def _traverse_arc(arc, clock: np.ndarray, phase: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Advance ``clock`` (in place, returned) across ``arc`` from 0-based ``phase``."""
    speeds = np.asarray(arc.speeds, dtype=float)
    exit_rates, jumps = _jump_table(np.asarray(arc.generator, dtype=float))
    remaining = np.full(clock.shape, float(arc.length_km))
    active = np.arange(clock.size)
    ph = phase.copy()
    while active.size:
        cur = ph[active]
        v = speeds[cur]
        finish = remaining[active] / v
        rate = exit_rates[cur]
        hold = np.full(active.size, np.inf)
        pos = rate > 0
        hold[pos] = rng.exponential(1.0 / rate[pos])
        done = finish <= hold
        idx_done = active[done]
        clock[idx_done] += finish[done]
        idx_go = active[~done]
        h = hold[~done]
        clock[idx_go] += h
        remaining[idx_go] -= v[~done] * h
        if idx_go.size:
            ph[idx_go] = _sample_rows(jumps[ph[idx_go]], rng)
        active = idx_go
    return clock


def simulate_traversal(
    network: Network,
    path: Path,
    state: NetworkState,
    depart_offset: float,
    rng: np.random.Generator,
    samples: int | None = None,
):
    """Arrival times (hours after the request) of the continuous model.

    Returns a float when ``samples`` is None, else an array of ``samples`` draws.
    """
    n = 1 if samples is None else int(samples)
    clock = np.full(n, float(depart_offset))
    for arc_id in path.arcs:
        arc = network.arc(arc_id)
        law = np.einsum("j,njk->nk", state.vector(arc), arc.kernels(clock))
        phase = _sample_rows(law, rng)
        clock = _traverse_arc(arc, clock, phase, rng)
    return float(clock[0]) if samples is None else clock


def simulate_recurrent_traversal(
    network: Network,
    path: Path,
    state: NetworkState,
    day,
    day_belief,
    depart_offset: float,
    rng: np.random.Generator,
    samples: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Arrival times and day phases (0-based) at arrival when speeds depend on
    both the arc's incident phase and a shared day-period chain."""
    clock = np.full(samples, float(depart_offset))
    y_law = np.asarray(day_belief, dtype=float) @ day.kernel(depart_offset)
    y = _sample_rows(np.tile(y_law, (samples, 1)), rng)
    y_exit, y_jumps = _jump_table(day.generator)
    period = day.period_of_phase
    for arc_id in path.arcs:
        arc = network.arc(arc_id)
        law = np.einsum("j,njk->nk", state.vector(arc), arc.kernels(clock))
        x = _sample_rows(law, rng)
        x_exit, x_jumps = _jump_table(np.asarray(arc.base.generator, dtype=float))
        speed = np.asarray(arc.period_speeds)  # [period, x]
        remaining = np.full(samples, float(arc.length_km))
        active = np.arange(samples)
        while active.size:
            xa, ya = x[active], y[active]
            v = speed[period[ya], xa]
            rx, ry = x_exit[xa], y_exit[ya]
            total = rx + ry
            hold = np.full(active.size, np.inf)
            pos = total > 0
            hold[pos] = rng.exponential(1.0 / total[pos])
            finish = remaining[active] / v
            done = finish <= hold
            clock[active[done]] += finish[done]
            go = ~done
            idx = active[go]
            h = hold[go]
            clock[idx] += h
            remaining[idx] -= v[go] * h
            x_moves = rng.random(idx.size) * total[go] < rx[go]
            ix, iy = idx[x_moves], idx[~x_moves]
            if ix.size:
                x[ix] = _sample_rows(x_jumps[x[ix]], rng)
            if iy.size:
                y[iy] = _sample_rows(y_jumps[y[iy]], rng)
            active = idx
    return clock, y


def simulate_link(arc, initial: int, rng: np.random.Generator, samples: int) -> np.ndarray:
    clock = np.zeros(samples)
    return _traverse_arc(arc, clock, np.full(samples, initial - 1), rng)


def sample_path_cdf(network, path, state, depart_offset, config: SimConfig) -> EmpiricalCdf:
    return EmpiricalCdf(simulate_traversal(network, path, state, depart_offset, config.rng(), config.samples))


# --------------------------------------------------------------------------
# Granularity check
# --------------------------------------------------------------------------


def transition_window_fraction(
    onset_rate: float, clearance_rate: float, delta: float, windows: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Fraction of consecutive length-``delta`` windows with two or more
    transitions along one stationary trajectory, and its binomial standard error."""
    horizon = windows * delta
    s = onset_rate + clearance_rate
    phase = 0 if rng.random() < clearance_rate / s else 1
    # expected transitions plus slack; extend until the horizon is covered
    expected = int(horizon * 2 * onset_rate * clearance_rate / s) + 64
    epochs = []
    clock = 0.0
    while clock < horizon:
        n = max(expected // 2, 64)
        rates = np.where((np.arange(n) + phase) % 2 == 0, onset_rate, clearance_rate)
        holds = rng.exponential(1.0 / rates)
        stamps = clock + np.cumsum(holds)
        epochs.append(stamps)
        clock = stamps[-1]
        phase = (phase + n) % 2
    stamps = np.concatenate(epochs)
    stamps = stamps[stamps < horizon]
    counts = np.bincount((stamps // delta).astype(np.int64), minlength=windows)[:windows]
    frac = float(np.mean(counts >= 2))
    return frac, math.sqrt(max(frac * (1 - frac), 1.0 / windows) / windows)


def incident_time_fraction(arc, horizon: float, rng: np.random.Generator, batches: int = 50) -> tuple[float, float]:
    """Share of ``[0, horizon]`` an arc spends outside phase 1, from a start drawn
    from its stationary law, with a batch-means standard error."""
    gen = np.asarray(arc.generator, dtype=float)
    exit_rates, jumps = _jump_table(gen)
    law = np.clip(np.asarray(arc.stationary(), dtype=float), 0.0, None)
    ph = int(rng.choice(arc.n_phases, p=law / law.sum()))
    width = horizon / batches
    busy = np.zeros(batches)
    clock = 0.0
    while clock < horizon:
        end = min(clock + rng.exponential(1.0 / exit_rates[ph]), horizon)
        if ph != 0:
            # spread [clock, end) over the batches it overlaps
            first, last = int(clock // width), min(int(end // width), batches - 1)
            for b in range(first, last + 1):
                busy[b] += min(end, (b + 1) * width) - max(clock, b * width)
        clock = end
        ph = int(rng.choice(arc.n_phases, p=jumps[ph]))
    shares = busy / width
    return float(shares.mean()), float(shares.std(ddof=1) / math.sqrt(batches))


# --------------------------------------------------------------------------
# State trajectories for online runs
# --------------------------------------------------------------------------


class SimulatedStateSource:
    """Continuous trajectories of every arc's phase, sampled on demand."""

    def __init__(self, network: Network, initial: NetworkState, horizon: float, rng: np.random.Generator):
        self.network = network
        self.initial = initial
        self.horizon = horizon
        self._paths: dict[str, tuple[list[float], list[int]]] = {}
        for arc in network.arcs:
            exit_rates, jumps = _jump_table(np.asarray(arc.generator, dtype=float))
            law = initial.vector(arc)
            ph = int(rng.choice(arc.n_phases, p=law / law.sum()))
            epochs, phases = [0.0], [ph + 1]
            clock = 0.0
            while exit_rates[ph] > 0:
                clock += rng.exponential(1.0 / exit_rates[ph])
                if clock > horizon:
                    break
                ph = int(rng.choice(arc.n_phases, p=jumps[ph]))
                epochs.append(clock)
                phases.append(ph + 1)
            self._paths[arc.id] = (epochs, phases)

    def phase_at(self, arc_id: str, u: float) -> int:
        epochs, phases = self._paths[arc_id]
        return phases[bisect.bisect_right(epochs, u) - 1]

    def state_at(self, u: float) -> NetworkState:
        if u == 0:
            return self.initial
        if u > self.horizon:
            raise StateSourceExhausted(f"trajectory simulated up to {self.horizon} h, asked for {u}")
        return NetworkState({a.id: self.phase_at(a.id, u) for a in self.network.arcs}, timestamp=u)


# --------------------------------------------------------------------------
# Online versus offline
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSummary:
    offline: float
    online_mean: float
    difference: float
    std_error: float
    replications: int
    forced: int
    solves: int

    def as_row(self) -> dict:
        return {
            "offline": self.offline,
            "online_mean": self.online_mean,
            "difference": self.difference,
            "std_error": self.std_error,
            "replications": self.replications,
            "forced": self.forced,
            "solves": self.solves,
        }


def _grid_phases(arcs, initial_vectors, step: int, n_steps: int, reps: int, rng) -> np.ndarray:
    """Phases (0-based) of ``arcs`` at ``0, step, ...``; shape (reps, n_steps, len(arcs)).

    Sampling the continuous chain on a grid gives a discrete chain with kernel
    ``exp(Q * step)``, so this is exact.
    """
    out = np.empty((reps, n_steps, len(arcs)), dtype=np.int8)
    for k, (arc, vec) in enumerate(zip(arcs, initial_vectors)):
        K = arc.kernel(step)
        cur = _sample_rows(np.tile(vec, (reps, 1)), rng)
        out[:, 0, k] = cur
        for j in range(1, n_steps):
            cur = _sample_rows(K[cur], rng)
            out[:, j, k] = cur
    return out


def online_offline_experiment(
    network: Network,
    path: Path,
    state: NetworkState,
    query: DepartureQuery,
    replications: int,
    seed: int = 0,
    settings: EngineSettings = DEFAULT_SETTINGS,
    chunk: int = 2000,
    memo: OfflineMemo | None = None,
) -> ExperimentSummary:
    """Mean online departure over ``replications`` simulated trajectories
    minus the offline departure computed at time 0 from ``state``.

    Infeasible offline advice is reported as NaN difference.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    if query.update_interval is None:
        raise ValueError("query.update_interval is required")
    memo = memo if memo is not None else OfflineMemo(network, path, settings)
    offline = memo.solve(state, query)
    step = query.update_interval
    n_steps = int(math.floor(query.deadline / step + 1e-9)) + 1
    arcs = [network.arc(a) for a in path.arcs]
    vectors = [state.vector(a) for a in arcs]
    others = {a.id: 1 for a in network.arcs}

    # advice cache per (grid index, phase tuple)
    advice: dict[tuple[int, tuple[int, ...]], DepartureAdvice] = {}

    def advise(j: int, phases: tuple[int, ...]) -> DepartureAdvice:
        key = (j, phases)
        if key not in advice:
            u = j * step
            s = NetworkState({**others, **{a.id: p + 1 for a, p in zip(arcs, phases)}}, timestamp=u)
            remaining = query.deadline - u
            advice[key] = memo.solve(s, query.with_deadline(remaining)) if remaining > 0 else None
        return advice[key]

    results = np.empty(replications)
    forced = 0
    seeds = np.random.SeedSequence(seed).spawn((replications + chunk - 1) // chunk)
    for c, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        lo = c * chunk
        reps = min(chunk, replications - lo)
        grid = _grid_phases(arcs, vectors, step, n_steps, reps, rng)
        pending = np.arange(reps)
        for j in range(n_steps):
            if not pending.size:
                break
            u = j * step
            if j == 0:
                advs = [offline] * pending.size
            else:
                advs = [advise(j, row) for row in map(tuple, grid[pending, j, :].tolist())]
            decided = np.zeros(pending.size, dtype=bool)
            for i, adv in enumerate(advs):
                if adv is None or not adv.feasible:
                    results[lo + pending[i]] = u if j > 0 else -math.inf
                    forced += j > 0
                    decided[i] = True
                elif adv.departure < step:
                    results[lo + pending[i]] = u + adv.departure
                    decided[i] = True
            pending = pending[~decided]
        if pending.size:
            results[lo + pending] = (n_steps - 1) * step
    if not offline.feasible:
        return ExperimentSummary(offline.departure, float("nan"), float("nan"), float("nan"), replications, forced,
                                 memo.misses)
    mean = float(results.mean())
    se = float(results.std(ddof=1) / math.sqrt(replications)) if replications > 1 else 0.0
    return ExperimentSummary(offline.departure, mean, mean - offline.departure, se, replications, forced, memo.misses)


def online_replication(
    network: Network,
    path: Path,
    state: NetworkState,
    query: DepartureQuery,
    rng: np.random.Generator,
    settings: EngineSettings = DEFAULT_SETTINGS,
    memo: OfflineMemo | None = None,
) -> DepartureAdvice:
    """One online run driven by a freshly simulated trajectory (reference path)."""
    source = SimulatedStateSource(network, state, query.deadline + query.update_interval, rng)
    return optimal_departure_online(network, path, source, query, settings, memo)
