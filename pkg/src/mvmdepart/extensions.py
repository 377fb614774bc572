"""Multi-phase incident processes and recurrent day-period speed regimes.

:class:`PhaseTypeArc` lets an incident pass through several sub-phases (for
example a mixture of Erlang durations). :class:`DayPeriodModel` adds a shared,
cyclic background chain whose phase selects each arc's speed profile; path
distributions then carry that phase as a tag.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import expm

from . import kernels
from .departure import ARRIVAL_ATOL, DepartureAdvice, DepartureQuery, latest_departure
from .distribution import DROP_MASS, TIME_EPS, TravelTimeDistribution, drop_light, merge_atoms
from .link import SAFETY, GranularityBudget, arc_delta, arc_link_lists
from .model import ModelError, Network, NetworkState
from .path import DEFAULT_SETTINGS, EngineSettings, Path, travel_time_bounds


class GranularityWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# Generic discrete lattice
# --------------------------------------------------------------------------


def step_matrix(generator: np.ndarray, delta: float) -> np.ndarray:
    """One-step transition matrix of the discretised chain: stay with
    probability ``exp(-q_i delta)``, otherwise jump in proportion to the rates."""
    gen = np.asarray(generator, dtype=float)
    exit_rates = -np.diag(gen)
    stay = np.exp(-exit_rates * delta)
    out = np.zeros_like(gen)
    for i, q in enumerate(exit_rates):
        if q > 0:
            out[i] = (1.0 - stay[i]) * gen[i] / q
        out[i, i] = stay[i]
    return out


def general_lattice(d: float, speeds: Sequence[float], generator, delta: float, initial) -> tuple:
    """Lattice over per-speed step counts for any finite chain.

    ``initial`` is a phase (1-based) or a probability vector. Returns merged
    ``(times, probs, final_phase)`` arrays where ``final_phase`` (0-based) is the
    phase used for the last, partial step.
    """
    m = len(speeds)
    if isinstance(initial, (int, np.integer)):
        law = np.zeros(m)
        law[initial - 1] = 1.0
    else:
        law = np.asarray(initial, dtype=float)
    return general_lattice_batch(d, speeds, generator, delta, law[None, :])[0]


def general_lattice_batch(d: float, speeds: Sequence[float], generator, delta: float, laws) -> list[tuple]:
    """:func:`general_lattice` for each row of ``laws`` in one pass over the nodes."""
    if not delta > 0:
        raise ModelError(f"step size must be positive, got {delta}")
    laws = np.atleast_2d(np.asarray(laws, dtype=float))
    R, m = laws.shape
    speeds = np.array([float(v) for v in speeds])
    uniq = np.array(list(dict.fromkeys(speeds.tolist())))
    slot = np.array([int(np.flatnonzero(uniq == v)[0]) for v in speeds])
    T = step_matrix(generator, delta)
    # a node is the vector of step counts per distinct speed; nodes with equal
    # counts sit at the same distance and recombine
    base = int(math.ceil(d / (speeds.min() * delta))) + 2
    radix = base ** np.arange(uniq.size, dtype=np.int64) if base ** uniq.size < 2**62 else None
    out_t, out_p, out_s = [], [], []
    first = speeds * delta >= d
    live = (laws > 0).any(axis=0)
    done = np.flatnonzero(live & first)
    out_t.append(d / speeds[done])
    out_p.append(laws[:, done].T)
    out_s.append(done)
    start = np.flatnonzero(live & ~first)
    counts = np.zeros((start.size, uniq.size), dtype=np.int64)
    counts[np.arange(start.size), slot[start]] = 1
    vecs = np.zeros((start.size, R, m))
    vecs[np.arange(start.size), :, start] = laws[:, start].T
    counts, vecs = _recombine(counts, vecs, radix)
    step = 0
    while counts.shape[0]:
        dist = delta * (counts @ uniq)
        child = vecs @ T
        new_counts, new_vecs = [], []
        for j in range(m):
            pj = child[:, :, j]
            alive = (pj > 0.0).any(axis=1)
            cont = alive & (dist + speeds[j] * delta < d)
            emit = alive & ~cont
            if emit.any():
                out_t.append((step + 1) * delta + (d - dist[emit]) / speeds[j])
                out_p.append(pj[emit])
                out_s.append(np.full(int(emit.sum()), j))
            if cont.any():
                c = counts[cont].copy()
                c[:, slot[j]] += 1
                v = np.zeros((c.shape[0], R, m))
                v[:, :, j] = pj[cont]
                new_counts.append(c)
                new_vecs.append(v)
        if not new_counts:
            break
        counts, vecs = _recombine(np.concatenate(new_counts), np.concatenate(new_vecs), radix)
        step += 1
    times = np.concatenate(out_t)
    probs = np.concatenate(out_p)
    finals = np.concatenate(out_s).astype(np.int64)
    result = []
    for r in range(R):
        keep = probs[:, r] > 0
        result.append(_merge_tagged(times[keep], probs[keep, r], finals[keep]))
    return result


def _recombine(counts, vecs, radix):
    """Sum the phase vectors of nodes with identical step counts."""
    if counts.shape[0] < 2:
        return counts, vecs
    if radix is not None:
        _, first, inverse = np.unique(counts @ radix, return_index=True, return_inverse=True)
    else:
        _, first, inverse = np.unique(counts, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    if first.size == inverse.size:
        return counts[first], vecs[first]
    order = np.argsort(inverse, kind="stable")
    starts = np.flatnonzero(np.diff(inverse[order], prepend=-1))
    return counts[first], np.add.reduceat(vecs[order], starts, axis=0)


def merge_tagged_atoms(times, probs, tags):
    """Sort by (tag, time) and merge equal times within a tag."""
    # two passes beat lexsort: time order, then a stable (radix) sort on the small tags
    order = np.argsort(times)
    small = tags[order].astype(np.int16) if tags.size and tags.max() < 2**15 else tags[order]
    order = order[np.argsort(small, kind="stable")]
    times, probs, tags = times[order], probs[order], tags[order]
    if times.size < 2:
        return times, probs, tags
    new = (np.diff(tags) != 0) | (np.diff(times) > TIME_EPS * np.maximum(1.0, np.abs(times[1:])))
    if new.all():
        return times, probs, tags
    starts = np.concatenate(([0], np.flatnonzero(new) + 1))
    return times[starts], np.add.reduceat(probs, starts), tags[starts]


def _merge_tagged(times, probs, tags):
    """Drop negligible atoms, then sort and merge."""
    if times.size == 0:
        return times, probs, tags
    keep = probs >= DROP_MASS
    if not keep.all():
        total = probs.sum()
        times, probs, tags = times[keep], probs[keep], tags[keep]
        probs = probs * (total / probs.sum())
    return merge_tagged_atoms(times, probs, tags)


def generalised_delta(d: float, speeds, generator, budget: GranularityBudget) -> float:
    """Step size meeting both error budgets for every transition of the chain."""
    gen = np.asarray(generator, dtype=float)
    exit_rates = -np.diag(gen)
    bound = math.inf
    for i in range(gen.shape[0]):
        for j in range(gen.shape[0]):
            if i == j or gen[i, j] <= 0:
                continue
            if exit_rates[j] > 0:
                bound = min(bound, math.sqrt(2 * budget.eps_transition / (exit_rates[i] * exit_rates[j])))
            dv = abs(speeds[i] - speeds[j])
            if dv > 0:
                rate = max(exit_rates[i], exit_rates[j])
                bound = min(bound, math.sqrt(2 * budget.eps_distance / (dv / d * rate)))
    delta = SAFETY * bound if math.isfinite(bound) else math.inf
    if budget.delta_cap is not None:
        delta = min(delta, budget.delta_cap)
    if not math.isfinite(delta):
        # no transitions at all: a single step covering the link
        delta = d / min(speeds)
    return delta


# --------------------------------------------------------------------------
# Phase-type arcs
# --------------------------------------------------------------------------


def _reaches_free(gen: np.ndarray) -> bool:
    m = gen.shape[0]
    reach = {0}
    changed = True
    while changed:
        changed = False
        for i in range(m):
            if i not in reach and any(gen[i, j] > 0 for j in reach):
                reach.add(i)
                changed = True
    return len(reach) == m


@dataclass(frozen=True)
class PhaseTypeArc:
    """Arc whose speed process is any finite chain; phase 1 is incident-free."""

    id: str
    tail: str
    head: str
    length_km: float
    generator: tuple
    speeds: tuple

    def __post_init__(self) -> None:
        gen = np.asarray(self.generator, dtype=float)
        object.__setattr__(self, "generator", tuple(tuple(float(x) for x in row) for row in gen))
        object.__setattr__(self, "speeds", tuple(float(v) for v in self.speeds))
        m = len(self.speeds)
        if gen.shape != (m, m) or m < 2:
            raise ModelError(f"arc {self.id!r}: generator must be {m}x{m} with at least two phases")
        if not self.length_km > 0:
            raise ModelError(f"arc {self.id!r}: length_km must be positive")
        if any(not v > 0 for v in self.speeds):
            raise ModelError(f"arc {self.id!r}: speeds must be positive")
        off = gen - np.diag(np.diag(gen))
        if np.any(off < 0):
            raise ModelError(f"arc {self.id!r}: off-diagonal rates must be nonnegative")
        if np.any(np.abs(gen.sum(axis=1)) > 1e-9 * max(1.0, np.abs(gen).max())):
            raise ModelError(f"arc {self.id!r}: generator rows must sum to zero")
        if not _reaches_free(gen):
            raise ModelError(f"arc {self.id!r}: phase 1 must be reachable from every phase")

    @property
    def n_phases(self) -> int:
        return len(self.speeds)

    @property
    def Q(self) -> np.ndarray:
        return np.asarray(self.generator)

    @property
    def max_speed(self) -> float:
        return max(self.speeds)

    @property
    def min_speed(self) -> float:
        return min(self.speeds)

    def kernel(self, t: float) -> np.ndarray:
        if not t >= 0:
            raise ModelError(f"elapsed time must be nonnegative, got {t}")
        return expm(self.Q * t)

    def kernels(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        return expm(self.Q[None, :, :] * times[:, None, None])

    def stationary(self) -> np.ndarray:
        gen = self.Q
        A = np.vstack((gen.T, np.ones(self.n_phases)))
        b = np.zeros(self.n_phases + 1)
        b[-1] = 1.0
        return np.linalg.lstsq(A, b, rcond=None)[0]


def mixture_erlang_arc(
    id: str,
    tail: str,
    head: str,
    length_km: float,
    speed_free: float,
    speed_incident: float,
    mix: float,
    onset_rate: float,
    erlang_rate: float,
    exp_rate: float,
) -> PhaseTypeArc:
    """Incident durations are Erlang-2 (rate ``erlang_rate``) with probability
    ``mix`` and exponential (rate ``exp_rate``) otherwise.

    Phases: 1 free, 2 and 3 the Erlang stages, 4 the exponential branch.
    """
    if not 0 <= mix <= 1:
        raise ModelError("mix must lie in [0, 1]")
    a, b, c = onset_rate, erlang_rate, exp_rate
    gen = (
        (-a, mix * a, 0.0, (1 - mix) * a),
        (0.0, -b, b, 0.0),
        (b, 0.0, -b, 0.0),
        (c, 0.0, 0.0, -c),
    )
    return PhaseTypeArc(id, tail, head, length_km, gen, (speed_free, speed_incident, speed_incident, speed_incident))


def phase_delta(arc: PhaseTypeArc, budget: GranularityBudget) -> float:
    return generalised_delta(arc.length_km, arc.speeds, arc.Q, budget)


def phase_link_distribution(
    arc: PhaseTypeArc, initial: int, delta: float, budget: GranularityBudget | None = None, strict: bool = False
) -> TravelTimeDistribution:
    """Link distribution for a multi-phase arc entered in phase ``initial``.

    ``delta`` is checked against the generalised bound for ``budget`` (default
    budget if omitted); a violation warns, or raises with ``strict=True``.
    """
    if not 1 <= initial <= arc.n_phases:
        raise ModelError(f"initial phase must lie in 1..{arc.n_phases}")
    limit = phase_delta(arc, budget or GranularityBudget())
    if delta > limit * (1 + 1e-12):
        msg = f"arc {arc.id!r}: step {delta:.6g} h exceeds the granularity bound {limit:.6g} h"
        if strict:
            raise ModelError(msg)
        warnings.warn(msg, GranularityWarning, stacklevel=2)
    times, probs, _ = general_lattice(arc.length_km, arc.speeds, arc.Q, delta, initial)
    return TravelTimeDistribution(times, probs)


@lru_cache(maxsize=2048)
def _phase_lists(arc: PhaseTypeArc, budget: GranularityBudget):
    delta = phase_delta(arc, budget)
    out = []
    for times, probs, _ in general_lattice_batch(arc.length_km, arc.speeds, arc.Q, delta, np.eye(arc.n_phases)):
        t, p = merge_atoms(times, probs)
        t.setflags(write=False)
        p.setflags(write=False)
        out.append((t, p))
    return tuple(out)


@arc_delta.register
def _(arc: PhaseTypeArc, budget: GranularityBudget) -> float:
    return phase_delta(arc, budget)


@arc_link_lists.register
def _(arc: PhaseTypeArc, budget: GranularityBudget):
    return _phase_lists(arc, budget)


# --------------------------------------------------------------------------
# Posteriors from elapsed durations
# --------------------------------------------------------------------------


def incident_phase_posterior(mix: float, erlang_rate: float, exp_rate: float, elapsed: float) -> np.ndarray:
    """P(sub-phase | incident still running after ``elapsed`` h) over phases (2, 3, 4)
    of :func:`mixture_erlang_arc`."""
    if not elapsed >= 0:
        raise ModelError("elapsed must be nonnegative")
    b, t = erlang_rate, elapsed
    w = np.array([mix * math.exp(-b * t), mix * b * t * math.exp(-b * t), (1 - mix) * math.exp(-exp_rate * t)])
    return w / w.sum()


def elapsed_posterior(arc: PhaseTypeArc, elapsed: float) -> np.ndarray:
    """Phase law of an incident observed to have lasted ``elapsed`` h so far.

    Incidents start in the sub-phases reachable from phase 1 in proportion to
    the onset rates; the surviving mass is propagated with the sub-generator.
    Returns a vector over all phases with zero weight on phase 1.
    """
    if not elapsed >= 0:
        raise ModelError("elapsed must be nonnegative")
    gen = arc.Q
    entry = gen[0, 1:].copy()
    if entry.sum() <= 0:
        raise ModelError(f"arc {arc.id!r}: no incident phase is reachable from phase 1")
    entry /= entry.sum()
    w = entry @ expm(gen[1:, 1:] * elapsed)
    if w.sum() <= 0:
        raise ModelError("elapsed duration has zero likelihood")
    return np.concatenate(([0.0], w / w.sum()))


def day_phase_posterior(shape: int, rate: float, elapsed: float) -> np.ndarray:
    """Erlang phase law given the period has lasted ``elapsed`` h and not yet ended."""
    if shape < 1:
        raise ModelError("shape must be >= 1")
    if not elapsed >= 0:
        raise ModelError("elapsed must be nonnegative")
    x = rate * elapsed
    if x == 0:
        out = np.zeros(shape)
        out[0] = 1.0
        return out
    i = np.arange(shape)
    logw = i * math.log(x) - np.array([math.lgamma(k + 1) for k in i])
    w = np.exp(logw - logw.max())
    return w / w.sum()


# --------------------------------------------------------------------------
# Recurrent day periods
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DayPeriodModel:
    """Cyclic chain of Erlang phases: period ``j`` has ``shapes[j]`` phases, each
    left at rate ``shapes[j] / means[j]``."""

    means: tuple
    shapes: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "means", tuple(float(x) for x in self.means))
        object.__setattr__(self, "shapes", tuple(int(k) for k in self.shapes))
        if len(self.means) != len(self.shapes) or not self.means:
            raise ModelError("need one mean and one shape per period")
        if any(not t > 0 for t in self.means):
            raise ModelError("period means must be positive")
        if any(k < 1 for k in self.shapes):
            raise ModelError("period shapes must be >= 1")

    @property
    def n_periods(self) -> int:
        return len(self.means)

    @property
    def n_phases(self) -> int:
        return sum(self.shapes)

    @property
    def period_of_phase(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_periods), self.shapes)

    @property
    def rates(self) -> np.ndarray:
        return np.repeat([k / t for k, t in zip(self.shapes, self.means)], self.shapes)

    def first_phase(self, period: int) -> int:
        return int(sum(self.shapes[:period]))

    @property
    def generator(self) -> np.ndarray:
        n = self.n_phases
        gen = np.zeros((n, n))
        if n == 1:
            return gen
        for i, r in enumerate(self.rates):
            gen[i, i] = -r
            gen[i, (i + 1) % n] += r
        return gen

    def kernel(self, t: float) -> np.ndarray:
        return expm(self.generator * t)

    def kernels(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        return expm(self.generator[None] * times[:, None, None])

    def belief(self, period: int, elapsed: float) -> np.ndarray:
        """Phase law given the current period and how long it has lasted."""
        if not 0 <= period < self.n_periods:
            raise ModelError(f"period must lie in 0..{self.n_periods - 1}")
        out = np.zeros(self.n_phases)
        k, t = self.shapes[period], self.means[period]
        start = self.first_phase(period)
        out[start : start + k] = day_phase_posterior(k, k / t, elapsed)
        return out


@dataclass(frozen=True)
class RecurrentArc:
    """An arc whose speeds also depend on the day period.

    ``period_speeds[y][x - 1]`` is the speed in incident phase ``x`` during period
    ``y``. ``base`` supplies the incident process.
    """

    base: object
    period_speeds: tuple

    def __post_init__(self) -> None:
        speeds = tuple(tuple(float(v) for v in row) for row in self.period_speeds)
        object.__setattr__(self, "period_speeds", speeds)
        if any(len(row) != self.base.n_phases for row in speeds):
            raise ModelError(f"arc {self.id!r}: each period needs {self.base.n_phases} speeds")
        if any(not v > 0 for row in speeds for v in row):
            raise ModelError(f"arc {self.id!r}: speeds must be positive")

    id = property(lambda self: self.base.id)
    tail = property(lambda self: self.base.tail)
    head = property(lambda self: self.base.head)
    length_km = property(lambda self: self.base.length_km)
    n_phases = property(lambda self: self.base.n_phases)

    @property
    def max_speed(self) -> float:
        return max(max(row) for row in self.period_speeds)

    @property
    def min_speed(self) -> float:
        return min(min(row) for row in self.period_speeds)

    def kernels(self, times):
        return self.base.kernels(times)

    def kernel(self, t):
        return self.base.kernel(t)

    def joint(self, day: DayPeriodModel) -> tuple[np.ndarray, list[float]]:
        """Generator and per-phase speeds of the product chain, index ``x * K + y``."""
        if len(self.period_speeds) != day.n_periods:
            raise ModelError(f"arc {self.id!r}: needs speeds for {day.n_periods} periods")
        gx = np.asarray(self.base.generator, dtype=float)
        gy = day.generator
        K = day.n_phases
        gen = np.kron(gx, np.eye(K)) + np.kron(np.eye(gx.shape[0]), gy)
        per = day.period_of_phase
        speeds = [self.period_speeds[per[y]][x] for x in range(gx.shape[0]) for y in range(K)]
        return gen, speeds


def recurrent_delta(arc: RecurrentArc, day: DayPeriodModel, budget: GranularityBudget) -> float:
    gen, speeds = arc.joint(day)
    return generalised_delta(arc.length_km, speeds, gen, budget)


@lru_cache(maxsize=1024)
def recurrent_link_lists(arc: RecurrentArc, day: DayPeriodModel, budget: GranularityBudget, delta=None):
    """``{(x, y): (times, probs, final_y)}`` for entry incident phase ``x`` (1-based)
    and day phase ``y`` (0-based)."""
    gen, speeds = arc.joint(day)
    K = day.n_phases
    if delta is None:
        delta = generalised_delta(arc.length_km, speeds, gen, budget)
    # joint index (x - 1) * K + y, so row order matches the key order below
    keys = [(x, y) for x in range(1, arc.n_phases + 1) for y in range(K)]
    rows = general_lattice_batch(arc.length_km, speeds, gen, delta, np.eye(len(keys)))
    # keep only the final day phase; the list is then sorted by (day phase, time)
    return {key: merge_tagged_atoms(times, probs, final % K) for key, (times, probs, final) in zip(keys, rows)}


@dataclass(frozen=True, eq=False)
class TaggedDistribution:
    """Atoms ``(time, probability, day phase)``, sorted by tag then time."""

    times: np.ndarray
    probs: np.ndarray
    tags: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        tags = np.asarray(self.tags, dtype=np.int64)
        if not (times.shape == probs.shape == tags.shape) or times.size == 0:
            raise ValueError("need matching, nonempty times, probs and tags")
        if np.any(times < 0) or np.any(probs < 0):
            raise ValueError("times and probabilities must be nonnegative")
        times, probs, tags = merge_tagged_atoms(times, probs, tags)
        for name, arr in (("times", times), ("probs", probs), ("tags", tags)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def mass(self) -> float:
        return float(self.probs.sum())

    def __len__(self) -> int:
        return self.times.size

    @property
    def atoms(self) -> list[tuple[float, float, int]]:
        return list(zip(self.times.tolist(), self.probs.tolist(), self.tags.tolist()))

    def marginal(self) -> TravelTimeDistribution:
        return TravelTimeDistribution(self.times, self.probs)

    def tag_mass(self, n_tags: int) -> np.ndarray:
        return np.bincount(self.tags, weights=self.probs, minlength=n_tags)


def _tag_segments(tags: np.ndarray) -> dict[int, slice]:
    """Contiguous block of each tag in a tag-sorted array."""
    if np.any(np.diff(tags) < 0):
        raise ValueError("tags must be sorted")
    bounds = np.concatenate(([0], np.flatnonzero(np.diff(tags)) + 1, [tags.size]))
    return {int(tags[a]): slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])}


def extend_distribution_recurrent(
    dist: TaggedDistribution,
    arc: RecurrentArc,
    day: DayPeriodModel,
    entry_reference,
    link_lists: Mapping,
    settings: EngineSettings | None = None,
) -> TaggedDistribution:
    """Append ``arc``: each atom's tag picks the day phase at entry, the incident
    phase is re-conditioned on the elapsed time, and the link's final day phase
    becomes the new tag. ``settings`` (optional) rebins each tag separately."""
    vec = np.asarray(entry_reference, dtype=float)
    if vec.ndim == 0:
        phase = int(entry_reference)
        vec = np.zeros(arc.n_phases)
        vec[phase - 1] = 1.0
    # (path block, entry weight, link block) grouped by the tag they produce;
    # link lists are sorted by final tag, so each tag is one slice
    by_tag: dict[int, list] = {}
    for y, rows in _tag_segments(dist.tags).items():
        t1, p1 = dist.times[rows], dist.probs[rows]
        w = np.einsum("j,njk->nk", vec, arc.kernels(t1))
        for x in range(1, arc.n_phases + 1):
            if (x, y) not in link_lists:
                raise ModelError(f"arc {arc.id!r}: no link list for incident phase {x}, day phase {y}")
            lt, lp, ls = link_lists[(x, y)]
            weight = p1 * w[:, x - 1]
            for tag, seg in _tag_segments(ls).items():
                by_tag.setdefault(tag, []).append((t1, weight, lt[seg], lp[seg]))
    out_t, out_p, out_s = [], [], []
    for tag in sorted(by_tag):
        t = np.concatenate([(t1[:, None] + lt[None, :]).ravel() for t1, _, lt, _ in by_tag[tag]])
        p = np.concatenate([(w[:, None] * lp[None, :]).ravel() for _, w, _, lp in by_tag[tag]])
        t, p = merge_atoms(*drop_light(t, p, DROP_MASS))
        if settings is not None and settings.bins and t.size > settings.bins:
            t, p = kernels.backend.rebin_sorted(t, p, settings.bins, settings.representative == "upper",
                                                settings.pin_mass)
        out_t.append(t)
        out_p.append(p)
        out_s.append(np.full(t.size, tag, dtype=np.int64))
    return TaggedDistribution(np.concatenate(out_t), np.concatenate(out_p), np.concatenate(out_s))


def tagged_path_distribution(
    network: Network,
    path: Path,
    state: NetworkState,
    day: DayPeriodModel,
    day_belief,
    depart_offset: float = 0.0,
    settings: EngineSettings | None = DEFAULT_SETTINGS,
) -> TaggedDistribution:
    """Arrival times with the day phase at arrival; every path arc must be a
    :class:`RecurrentArc`. ``day_belief`` is the day-phase law at request time."""
    belief = np.asarray(day_belief, dtype=float)
    if belief.shape != (day.n_phases,):
        raise ModelError(f"day belief must have {day.n_phases} entries")
    start = belief @ day.kernel(depart_offset)
    tags = np.flatnonzero(start > 0)
    dist = TaggedDistribution(np.full(tags.size, float(depart_offset)), start[tags], tags)
    budget = settings.budget if settings is not None else DEFAULT_SETTINGS.budget
    for arc_id in path.arcs:
        arc = network.arc(arc_id)
        if not isinstance(arc, RecurrentArc):
            raise ModelError(f"arc {arc_id!r} has no day-period speeds")
        lists = recurrent_link_lists(arc, day, budget)
        dist = extend_distribution_recurrent(dist, arc, day, state.vector(arc), lists, settings)
    return dist


def recurrent_on_time_probability(
    network: Network,
    path: Path,
    state: NetworkState,
    day: DayPeriodModel,
    day_belief,
    t: float,
    deadline: float,
    settings: EngineSettings = DEFAULT_SETTINGS,
) -> float:
    """P(arrival <= deadline) departing at ``t`` on a path of day-period arcs."""
    if not t >= 0:
        raise ModelError(f"departure time must be nonnegative, got {t}")
    dist = tagged_path_distribution(network, path, state, day, day_belief, t, settings).marginal()
    k = np.searchsorted(dist.times, deadline + ARRIVAL_ATOL, side="right")
    return float(min(1.0, dist.probs[:k].sum()))


def recurrent_optimal_departure(
    network: Network,
    path: Path,
    state: NetworkState,
    day: DayPeriodModel,
    day_belief,
    query: DepartureQuery,
    settings: EngineSettings = DEFAULT_SETTINGS,
) -> DepartureAdvice:
    """Latest departure reaching ``query.deadline`` with probability at least
    ``query.reliability`` when speeds follow the day period."""

    def prob(t):
        return recurrent_on_time_probability(network, path, state, day, day_belief, t, query.deadline, settings)

    return latest_departure(prob, *travel_time_bounds(network, path), query)
