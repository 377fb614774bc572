"""Path travel-time distributions by folding per-link distributions.

A path atom ``(t1, p1)`` meets the next arc at elapsed time ``t1``; the arc's
entry phase is then distributed as ``state_vector @ exp(Q t1)``. Departing at
``t > 0`` is handled by starting from the single atom ``(t, 1)``.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .distribution import TravelTimeDistribution
from .link import DEFAULT_BUDGET, GranularityBudget, arc_delta, arc_link_lists
from .model import ModelError, Network, NetworkState

REPRESENTATIVES = ("mean", "upper")


@dataclass(frozen=True)
class EngineSettings:
    """Discretisation and aggregation knobs shared by all solvers.

    ``pin_mass``: atoms at least this heavy keep their exact time when binning.
    The no-transition outcomes are genuine atoms of the continuous model and
    pooling them with nearby mass would displace them.
    """

    budget: GranularityBudget = DEFAULT_BUDGET
    bins: int = 100
    representative: str = "mean"
    pin_mass: float = 0.005

    def __post_init__(self) -> None:
        if self.bins < 1:
            raise ValueError("bins must be >= 1")
        if self.representative not in REPRESENTATIVES:
            raise ValueError(f"representative must be one of {REPRESENTATIVES}")
        if not 0 <= self.pin_mass <= 1:
            raise ValueError("pin_mass must lie in [0, 1]")


DEFAULT_SETTINGS = EngineSettings()


@dataclass(frozen=True)
class Path:
    arcs: tuple[str, ...]
    origin: str
    destination: str

    @classmethod
    def from_arcs(cls, network: Network, arc_ids: Sequence[str], origin: str | None = None) -> "Path":
        arc_ids = tuple(arc_ids)
        if not arc_ids:
            if origin is None:
                raise ModelError("an empty path needs an explicit origin")
            return cls((), origin, origin)
        arcs = [network.arc(a) for a in arc_ids]
        nodes = [arcs[0].tail]
        for prev, nxt in zip(arcs, arcs[1:]):
            if prev.head != nxt.tail:
                raise ModelError(f"arcs {prev.id!r} and {nxt.id!r} are not consecutive")
        nodes.extend(a.head for a in arcs)
        if len(set(nodes)) != len(nodes):
            raise ModelError(f"path {arc_ids} revisits a node")
        return cls(arc_ids, arcs[0].tail, arcs[-1].head)

    def nodes(self, network: Network) -> list[str]:
        return [self.origin] + [network.arc(a).head for a in self.arcs]

    def length_km(self, network: Network) -> float:
        return sum(network.arc(a).length_km for a in self.arcs)

    def __len__(self) -> int:
        return len(self.arcs)


def _entry_weights(arc, entry_vector: np.ndarray, times: np.ndarray) -> np.ndarray:
    # w[i, j] = P(arc in phase j at times[i] | phase law entry_vector at time 0)
    return np.einsum("j,njk->nk", entry_vector, arc.kernels(times))


def _as_vector(arc, entry) -> np.ndarray:
    if isinstance(entry, (int, np.integer)):
        if not 1 <= entry <= arc.n_phases:
            raise ModelError(f"arc {arc.id!r}: phase {entry} outside 1..{arc.n_phases}")
        vec = np.zeros(arc.n_phases)
        vec[entry - 1] = 1.0
        return vec
    vec = np.asarray(entry, dtype=float)
    if vec.shape != (arc.n_phases,):
        raise ModelError(f"arc {arc.id!r}: entry law must have {arc.n_phases} entries")
    return vec


def _flatten_lists(link_lists) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lt = np.concatenate([np.asarray(l[0], dtype=float) for l in link_lists])
    lp = np.concatenate([np.asarray(l[1], dtype=float) for l in link_lists])
    offsets = np.concatenate(([0], np.cumsum([len(l[0]) for l in link_lists]))).astype(np.int64)
    return lt, lp, offsets


def _pairs(link_lists):
    out = []
    for item in link_lists:
        if isinstance(item, TravelTimeDistribution):
            out.append((item.times, item.probs))
        else:
            out.append(item)
    return out


def extend_distribution(
    dist: TravelTimeDistribution, arc, entry_phase_reference, link_lists
) -> TravelTimeDistribution:
    """Append ``arc`` to a path distribution (no binning).

    ``entry_phase_reference`` is the arc's phase (or phase law) at time 0 and
    ``link_lists[j]`` the link distribution when entering in phase ``j + 1``.
    """
    link_lists = _pairs(link_lists)
    if len(link_lists) != arc.n_phases or any(l is None for l in link_lists):
        raise ModelError(f"arc {arc.id!r}: need one link distribution per phase ({arc.n_phases})")
    vec = _as_vector(arc, entry_phase_reference)
    w = _entry_weights(arc, vec, dist.times)
    lt, lp, offsets = _flatten_lists(link_lists)
    times, probs = kernels.compose_rebin(
        np.ascontiguousarray(dist.times), np.ascontiguousarray(dist.probs), w, lt, lp, offsets, 0, False, 0.0
    )
    return TravelTimeDistribution(times, probs)


def rebin(
    dist: TravelTimeDistribution, bins: int, representative: str = "mean", pin_mass: float = 0.0
) -> TravelTimeDistribution:
    """Pool atoms into ``bins`` equal-width intervals over the current support.

    Each bin becomes one atom carrying its total mass, placed at the bin's
    probability-weighted mean time (``"mean"``) or its upper edge (``"upper"``).
    Distributions with at most ``bins`` atoms are returned unchanged.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if representative not in REPRESENTATIVES:
        raise ValueError(f"representative must be one of {REPRESENTATIVES}")
    if len(dist) <= bins:
        return dist
    times, probs = kernels.backend.rebin_sorted(
        np.ascontiguousarray(dist.times), np.ascontiguousarray(dist.probs), bins, representative == "upper", pin_mass
    )
    return TravelTimeDistribution(times, probs, binned=True, bin_count=bins)


class _Fold:
    """Arc-by-arc composition on raw arrays (skips per-step validation)."""

    def __init__(self, settings: EngineSettings):
        self.settings = settings
        self.upper = settings.representative == "upper"

    def start(self, depart_offset: float) -> tuple[np.ndarray, np.ndarray]:
        return np.array([float(depart_offset)]), np.array([1.0])

    def step(self, times, probs, arc, entry_vector, link_lists=None):
        if link_lists is None:
            link_lists = arc_link_lists(arc, self.settings.budget)
        w = _entry_weights(arc, entry_vector, times)
        lt, lp, offsets = _flatten_cached(link_lists)
        return kernels.compose_rebin(
            times, probs, w, lt, lp, offsets, self.settings.bins, self.upper, self.settings.pin_mass
        )


_FLAT_CACHE: dict[int, tuple] = {}
_FLAT_LOCK = threading.Lock()


def _flatten_cached(link_lists):
    key = id(link_lists)
    hit = _FLAT_CACHE.get(key)
    if hit is not None and hit[0] is link_lists:
        return hit[1]
    flat = _flatten_lists(link_lists)
    with _FLAT_LOCK:
        if len(_FLAT_CACHE) > 16384:
            _FLAT_CACHE.clear()
        _FLAT_CACHE[key] = (link_lists, flat)
    return flat


def fold_path(network, arc_ids, state: NetworkState, depart_offset: float, settings: EngineSettings):
    """Raw ``(times, probs)`` of arrival times; shared by the solvers."""
    fold = _Fold(settings)
    times, probs = fold.start(depart_offset)
    for arc_id in arc_ids:
        arc = network.arc(arc_id)
        times, probs = fold.step(times, probs, arc, state.vector(arc))
    return times, probs


def path_distribution(
    network: Network,
    path: Path,
    state: NetworkState,
    depart_offset: float = 0.0,
    bins: int | None = None,
    settings: EngineSettings = DEFAULT_SETTINGS,
) -> TravelTimeDistribution:
    """Arrival-time distribution (hours after request) for departing at ``depart_offset``."""
    if not depart_offset >= 0:
        raise ModelError(f"departure offset must be nonnegative, got {depart_offset}")
    if bins is not None:
        settings = replace(settings, bins=bins)
    for arc_id in path.arcs:
        if arc_id not in network:
            raise ModelError(f"path arc {arc_id!r} is not in the network")
    times, probs = fold_path(network, path.arcs, state, depart_offset, settings)
    return TravelTimeDistribution(times, probs, binned=len(path.arcs) > 0, bin_count=settings.bins)


def travel_time_bounds(network: Network, path: Path) -> tuple[float, float]:
    t_min = t_max = 0.0
    for arc_id in path.arcs:
        arc = network.arc(arc_id)
        t_min += arc.length_km / arc.max_speed
        t_max += arc.length_km / arc.min_speed
    return t_min, t_max


# --------------------------------------------------------------------------
# Subpath precomputation
# --------------------------------------------------------------------------

MAX_JOINT_ARCS = 12


@dataclass
class SubpathCacheEntry:
    """Stored distributions through ``subpath`` per joint entry phase vector.

    Distributions are relative to entering the subpath at time 0. States whose
    estimated chance of occurring before the horizon fell below ``eps`` are
    listed in ``pruned_states``; if such a state is needed later it is computed
    on demand (``fallbacks`` counts these) rather than dropped.
    """

    subpath: Path
    settings: EngineSettings
    distributions: dict[tuple[int, ...], TravelTimeDistribution]
    pruned_states: frozenset[tuple[int, ...]] = frozenset()
    hit_probabilities: dict[tuple[int, ...], float] = field(default_factory=dict)
    fallbacks: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.pruned_states & set(self.distributions):
            raise ValueError("pruned states overlap stored states")

    def lookup(self, network: Network, joint: tuple[int, ...]) -> TravelTimeDistribution:
        found = self.distributions.get(joint)
        if found is not None:
            return found
        if joint not in self.pruned_states:
            raise KeyError(joint)
        dist = _joint_state_distribution(network, self.subpath, joint, self.settings)
        with self._lock:
            self.distributions = {**self.distributions, joint: dist}
            self.pruned_states = self.pruned_states - {joint}
            self.fallbacks += 1
        return dist


def cache_key(network: Network, entry: SubpathCacheEntry) -> dict:
    return {
        "arcs": list(entry.subpath.arcs),
        "deltas": [arc_delta(network.arc(a), entry.settings.budget) for a in entry.subpath.arcs],
        "bins": entry.settings.bins,
    }


def _joint_state_distribution(network, subpath: Path, joint, settings) -> TravelTimeDistribution:
    phases = {arc.id: 1 for arc in network.arcs}
    phases.update(zip(subpath.arcs, joint))
    state = NetworkState(phases)
    return path_distribution(network, subpath, state, 0.0, settings=settings)


def estimate_hitting_probabilities(
    network: Network,
    subpath: Path,
    state: NetworkState,
    horizon: float,
    samples: int,
    rng: np.random.Generator,
) -> dict[tuple[int, ...], float]:
    """Monte Carlo estimate of P(joint phase vector is visited during [0, horizon])."""
    arcs = [network.arc(a) for a in subpath.arcs]
    counts: dict[tuple[int, ...], int] = {}
    for _ in range(samples):
        phases = []
        events = []
        for i, arc in enumerate(arcs):
            vec = state.vector(arc)
            ph = int(rng.choice(arc.n_phases, p=vec)) + 1
            phases.append(ph)
            gen = arc.generator
            clock, cur = 0.0, ph
            while True:
                rate = -gen[cur - 1, cur - 1]
                clock += rng.exponential(1.0 / rate)
                if clock > horizon:
                    break
                row = np.clip(gen[cur - 1], 0, None)
                row[cur - 1] = 0.0
                cur = int(rng.choice(arc.n_phases, p=row / row.sum())) + 1
                events.append((clock, i, cur))
        visited = {tuple(phases)}
        events.sort()
        for _, i, cur in events:
            phases[i] = cur
            visited.add(tuple(phases))
        for joint in visited:
            counts[joint] = counts.get(joint, 0) + 1
    return {joint: c / samples for joint, c in counts.items()}


def precompute_subpath(
    network: Network,
    subpath: Path,
    horizon: float,
    state: NetworkState,
    eps: float = 0.0,
    mc_samples: int = 2000,
    settings: EngineSettings = DEFAULT_SETTINGS,
    rng: np.random.Generator | None = None,
    max_arcs: int = MAX_JOINT_ARCS,
) -> SubpathCacheEntry:
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    if len(subpath) > max_arcs:
        raise ModelError(f"subpath has {len(subpath)} arcs; joint-state limit is {max_arcs}")
    arcs = [network.arc(a) for a in subpath.arcs]
    all_states = list(itertools.product(*[range(1, arc.n_phases + 1) for arc in arcs]))
    hits: dict[tuple[int, ...], float] = {}
    if eps > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        hits = estimate_hitting_probabilities(network, subpath, state, horizon, mc_samples, rng)
    stored, pruned = {}, set()
    for joint in all_states:
        if eps > 0 and hits.get(joint, 0.0) < eps:
            pruned.add(joint)
        else:
            stored[joint] = _joint_state_distribution(network, subpath, joint, settings)
    return SubpathCacheEntry(subpath, settings, stored, frozenset(pruned), hits)


def path_distribution_cached(
    network: Network,
    path: Path,
    state: NetworkState,
    cache: Sequence[SubpathCacheEntry],
    depart_offset: float = 0.0,
    settings: EngineSettings = DEFAULT_SETTINGS,
) -> TravelTimeDistribution:
    """Like :func:`path_distribution`, treating cached subpaths as single links."""
    by_start = {entry.subpath.arcs[0]: entry for entry in cache if entry.subpath.arcs}
    fold = _Fold(settings)
    times, probs = fold.start(depart_offset)
    i = 0
    arcs = path.arcs
    while i < len(arcs):
        entry = by_start.get(arcs[i])
        k = len(entry.subpath) if entry else 0
        if entry is not None and tuple(arcs[i : i + k]) == entry.subpath.arcs:
            times, probs = _fold_block(network, times, probs, entry, state, settings)
            i += k
        else:
            arc = network.arc(arcs[i])
            times, probs = fold.step(times, probs, arc, state.vector(arc))
            i += 1
    return TravelTimeDistribution(times, probs, binned=True, bin_count=settings.bins)


def _fold_block(network, times, probs, entry: SubpathCacheEntry, state, settings):
    arcs = [network.arc(a) for a in entry.subpath.arcs]
    per_arc = [_entry_weights(arc, state.vector(arc), times) for arc in arcs]
    joints = sorted(set(entry.distributions) | set(entry.pruned_states))
    w = np.empty((times.size, len(joints)))
    lists = []
    for col, joint in enumerate(joints):
        weight = np.ones(times.size)
        for arc_w, ph in zip(per_arc, joint):
            weight *= arc_w[:, ph - 1]
        w[:, col] = weight
        dist = entry.lookup(network, joint)
        lists.append((dist.times, dist.probs))
    lt, lp, offsets = _flatten_lists(lists)
    return kernels.compose_rebin(
        times, probs, w, lt, lp, offsets, settings.bins, settings.representative == "upper", settings.pin_mass
    )
