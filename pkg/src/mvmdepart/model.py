"""Road network, per-link Markov speed processes and background-state forecasts.

Each arc carries an independent continuous-time chain over its phases
(phase 1 = incident-free, phase 2 = incident). Times are in hours, lengths in
km and speeds in km/h throughout the package.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

FREE = 1
INCIDENT = 2


class ModelError(ValueError):
    """Raised for invalid network, arc or state arguments."""


def two_state_kernel(onset_rate: float, clearance_rate: float, t: float) -> np.ndarray:
    """Transition matrix ``exp(Q t)`` of the two-state chain, in closed form.

    ``Q = [[-onset, onset], [clearance, -clearance]]``.
    """
    if not (onset_rate > 0 and clearance_rate > 0):
        raise ModelError("transition rates must be positive")
    if not t >= 0:
        raise ModelError(f"elapsed time must be nonnegative, got {t}")
    return two_state_kernels(onset_rate, clearance_rate, np.asarray([t], dtype=float))[0]


def two_state_kernels(onset_rate: float, clearance_rate: float, times: np.ndarray) -> np.ndarray:
    """Vectorised :func:`two_state_kernel` over an array of times; shape ``(n, 2, 2)``."""
    a, b = onset_rate, clearance_rate
    s = a + b
    times = np.asarray(times, dtype=float)
    jump = -np.expm1(-s * times)  # 1 - exp(-s t), accurate for small t
    out = np.empty(times.shape + (2, 2))
    out[..., 0, 1] = (a / s) * jump
    out[..., 0, 0] = 1.0 - out[..., 0, 1]
    out[..., 1, 0] = (b / s) * jump
    out[..., 1, 1] = 1.0 - out[..., 1, 0]
    return out


@dataclass(frozen=True)
class Arc:
    """Directed road segment with a two-state incident process."""

    id: str
    tail: str
    head: str
    length_km: float
    speed_free: float
    speed_incident: float
    onset_rate: float
    clearance_rate: float

    def __post_init__(self) -> None:
        for name in ("length_km", "speed_free", "speed_incident", "onset_rate", "clearance_rate"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ModelError(f"arc {self.id!r}: {name} must be a positive number, got {value!r}")
        if self.speed_incident > self.speed_free:
            warnings.warn(
                f"arc {self.id!r}: incident speed {self.speed_incident} exceeds free speed {self.speed_free}",
                stacklevel=3,
            )

    n_phases = 2

    @property
    def speeds(self) -> tuple[float, float]:
        return (self.speed_free, self.speed_incident)

    @property
    def max_speed(self) -> float:
        return max(self.speed_free, self.speed_incident)

    @property
    def min_speed(self) -> float:
        return min(self.speed_free, self.speed_incident)

    @property
    def generator(self) -> np.ndarray:
        a, b = self.onset_rate, self.clearance_rate
        return np.array([[-a, a], [b, -b]])

    def kernel(self, t: float) -> np.ndarray:
        return two_state_kernel(self.onset_rate, self.clearance_rate, t)

    def kernels(self, times: np.ndarray) -> np.ndarray:
        return two_state_kernels(self.onset_rate, self.clearance_rate, times)

    def stationary(self) -> np.ndarray:
        s = self.onset_rate + self.clearance_rate
        return np.array([self.clearance_rate / s, self.onset_rate / s])


class Network:
    """Directed multigraph of arcs; parallel arcs are allowed if their ids differ.

    Arcs may be :class:`Arc` or any object exposing the same phase interface
    (see :class:`mvmdepart.extensions.PhaseTypeArc`).
    """

    def __init__(self, arcs: Iterable, nodes: Iterable[str] | None = None):
        arcs = tuple(arcs)
        node_set = set(nodes) if nodes is not None else set()
        if nodes is None:
            for arc in arcs:
                node_set.update((arc.tail, arc.head))
        by_id: dict[str, object] = {}
        out: dict[str, list] = {n: [] for n in node_set}
        inc: dict[str, list] = {n: [] for n in node_set}
        for arc in arcs:
            if arc.id in by_id:
                raise ModelError(f"duplicate arc id {arc.id!r}")
            for end in (arc.tail, arc.head):
                if end not in node_set:
                    raise ModelError(f"arc {arc.id!r} references unknown node {end!r}")
            by_id[arc.id] = arc
            out[arc.tail].append(arc)
            inc[arc.head].append(arc)
        self._nodes = frozenset(node_set)
        self._arcs = arcs
        self._by_id = MappingProxyType(by_id)
        self._out = MappingProxyType({n: tuple(v) for n, v in out.items()})
        self._in = MappingProxyType({n: tuple(v) for n, v in inc.items()})

    @property
    def nodes(self) -> frozenset[str]:
        return self._nodes

    @property
    def arcs(self) -> tuple:
        return self._arcs

    def __len__(self) -> int:
        return len(self._arcs)

    def __contains__(self, arc_id: str) -> bool:
        return arc_id in self._by_id

    def arc(self, arc_id: str):
        try:
            return self._by_id[arc_id]
        except KeyError:
            raise ModelError(f"unknown arc {arc_id!r}") from None

    def out_arcs(self, node: str) -> tuple:
        return self._out.get(node, ())

    def in_arcs(self, node: str) -> tuple:
        return self._in.get(node, ())

    def __repr__(self) -> str:
        return f"Network(nodes={len(self._nodes)}, arcs={len(self._arcs)})"


@dataclass(frozen=True)
class NetworkState:
    """Background state: one phase per arc, relative to request time 0.

    ``beliefs`` optionally replaces the point mass of an arc by a probability
    vector over its phases; used when only the elapsed incident duration is
    observed and the sub-phase must be inferred.
    """

    phases: Mapping[str, int]
    timestamp: float = 0.0
    beliefs: Mapping[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "phases", MappingProxyType(dict(self.phases)))
        object.__setattr__(
            self, "beliefs", MappingProxyType({k: tuple(map(float, v)) for k, v in self.beliefs.items()})
        )

    @classmethod
    def all_free(cls, network: Network, timestamp: float = 0.0) -> "NetworkState":
        return cls({arc.id: FREE for arc in network.arcs}, timestamp)

    @classmethod
    def with_incidents(cls, network: Network, incident_arcs: Iterable[str], timestamp: float = 0.0) -> "NetworkState":
        phases = {arc.id: FREE for arc in network.arcs}
        for arc_id in incident_arcs:
            network.arc(arc_id)
            phases[arc_id] = INCIDENT
        return cls(phases, timestamp)

    def phase(self, arc_id: str) -> int:
        return self.phases[arc_id]

    def replace(self, **updates: int) -> "NetworkState":
        phases = dict(self.phases)
        phases.update(updates)
        beliefs = {k: v for k, v in self.beliefs.items() if k not in updates}
        return NetworkState(phases, self.timestamp, beliefs)

    def vector(self, arc) -> np.ndarray:
        """Phase distribution of ``arc`` at the state's own time."""
        belief = self.beliefs.get(arc.id)
        if belief is not None:
            return np.asarray(belief, dtype=float)
        vec = np.zeros(arc.n_phases)
        vec[self.phases[arc.id] - 1] = 1.0
        return vec

    def validate(self, network: Network) -> None:
        arc_ids = {arc.id for arc in network.arcs}
        if set(self.phases) != arc_ids:
            missing = sorted(arc_ids - set(self.phases))
            extra = sorted(set(self.phases) - arc_ids)
            raise ModelError(f"state does not match network (missing={missing}, extra={extra})")
        for arc in network.arcs:
            phase = self.phases[arc.id]
            if not (isinstance(phase, (int, np.integer)) and 1 <= phase <= arc.n_phases):
                raise ModelError(f"arc {arc.id!r}: phase {phase!r} outside 1..{arc.n_phases}")
            belief = self.beliefs.get(arc.id)
            if belief is not None:
                vec = np.asarray(belief)
                if vec.shape != (arc.n_phases,) or np.any(vec < 0) or abs(vec.sum() - 1) > 1e-12:
                    raise ModelError(f"arc {arc.id!r}: belief must be a probability vector over {arc.n_phases} phases")


@dataclass(frozen=True)
class PhaseMarginal:
    """Per-arc marginal phase distributions of the background process."""

    vectors: Mapping[str, np.ndarray]

    def __getitem__(self, arc_id: str) -> np.ndarray:
        return self.vectors[arc_id]

    def __iter__(self):
        return iter(self.vectors)


def forecast_state(network: Network, state: NetworkState, t: float) -> PhaseMarginal:
    """Marginal phase distribution of every arc at time ``t`` given ``state``.

    Links evolve independently, so the joint law factorises and each marginal
    is the state's phase vector times the arc's own transition kernel.
    """
    if not t >= 0:
        raise ModelError(f"forecast horizon must be nonnegative, got {t}")
    state.validate(network)
    return PhaseMarginal({arc.id: state.vector(arc) @ arc.kernel(t) for arc in network.arcs})
