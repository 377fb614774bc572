"""Small synthetic networks used by tests, examples and the CLI."""

from __future__ import annotations

import numpy as np

from .model import Arc, Network, NetworkState


def random_network(
    rng: np.random.Generator,
    n_nodes: int = 7,
    edge_prob: float = 0.35,
    length_range=(1.0, 10.0),
    free_speed_range=(60.0, 120.0),
    incident_speed_range=(10.0, 60.0),
    onset_range=(0.05, 3.0),
    clearance_range=(0.5, 5.0),
    parallel_prob: float = 0.1,
) -> Network:
    """Random digraph on nodes ``"0" .. str(n_nodes-1)`` that always contains a
    chain from node 0 to the last node."""
    nodes = [str(i) for i in range(n_nodes)]
    pairs = {(i, i + 1) for i in range(n_nodes - 1)}
    for i in range(n_nodes):
        for j in range(n_nodes):
            if i != j and rng.random() < edge_prob:
                pairs.add((i, j))
    arcs = []
    for i, j in sorted(pairs):
        copies = 2 if rng.random() < parallel_prob else 1
        for c in range(copies):
            arcs.append(
                Arc(
                    f"e{i}_{j}" + ("" if c == 0 else f"_{c}"),
                    nodes[i],
                    nodes[j],
                    float(rng.uniform(*length_range)),
                    float(rng.uniform(*free_speed_range)),
                    float(rng.uniform(*incident_speed_range)),
                    float(rng.uniform(*onset_range)),
                    float(rng.uniform(*clearance_range)),
                )
            )
    return Network(arcs, nodes)


def random_state(network: Network, rng: np.random.Generator, incident_prob: float = 0.3) -> NetworkState:
    return NetworkState({a.id: 2 if rng.random() < incident_prob else 1 for a in network.arcs})


def two_route_network(
    red_lengths=(6.7, 6.7, 6.7),
    blue_lengths=(5.8, 5.8, 5.8, 5.8),
    speed_free: float = 100.0,
    speed_incident: float = 40.0,
    onset_rate: float = 0.1,
    clearance_rate: float = 2.0,
) -> Network:
    """Origin ``"O"`` to destination ``"D"`` along a short red route and a
    longer blue route sharing no arcs."""
    arcs = []
    for name, lengths in (("red", red_lengths), ("blue", blue_lengths)):
        nodes = ["O"] + [f"{name}{i}" for i in range(1, len(lengths))] + ["D"]
        for i, d in enumerate(lengths):
            arcs.append(
                Arc(f"{name}{i + 1}", nodes[i], nodes[i + 1], d, speed_free, speed_incident, onset_rate,
                    clearance_rate)
            )
    return Network(arcs)


def route_arcs(network: Network, name: str) -> list[str]:
    return sorted((a.id for a in network.arcs if a.id.startswith(name)), key=lambda s: int(s[len(name):]))
