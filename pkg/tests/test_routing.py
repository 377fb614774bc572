import math

import numpy as np
import pytest

from mvmdepart.departure import DepartureQuery, on_time_probability, optimal_departure_offline
from mvmdepart.distribution import TravelTimeDistribution
from mvmdepart.model import Arc, Network, NetworkState
from mvmdepart.path import DEFAULT_SETTINGS, Path, fold_path
from mvmdepart.routing import (
    SearchStats,
    _prob_by,
    all_simple_paths,
    dominates,
    mape,
    max_prob_path,
    min_time_table,
    optimal_departure_od_bisection,
    optimal_departure_od_ksp,
    yen_k_shortest,
)
from mvmdepart.synthetic import random_network, random_state, two_route_network


def D(*atoms):
    return TravelTimeDistribution.from_atoms(atoms)


def exhaustive_best(net, o, d, state, t, M):
    best = 0.0
    for path in all_simple_paths(net, o, d):
        best = max(best, on_time_probability(net, path, state, t, M))
    return best


def test_dominance_examples():
    assert dominates(D((1, 1)), D((2, 1)))
    assert not dominates(D((2, 1)), D((1, 1)))
    assert not dominates(D((1, 0.5), (2, 0.5)), D((1, 0.5), (2, 0.5)))
    a, b = D((1, 0.5), (4, 0.5)), D((2, 0.5), (3, 0.5))
    assert not dominates(a, b) and not dominates(b, a)


def test_min_time_table_examples():
    net = Network([Arc("a", "A", "B", 4.0, 100.0, 60.0, 1, 1), Arc("c", "C", "D", 1.0, 10, 10, 1, 1)])
    table = min_time_table(net, "B")
    assert table["B"] == 0.0
    assert table["A"] == pytest.approx(0.04)
    assert math.isinf(table["C"])


def test_min_time_table_matches_enumeration(rng):
    for _ in range(20):
        net = random_network(rng, n_nodes=int(rng.integers(3, 9)))
        dest = str(len(net.nodes) - 1)
        table = min_time_table(net, dest)
        for node in net.nodes:
            paths = all_simple_paths(net, node, dest) if node != dest else []
            brute = min((sum(net.arc(a).length_km / net.arc(a).max_speed for a in p.arcs) for p in paths),
                        default=0.0 if node == dest else math.inf)
            assert table[node] == pytest.approx(brute, abs=1e-12) or (math.isinf(brute) and math.isinf(table[node]))
        for arc in net.arcs:
            # triangle inequality along arcs
            assert table[arc.tail] <= arc.length_km / arc.max_speed + table[arc.head] + 1e-12


def test_search_early_exit_and_disconnected():
    net = two_route_network()
    state = NetworkState.all_free(net)
    prob, path = max_prob_path(net, "O", "D", state, 0.0, 0.1)
    assert prob == 0.0 and path.arcs == ()
    lonely = Network([Arc("a", "A", "B", 1, 50, 50, 1, 1)], nodes=["A", "B", "Z"])
    prob, path = max_prob_path(lonely, "A", "Z", NetworkState.all_free(lonely), 0.0, 10.0)
    assert prob == 0.0 and path.arcs == ()


def test_search_picks_fast_parallel_arc():
    net = Network([Arc("slow", "A", "B", 10, 20, 20, 1, 1), Arc("fast", "A", "B", 10, 100, 100, 1, 1)])
    prob, path = max_prob_path(net, "A", "B", NetworkState.all_free(net), 0.0, 0.2)
    assert prob == 1.0 and path.arcs == ("fast",)


@pytest.mark.parametrize("prune", [True, False])
@pytest.mark.parametrize("order", ["max", "min"])
def test_search_equals_exhaustive_enumeration(rng, prune, order):
    for _ in range(25):
        net = random_network(rng, n_nodes=7)
        state = random_state(net, rng)
        d = str(len(net.nodes) - 1)
        t = float(rng.uniform(0, 0.2))
        fastest = min_time_table(net, d)["0"]
        M = t + fastest * float(rng.uniform(1.0, 2.5))
        prob, path = max_prob_path(net, "0", d, state, t, M, prune=prune, order=order)
        assert prob == pytest.approx(exhaustive_best(net, "0", d, state, t, M), abs=1e-9)
        if prob > 0:
            assert on_time_probability(net, path, state, t, M) == pytest.approx(prob, abs=1e-9)


def test_pruning_does_not_change_answer_and_saves_work(rng):
    saved = 0
    for _ in range(20):
        net = random_network(rng, n_nodes=8, edge_prob=0.4)
        state = random_state(net, rng)
        d = str(len(net.nodes) - 1)
        M = min_time_table(net, d)["0"] * 1.6
        on, off = SearchStats(), SearchStats()
        p_on, path_on = max_prob_path(net, "0", d, state, 0.0, M, prune=True, stats=on)
        p_off, path_off = max_prob_path(net, "0", d, state, 0.0, M, prune=False, stats=off)
        assert p_on == pytest.approx(p_off, abs=1e-12)
        saved += off.pushed - on.pushed
    assert saved >= 0


def test_bound_is_admissible(rng):
    for _ in range(10):
        net = random_network(rng, n_nodes=6)
        state = random_state(net, rng)
        d = str(len(net.nodes) - 1)
        table = min_time_table(net, d)
        M = table["0"] * 1.5
        full = all_simple_paths(net, "0", d)
        values = {p.arcs: on_time_probability(net, p, state, 0.0, M) for p in full}
        prefixes = {p.arcs[:i] for p in full for i in range(1, len(p.arcs))}
        for prefix in prefixes:
            times, probs = fold_path(net, prefix, state, 0.0, DEFAULT_SETTINGS)
            node = net.arc(prefix[-1]).head
            bound = _prob_by(times, probs, M - table[node])
            best = max(v for arcs, v in values.items() if arcs[: len(prefix)] == prefix)
            assert bound >= best - 1e-9


def test_od_bisection_single_path_reduces_to_offline():
    net = Network([Arc("a", "O", "X", 5, 100, 40, 0.5, 2), Arc("b", "X", "D", 3, 90, 30, 0.3, 1.5)])
    state = NetworkState.with_incidents(net, ["b"])
    q = DepartureQuery(0.6, 0.8)
    advice, path = optimal_departure_od_bisection(net, "O", "D", state, q)
    offline = optimal_departure_offline(net, Path.from_arcs(net, ["a", "b"]), state, q)
    assert path.arcs == ("a", "b")
    assert advice.departure == pytest.approx(offline.departure, abs=q.bisection_tol)


def test_od_bisection_matches_grid(rng):
    checked = 0
    while checked < 4:
        net = random_network(rng, n_nodes=7)
        state = NetworkState.all_free(net)
        d = str(len(net.nodes) - 1)
        M = min_time_table(net, d)["0"] * 2.0 + 0.05
        q = DepartureQuery(M, 0.8)
        advice, _ = optimal_departure_od_bisection(net, "0", d, state, q)
        if not advice.feasible:
            continue
        grid = np.arange(0.0, M, 1e-3)
        ok = [t for t in grid if max_prob_path(net, "0", d, state, float(t), M)[0] >= 0.8]
        assert abs(advice.departure - max(ok)) <= 2e-3
        checked += 1


def test_od_infeasible_when_target_unreachable():
    net = two_route_network()
    jam = NetworkState.with_incidents(net, [a.id for a in net.arcs])
    advice, path = optimal_departure_od_bisection(net, "O", "D", jam, DepartureQuery(0.25, 0.99))
    assert not advice.feasible


def triangle():
    return Network([Arc("ab", "A", "B", 1, 50, 50, 1, 1), Arc("bc", "B", "C", 1, 50, 50, 1, 1),
                    Arc("ac", "A", "C", 3, 50, 50, 1, 1)])


def test_yen_triangle():
    net = triangle()
    paths = yen_k_shortest(net, "A", "C", 2)
    assert [p.arcs for p in paths] == [("ab", "bc"), ("ac",)]
    assert [p.arcs for p in yen_k_shortest(net, "A", "C", 1)] == [("ab", "bc")]
    assert len(yen_k_shortest(net, "A", "C", 10)) == 2
    assert yen_k_shortest(Network([Arc("x", "A", "B", 1, 1, 1, 1, 1)], nodes=["A", "B", "C"]), "A", "C", 3) == []


def test_yen_matches_brute_force(rng):
    for _ in range(40):
        net = random_network(rng, n_nodes=int(rng.integers(3, 8)), edge_prob=0.4)
        d = str(len(net.nodes) - 1)
        every = sorted(p.length_km(net) for p in all_simple_paths(net, "0", d))
        for k in (1, 3, 7, 50):
            paths = yen_k_shortest(net, "0", d, k)
            lengths = [p.length_km(net) for p in paths]
            assert len(paths) == min(k, len(every))
            assert np.allclose(lengths, every[: len(paths)], atol=1e-9)
            assert lengths == sorted(lengths)
            assert len({p.arcs for p in paths}) == len(paths)
            for p in paths:
                nodes = p.nodes(net)
                assert len(set(nodes)) == len(nodes)


def test_yen_time_metric():
    net = Network([Arc("short_slow", "A", "B", 5, 20, 20, 1, 1), Arc("long_fast", "A", "B", 8, 100, 100, 1, 1)])
    assert yen_k_shortest(net, "A", "B", 1)[0].arcs == ("short_slow",)
    assert yen_k_shortest(net, "A", "B", 1, metric="time")[0].arcs == ("long_fast",)


def test_ksp_never_beats_exact_and_covers_all_paths(rng):
    for _ in range(10):
        net = random_network(rng, n_nodes=6)
        state = random_state(net, rng)
        d = str(len(net.nodes) - 1)
        q = DepartureQuery(min_time_table(net, d)["0"] * 2 + 0.05, 0.7)
        exact, _ = optimal_departure_od_bisection(net, "0", d, state, q)
        n_paths = len(all_simple_paths(net, "0", d))
        previous = -math.inf
        for k in (1, 2, n_paths):
            approx, _ = optimal_departure_od_ksp(net, "0", d, state, q, k, threads=2)
            assert approx.departure <= exact.departure + 2 * q.bisection_tol
            assert approx.departure >= previous
            previous = approx.departure
        assert approx.departure == pytest.approx(exact.departure, abs=2 * q.bisection_tol) or (
            not exact.feasible and not approx.feasible
        )


def test_ksp_k1_matches_bisection_without_incidents():
    net = two_route_network()
    q = DepartureQuery(1.0, 0.9)
    state = NetworkState.all_free(net)
    a_ksp, p_ksp = optimal_departure_od_ksp(net, "O", "D", state, q, 1)
    a_bis, p_bis = optimal_departure_od_bisection(net, "O", "D", state, q)
    assert p_ksp.arcs == p_bis.arcs == ("red1", "red2", "red3")
    assert a_ksp.departure == pytest.approx(a_bis.departure, abs=2 * q.bisection_tol)


def test_mape_examples():
    assert mape([1, 2], [1, 2]) == 0.0
    assert mape([1, 2], [0.9, 2.2]) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        mape([1], [1, 2])
    with pytest.raises(ValueError):
        mape([0.0], [1.0])
