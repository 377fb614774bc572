"""Acceptance criteria. Each test prints one PASS/FAIL line with what it measured.

A failing line is a real measurement; see the decisions ledger for analysis.
"""

import math
import time

import numpy as np
import pytest

from mvmdepart.departure import (DepartureQuery, FrozenStateSource, on_time_probability, optimal_departure_offline,
                                 optimal_departure_online)
from mvmdepart.extensions import (DayPeriodModel, PhaseTypeArc, RecurrentArc, elapsed_posterior, mixture_erlang_arc,
                                  phase_delta, phase_link_distribution, tagged_path_distribution)
from mvmdepart.link import GranularityBudget, choose_delta, link_distribution, naive_link_distribution
from mvmdepart.model import Arc, Network, NetworkState
from mvmdepart.path import Path, path_distribution
from mvmdepart.routing import (all_simple_paths, mape, max_prob_path, min_time_table,
                               optimal_departure_od_bisection, optimal_departure_od_ksp, yen_k_shortest)
from mvmdepart.simulation import (EmpiricalCdf, ks_distance, online_offline_experiment, simulate_link,
                                  simulate_recurrent_traversal, simulate_traversal, transition_window_fraction)
from mvmdepart.synthetic import random_network, random_state, route_arcs, two_route_network

SEED = 20261016


@pytest.fixture
def report(capsys):
    def emit(number, ok, text):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {text}")
        return ok

    return emit


def _random_arc(rng, name="r", tail="A", head="B"):
    v1 = float(rng.uniform(60, 120))
    return Arc(name, tail, head, float(rng.uniform(1, 10)), v1, float(rng.uniform(10, 0.9 * v1)),
               float(rng.uniform(0.05, 3)), float(rng.uniform(0.5, 5)))


def _random_chain(rng, n):
    arcs = [_random_arc(rng, f"a{i}", str(i), str(i + 1)) for i in range(n)]
    net = Network(arcs)
    return net, Path.from_arcs(net, [a.id for a in arcs])


# ---------------------------------------------------------------- 1


def test_criterion_1_worked_example(report):
    arc = Arc("e1", "A", "B", 4.0, 100.0, 60.0, 1.0, 1.0)
    p = q = math.exp(-1 / 60)
    expected = [(1 / 25, p * p), (2 / 45, p * (1 - p)), (7 / 150, (1 - p) * (1 - q)),
                (4 / 75, (1 - p) * q * (1 - q)), (1 / 18, (1 - p) * q * q)]
    dist = link_distribution(arc, 1, 1 / 60)
    err = max(max(abs(t - et), abs(pr - ep)) for (t, pr), (et, ep) in zip(dist.atoms, expected))
    runs = []
    for _ in range(50):
        start = time.perf_counter()
        link_distribution(arc, 1, 1 / 60)
        runs.append(time.perf_counter() - start)
    ms = 1e3 * float(np.median(runs))
    ok = len(dist) == 5 and err <= 1e-12 and ms < 1.0
    report(1, ok, f"{len(dist)} atoms, max error {err:.2e} (tol 1e-12), median runtime {ms:.3f} ms (< 1 ms)")
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_2_mass_conservation(report):
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    worst, count = 0.0, 0
    for _ in range(250):
        arc = _random_arc(rng)
        dist = link_distribution(arc, int(rng.integers(1, 3)), choose_delta(arc))
        worst, count = max(worst, abs(dist.mass - 1)), count + 1
    for _ in range(250):
        net, path = _random_chain(rng, int(rng.integers(1, 6)))
        dist = path_distribution(net, path, random_state(net, rng), float(rng.uniform(0, 1)))
        worst, count = max(worst, abs(dist.mass - 1)), count + 1
    budget = GranularityBudget()
    for _ in range(250):
        arc = mixture_erlang_arc("m", "A", "B", float(rng.uniform(1, 8)), float(rng.uniform(60, 120)),
                                 float(rng.uniform(10, 50)), float(rng.uniform()), *map(float, rng.uniform(0.2, 4, 3)))
        dist = phase_link_distribution(arc, int(rng.integers(1, 5)), phase_delta(arc, budget))
        worst, count = max(worst, abs(dist.mass - 1)), count + 1
    for _ in range(250):
        day = DayPeriodModel(tuple(map(float, rng.uniform(0.3, 2, 2))), tuple(int(k) for k in rng.integers(1, 4, 2)))
        arcs = []
        for i in range(2):
            base = _random_arc(rng, f"r{i}", str(i), str(i + 1))
            arcs.append(RecurrentArc(base, ((base.speed_free, base.speed_incident),
                                            (float(rng.uniform(40, base.speed_free)),
                                             float(rng.uniform(10, base.speed_incident))))))
        net = Network(arcs)
        dist = tagged_path_distribution(net, Path.from_arcs(net, ["r0", "r1"]), random_state(net, rng), day,
                                        day.belief(int(rng.integers(0, 2)), float(rng.uniform(0, 0.5))),
                                        float(rng.uniform(0, 1)))
        worst, count = max(worst, abs(dist.mass - 1)), count + 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 30
    report(2, ok, f"{count} distributions, max |mass - 1| = {worst:.2e} (tol 1e-9), {elapsed:.1f} s (< 30 s)")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_oracle_closeness(report):
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    arc_ks, path_ks = [], []
    for _ in range(20):
        arc = _random_arc(rng)
        phase = int(rng.integers(1, 3))
        dist = link_distribution(arc, phase, choose_delta(arc))
        arc_ks.append(ks_distance(dist, EmpiricalCdf(simulate_link(arc, phase, rng, 100_000))))
    for _ in range(10):
        net, path = _random_chain(rng, int(rng.integers(1, 6)))
        state = random_state(net, rng)
        dist = path_distribution(net, path, state, 0.0)
        path_ks.append(ks_distance(dist, EmpiricalCdf(simulate_traversal(net, path, state, 0.0, rng, 100_000))))
    elapsed = time.perf_counter() - start
    worst = max(arc_ks + path_ks)
    over = sum(k > 0.02 for k in arc_ks + path_ks)
    ok = worst <= 0.02 and elapsed < 300
    report(3, ok, f"max KS arcs {max(arc_ks):.4f}, paths {max(path_ks):.4f}; median {np.median(arc_ks + path_ks):.4f};"
                  f" {over}/30 above 0.02 (tol 0.02), {elapsed:.1f} s (< 300 s)")
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_4_lattice_equals_naive_tree(report):
    rng = np.random.default_rng(SEED)
    worst, mismatched = 0.0, 0
    for _ in range(200):
        v1 = rng.uniform(40, 120)
        v2 = rng.uniform(10, v1)
        delta = rng.uniform(0.005, 0.05)
        d = rng.uniform(0.5, 19) * v2 * delta
        arc = Arc("r", "A", "B", float(d), float(v1), float(v2), *map(float, rng.uniform(0.1, 20, 2)))
        phase = int(rng.integers(1, 3))
        fast = link_distribution(arc, phase, delta)
        slow = naive_link_distribution(arc, phase, delta)
        if len(fast) != len(slow):
            mismatched += 1
            continue
        worst = max(worst, float(np.max(np.abs(fast.times - slow.times))),
                    float(np.max(np.abs(fast.probs - slow.probs))))
    ok = mismatched == 0 and worst <= 1e-12
    report(4, ok, f"200 instances, {mismatched} atom-count mismatches, max deviation {worst:.2e} (tol 1e-12)")
    assert ok


# ---------------------------------------------------------------- 5


def _random_query(rng):
    net, path = _random_chain(rng, int(rng.integers(1, 6)))
    state = random_state(net, rng)
    tmin = sum(net.arc(a).length_km / net.arc(a).speed_free for a in path.arcs)
    return net, path, state, float(tmin * rng.uniform(1.3, 2.5)), float(rng.uniform(0.5, 0.95))


def test_criterion_5_monotonicity_and_bisection(report):
    rng = np.random.default_rng(SEED)
    rise_all, rise_free, bad_queries, contract_bad, checked = 0.0, 0.0, 0, 0, 0
    while checked < 50:
        net, path, state, M, eta = _random_query(rng)
        grid = np.linspace(0.0, M, 200)
        probs = np.array([on_time_probability(net, path, state, float(t), M) for t in grid])
        rise = float(np.max(np.diff(probs), initial=0.0))
        rise_all = max(rise_all, rise)
        if all(state.phase(a) == 1 for a in path.arcs):
            rise_free = max(rise_free, rise)
        bad_queries += rise > 1e-9
        advice = optimal_departure_offline(net, path, state, DepartureQuery(M, eta))
        if not advice.feasible:
            continue
        p_at = on_time_probability(net, path, state, advice.departure, M)
        p_after = on_time_probability(net, path, state, advice.departure + 1e-3, M)
        contract_bad += not (p_at >= eta and p_after < eta)
        checked += 1
    ok = bad_queries == 0 and contract_bad == 0
    report(5, ok, f"50 queries: {bad_queries} with a rise above 1e-9 (largest {rise_all:.2e}; "
                  f"all-free starts {rise_free:.2e}); bisection contract violated {contract_bad} times")
    assert ok


# ---------------------------------------------------------------- 6 and 7


def _routing_instances():
    """100 random networks with a random state, deadline and target; shared by criteria 6 and 7."""
    rng = np.random.default_rng(SEED)
    out = []
    while len(out) < 100:
        n = int(rng.integers(3, 9))
        net = random_network(rng, n_nodes=n)
        dest = str(n - 1)
        state = random_state(net, rng) if rng.random() < 0.5 else NetworkState.all_free(net)
        M = float(min_time_table(net, dest)["0"] * rng.uniform(1.5, 2.5) + 0.02)
        out.append((net, dest, state, DepartureQuery(M, float(rng.uniform(0.5, 0.95))), float(rng.uniform(0, 0.3 * M))))
    return out


_INSTANCES = None


def instances():
    global _INSTANCES
    if _INSTANCES is None:
        _INSTANCES = _routing_instances()
    return _INSTANCES


def _grid_latest(net, dest, state, q, paths, step=1e-3):
    """Latest grid departure whose best path meets the target; scans down from the last useful time."""
    tmin = min_time_table(net, dest)["0"]
    for i in range(math.floor((q.deadline - tmin) / step), -1, -1):
        t = i * step
        if max(on_time_probability(net, p, state, t, q.deadline) for p in paths) >= q.reliability:
            return t
    return -math.inf


def test_criterion_6_routing_exactness(report):
    prob_err, argmax_bad, dep_err, infeasible_mismatch = 0.0, 0, 0.0, 0
    for net, dest, state, q, t in instances():
        paths = all_simple_paths(net, "0", dest)
        exhaustive = {p.arcs: on_time_probability(net, p, state, t, q.deadline) for p in paths}
        best = max(exhaustive.values())
        value, path = max_prob_path(net, "0", dest, state, t, q.deadline)
        prob_err = max(prob_err, abs(value - best))
        argmax_bad += path is None or exhaustive[path.arcs] < best - 1e-9
        advice, _ = optimal_departure_od_bisection(net, "0", dest, state, q)
        grid = _grid_latest(net, dest, state, q, paths)
        if advice.feasible != math.isfinite(grid):
            infeasible_mismatch += 1
        elif advice.feasible:
            dep_err = max(dep_err, abs(advice.departure - grid))
    ok = prob_err <= 1e-9 and argmax_bad == 0 and dep_err <= 2e-3 and infeasible_mismatch == 0
    report(6, ok, f"100 networks: max probability gap {prob_err:.2e} (tol 1e-9), {argmax_bad} argmax mismatches, "
                  f"max departure gap to grid {dep_err * 1e3:.3f}e-3 h (tol 2e-3 h), "
                  f"{infeasible_mismatch} feasibility disagreements")
    assert ok


def test_criterion_7_ksp_quality(report):
    exact, approx, n_paths, free_optimal_short = [], {}, [], []
    ks = (1, 2, 3, 5, 8)
    for idx, (net, dest, state, q, _) in enumerate(instances()):
        advice, path = optimal_departure_od_bisection(net, "0", dest, state, q)
        if not advice.feasible or advice.departure <= 0:
            continue
        total = len(all_simple_paths(net, "0", dest))
        exact.append(advice.departure)
        n_paths.append(total)
        for k in ks + ("all",):
            kk = total if k == "all" else k
            a, _ = optimal_departure_od_ksp(net, "0", dest, state, q, kk)
            approx.setdefault(k, []).append(max(a.departure, 0.0))
        shortest = yen_k_shortest(net, "0", dest, 1)[0]
        if all(p == 1 for p in state.phases.values()) and shortest.arcs == path.arcs:
            free_optimal_short.append(len(exact) - 1)
    curve = {k: mape(exact, v) for k, v in approx.items()}
    values = [curve[k] for k in ks]
    monotone = all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    full = curve["all"]
    k1_free = mape([exact[i] for i in free_optimal_short], [approx[1][i] for i in free_optimal_short])
    # both sides are bisection results, so "zero" means every departure agrees within two bisection tolerances
    gap_full = max(abs(a - e) for a, e in zip(approx["all"], exact))
    gap_k1 = max((abs(approx[1][i] - exact[i]) for i in free_optimal_short), default=0.0)
    ok = monotone and gap_full <= 2e-4 and gap_k1 <= 2e-4 and len(free_optimal_short) > 0
    text = ", ".join(f"k={k}: {curve[k]:.5f}" for k in ks)
    report(7, ok, f"{len(exact)} scenarios, MAPE {text}; all paths {full:.2e} (max gap {gap_full:.1e} h); "
                  f"k=1 on {len(free_optimal_short)} free-start shortest-optimal scenarios {k1_free:.2e} "
                  f"(max gap {gap_k1:.1e} h; zero tol 2e-4 h)")
    assert ok


# ---------------------------------------------------------------- 8


def test_criterion_8_online_behaviour(report):
    start = time.perf_counter()
    frozen = two_route_network(onset_rate=1e-9, clearance_rate=1e-9)
    gaps = []
    for route in ("red", "blue"):
        path = Path.from_arcs(frozen, route_arcs(frozen, route))
        for state in (NetworkState.all_free(frozen), NetworkState.with_incidents(frozen, [path.arcs[1]])):
            for M in (0.5, 1.0, 2.0):
                q = DepartureQuery(M, 0.9, update_interval=1 / 60)
                off = optimal_departure_offline(frozen, path, state, q).departure
                on = optimal_departure_online(frozen, path, FrozenStateSource(state), q).departure
                gaps.append(abs(on - off))
    frozen_ok = max(gaps) <= 1 / 60 + 1e-3

    net = two_route_network(onset_rate=0.1, clearance_rate=2.0)
    path = Path.from_arcs(net, route_arcs(net, "red"))
    state = NetworkState.all_free(net)
    summaries = {M: online_offline_experiment(net, path, state, DepartureQuery(M, 0.9, update_interval=1 / 60),
                                              10_000, seed=SEED)
                 for M in (10.0, 1.0, 0.5)}
    diffs = [summaries[M].difference for M in (10.0, 1.0, 0.5)]
    z10 = summaries[10.0].difference / summaries[10.0].std_error
    shrinks = diffs[0] > diffs[1] > diffs[2] and abs(diffs[0]) > abs(diffs[1]) > abs(diffs[2])
    elapsed = time.perf_counter() - start
    ok = frozen_ok and z10 >= 3 and shrinks and elapsed < 600
    report(8, ok, f"frozen max |online - offline| {max(gaps):.5f} h (tol {1 / 60 + 1e-3:.5f}); "
                  f"mean difference M=10h {diffs[0]:+.4f} ({z10:.0f} SE), M=1h {diffs[1]:+.4f}, "
                  f"M=0.5h {diffs[2]:+.4f}; {elapsed:.0f} s (< 600 s)")
    assert ok


# ---------------------------------------------------------------- 9


def _mixture_conditional_mc(mix, lb, lc, elapsed, n, rng):
    """Sample incident durations from onset; return phase counts among those still active at ``elapsed``."""
    erlang = rng.random(n) < mix
    first = rng.exponential(1 / lb, n)
    second = rng.exponential(1 / lb, n)
    duration = np.where(erlang, first + second, rng.exponential(1 / lc, n))
    alive = duration >= elapsed
    phase = np.where(erlang, np.where(first > elapsed, 1, 2), 3)[alive]
    return np.bincount(phase, minlength=4), int(alive.sum())


def _day_conditional_mc(shape, rate, elapsed, n, rng):
    """Erlang stage occupied at ``elapsed`` given the period has not ended."""
    ends = rng.exponential(1 / rate, (n, shape)).cumsum(axis=1)
    alive = ends[:, -1] > elapsed
    return np.bincount((ends[alive] <= elapsed).sum(axis=1), minlength=shape), int(alive.sum())


def test_criterion_9_extensions(report):
    rng = np.random.default_rng(SEED)
    # posteriors
    post_bad = 0
    for mix, lb, lc, elapsed in ((0.5, 2.0, 1.0, 0.5), (0.2, 4.0, 0.5, 1.0), (0.8, 1.0, 3.0, 0.3)):
        arc = mixture_erlang_arc("m", "A", "B", 5.0, 100.0, 40.0, mix, 0.5, lb, lc)
        vec = elapsed_posterior(arc, elapsed)
        valid = np.all(vec >= 0) and abs(vec.sum() - 1) <= 1e-12
        counts, n = _mixture_conditional_mc(mix, lb, lc, elapsed, 100_000, rng)
        freq = counts / n
        se = np.sqrt(vec * (1 - vec) / n)
        post_bad += not (valid and np.all(np.abs(freq - vec) <= 3 * se + 1e-12))
    day_post_bad = 0
    day = DayPeriodModel((0.5, 1.0), (3, 3))
    for period, elapsed in ((0, 0.1), (1, 0.4)):
        b = day.belief(period, elapsed)
        shape = day.shapes[period]
        counts, n = _day_conditional_mc(shape, shape / day.means[period], elapsed, 100_000, rng)
        vec = b[sum(day.shapes[:period]):][:shape]
        se = np.sqrt(vec * (1 - vec) / n)
        day_post_bad += not (abs(b.sum() - 1) <= 1e-12 and np.all(np.abs(counts / n - vec) <= 3 * se + 1e-12))
    # two-phase reduction
    two_gap = 0.0
    for _ in range(20):
        base = _random_arc(rng)
        pt = PhaseTypeArc("r", "A", "B", base.length_km, tuple(map(tuple, base.generator)),
                          (base.speed_free, base.speed_incident))
        delta = choose_delta(base)
        for phase in (1, 2):
            a, b = link_distribution(base, phase, delta), phase_link_distribution(pt, phase, delta)
            if len(a) != len(b):
                two_gap = math.inf
                break
            two_gap = max(two_gap, float(np.max(np.abs(a.times - b.times))), float(np.max(np.abs(a.probs - b.probs))))
    # tagged composition against the continuous joint chain
    tag_ks = []
    for _ in range(5):
        day = DayPeriodModel(tuple(map(float, rng.uniform(0.3, 1.5, 2))), tuple(int(k) for k in rng.integers(1, 4, 2)))
        arcs = []
        for i in range(2):
            base = _random_arc(rng, f"r{i}", str(i), str(i + 1))
            arcs.append(RecurrentArc(base, ((base.speed_free, base.speed_incident),
                                            (float(rng.uniform(30, base.speed_free)),
                                             float(rng.uniform(10, base.speed_incident))))))
        net = Network(arcs)
        path = Path.from_arcs(net, ["r0", "r1"])
        state = random_state(net, rng)
        belief = day.belief(int(rng.integers(0, 2)), float(rng.uniform(0, 0.3)))
        dist = tagged_path_distribution(net, path, state, day, belief, 0.0)
        times, _ = simulate_recurrent_traversal(net, path, state, day, belief, 0.0, rng, 100_000)
        tag_ks.append(ks_distance(dist.marginal(), EmpiricalCdf(times)))
    ok = post_bad == 0 and day_post_bad == 0 and two_gap <= 1e-12 and max(tag_ks) <= 0.02
    report(9, ok, f"incident posteriors off by > 3 SE: {post_bad}/3; day posteriors: {day_post_bad}/2; "
                  f"2-phase gap {two_gap:.1e}; tagged KS vs joint-chain simulation max {max(tag_ks):.4f} "
                  f"(tol 0.02)")
    assert ok


# ---------------------------------------------------------------- 10


def test_criterion_10_granularity(report):
    rng = np.random.default_rng(SEED)
    worst, failures = -math.inf, 0
    for _ in range(50):
        a, b = rng.uniform(0.05, 10, 2)
        arc = Arc("g", "A", "B", float(rng.uniform(1, 10)), 100.0, float(rng.uniform(10, 90)), float(a), float(b))
        delta = choose_delta(arc)
        frac, se = transition_window_fraction(float(a), float(b), delta, 100_000, rng)
        worst = max(worst, frac - 0.01 - 3 * se)
        failures += frac > 0.01 + 3 * se
    ok = failures == 0
    report(10, ok, f"50 rate pairs, {failures} above eps + 3 SE; largest excess {worst:+.4f}")
    assert ok
