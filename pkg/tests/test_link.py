import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvmdepart.distribution import TravelTimeDistribution
from mvmdepart.link import (
    GranularityBudget,
    binomial_tree,
    choose_delta,
    link_distribution,
    naive_link_distribution,
)
from mvmdepart.model import Arc, ModelError
from mvmdepart.simulation import EmpiricalCdf, ks_distance, simulate_link


def example1_atoms(alpha=1.0, beta=1.0):
    p, q = math.exp(-alpha / 60), math.exp(-beta / 60)
    return [
        (1 / 25, p * p),
        (2 / 45, p * (1 - p)),
        (7 / 150, (1 - p) * (1 - q)),
        (4 / 75, (1 - p) * q * (1 - q)),
        (1 / 18, (1 - p) * q * q),
    ]


@pytest.mark.parametrize("fn", [link_distribution, naive_link_distribution])
def test_example_one_atoms(example_arc, fn):
    dist = fn(example_arc, 1, 1 / 60)
    expected = example1_atoms()
    assert len(dist) == 5
    for (t, p), (et, ep) in zip(dist.atoms, expected):
        assert t == pytest.approx(et, abs=1e-12)
        assert p == pytest.approx(ep, abs=1e-12)


def test_example_one_with_other_rates():
    arc = Arc("e", "A", "B", 4.0, 100.0, 60.0, 0.7, 2.5)
    for (t, p), (et, ep) in zip(link_distribution(arc, 1, 1 / 60).atoms, example1_atoms(0.7, 2.5)):
        assert t == pytest.approx(et, abs=1e-12) and p == pytest.approx(ep, abs=1e-12)


def test_tree_levels_example_one(example_arc):
    levels = binomial_tree(example_arc, 1, 1 / 60)
    p = math.exp(-1 / 60)
    assert levels[0] == [levels[0][0]]
    assert levels[0][0].distance == pytest.approx(5 / 3)
    assert levels[0][0].prob_ending_free == 1.0
    second = {round(n.distance, 9): n for n in levels[1]}
    assert set(second) == {round(10 / 3, 9), round(8 / 3, 9)}
    assert second[round(10 / 3, 9)].prob_ending_free == pytest.approx(p)
    assert second[round(8 / 3, 9)].prob_ending_incident == pytest.approx(1 - p)


def test_one_step_traversal():
    arc = Arc("e", "A", "B", 1.0, 100.0, 60.0, 1.0, 1.0)
    assert link_distribution(arc, 1, 0.05).atoms == [(0.01, 1.0)]
    assert link_distribution(arc, 2, 0.05).atoms == [(pytest.approx(1 / 60), 1.0)]


def test_equal_speeds_give_point_mass():
    arc = Arc("e", "A", "B", 7.0, 70.0, 70.0, 2.0, 3.0)
    for delta in (0.001, 0.013, 0.5):
        dist = link_distribution(arc, 2, delta)
        assert len(dist) == 1 and dist.times[0] == pytest.approx(0.1, abs=1e-12)
        assert dist.mass == pytest.approx(1.0, abs=1e-12)


def test_bad_step_rejected(example_arc):
    with pytest.raises(ModelError):
        link_distribution(example_arc, 1, 0.0)
    with pytest.raises(ModelError):
        link_distribution(example_arc, 3, 0.01)


def test_naive_refuses_large_instances(example_arc):
    with pytest.raises(ModelError):
        naive_link_distribution(example_arc, 1, 1e-4)


def test_choose_delta_examples(example_arc):
    same = Arc("e", "A", "B", 4.0, 80.0, 80.0, 1.0, 1.0)
    assert choose_delta(same) == pytest.approx(0.99 * math.sqrt(0.02), rel=1e-12)
    assert choose_delta(same) == pytest.approx(0.1400, abs=1e-4)
    assert choose_delta(example_arc) == pytest.approx(0.99 * math.sqrt(0.02 / 10), rel=1e-12)
    assert choose_delta(example_arc) > 1 / 60
    capped = GranularityBudget(0.999, 0.999, delta_cap=0.01)
    assert choose_delta(example_arc, capped) == 0.01


def test_budget_validation():
    with pytest.raises(ValueError):
        GranularityBudget(0.0, 0.5)
    with pytest.raises(ValueError):
        GranularityBudget(0.5, 1.0)


def _random_small_arc(rng):
    v1 = rng.uniform(40, 120)
    v2 = rng.uniform(10, v1)
    delta = rng.uniform(0.005, 0.05)
    # keep the step count at or below 20
    d = rng.uniform(0.5, 19) * v2 * delta
    arc = Arc("r", "A", "B", float(d), float(v1), float(v2), float(rng.uniform(0.1, 20)), float(rng.uniform(0.1, 20)))
    return arc, delta


def test_lattice_equals_naive_tree(rng):
    for _ in range(200):
        arc, delta = _random_small_arc(rng)
        initial = int(rng.integers(1, 3))
        fast = link_distribution(arc, initial, delta)
        slow = naive_link_distribution(arc, initial, delta)
        assert len(fast) == len(slow)
        assert np.allclose(fast.times, slow.times, rtol=1e-12, atol=0)
        assert np.allclose(fast.probs, slow.probs, rtol=0, atol=1e-12)


@settings(max_examples=150, deadline=None)
@given(
    d=st.floats(0.1, 20),
    v1=st.floats(20, 130),
    ratio=st.floats(0.1, 1.0),
    a=st.floats(0.01, 20),
    b=st.floats(0.01, 20),
    initial=st.sampled_from([1, 2]),
)
def test_mass_and_support(d, v1, ratio, a, b, initial):
    arc = Arc("h", "A", "B", d, v1, v1 * ratio, a, b)
    dist = link_distribution(arc, initial, choose_delta(arc))
    assert dist.mass == pytest.approx(1.0, abs=1e-12)
    lo, hi = d / arc.max_speed, d / arc.min_speed
    assert dist.times[0] >= lo * (1 - 1e-12) and dist.times[-1] <= hi * (1 + 1e-12)
    assert np.all(np.diff(dist.times) > 0)


def test_refinement_converges(rng):
    # halving delta should, up to lattice effects, shrink the gap to the next refinement
    for _ in range(5):
        arc = Arc("c", "A", "B", float(rng.uniform(2, 10)), 100.0, 40.0, *map(float, rng.uniform(0.5, 3, 2)))
        deltas = [0.02 / 2**i for i in range(5)]
        dists = [link_distribution(arc, 1, d) for d in deltas]
        gaps = [ks_distance(x, y) for x, y in zip(dists, dists[1:])]
        for g0, g1 in zip(gaps, gaps[1:]):
            assert g1 <= 1.1 * g0


def test_example_one_budgeted_step_versus_simulation(example_arc):
    # the budgeted step exceeds the whole traversal, so the lattice cannot switch
    # speed at all; its gap to the continuous chain is the chance of a switch
    # before d/v1
    delta = choose_delta(example_arc)
    assert example_arc.speed_free * delta >= example_arc.length_km
    dist = link_distribution(example_arc, 1, delta)
    assert dist.atoms == [(pytest.approx(0.04), 1.0)]
    samples = EmpiricalCdf(simulate_link(example_arc, 1, np.random.default_rng(5), 100_000))
    structural = -math.expm1(-example_arc.onset_rate * 0.04)
    assert ks_distance(dist, samples) == pytest.approx(structural, abs=3 * math.sqrt(structural / 100_000) + 1e-3)


def test_example_one_fine_step_matches_simulation(example_arc):
    dist = link_distribution(example_arc, 1, 1 / 600)
    samples = EmpiricalCdf(simulate_link(example_arc, 1, np.random.default_rng(5), 100_000))
    assert ks_distance(dist, samples) <= 0.02


def test_distribution_merges_equal_times():
    dist = TravelTimeDistribution(np.array([2.0, 1.0, 2.0]), np.array([0.25, 0.5, 0.25]))
    assert dist.atoms == [(1.0, 0.5), (2.0, 0.5)]
    assert dist.cdf(1.5) == 0.5 and dist.quantile(0.75) == 2.0
