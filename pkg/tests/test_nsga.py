import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mftd.nsga import (crowding_distance, dominates, hypervolume_2d, non_dominated_sort,
                       ranks_from_fronts, select_elites)
from oracles import brute_crowding, brute_fronts, brute_select, mc_hypervolume, random_population


def test_sort_example():
    assert non_dominated_sort([(1, 1), (2, 2), (0, 3)]) == [[0, 2], [1]]


def test_identical_points_single_front():
    assert non_dominated_sort([(2, 2)] * 5) == [[0, 1, 2, 3, 4]]


def test_single_point():
    assert non_dominated_sort([(4, 1)]) == [[0]]
    assert non_dominated_sort(np.zeros((0, 2))) == []


def test_invalid_points_last():
    pts = [(np.inf, np.inf), (5, 5), (1, 9), (6, 6), (9, 1), (np.inf, np.inf)]
    fronts = non_dominated_sort(pts)
    assert fronts[-1] == [0, 5]


def test_dominance():
    assert dominates(np.array([1, 1]), np.array([1, 2]))
    assert not dominates(np.array([1, 1]), np.array([1, 1]))
    assert not dominates(np.array([0, 2]), np.array([1, 1]))
    # plain tuples compare componentwise, not lexicographically
    assert not dominates((56.3, 0.49), (33.0, 0.52))
    assert dominates((1, 1), [1, 2])


def test_crowding_examples():
    assert np.all(np.isinf(crowding_distance([(1, 2), (2, 1)])))
    cd = crowding_distance([(1, 3), (2, 2), (3, 1)])
    assert cd[1] == 2.0 and np.isinf(cd[0]) and np.isinf(cd[2])


def test_crowding_duplicates_zero():
    cd = crowding_distance([(1, 4), (2, 3), (2, 3), (3, 2), (4, 1)])
    assert cd[2] == 0.0 and cd[1] > 0


def test_select_identity_when_capacity_large(rng):
    pts = rng.random((30, 2))
    arch = select_elites(pts, 50)
    assert sorted(arch.indices.tolist()) == list(range(30))


def test_select_keeps_front1(rng):
    pts = rng.random((200, 2))
    arch = select_elites(pts, 100)
    f1 = non_dominated_sort(pts)[0]
    assert len(arch.ids) == 100
    assert set(f1) <= set(arch.indices.tolist())


def test_select_duplicate_first_occurrence_carries_distance():
    pts = np.array([(0, 4), (4, 0), (2, 2), (2, 2), (2, 2)], dtype=float)
    arch = select_elites(pts, 3, ids=np.array([10, 11, 14, 12, 13]))
    assert sorted(arch.ids.tolist()) == [10, 11, 14]


def test_select_equal_crowding_breaks_ties_by_id():
    pts = np.array([(0, 1), (1, 0), (0, 1)], dtype=float)
    arch = select_elites(pts, 1, ids=np.array([7, 3, 1]))
    assert arch.ids.tolist() == [3]


def test_archive_invariants(rng):
    pts = random_population(rng, 120)
    arch = select_elites(pts, 60)
    F = pts[arch.indices]
    ranks = arch.ranks
    for r in np.unique(ranks):
        members = F[ranks == r]
        for a, b in itertools.permutations(members, 2):
            assert not dominates(a, b)
        if r > 0:
            prev = pts[non_dominated_sort(pts)[r - 1]]
            assert all(any(dominates(p, m) for p in prev) for m in members)


@pytest.mark.parametrize("seed", range(20))
def test_sort_and_select_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 201))
    pts = random_population(rng, n)
    assert non_dominated_sort(pts) == brute_fronts(pts)
    for front in brute_fronts(pts):
        assert np.array_equal(crowding_distance(pts[front]), brute_crowding(pts[front]))
    ids = rng.permutation(n) + 100
    cap = int(rng.integers(1, n + 1))
    assert sorted(select_elites(pts, cap, ids).ids.tolist()) == brute_select(pts, cap, ids)


def test_ranks_from_fronts():
    assert ranks_from_fronts([[1, 2], [0]], 3).tolist() == [1, 0, 0]


# ---------------------------------------------------------------- hypervolume

def test_hv_examples():
    assert hypervolume_2d([(1, 3), (2, 2), (3, 1)], (4, 4)) == 6.0
    assert hypervolume_2d([(1, 1)], (2, 2)) == 1.0
    assert hypervolume_2d([(4, 1), (1, 4)], (4, 4)) == 0.0
    assert hypervolume_2d(np.zeros((0, 2)), (1, 1)) == 0.0


def test_hv_ignores_points_outside_ref():
    assert hypervolume_2d([(1, 1), (5, 0), (np.inf, np.inf)], (2, 2)) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=30), st.randoms())
def test_hv_permutation_and_dominated_invariance(pts, rnd):
    ref = (11.0, 11.0)
    hv = hypervolume_2d(pts, ref)
    shuffled = list(pts)
    rnd.shuffle(shuffled)
    assert hypervolume_2d(shuffled, ref) == pytest.approx(hv, rel=1e-12, abs=1e-12)
    front = np.asarray(pts)[non_dominated_sort(pts)[0]]
    assert hypervolume_2d(front, ref) == pytest.approx(hv, rel=1e-12, abs=1e-12)


def test_hv_matches_monte_carlo(rng):
    pts = rng.random((15, 2))
    ref = (1.0, 1.0)
    est = mc_hypervolume(pts, ref, 1_000_000, rng)
    assert hypervolume_2d(pts, ref) == pytest.approx(est, rel=0.01)


def test_hv_monotone_under_insertion(rng):
    pts = rng.random((10, 2))
    ref = (1, 1)
    base = hypervolume_2d(pts, ref)
    assert hypervolume_2d(np.vstack([pts, rng.random((1, 2))]), ref) >= base
