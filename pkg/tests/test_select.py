import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import lexicase_distribution, mad_by_sorting, mad_keep, mvt_brute_force, mvt_keep
from srlab.errors import ConfigError
from srlab.select import (KINDS, LexicaseSelector, SelectorConfig, as_error_matrix, mad, mvt,
                          select_many, select_parent, select_tournament)

finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def random_vector(rng, kind):
    d = int(rng.integers(2, 65))
    if kind == 0:
        return rng.exponential(size=d)
    if kind == 1:
        return rng.integers(0, 5, size=d).astype(float)
    if kind == 2:
        return np.abs(rng.normal(size=d)) ** 3
    v = rng.exponential(size=d)
    v[rng.random(d) < 0.2] = np.inf
    return v


class TestMAD:
    def test_odd_length(self):
        assert mad([1.0, 2.0, 3.0, 4.0, 100.0]) == 1.0

    def test_even_length_uses_lower_median(self):
        # lower median 2, deviations 1,0,1,2 -> lower median 1
        assert mad([1.0, 2.0, 3.0, 4.0]) == 1.0

    def test_constant(self):
        assert mad([7.0] * 5) == 0.0

    def test_infinite_median(self):
        assert mad([np.inf, np.inf, np.inf, 1.0]) == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            mad([])

    @given(st.lists(finite_floats, min_size=1, max_size=40))
    def test_matches_sorting(self, v):
        assert mad(v) == mad_by_sorting(v)

    def test_random_vectors(self):
        rng = np.random.default_rng(3)
        for trial in range(500):
            v = random_vector(rng, trial % 4)
            assert mad(v) == mad_by_sorting(v)


class TestMVT:
    def test_two_clusters(self):
        assert mvt([0.0, 0.0, 10.0, 10.0]) == 5.0

    def test_isolated_outlier(self):
        # costs per midpoint: 1.5 -> 4.22, 2.5 -> 6.25, 6.5 -> 0.22
        assert mvt([1.0, 2.0, 3.0, 10.0]) == 6.5

    def test_all_equal(self):
        assert mvt([2.0, 2.0, 2.0]) is None

    def test_infinities_on_right(self):
        assert mvt([1.0, 1.0, np.inf]) == np.inf
        assert mvt([np.inf, np.inf]) is None

    def test_tie_takes_smallest_threshold(self):
        # symmetric: the splits at 0.5 and 2.5 cost the same
        assert mvt([0.0, 1.0, 2.0, 3.0]) == mvt_brute_force([0.0, 1.0, 2.0, 3.0])

    @pytest.mark.parametrize("weighting", ["printed", "size-weighted"])
    def test_random_vectors(self, weighting):
        rng = np.random.default_rng(4)
        for trial in range(1000):
            v = random_vector(rng, trial % 4)
            assert mvt(v, weighting) == mvt_brute_force(v, weighting)

    @settings(max_examples=200)
    @given(st.lists(st.integers(0, 6), min_size=2, max_size=30))
    def test_integer_ties(self, v):
        v = np.array(v, dtype=float)
        assert mvt(v) == mvt_brute_force(v)

    @given(st.lists(finite_floats, min_size=2, max_size=30))
    def test_keeps_a_proper_nonempty_subset(self, v):
        v = np.array(v)
        tau = mvt(v)
        if tau is None:
            assert v.min() == v.max()
        else:
            keep = v < tau
            assert keep.any() and not keep.all()
            assert v[keep].max() < v[~keep].min()


# cases x individuals, each built to exercise a different pool shape
HAND_MATRICES = [
    np.array([[0.0, 1.0, 2.0], [2.0, 0.0, 1.0], [1.0, 2.0, 0.0], [0.5, 0.5, 0.5]]),
    np.array([[0.0, 0.1, 5.0], [5.0, 0.0, 0.1], [0.1, 5.0, 0.0], [1.0, 1.0, 1.0]]),
    np.array([[0.0, 0.0, 1.0], [3.0, 1.0, 0.0], [1.0, 2.0, 2.0], [0.0, 4.0, 0.2]]),
    np.array([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0], [2.0, 2.0, 2.0], [0.0, 10.0, 0.0]]),
    np.array([[0.0, np.inf, 1.0], [np.inf, 0.0, 2.0], [0.3, 0.2, 0.1], [1.0, 1.0, 0.0]]),
]


def tv_distance(p, q):
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum()


class TestLexicase:
    def test_dominant_individual_always_wins(self, rng):
        e = np.array([[1.0, 0.0, 2.0], [3.0, 0.0, 1.0]])
        for kind in KINDS:
            picks = select_many(e, e.mean(axis=0), SelectorConfig(kind), 50, rng)
            assert set(picks) == {1}, kind

    def test_single_individual(self, rng):
        sel = LexicaseSelector(np.array([[1.0], [2.0]]), SelectorConfig("lex-mvt-dynamic"))
        assert sel.select(rng) == 0

    def test_identical_columns_split_uniformly(self):
        e = np.array([[1.0, 1.0], [2.0, 2.0]])
        sel = LexicaseSelector(e, SelectorConfig())
        r = np.random.default_rng(0)
        picks = np.array([sel.select(r) for _ in range(4000)])
        assert abs(picks.mean() - 0.5) < 0.05
        assert max(sel.cases_used) == 1

    def test_non_finite_errors_become_inf(self):
        e = as_error_matrix([[np.nan, 1.0], [-np.inf, 2.0]])
        assert np.isinf(e[:, 0]).all()

    def test_static_mad_masks(self):
        e = np.array([[0.0, 1.0, 4.0], [2.0, 2.0, 2.0]])
        sel = LexicaseSelector(e, SelectorConfig("lex-mad-static"))
        # row 0: mad 1, pass <= 1; row 1: mad 0, all tie at the best
        np.testing.assert_array_equal(sel.fail, [[False, False, True], [False, False, False]])

    def test_semi_uses_population_epsilon(self):
        e = np.array([[0.0, 1.0, 4.0], [2.0, 2.0, 2.0]])
        sel = LexicaseSelector(e, SelectorConfig("lex-mad-semi"))
        np.testing.assert_array_equal(sel.eps, [1.0, 0.0])

    def test_static_mvt_masks(self):
        e = np.array([[0.0, 0.0, 10.0]])
        sel = LexicaseSelector(e, SelectorConfig("lex-mvt-static"))
        np.testing.assert_array_equal(sel.fail, [[False, False, True]])

    @pytest.mark.parametrize("kind,keep", [("lex-mad-dynamic", mad_keep),
                                           ("lex-mvt-dynamic", mvt_keep)])
    @pytest.mark.parametrize("m", range(len(HAND_MATRICES)))
    def test_distribution_matches_enumeration(self, kind, keep, m):
        e = as_error_matrix(HAND_MATRICES[m])
        exact = lexicase_distribution(e, keep)
        sel = LexicaseSelector(e, SelectorConfig(kind))
        r = np.random.default_rng(m)
        counts = np.bincount([sel.select(r) for _ in range(20000)], minlength=3)
        assert tv_distance(counts / counts.sum(), exact) < 0.02

    def test_enumeration_oracle_by_hand(self):
        # each individual is uniquely best on one case; the fourth case ties
        e = HAND_MATRICES[0]
        np.testing.assert_allclose(lexicase_distribution(e, lambda v: v == v.min()),
                                   [1 / 3, 1 / 3, 1 / 3])

    def test_select_parent_matches_selector(self):
        e = HAND_MATRICES[1]
        a = select_parent(e, SelectorConfig(), np.random.default_rng(9))
        b = LexicaseSelector(e, SelectorConfig()).select(np.random.default_rng(9))
        assert a == b


class TestTournament:
    def test_full_tournament_returns_best(self, rng):
        f = np.array([3.0, 1.0, 2.0, 1.0])
        for _ in range(20):
            assert select_tournament(f, 4, rng) == 1

    def test_nan_is_worst(self, rng):
        assert select_tournament([np.nan, 5.0], 2, rng) == 1

    def test_size_bounds(self, rng):
        with pytest.raises(ValueError):
            select_tournament([1.0, 2.0], 3, rng)

    def test_worst_never_wins_with_k2(self, rng):
        f = np.arange(6.0)
        assert 5 not in {select_tournament(f, 2, rng) for _ in range(500)}

    def test_select_many_tournament(self, rng):
        e = np.array([[1.0, 0.0, 2.0]])
        picks = select_many(e, e.mean(axis=0), SelectorConfig("tournament", 3), 10, rng)
        assert picks == [1] * 10


class TestConfig:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            SelectorConfig("roulette")

    def test_bad_tournament_size(self):
        with pytest.raises(ConfigError):
            SelectorConfig("tournament", 1)

    def test_bad_weighting(self):
        with pytest.raises(ConfigError):
            SelectorConfig(mvt_weighting="pooled")
