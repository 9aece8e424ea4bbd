import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_tree
from srlab import exprcore as ec
from srlab.errors import ConfigError
from srlab.simplify import (Bucket, HashPlane, SimplifyConfig, hash_simplify, init_table,
                            key_to_bitstring, prediction_angle, simhash)


def features(n=40, d=3, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, size=(n, d))


def vectors_at_angle(rng, d, theta):
    u, w = np.linalg.qr(rng.normal(size=(d, 2)))[0].T
    return u, math.cos(theta) * u + math.sin(theta) * w


def collision_rate(theta_deg, trials, bits=256, d=100, seed=0):
    rng = np.random.default_rng(seed)
    plane = HashPlane(bits, d, seed)
    equal = 0.0
    for _ in range(trials):
        u, v = vectors_at_angle(rng, d, math.radians(theta_deg))
        equal += (plane.bits_of(u) == plane.bits_of(v)).mean()
    return equal / trials


class TestHashing:
    @pytest.mark.parametrize("theta", [0, 30, 60, 90, 180])
    def test_collision_law(self, theta):
        assert abs(collision_rate(theta, 400) - (1 - theta / 180)) < 0.03

    def test_scale_invariant(self):
        plane = HashPlane(64, 10, 1)
        v = np.random.default_rng(2).normal(size=10)
        assert plane.key(v) == plane.key(3.5 * v)

    def test_zero_vector_key_is_all_zero(self):
        plane = HashPlane(16, 5, 0)
        assert key_to_bitstring(plane.key(np.zeros(5)), 16) == "0" * 16

    def test_rejects_bad_input(self):
        plane = HashPlane(8, 3, 0)
        with pytest.raises(ValueError):
            plane.key(np.ones(4))
        with pytest.raises(ValueError):
            plane.key([1.0, np.nan, 0.0])

    def test_simhash_distance(self):
        X = features()
        table = init_table(X, seed=3)
        bits, dist = simhash(table.plane, X[:, 1], table)
        assert len(bits) == 256 and dist == 0.0
        assert simhash(table.plane, X[:, 1])[1] == math.inf


class TestInitTable:
    def test_terminal_buckets(self):
        X = features(d=4)
        table = init_table(X, seed=0)
        assert len(table) == 5
        zero_key = table.plane.key(np.zeros(40))
        assert table.buckets[zero_key].smallest.op == "const"

    def test_duplicate_column(self):
        X = features()
        with pytest.raises(ConfigError):
            init_table(np.column_stack([X, X[:, 0]]))

    def test_doubles_bits_on_collision(self):
        # nearly parallel columns collide at 2 bits but not with more
        x = np.linspace(1, 2, 20)
        X = np.column_stack([x, x + 0.3 * np.sin(7 * x)])
        table = init_table(X, bits=2, seed=0)
        assert table.plane.bits > 2
        assert len(table) == 3


class TestBucket:
    def test_sorted_by_size_and_stable(self):
        b = Bucket(np.zeros(3))
        big = ec.op("add", ec.var(0), ec.var(1))
        t1, t2 = ec.var(0), ec.var(1)
        for t in (big, t1, t2, t1):
            b.insert(t)
        assert b.trees == [t1, t2, big]
        assert b.sizes == [1, 1, 3]


class TestSimplify:
    cfg = SimplifyConfig(enabled=True)

    def test_log_exp(self):
        X = features()
        tree = ec.op("log", ec.op("exp", ec.var(2)))
        res = hash_simplify(tree, init_table(X), self.cfg, X)
        assert res.tree == ec.var(2)
        assert len(res.replacements) == 1
        r = res.replacements[0]
        assert (r.path, r.pre_size, r.post_size) == ((), 3, 1)
        assert r.angle == pytest.approx(0.0, abs=1e-5)

    def test_add_zero(self):
        X = features()
        tree = ec.op("add", ec.const(0.0), ec.var(2))
        assert hash_simplify(tree, init_table(X), self.cfg, X).tree == ec.var(2)

    def test_constant_subtree_becomes_tunable_constant(self):
        X = features()
        tree = ec.op("cos", ec.op("sub", ec.var(0), ec.var(0)))
        res = hash_simplify(tree, init_table(X), self.cfg, X)
        assert res.tree == ec.const(1.0, 1.0)
        assert [r.path for r in res.replacements] == [(0,), ()]

    def test_zero_plus_product(self):
        X = features()
        m = ec.op("mul", ec.var(1), ec.var(2))
        tree = ec.op("add", ec.op("sub", ec.var(0), ec.var(0)), m)
        assert hash_simplify(tree, init_table(X), self.cfg, X).tree == m

    @pytest.mark.parametrize("tree", [ec.var(0), ec.const(2.0, 1.0),
                                      ec.op("mul", ec.var(0), ec.var(1))])
    def test_minimal_trees_unchanged(self, tree):
        X = features()
        res = hash_simplify(tree, init_table(X), self.cfg, X)
        assert res.tree == tree and not res.replacements

    def test_exact_common_subexpression(self):
        X = features()
        m = ec.op("mul", ec.var(0), ec.var(1))
        tree = ec.op("add", m, ec.op("div", m, ec.const(1.0)))
        res = hash_simplify(tree, init_table(X), SimplifyConfig(True, tolerance=0.0), X)
        assert res.tree == ec.op("add", m, m)

    def test_table_persists_between_calls(self):
        X = features()
        table = init_table(X)
        big = ec.op("mul", ec.op("add", ec.var(0), ec.var(1)), ec.var(2))
        hash_simplify(big, table, self.cfg, X)
        n = len(table)
        padded = ec.op("add", big, ec.const(0.0))
        res = hash_simplify(padded, table, self.cfg, X)
        assert res.tree == big
        assert len(table) == n

    def test_size_cap(self):
        X = features()
        tree = ec.op("log", ec.op("exp", ec.var(2)))
        cfg = SimplifyConfig(True, max_subtree_size=2)
        assert hash_simplify(tree, init_table(X), cfg, X).tree == tree

    def test_depth_cap(self):
        X = features()
        inner = ec.op("log", ec.op("exp", ec.var(2)))
        deep = ec.op("mul", ec.op("add", ec.var(0), ec.var(1)), ec.var(2))
        table = init_table(X)
        hash_simplify(deep, table, self.cfg, X)
        tree = ec.op("add", ec.op("sin", ec.op("exp", ec.var(0))),
                     ec.op("mul", ec.op("add", ec.var(0), ec.var(1)), inner))
        res = hash_simplify(tree, table, self.cfg, X, max_depth=3)
        assert ec.metrics(res.tree).depth <= 3

    def test_top_down_skips_replaced_subtrees(self):
        X = features()
        tree = ec.op("add", ec.op("log", ec.op("exp", ec.var(2))), ec.const(0.0))
        bu = hash_simplify(tree, init_table(X), self.cfg, X)
        td = hash_simplify(tree, init_table(X), SimplifyConfig(True, traversal="top-down"), X)
        assert td.tree == ec.var(2) == bu.tree
        assert bu.visits > td.visits

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6))
    def test_invariants_on_random_trees(self, seed):
        X = features(seed=seed % 7)
        tree = random_tree(seed, operators=("add", "sub", "mul", "sin", "cos", "square"))
        for traversal in ("bottom-up", "top-down"):
            table = init_table(X)
            res = hash_simplify(tree, table, SimplifyConfig(True, traversal=traversal), X)
            assert res.tree.size <= tree.size
            for r in res.replacements:
                assert r.post_size < r.pre_size and r.distance <= 0.01
            if traversal == "bottom-up":
                bu_visits = res.visits
            else:
                assert bu_visits >= res.visits

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6))
    def test_zero_tolerance_preserves_output(self, seed):
        X = features(seed=1)
        tree = random_tree(seed, operators=("add", "sub", "mul", "sin", "cos"))
        res = hash_simplify(tree, init_table(X), SimplifyConfig(True, tolerance=0.0), X)
        before, after = ec.evaluate(tree, X), ec.evaluate(res.tree, X)
        # only the near-constant rule (variance < 1e-12) can move the output
        np.testing.assert_allclose(after, before, rtol=1e-6, atol=1e-4)


class TestAngle:
    @pytest.mark.parametrize("b,deg", [([2.0, 0.0], 0.0), ([0.0, 1.0], 90.0),
                                       ([-1.0, 0.0], 180.0), ([1.0, 1.0], 45.0)])
    def test_known_angles(self, b, deg):
        assert prediction_angle([1.0, 0.0], b) == pytest.approx(deg)

    def test_zero_norm(self):
        assert math.isnan(prediction_angle([0.0, 0.0], [1.0, 0.0]))


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(tolerance=-1), dict(traversal="inorder"),
                                    dict(distance_mode="nearest"), dict(hash_bits=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SimplifyConfig(**kw)
