import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srlab import exprcore as ec
from srlab.errors import ConfigError, TreeParseError, TreeStructureError

from conftest import random_tree

x0, x1, x2 = ec.var(0), ec.var(1), ec.var(2)


class TestEvaluate:
    def test_identity_terminal(self):
        X = np.array([[1.0], [2.0], [3.0]])
        np.testing.assert_array_equal(ec.evaluate(x0, X), [1.0, 2.0, 3.0])

    def test_square_by_mul(self):
        X = np.array([[2.0], [3.0]])
        np.testing.assert_array_equal(ec.evaluate(ec.op("mul", x0, x0), X), [4.0, 9.0])

    def test_weighted_constant(self):
        X = np.zeros((3, 2))
        np.testing.assert_array_equal(ec.evaluate(ec.const(5.0, 2.0), X), [10.0, 10.0, 10.0])

    def test_weights_multiply_every_level(self):
        X = np.array([[1.0, 2.0], [3.0, 4.0]])
        tree = ec.op("add", ec.var(0, 2.0), ec.var(1, -1.0), weight=0.5)
        np.testing.assert_array_equal(ec.evaluate(tree, X), [0.0, 1.0])

    def test_out_of_range_variable(self):
        with pytest.raises(TreeStructureError):
            ec.evaluate(ec.var(3), np.ones((2, 3)))

    def test_non_finite_propagates(self):
        X = np.array([[0.0], [-1.0], [1.0]])
        out = ec.evaluate(ec.op("log", x0), X)
        assert out[0] == -np.inf and np.isnan(out[1]) and out[2] == 0.0

    def test_unary_operators(self):
        X = np.array([[0.25], [-4.0]])
        a = X[:, 0]
        expect = {
            "abs": np.abs(a), "square": a * a, "sqrtabs": np.sqrt(np.abs(a)),
            "exp": np.exp(a), "sin": np.sin(a), "cos": np.cos(a), "tan": np.tan(a),
            "tanh": np.tanh(a),
        }
        for name, want in expect.items():
            np.testing.assert_array_equal(ec.evaluate(ec.op(name, x0), X), want, err_msg=name)

    def test_binary_operators(self):
        X = np.array([[3.0, 2.0], [1.0, 4.0]])
        a, b = X[:, 0], X[:, 1]
        expect = {"sub": a - b, "div": a / b, "pow": a ** b, "min": np.minimum(a, b),
                  "max": np.maximum(a, b)}
        for name, want in expect.items():
            np.testing.assert_array_equal(ec.evaluate(ec.op(name, x0, x1), X), want, err_msg=name)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_pure(self, seed):
        tree = random_tree(seed)
        X = np.random.default_rng(seed).normal(size=(20, 3))
        np.testing.assert_array_equal(ec.evaluate(tree, X), ec.evaluate(tree, X))

    @pytest.mark.parametrize("name,fold", [("add", np.add), ("mul", np.multiply)])
    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_variadic_is_left_fold(self, name, fold, n):
        X = np.random.default_rng(n).normal(size=(10, 4))
        tree = ec.op(name, *[ec.var(i) for i in range(n)])
        want = X[:, 0]
        for i in range(1, n):
            want = fold(want, X[:, i])
        np.testing.assert_array_equal(ec.evaluate(tree, X), want)

    def test_batched_weights_match_single(self):
        tree = random_tree(7, max_size=25)
        prog = ec.Program(tree)
        if prog.n_weights == 0:
            tree = ec.op("add", tree, ec.var(0, 1.5))
            prog = ec.Program(tree)
        X = np.random.default_rng(0).normal(size=(15, 3))
        W = np.random.default_rng(1).normal(size=(4, prog.n_weights))
        batch = prog.run(X, W)
        for b in range(4):
            np.testing.assert_array_equal(batch[b], prog.run(X, W[b]))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_perturbed_matches_batched_run(self, seed):
        tree = ec.op("add", random_tree(seed, max_size=40, max_depth=6), ec.var(0, 0.5))
        prog = ec.Program(tree)
        X = np.random.default_rng(seed).uniform(-1, 1, size=(12, 3))
        w = prog.weights
        h = np.random.default_rng(seed + 1).uniform(1e-8, 1e-3, len(w))
        full = prog.run(X, np.vstack([w + np.diag(h), w - np.diag(h)]))
        plus, minus = prog.perturbed(X, w, h)
        np.testing.assert_array_equal(plus, full[:len(w)])
        np.testing.assert_array_equal(minus, full[len(w):])

    def test_with_weights_round_trip(self):
        tree = ec.op("add", ec.var(0, 1.0), ec.op("sin", ec.var(1), weight=2.0))
        prog = ec.Program(tree)
        new = prog.with_weights([3.0, 4.0])
        assert new == ec.op("add", ec.var(0, 3.0), ec.op("sin", ec.var(1), weight=4.0))


class TestMetrics:
    def test_constant(self):
        assert ec.metrics(ec.const(1.0)).complexity == 2

    def test_variable(self):
        assert ec.metrics(x0).complexity == 3

    def test_add(self):
        m = ec.metrics(ec.op("add", x0, x1))
        assert (m.complexity, m.size, m.depth) == (18, 3, 1)

    def test_weights_add_no_nodes(self):
        assert ec.op("add", ec.var(0, 2.0), ec.var(1, 3.0), weight=1.0).size == 3

    def test_nested(self):
        # sin(mul(x0, 2)) -> 6 * (4 * (3 + 2)) = 120
        tree = ec.op("sin", ec.op("mul", x0, ec.const(2.0)))
        m = ec.metrics(tree)
        assert (m.complexity, m.size, m.depth) == (120, 4, 2)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_size_matches_traversal(self, seed):
        tree = random_tree(seed)
        assert tree.size == sum(1 for _ in ec.iter_nodes(tree))
        assert tree.depth == max(d for _, _, d in ec.iter_nodes(tree))

    @given(st.integers(0, 2**32 - 1), st.sampled_from(ec.OPERATORS))
    @settings(max_examples=100, deadline=None)
    def test_wrapping_increases_complexity(self, seed, name):
        tree = random_tree(seed, max_size=10)
        kids = (tree,) * ec.OPS[name].arity
        assert ec.Node(name, kids).complexity > tree.complexity


class TestPTC2:
    def test_max_size_one_is_terminal(self, rng):
        for _ in range(50):
            assert ec.ptc2(1, 5, rng, ec.default_terminals(3), ec.OPERATORS).is_leaf

    def test_max_depth_zero_is_terminal(self, rng):
        for _ in range(50):
            assert ec.ptc2(20, 0, rng, ec.default_terminals(3), ec.OPERATORS).is_leaf

    def test_bounds_sweep(self, rng):
        terms = ec.default_terminals(4)
        for _ in range(1000):
            t = ec.ptc2(20, 3, rng, terms, ec.OPERATORS)
            assert t.depth <= 3
            assert t.size <= 20 + ec.A_MAX - 1

    def test_hits_target_without_depth_pressure(self, rng):
        terms = ec.default_terminals(2)
        sizes = [ec.ptc2(15, 30, rng, terms, ("add", "sub", "sin")).size for _ in range(200)]
        assert min(sizes) >= 15 and max(sizes) <= 15 + ec.A_MAX - 1

    def test_empty_terminals(self, rng):
        with pytest.raises(ConfigError):
            ec.ptc2(5, 3, rng, [], ec.OPERATORS)

    def test_bad_bounds(self, rng):
        with pytest.raises(ConfigError):
            ec.ptc2(0, 3, rng, ec.default_terminals(1), ec.OPERATORS)

    def test_deterministic(self):
        a = ec.ptc2(30, 5, np.random.default_rng(3), ec.default_terminals(3), ec.OPERATORS)
        b = ec.ptc2(30, 5, np.random.default_rng(3), ec.default_terminals(3), ec.OPERATORS)
        assert a == b

    def test_constants_are_redrawn(self, rng):
        vals = {ec.ptc2(1, 0, rng, [ec.const(1.0)], ()).value for _ in range(20)}
        assert len(vals) == 20


class TestSerialization:
    def test_minimal_document(self):
        assert ec.serialize(ec.var(0)) == '{"op":"var","index":0,"weight":null}'

    def test_weighted_constant_bit_exact(self):
        t = ec.const(0.1 + 0.2, weight=1 / 3)
        back = ec.deserialize(ec.serialize(t))
        assert back.value == t.value and back.weight == t.weight

    def test_seventeen_digits(self):
        doc = json.loads(ec.serialize(ec.const(1 / 3)))
        assert doc["value"] == 1 / 3
        assert "0.33333333333333331" in ec.serialize(ec.const(1 / 3))

    def test_round_trip_1000_trees(self):
        for seed in range(1000):
            t = random_tree(seed)
            assert ec.deserialize(ec.serialize(t)) == t

    def test_weight_key_may_be_omitted(self):
        assert ec.deserialize('{"op":"var","index":2}') == ec.var(2)

    def test_non_finite_tokens(self):
        t = ec.const(math.inf)
        assert ec.deserialize(ec.serialize(t)).value == math.inf

    def test_syntax_error_has_offset(self):
        with pytest.raises(TreeParseError) as info:
            ec.deserialize('{"op":"var",, "index":0}')
        assert info.value.position == 12

    def test_structural_error_has_path(self):
        doc = '{"op":"add","children":[{"op":"var","index":0},{"op":"sin"}]}'
        with pytest.raises(TreeParseError) as info:
            ec.deserialize(doc)
        assert info.value.position == (1,)

    @pytest.mark.parametrize("doc", [
        '{"op":"nope"}', '{"op":"var"}', '{"op":"const"}', '[1,2]',
        '{"op":"var","index":0,"colour":"red"}',
        '{"op":"add","children":[{"op":"var","index":0}]}',
        '{"op":"var","index":0,"weight":Infinity}',
    ])
    def test_malformed(self, doc):
        with pytest.raises(TreeParseError):
            ec.deserialize(doc)

    def test_prefix_text(self):
        assert str(ec.op("add", ec.var(0, 2.5), x1)) == "add(2.5*x0, x1)"


class TestEditing:
    def test_replace_at(self):
        tree = ec.op("add", x0, ec.op("sin", x1))
        new = ec.replace_at(tree, (1, 0), x2)
        assert new == ec.op("add", x0, ec.op("sin", x2))
        assert ec.get_node(new, (1,)) == ec.op("sin", x2)

    def test_iter_nodes_preorder(self):
        tree = ec.op("add", x0, ec.op("sin", x1))
        assert [p for p, _, _ in ec.iter_nodes(tree)] == [(), (0,), (1,), (1, 0)]

    def test_counts(self):
        tree = ec.op("add", ec.var(4, 1.0), ec.op("sin", x1, weight=2.0))
        assert ec.max_var_index(tree) == 4
        assert ec.n_weights(tree) == 2

    def test_hash_consistent_with_equality(self):
        a = ec.op("add", x0, ec.const(1.0))
        b = ec.op("add", ec.var(0), ec.const(1.0))
        assert a == b and hash(a) == hash(b)
        assert len({a, b, ec.op("add", x0, ec.const(2.0))}) == 2
