"""Expression trees: representation, evaluation, structural metrics, PTC2
generation and the JSON tree document format.

Trees are immutable :class:`Node` instances. Every node may carry a weight
that multiplies its output; ``weight is None`` means the weight is toggled
off. Evaluation goes through :class:`Program`, a flattened post-order form
that can evaluate a whole batch of weight vectors in one pass (used by the
finite-difference Jacobians of the parameter optimizer).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace as dc_replace
from functools import cached_property, reduce
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, TreeParseError, TreeStructureError

#: maximum number of arguments accepted by the variadic ``add`` and ``mul``
A_MAX = 4


def _sqrtabs(a):
    return np.sqrt(np.abs(a))


@dataclass(frozen=True)
class OpKind:
    name: str
    arity: int
    complexity: int
    func: Callable | None = None
    max_arity: int | None = None

    @property
    def variadic(self) -> bool:
        return self.max_arity is not None and self.max_arity > self.arity

    @property
    def is_leaf(self) -> bool:
        return self.arity == 0


def _fold(ufunc):
    def f(*args):
        return reduce(ufunc, args)
    return f


# complexity values follow Brush's regression operator table
OPS: dict[str, OpKind] = {
    op.name: op
    for op in [
        OpKind("add", 2, 3, _fold(np.add), A_MAX),
        OpKind("sub", 2, 3, np.subtract),
        OpKind("mul", 2, 4, _fold(np.multiply), A_MAX),
        OpKind("div", 2, 5, np.divide),
        OpKind("pow", 2, 5, np.power),
        OpKind("abs", 1, 4, np.abs),
        OpKind("square", 1, 4, np.square),
        OpKind("sqrtabs", 1, 5, _sqrtabs),
        OpKind("exp", 1, 5, np.exp),
        OpKind("log", 1, 5, np.log),
        OpKind("log1p", 1, 9, np.log1p),
        OpKind("sin", 1, 6, np.sin),
        OpKind("cos", 1, 6, np.cos),
        OpKind("tan", 1, 6, np.tan),
        OpKind("tanh", 1, 6, np.tanh),
        OpKind("min", 2, 4, np.minimum),
        OpKind("max", 2, 4, np.maximum),
        OpKind("const", 0, 2),
        OpKind("var", 0, 3),
    ]
}

OPERATORS = tuple(name for name, op in OPS.items() if not op.is_leaf)


@dataclass(frozen=True)
class Node:
    """One node of an expression tree.

    ``index`` is set for ``var`` nodes, ``value`` for ``const`` nodes. A
    ``weight`` of ``None`` means the node weight is toggled off.
    """

    op: str
    children: tuple[Node, ...] = ()
    index: int | None = None
    value: float | None = None
    weight: float | None = None

    @cached_property
    def size(self) -> int:
        return 1 + sum(c.size for c in self.children)

    @cached_property
    def depth(self) -> int:
        return 1 + max(c.depth for c in self.children) if self.children else 0

    @cached_property
    def complexity(self) -> int:
        c = OPS[self.op].complexity
        if not self.children:
            return c
        return c * sum(ch.complexity for ch in self.children)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def __hash__(self) -> int:
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash((self.op, self.children, self.index, self.value, self.weight))
            self.__dict__["_hash"] = h
        return h

    def __str__(self) -> str:
        return to_prefix(self)


@dataclass(frozen=True)
class TreeMetrics:
    size: int
    depth: int
    complexity: int


def var(index: int, weight: float | None = None) -> Node:
    return Node("var", index=int(index), weight=weight)


def const(value: float, weight: float | None = None) -> Node:
    return Node("const", value=float(value), weight=weight)


def op(name: str, *children: Node, weight: float | None = None) -> Node:
    return Node(name, tuple(children), weight=weight)


def check_node(node: Node) -> None:
    """Raise TreeStructureError unless ``node`` (not its subtree) is well formed."""
    kind = OPS.get(node.op)
    if kind is None:
        raise TreeStructureError(f"unknown operator {node.op!r}")
    n = len(node.children)
    hi = kind.max_arity or kind.arity
    if not kind.arity <= n <= hi:
        raise TreeStructureError(f"{node.op} takes {kind.arity}..{hi} children, got {n}")
    if node.op == "var" and (node.index is None or node.index < 0):
        raise TreeStructureError("var node needs a non-negative index")
    if node.op == "const" and node.value is None:
        raise TreeStructureError("const node needs a value")
    if node.weight is not None and not math.isfinite(node.weight):
        raise TreeStructureError("enabled weight must be finite")


def metrics(tree: Node) -> TreeMetrics:
    return TreeMetrics(tree.size, tree.depth, tree.complexity)


# --- traversal and editing -------------------------------------------------

Path = tuple[int, ...]


def iter_nodes(tree: Node) -> Iterator[tuple[Path, Node, int]]:
    """Pre-order ``(path, node, depth)`` triples."""
    stack: list[tuple[Path, Node]] = [((), tree)]
    while stack:
        path, node = stack.pop()
        yield path, node, len(path)
        for i in range(len(node.children) - 1, -1, -1):
            stack.append((path + (i,), node.children[i]))


def get_node(tree: Node, path: Path) -> Node:
    for i in path:
        tree = tree.children[i]
    return tree


def replace_at(tree: Node, path: Path, new: Node) -> Node:
    if not path:
        return new
    i = path[0]
    kids = list(tree.children)
    kids[i] = replace_at(kids[i], path[1:], new)
    return dc_replace(tree, children=tuple(kids))


def max_var_index(tree: Node) -> int:
    return max((n.index for _, n, _ in iter_nodes(tree) if n.op == "var"), default=-1)


def n_weights(tree: Node) -> int:
    return sum(1 for _, n, _ in iter_nodes(tree) if n.weight is not None)


# --- evaluation ------------------------------------------------------------


class Program:
    """Post-order flattening of a tree for repeated evaluation.

    ``weights`` holds the enabled node weights in post-order; ``run`` accepts
    either a vector of that length or a ``(batch, n_weights)`` matrix, in which
    case the output has shape ``(batch, rows)``.
    """

    def __init__(self, tree: Node):
        self.tree = tree
        self.ops: list[str] = []
        self.kids: list[tuple[int, ...]] = []
        self.leaf: list[float | int | None] = []
        self.slot: list[int] = []
        self.paths: list[Path] = []
        weights: list[float] = []

        def visit(node: Node, path: Path) -> int:
            kid_ids = tuple(visit(c, path + (i,)) for i, c in enumerate(node.children))
            self.ops.append(node.op)
            self.kids.append(kid_ids)
            self.leaf.append(node.index if node.op == "var" else node.value)
            if node.weight is None:
                self.slot.append(-1)
            else:
                self.slot.append(len(weights))
                weights.append(node.weight)
            self.paths.append(path)
            return len(self.ops) - 1

        visit(tree, ())
        self.weights = np.asarray(weights, dtype=float)
        self._funcs = [OPS[o].func for o in self.ops]

    @property
    def n_weights(self) -> int:
        return len(self.weights)

    def run(self, X: np.ndarray, weights: np.ndarray | None = None, keep: bool = False):
        X = np.asarray(X, dtype=float)
        d = X.shape[0]
        w = self.weights if weights is None else np.asarray(weights, dtype=float)
        batched = w.ndim == 2
        wcol = w[..., :, None] if batched else w
        outs: list = [None] * len(self.ops)
        with np.errstate(all="ignore"):
            for k, o in enumerate(self.ops):
                if o == "var":
                    idx = self.leaf[k]
                    if idx >= X.shape[1]:
                        raise TreeStructureError(
                            f"variable x{idx} out of range for {X.shape[1]} features")
                    raw = X[:, idx]
                elif o == "const":
                    raw = self.leaf[k]
                else:
                    raw = self._funcs[k](*[outs[c] for c in self.kids[k]])
                s = self.slot[k]
                if s >= 0:
                    raw = raw * wcol[..., s, :] if batched else raw * wcol[s]
                outs[k] = raw
        shape = (w.shape[0], d) if batched else (d,)
        if keep:
            return [np.broadcast_to(np.asarray(o, dtype=float), shape) for o in outs]
        return np.array(np.broadcast_to(np.asarray(outs[-1], dtype=float), shape))

    def perturbed(self, X: np.ndarray, weights: np.ndarray, h: np.ndarray):
        """Outputs with weight ``i`` moved to ``w_i + h_i`` and ``w_i - h_i``.

        Returns ``(plus, minus)``, each ``(n_weights, rows)``; row ``i`` equals
        ``run`` on the weight vector with only entry ``i`` changed. A weight
        only affects its ancestors, so every node is evaluated just for the
        perturbations inside its own subtree, whose slots are contiguous in
        post-order.
        """
        X = np.asarray(X, dtype=float)
        w = np.asarray(weights, dtype=float)
        h = np.asarray(h, dtype=float)
        d = X.shape[0]
        lo, hi = self._slot_ranges
        base: list = [None] * len(self.ops)
        block: list = [None] * len(self.ops)   # (2, hi - lo, d), or None when unaffected
        with np.errstate(all="ignore"):
            for k, o in enumerate(self.ops):
                kids = self.kids[k]
                if o == "var":
                    raw = X[:, self.leaf[k]]
                elif o == "const":
                    raw = np.full(d, float(self.leaf[k]))
                else:
                    raw = self._funcs[k](*[base[c] for c in kids])
                raw_block = None
                if any(block[c] is not None for c in kids):
                    m = hi[k] - lo[k]
                    args = []
                    for c in kids:
                        if block[c] is None:
                            args.append(base[c])
                        elif hi[c] - lo[c] == m:
                            args.append(block[c])
                        else:
                            full = np.empty((2, m, d))
                            full[...] = base[c]
                            full[:, lo[c] - lo[k]:hi[c] - lo[k]] = block[c]
                            args.append(full)
                    raw_block = self._funcs[k](*args)
                s = self.slot[k]
                if s < 0:
                    base[k], block[k] = raw, raw_block
                    continue
                base[k] = raw * w[s]
                own = raw * np.array([w[s] + h[s], w[s] - h[s]])[:, None]
                if raw_block is None:
                    block[k] = own[:, None, :]
                else:
                    out = raw_block * w[s]
                    out[:, s - lo[k]] = own
                    block[k] = out
        root = len(self.ops) - 1
        out = np.empty((2, self.n_weights, d))
        out[...] = base[root]
        if block[root] is not None:
            out[:, lo[root]:hi[root]] = block[root]
        return out[0], out[1]

    @cached_property
    def _slot_ranges(self) -> tuple[list[int], list[int]]:
        # weight slots of each subtree form the half-open range [lo, hi)
        lo, hi = [0] * len(self.ops), [0] * len(self.ops)
        n = 0
        for k, kids in enumerate(self.kids):
            lo[k] = lo[kids[0]] if kids else n
            n += self.slot[k] >= 0
            hi[k] = n
        return lo, hi

    def with_weights(self, weights: Sequence[float]) -> Node:
        """Rebuild the tree with new values for the enabled weights."""
        weights = np.asarray(weights, dtype=float)
        if len(weights) != self.n_weights:
            raise ValueError("weight vector length mismatch")
        by_path = {self.paths[k]: float(weights[s]) for k, s in enumerate(self.slot) if s >= 0}

        def rebuild(node: Node, path: Path) -> Node:
            kids = tuple(rebuild(c, path + (i,)) for i, c in enumerate(node.children))
            w = by_path.get(path, node.weight)
            if kids == node.children and w == node.weight:
                return node
            return dc_replace(node, children=kids, weight=w)

        return rebuild(self.tree, ())


def evaluate(tree: Node, X: np.ndarray) -> np.ndarray:
    """Evaluate ``tree`` on every row of ``X``.

    Non-finite intermediate values propagate to the output; no operator is
    protected.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise TreeStructureError("feature matrix must be 2-D")
    return Program(tree).run(X)


# --- PTC2 ------------------------------------------------------------------


def default_terminals(n_features: int, constants: bool = True,
                      weight: float | None = 1.0) -> list[Node]:
    terms = [var(i, weight) for i in range(n_features)]
    if constants:
        terms.append(const(1.0, weight))
    return terms


def _draw_terminal(rng: np.random.Generator, terminals: Sequence[Node]) -> Node:
    t = terminals[rng.integers(len(terminals))]
    if t.op == "const":
        return dc_replace(t, value=float(rng.standard_normal()))
    return t


def _draw_arity(rng, name: str) -> int:
    kind = OPS[name]
    if kind.variadic:
        return int(rng.integers(kind.arity, kind.max_arity + 1))
    return kind.arity


def ptc2(max_size: int, max_depth: int, rng: np.random.Generator,
         terminals: Sequence[Node], operators: Sequence[str]) -> Node:
    """Probabilistic tree creation 2 with target size ``max_size``.

    The result has depth <= max_depth and size <= max_size + A_MAX - 1.
    Constant terminals get a fresh standard-normal value on every draw.
    """
    if not terminals:
        raise ConfigError("terminal set is empty")
    if max_size < 1 or max_depth < 0:
        raise ConfigError("max_size must be >= 1 and max_depth >= 0")
    if max_size == 1 or max_depth == 0 or not operators:
        return _draw_terminal(rng, terminals)

    # proto nodes: [op_name, children-list or leaf Node]
    def new_op(depth):
        name = operators[rng.integers(len(operators))]
        proto = [name, [None] * _draw_arity(rng, name)]
        for i in range(len(proto[1])):
            open_slots.append((proto, i, depth + 1))
        return proto

    open_slots: list = []
    root = new_op(0)
    count = 1
    while open_slots and count + len(open_slots) < max_size:
        j = int(rng.integers(len(open_slots)))
        open_slots[j], open_slots[-1] = open_slots[-1], open_slots[j]
        parent, i, depth = open_slots.pop()
        if depth >= max_depth:
            parent[1][i] = _draw_terminal(rng, terminals)
        else:
            parent[1][i] = new_op(depth)
        count += 1
    for parent, i, _ in open_slots:
        parent[1][i] = _draw_terminal(rng, terminals)

    def freeze(p) -> Node:
        if isinstance(p, Node):
            return p
        return Node(p[0], tuple(freeze(c) for c in p[1]))

    return freeze(root)


# --- text forms ------------------------------------------------------------


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _emit(node: Node, out: list[str]) -> None:
    out.append('{"op":"%s"' % node.op)
    if node.op == "var":
        out.append(',"index":%d' % node.index)
    elif node.op == "const":
        out.append(',"value":%s' % _fmt(node.value))
    out.append(',"weight":%s' % ("null" if node.weight is None else _fmt(node.weight)))
    if node.children:
        out.append(',"children":[')
        for i, c in enumerate(node.children):
            if i:
                out.append(",")
            _emit(c, out)
        out.append("]")
    out.append("}")


def serialize(tree: Node) -> str:
    out: list[str] = []
    _emit(tree, out)
    return "".join(out)


def from_dict(doc, path: Path = ()) -> Node:
    if not isinstance(doc, dict) or "op" not in doc:
        raise TreeParseError("node must be an object with an 'op' key", path)
    unknown = set(doc) - {"op", "index", "value", "weight", "children"}
    if unknown:
        raise TreeParseError(f"unknown keys {sorted(unknown)}", path)
    w = doc.get("weight")
    kids = doc.get("children", [])
    if not isinstance(kids, list):
        raise TreeParseError("'children' must be a list", path)
    try:
        node = Node(
            doc["op"],
            tuple(from_dict(c, path + (i,)) for i, c in enumerate(kids)),
            index=doc.get("index"),
            value=None if doc.get("value") is None else float(doc["value"]),
            weight=None if w is None else float(w),
        )
        check_node(node)
    except (TreeStructureError, TypeError, ValueError) as e:
        raise TreeParseError(str(e), path) from None
    return node


def deserialize(text: str) -> Node:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise TreeParseError(e.msg, e.pos) from None
    return from_dict(doc)


def to_dict(tree: Node) -> dict:
    return json.loads(serialize(tree))


def to_prefix(tree: Node, digits: int = 4) -> str:
    """Compact human-readable prefix rendering, e.g. ``add(2.5*x0, x1)``."""
    if tree.op == "var":
        s = f"x{tree.index}"
    elif tree.op == "const":
        s = f"{tree.value:.{digits}g}"
    else:
        s = f"{tree.op}({', '.join(to_prefix(c, digits) for c in tree.children)})"
    if tree.weight is not None:
        s = f"{tree.weight:.{digits}g}*{s}"
    return s
