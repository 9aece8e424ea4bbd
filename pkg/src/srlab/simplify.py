"""Inexact simplification of expression trees with SimHash.

Every subtree's prediction vector on the training rows is hashed with a
random-hyperplane SimHash. Subtrees whose hash is already in the table, and
whose prediction lies within ``tolerance`` (Euclidean) of the bucket's
indexed vector, are replaced by the smallest tree stored in that bucket.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from . import exprcore as ec
from .errors import ConfigError
from .exprcore import Node

ZERO_VARIANCE = 1e-12
MAX_BITS = 4096


@dataclass(frozen=True)
class SimplifyConfig:
    enabled: bool = False
    tolerance: float = 0.01
    traversal: str = "bottom-up"
    max_subtree_size: int | None = None
    hash_bits: int = 256
    # "representative": distance to the bucket's first indexed vector;
    # "all": distance to the closest vector ever inserted into the bucket
    distance_mode: str = "representative"

    def __post_init__(self):
        if self.tolerance < 0:
            raise ConfigError("tolerance must be >= 0")
        if self.traversal not in ("bottom-up", "top-down"):
            raise ConfigError("traversal must be 'bottom-up' or 'top-down'")
        if self.distance_mode not in ("representative", "all"):
            raise ConfigError("distance_mode must be 'representative' or 'all'")
        if self.hash_bits < 1:
            raise ConfigError("hash_bits must be positive")


class HashPlane:
    """``bits x d`` standard-normal projection matrix."""

    def __init__(self, bits: int, d: int, seed: int = 0):
        self.bits = bits
        self.d = d
        self.seed = seed
        self.P = np.random.default_rng(seed).standard_normal((bits, d))

    def bits_of(self, pred) -> np.ndarray:
        pred = np.asarray(pred, dtype=float)
        if pred.shape != (self.d,):
            raise ValueError(f"prediction must have length {self.d}")
        if not np.isfinite(pred).all():
            raise ValueError("cannot hash a non-finite prediction")
        return self.P @ pred > 0

    def key(self, pred) -> bytes:
        return np.packbits(self.bits_of(pred)).tobytes()


def key_to_bitstring(key: bytes, bits: int) -> str:
    return "".join(map(str, np.unpackbits(np.frombuffer(key, dtype=np.uint8))[:bits]))


@dataclass
class Bucket:
    rep: np.ndarray
    trees: list[Node] = field(default_factory=list)
    sizes: list[int] = field(default_factory=list)
    vectors: list[np.ndarray] = field(default_factory=list)
    members: set = field(default_factory=set, repr=False)

    def insert(self, tree: Node, pred: np.ndarray | None = None) -> None:
        if tree in self.members:
            return
        self.members.add(tree)
        i = bisect.bisect_right(self.sizes, tree.size)
        self.sizes.insert(i, tree.size)
        self.trees.insert(i, tree)
        if pred is not None:
            self.vectors.append(pred)

    @property
    def smallest(self) -> Node:
        return self.trees[0]


class SimplificationTable:
    def __init__(self, plane: HashPlane, distance_mode: str = "representative"):
        self.plane = plane
        self.distance_mode = distance_mode
        self.buckets: dict[bytes, Bucket] = {}

    def __len__(self) -> int:
        return len(self.buckets)

    def __contains__(self, key) -> bool:
        return key in self.buckets

    def query(self, pred) -> tuple[bytes, float]:
        key = self.plane.key(pred)
        b = self.buckets.get(key)
        if b is None:
            return key, math.inf
        if self.distance_mode == "all" and b.vectors:
            return key, float(min(np.linalg.norm(v - pred) for v in b.vectors))
        return key, float(np.linalg.norm(b.rep - pred))

    def index(self, key: bytes, pred, tree: Node) -> Bucket:
        pred = np.array(pred, dtype=float)
        b = Bucket(pred)
        b.insert(tree, pred if self.distance_mode == "all" else None)
        self.buckets[key] = b
        return b

    def insert(self, key: bytes, tree: Node, pred=None) -> None:
        self.buckets[key].insert(tree, pred if self.distance_mode == "all" else None)


def simhash(plane: HashPlane, pred, table: SimplificationTable | None = None):
    """``(bit string, distance)`` for ``pred``; distance is ``inf`` when the
    bucket does not exist (or no table is given)."""
    if table is None:
        return key_to_bitstring(plane.key(pred), plane.bits), math.inf
    key, dist = table.query(pred)
    return key_to_bitstring(key, plane.bits), dist


def init_table(X: np.ndarray, bits: int = 256, seed: int = 0,
               distance_mode: str = "representative") -> SimplificationTable:
    """Table seeded with the constant (zero vector) and one bucket per feature.

    If any two terminals collide, the hash length is doubled and the plane
    regenerated, up to 4096 bits.
    """
    X = np.asarray(X, dtype=float)
    d, n = X.shape
    while True:
        table = SimplificationTable(HashPlane(bits, d, seed), distance_mode)
        terminals = [(ec.const(1.0), np.zeros(d))] + [(ec.var(i), X[:, i]) for i in range(n)]
        collided = False
        for tree, pred in terminals:
            key = table.plane.key(pred)
            if key in table:
                collided = True
                break
            table.index(key, pred, tree)
        if not collided:
            return table
        if bits >= MAX_BITS:
            raise ConfigError("terminal hashes still collide at 4096 bits "
                              "(duplicated or proportional feature columns?)")
        bits *= 2


def prediction_angle(before, after) -> float:
    """Angle in degrees between two prediction vectors; ``nan`` if either has
    zero norm."""
    a = np.asarray(before, dtype=float)
    b = np.asarray(after, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0 or not (np.isfinite(na) and np.isfinite(nb)):
        return math.nan
    return math.degrees(math.acos(float(np.clip(a @ b / (na * nb), -1.0, 1.0))))


@dataclass
class Replacement:
    path: tuple[int, ...]
    pre_size: int
    post_size: int
    distance: float
    angle: float
    generation: int = -1


@dataclass
class SimplifyResult:
    tree: Node
    replacements: list[Replacement]
    visits: int


def _node_output(node: Node, kid_preds, X) -> np.ndarray:
    d = X.shape[0]
    with np.errstate(all="ignore"):
        if node.op == "var":
            raw = X[:, node.index]
        elif node.op == "const":
            raw = np.full(d, node.value)
        else:
            raw = ec.OPS[node.op].func(*kid_preds)
        if node.weight is not None:
            raw = raw * node.weight
    return np.asarray(raw, dtype=float)


class _Simplifier:
    def __init__(self, table, config: SimplifyConfig, X, max_depth):
        self.table = table
        self.config = config
        self.X = X
        self.max_depth = max_depth
        self.replacements: list[Replacement] = []
        self.visits = 0

    def visit(self, node: Node, pred: np.ndarray, path) -> tuple[Node, np.ndarray] | None:
        """Hash one subtree; return ``(replacement, its prediction)`` or None."""
        self.visits += 1
        cap = self.config.max_subtree_size
        if cap is not None and node.size > cap:
            return None
        if not np.isfinite(pred).all():
            return None
        with np.errstate(over="ignore", invalid="ignore"):
            constant = float(np.var(pred)) < ZERO_VARIANCE
        hpred = np.zeros_like(pred) if constant else pred
        key, dist = self.table.query(hpred)
        if key not in self.table:
            self.table.index(key, hpred, node)
            return None
        if dist > self.config.tolerance:
            return None
        bucket = self.table.buckets[key]
        best = bucket.smallest
        self.table.insert(key, node, hpred)
        if best.size >= node.size:
            return None
        if best.op == "const":
            best = ec.const(float(np.mean(pred)), 1.0)
        if self.max_depth is not None and len(path) + best.depth > self.max_depth:
            return None
        new_pred = _node_output_tree(best, self.X)
        self.replacements.append(Replacement(
            path, node.size, best.size, dist, prediction_angle(pred, new_pred)))
        return best, new_pred

    def bottom_up(self, node: Node, path) -> tuple[Node, np.ndarray]:
        kids, preds = [], []
        for i, c in enumerate(node.children):
            k, p = self.bottom_up(c, path + (i,))
            kids.append(k)
            preds.append(p)
        kids = tuple(kids)
        if kids != node.children:
            node = Node(node.op, kids, node.index, node.value, node.weight)
        pred = _node_output(node, preds, self.X)
        rep = self.visit(node, pred, path)
        return rep if rep is not None else (node, pred)

    def top_down(self, node: Node, path, preds) -> Node:
        rep = self.visit(node, preds[path], path)
        if rep is not None:
            return rep[0]
        kids = tuple(self.top_down(c, path + (i,), preds) for i, c in enumerate(node.children))
        if kids != node.children:
            node = Node(node.op, kids, node.index, node.value, node.weight)
        return node


def _node_output_tree(tree: Node, X) -> np.ndarray:
    return ec.Program(tree).run(X)


def hash_simplify(tree: Node, table: SimplificationTable, config: SimplifyConfig,
                  X: np.ndarray, max_depth: int | None = None) -> SimplifyResult:
    """Simplify ``tree`` against ``table`` (which is updated in place).

    ``X`` must be the training rows the table's plane was built for.
    """
    X = np.asarray(X, dtype=float)
    s = _Simplifier(table, config, X, max_depth)
    if config.traversal == "bottom-up":
        new, _ = s.bottom_up(tree, ())
    else:
        prog = ec.Program(tree)
        outs = prog.run(X, keep=True)
        preds = {p: np.asarray(o, dtype=float) for p, o in zip(prog.paths, outs)}
        new = s.top_down(tree, (), preds)
    for r in s.replacements:
        assert r.post_size < r.pre_size and r.distance <= config.tolerance
    return SimplifyResult(new, s.replacements, s.visits)
