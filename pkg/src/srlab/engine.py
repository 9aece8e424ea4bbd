"""Multi-objective GP loop: PTC2 initialization, per-individual parameter
optimization, lexicase parent selection, seven variation operators with a
retry tolerance, optional hash simplification, and NSGA-II survival."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import exprcore as ec
from . import moo
from .data import Dataset
from .errors import ConfigError, NumericFailure
from .exprcore import Node
from .optim import LMProblem, fd_step, lm_fit
from .select import KINDS, SelectorConfig, select_many
from .simplify import (Replacement, SimplificationTable, SimplifyConfig, hash_simplify,
                       init_table)

log = logging.getLogger(__name__)

VARIATIONS = ("crossover", "toggle_on", "toggle_off", "subtree", "point", "delete", "insert")
OBJECTIVES = ("loss", "complexity", "size", "depth")
DEFAULT_FUNCTIONS = ("add", "sub", "mul", "div", "sin", "cos", "exp", "log", "sqrtabs", "square")


@dataclass(frozen=True)
class EngineConfig:
    pop_size: int = 80
    generations: int = 200
    max_size: int = 128
    max_depth: int = 7
    validation_fraction: float = 0.25
    variation_tolerance: int = 3
    variation_weights: tuple[float, ...] = (1.0,) * len(VARIATIONS)
    objectives: tuple[str, ...] = ("loss", "complexity")
    selection: str = "lex-mad-dynamic"
    simplify: SimplifyConfig = field(default_factory=SimplifyConfig)
    opt_iters: int = 10
    seed: int = 0
    functions: tuple[str, ...] = DEFAULT_FUNCTIONS
    constants: bool = True
    # "parent": a failed variation returns a copy of the parent;
    # "random": it returns a freshly generated individual
    failure_fallback: str = "parent"
    audit: bool = False

    def __post_init__(self):
        if self.pop_size < 2 or self.pop_size % 2:
            raise ConfigError("pop_size must be an even number >= 2")
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        if self.max_size < 1 or self.max_depth < 0:
            raise ConfigError("max_size must be >= 1 and max_depth >= 0")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in [0, 1)")
        if self.variation_tolerance < 1:
            raise ConfigError("variation_tolerance must be >= 1")
        w = np.asarray(self.variation_weights, dtype=float)
        if len(w) != len(VARIATIONS) or (w < 0).any() or w.sum() <= 0:
            raise ConfigError(f"variation_weights needs {len(VARIATIONS)} non-negative "
                              "entries with a positive sum")
        if not self.objectives or self.objectives[0] != "loss":
            raise ConfigError("the first objective must be 'loss'")
        bad = set(self.objectives) - set(OBJECTIVES)
        if bad or len(set(self.objectives)) != len(self.objectives):
            raise ConfigError(f"objectives must be distinct names from {OBJECTIVES}")
        if self.selection not in KINDS:
            raise ConfigError(f"unknown selection kind {self.selection!r}")
        if self.opt_iters < 0:
            raise ConfigError("opt_iters must be >= 0")
        bad = [f for f in self.functions if f not in ec.OPERATORS]
        if bad:
            raise ConfigError(f"unknown functions {bad}")
        if self.failure_fallback not in ("parent", "random"):
            raise ConfigError("failure_fallback must be 'parent' or 'random'")


@dataclass(frozen=True)
class Individual:
    tree: Node
    train_loss: float
    val_loss: float
    errors: np.ndarray = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.tree.size

    @property
    def depth(self) -> int:
        return self.tree.depth

    @property
    def complexity(self) -> int:
        return self.tree.complexity

    @property
    def valid(self) -> bool:
        return bool(np.isfinite(self.train_loss))

    def objective(self, name: str) -> float:
        if name == "loss":
            return self.train_loss
        return float(getattr(self, name))

    def fitness(self, objectives) -> np.ndarray:
        return np.array([self.objective(o) for o in objectives], dtype=float)


@dataclass
class Problem:
    """Inner training and validation rows the engine works on."""
    X: np.ndarray
    y: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray

    @classmethod
    def from_dataset(cls, data: Dataset, validation_fraction: float, seed: int) -> Problem:
        X, y = data.train
        if len(y) < 2:
            raise ConfigError("need at least two training rows")
        Xv, yv = data.validation
        if len(yv):
            return cls(X, y, Xv, yv)
        if validation_fraction == 0.0:
            return cls(X, y, X, y)
        n = len(y)
        n_val = int(np.floor(validation_fraction * n + 0.5))
        if n_val < 1 or n - n_val < 2:
            raise ConfigError("too few training rows for the validation split")
        order = np.random.default_rng(seed).permutation(n)
        tr, va = np.sort(order[n_val:]), np.sort(order[:n_val])
        return cls(X[tr], y[tr], X[va], y[va])


def _mse(pred, y) -> float:
    with np.errstate(all="ignore"):
        v = float(np.mean((pred - y) ** 2))
    return v if np.isfinite(v) else np.inf


def evaluate_individual(tree: Node, prob: Problem) -> Individual:
    pred = ec.Program(tree).run(prob.X)
    with np.errstate(all="ignore"):
        err = np.abs(pred - prob.y)
    err[~np.isfinite(err)] = np.inf
    loss = _mse(pred, prob.y)
    val = _mse(ec.Program(tree).run(prob.X_val), prob.y_val) if np.isfinite(loss) else np.inf
    return Individual(tree, loss, val, err)


def optimize_params(tree: Node, X: np.ndarray, y: np.ndarray, iters: int = 10) -> Node:
    """Fit the enabled node weights by Levenberg-Marquardt, starting from the
    current weights. Returns the tree unchanged if the start is not finite."""
    prog = ec.Program(tree)
    if prog.n_weights == 0 or iters == 0:
        return tree
    def jacobian(w):
        h = fd_step(w)
        plus, minus = prog.perturbed(X, w, h)
        return (((plus - y) - (minus - y)) / (2.0 * h[:, None])).T

    problem = LMProblem(lambda w: prog.run(X, w) - y, prog.weights, max_iters=iters,
                        jacobian=jacobian)
    try:
        res = lm_fit(problem)
    except NumericFailure:
        return tree
    if not np.isfinite(res.theta).all() or np.array_equal(res.theta, prog.weights):
        return tree
    return prog.with_weights(res.theta)


# --- variation -------------------------------------------------------------


class Variator:
    def __init__(self, config: EngineConfig, n_features: int):
        self.config = config
        self.terminals = ec.default_terminals(n_features, constants=config.constants, weight=1.0)
        self.functions = tuple(config.functions)
        w = np.asarray(config.variation_weights, dtype=float)
        self.op_probs = w / w.sum()

    def random_tree(self, rng, target: int | None = None) -> Node:
        cfg = self.config
        for _ in range(10):
            t = int(rng.integers(1, cfg.max_size + 1)) if target is None else target
            tree = ec.ptc2(t, cfg.max_depth, rng, self.terminals, self.functions)
            if tree.size <= cfg.max_size:
                return tree
        return ec._draw_terminal(rng, self.terminals)

    def _fits(self, tree: Node) -> bool:
        return tree.size <= self.config.max_size and tree.depth <= self.config.max_depth

    def _pick(self, rng, items):
        return items[int(rng.integers(len(items)))] if items else None

    def crossover(self, parent: Node, donor: Node, rng) -> Node | None:
        path, sub, depth = self._pick(rng, list(ec.iter_nodes(parent)))
        room_size = self.config.max_size - (parent.size - sub.size)
        room_depth = self.config.max_depth - depth
        cands = [n for _, n, _ in ec.iter_nodes(donor)
                 if n.size <= room_size and n.depth <= room_depth]
        pick = self._pick(rng, cands)
        return None if pick is None else ec.replace_at(parent, path, pick)

    def toggle_on(self, parent: Node, rng) -> Node | None:
        spots = [p for p, n, _ in ec.iter_nodes(parent) if n.weight is None]
        path = self._pick(rng, spots)
        if path is None:
            return None
        return ec.replace_at(parent, path, dc_replace(ec.get_node(parent, path), weight=1.0))

    def toggle_off(self, parent: Node, rng) -> Node | None:
        spots = [p for p, n, _ in ec.iter_nodes(parent) if n.weight is not None]
        path = self._pick(rng, spots)
        if path is None:
            return None
        return ec.replace_at(parent, path, dc_replace(ec.get_node(parent, path), weight=None))

    def subtree(self, parent: Node, rng) -> Node | None:
        path, sub, depth = self._pick(rng, list(ec.iter_nodes(parent)))
        room = self.config.max_size - (parent.size - sub.size)
        target = int(rng.integers(1, room + 1))
        new = ec.ptc2(target, self.config.max_depth - depth, rng, self.terminals, self.functions)
        if new.size > room:
            return None
        return ec.replace_at(parent, path, new)

    def point(self, parent: Node, rng) -> Node | None:
        path, node, _ = self._pick(rng, list(ec.iter_nodes(parent)))
        if node.is_leaf:
            # a const may be redrawn as a fresh const; a var must change index
            choices = [t for t in self.terminals
                       if not (node.op == "var" and t.op == "var" and t.index == node.index)]
            if not choices:
                return None
            new = dc_replace(ec._draw_terminal(rng, choices), weight=node.weight)
        else:
            n = len(node.children)
            choices = [f for f in self.functions if f != node.op and
                       ec.OPS[f].arity <= n <= (ec.OPS[f].max_arity or ec.OPS[f].arity)]
            name = self._pick(rng, choices)
            if name is None:
                return None
            new = dc_replace(node, op=name)
        return ec.replace_at(parent, path, new)

    def delete(self, parent: Node, rng) -> Node | None:
        spots = [(p, n) for p, n, _ in ec.iter_nodes(parent) if not n.is_leaf]
        pick = self._pick(rng, spots)
        if pick is None:
            return None
        path, node = pick
        return ec.replace_at(parent, path, node.children[int(rng.integers(len(node.children)))])

    def insert(self, parent: Node, rng) -> Node | None:
        cfg = self.config
        spots = [(p, n) for p, n, d in ec.iter_nodes(parent) if d + 1 + n.depth <= cfg.max_depth]
        pick = self._pick(rng, spots)
        name = self._pick(rng, list(self.functions))
        if pick is None or name is None:
            return None
        arity = ec.OPS[name].arity
        if parent.size + arity > cfg.max_size:
            return None
        path, node = pick
        kids = [ec._draw_terminal(rng, self.terminals) for _ in range(arity)]
        kids[int(rng.integers(arity))] = node
        return ec.replace_at(parent, path, Node(name, tuple(kids)))

    def apply(self, name: str, parent: Node, other: Node, rng) -> Node | None:
        if name == "crossover":
            return self.crossover(parent, other, rng)
        return getattr(self, name)(parent, rng)

    def vary_one(self, parent: Node, other: Node, rng) -> tuple[Node, bool]:
        """Up to ``variation_tolerance`` attempts; returns ``(child, varied)``."""
        for _ in range(self.config.variation_tolerance):
            name = VARIATIONS[rng.choice(len(VARIATIONS), p=self.op_probs)]
            child = self.apply(name, parent, other, rng)
            if child is not None and self._fits(child):
                return child, True
        if self.config.failure_fallback == "random":
            return self.random_tree(rng), True
        return parent, False


# --- main loop -------------------------------------------------------------


@dataclass(frozen=True)
class GenerationLog:
    generation: int
    best_train_loss: float
    best_val_loss: float
    median_size: float
    median_complexity: float
    n_simplifications: int
    elapsed_ms: float


LOG_COLUMNS = ("generation", "best_train_loss", "best_val_loss", "median_size",
               "median_complexity", "n_simplifications", "elapsed_ms")


@dataclass
class RunResult:
    best: Individual
    population: list[Individual]
    log: list[GenerationLog]
    replacements: list[Replacement]
    simplify_calls: int
    fallback: bool
    table: SimplificationTable | None = field(default=None, repr=False)


class Engine:
    def __init__(self, config: EngineConfig, prob: Problem):
        self.config = config
        self.prob = prob
        self.rng = np.random.default_rng(config.seed)
        self.variator = Variator(config, prob.X.shape[1])
        self.selector = SelectorConfig(kind=config.selection)
        self.table: SimplificationTable | None = None
        if config.simplify.enabled:
            plane_seed = int(self.rng.integers(2**63))
            self.table = init_table(prob.X, config.simplify.hash_bits, plane_seed,
                                    config.simplify.distance_mode)
        self.replacements: list[Replacement] = []
        self.simplify_calls = 0

    def finish(self, tree: Node) -> Individual:
        tree = optimize_params(tree, self.prob.X, self.prob.y, self.config.opt_iters)
        return evaluate_individual(tree, self.prob)

    def simplify(self, ind: Individual, generation: int) -> Individual:
        if self.table is None:
            return ind
        self.simplify_calls += 1
        res = hash_simplify(ind.tree, self.table, self.config.simplify, self.prob.X,
                            self.config.max_depth)
        if not res.replacements:
            return ind
        for r in res.replacements:
            r.generation = generation
        self.replacements.extend(res.replacements)
        return self.finish(res.tree)

    def init_population(self) -> list[Individual]:
        return [self.finish(self.variator.random_tree(self.rng))
                for _ in range(self.config.pop_size)]

    def offspring(self, pop: list[Individual]) -> list[Individual]:
        S = self.config.pop_size
        errors = np.column_stack([ind.errors for ind in pop])
        loss = np.array([ind.train_loss for ind in pop])
        parents = select_many(errors, loss, self.selector, S, self.rng)
        kids = []
        for a, b in zip(parents[::2], parents[1::2]):
            pa, pb = pop[a], pop[b]
            for p, q in ((pa, pb), (pb, pa)):
                child, varied = self.variator.vary_one(p.tree, q.tree, self.rng)
                kids.append(self.finish(child) if varied else p)
        return kids

    def fitness_matrix(self, pop: list[Individual]) -> np.ndarray:
        return np.vstack([ind.fitness(self.config.objectives) for ind in pop])

    def audit(self, pop: list[Individual]) -> None:
        for ind in pop:
            fresh = evaluate_individual(ind.tree, self.prob)
            np.testing.assert_array_equal(fresh.fitness(self.config.objectives),
                                          ind.fitness(self.config.objectives))

    def _log(self, gen, pop, n_simp, t0) -> GenerationLog:
        return GenerationLog(
            gen,
            min(ind.train_loss for ind in pop),
            min(ind.val_loss for ind in pop),
            float(np.median([ind.size for ind in pop])),
            float(np.median([ind.complexity for ind in pop])),
            n_simp,
            (time.perf_counter() - t0) * 1000.0,
        )

    def run(self) -> RunResult:
        cfg = self.config
        t0 = time.perf_counter()
        pop = self.init_population()
        pop = [self.simplify(ind, 0) for ind in pop]
        history = [self._log(0, pop, len(self.replacements), t0)]
        for gen in range(1, cfg.generations + 1):
            before = len(self.replacements)
            kids = [self.simplify(k, gen) for k in self.offspring(pop)]
            pool = pop + kids
            keep = moo.survive(self.fitness_matrix(pool), cfg.pop_size)
            pop = [pool[i] for i in keep]
            if cfg.audit:
                self.audit(pop)
            history.append(self._log(gen, pop, len(self.replacements) - before, t0))
            log.debug("gen %d best %.6g", gen, history[-1].best_train_loss)
        idx, fallback = moo.pick_final([i.val_loss for i in pop], [i.complexity for i in pop],
                                       [i.size for i in pop], [i.train_loss for i in pop])
        return RunResult(pop[idx], pop, history, self.replacements, self.simplify_calls,
                         fallback, self.table)


def run(config: EngineConfig, data: Dataset) -> RunResult:
    """Evolve expressions for the training rows of ``data``.

    Validation rows of ``data`` are used for the final pick; if there are
    none, ``validation_fraction`` of the training rows are held out.
    """
    prob = Problem.from_dataset(data, config.validation_fraction, config.seed)
    return Engine(config, prob).run()
