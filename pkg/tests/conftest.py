import sys

import numpy as np
import pytest

from srlab import exprcore as ec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_tree(seed: int, max_size: int = 30, max_depth: int = 5, n_features: int = 3,
                operators=ec.OPERATORS) -> ec.Node:
    """PTC2 tree with a random mix of enabled and disabled weights."""
    r = np.random.default_rng(seed)
    tree = ec.ptc2(int(r.integers(1, max_size + 1)), max_depth, r,
                   ec.default_terminals(n_features, weight=None), operators)

    def sprinkle(node):
        kids = tuple(sprinkle(c) for c in node.children)
        w = float(r.normal()) if r.random() < 0.5 else None
        return ec.Node(node.op, kids, node.index, node.value, w)

    return sprinkle(tree)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.REPORT):
        terminalreporter.write_line(mod.REPORT[n])
