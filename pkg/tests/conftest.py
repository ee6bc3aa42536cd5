import sys

import numpy as np
import pytest

from opmix.operator import OperatorError, OperatorSpec, factorize

K1_BCS = [((0,), (1,)), ((0,), (0,)), ((1,), (0,)), ((1,), (1,))]
K2_BCS_A = [(0, 1), (0, 2), (3, 1), (3, 2)]


def random_operator(rng, k=None):
    """A random regular operator L = sum K_l^dagger K_l with k <= 2 and admissible conditions."""
    k = k or int(rng.integers(1, 3))
    if k == 1:
        pens = [(rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0) * rng.choice([-1, 1]))]
        bc_a, bc_b = K1_BCS[rng.integers(len(K1_BCS))]
    else:
        pens = [(rng.uniform(0.2, 1.5), rng.uniform(-1, 1), rng.uniform(0.3, 1.5))]
        if rng.random() < 0.5:
            pens.append((0.0, rng.uniform(0.2, 1.0)))
        bc_a = K2_BCS_A[rng.integers(4)]
        bc_b = K2_BCS_A[rng.integers(4)]
    return OperatorSpec(tuple(pens), bc_a, bc_b)


def random_factorization(rng, k=None, max_rate=30.0, v_range=(0.05, 1.0), d_range=(0.05, 1.0)):
    """Draw until factorize succeeds and |Re eta| (b - a) stays below max_rate."""
    for _ in range(1000):
        op = random_operator(rng, k)
        a = rng.uniform(-1, 0.5)
        b = a + rng.uniform(0.5, 2.0)
        try:
            fac = factorize(op, rng.uniform(*v_range), rng.uniform(*d_range), a, b)
        except OperatorError:
            continue
        if np.max(np.abs(fac.eta.real)) * max(abs(a), abs(b), b - a) <= max_rate:
            return fac
    raise RuntimeError("no admissible operator drawn")


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


def pytest_terminal_summary(terminalreporter):
    for name, module in list(sys.modules.items()):
        if name.endswith("test_acceptance") and getattr(module, "RESULTS", None):
            terminalreporter.section("acceptance criteria")
            for line in module.RESULTS:
                terminalreporter.write_line(line)
