import numpy as np
import pytest

from activemc.smg import ObservationSet, SMGModel


def dense_kron(model):
    """``kron(P_V, P_U)`` with entry ``(i, j)`` at column-major position ``j * m1 + i``."""
    return np.kron(model.pv, model.pu)


def vec_pos(indices, m1):
    idx = np.asarray(indices).reshape(-1, 2)
    return idx[:, 1] * m1 + idx[:, 0]


def random_instance(rng, m1=None, m2=None, rank=None, n=None, eta2=None, sigma2=None):
    m1 = m1 or int(rng.integers(3, 9))
    m2 = m2 or int(rng.integers(3, 9))
    rank = rank or int(rng.integers(1, min(3, min(m1, m2) - 1) + 1))
    sigma2 = sigma2 or float(rng.uniform(0.5, 2.0))
    model = SMGModel.random(m1, m2, rank, sigma2, rng)
    n = int(rng.integers(0, 11)) if n is None else n
    n = min(n, m1 * m2 - 2)
    flat = rng.choice(m1 * m2, size=n, replace=False)
    idx = np.column_stack(np.unravel_index(flat, (m1, m2)))
    eta2 = float(10 ** rng.uniform(-4, -1)) if eta2 is None else eta2
    obs = ObservationSet(idx, rng.standard_normal(n), eta2, (m1, m2))
    return model, obs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_acceptance(criterion, passed, detail):
    """Store one pass/fail line; printed in the terminal summary and to stdout."""
    line = f"[criterion {criterion:>2}] {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
