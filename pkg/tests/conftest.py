import itertools
import math

import numpy as np
import pytest


def leibniz_det(m) -> float:
    """Determinant by the permutation expansion (small matrices only)."""
    n = len(m)
    total = 0.0
    for perm in itertools.permutations(range(n)):
        inversions = sum(1 for a in range(n) for b in range(a + 1, n) if perm[a] > perm[b])
        term = 1.0
        for i, j in enumerate(perm):
            term *= m[i][j]
        total += -term if inversions % 2 else term
    return total


def adjugate_inverse(m) -> np.ndarray:
    n = len(m)
    det = leibniz_det(m)
    inv = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            minor = [[m[r][c] for c in range(n) if c != j] for r in range(n) if r != i]
            inv[j, i] = (-1) ** (i + j) * leibniz_det(minor) / det
    return inv


def random_spd(rng: np.random.Generator, n: int, cond: float = 10.0) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = np.geomspace(1.0, cond, n)
    m = (q * eig) @ q.T
    return 0.5 * (m + m.T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def log_normal_pdf(x, mu, sd) -> float:
    return -0.5 * ((x - mu) / sd) ** 2 - math.log(sd) - 0.5 * math.log(2 * math.pi)


# Outcome per acceptance criterion: number -> (passed, detail).
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}")
