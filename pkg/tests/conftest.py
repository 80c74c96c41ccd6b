import math
from fractions import Fraction

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def racah_cg(j1, m1, j2, m2, j3, m3):
    """Textbook Racah closed form for <j1 m1 j2 m2 | j3 m3>, written out
    independently of the library (term-by-term, no shared helpers)."""
    if m1 + m2 != m3 or not abs(j1 - j2) <= j3 <= j1 + j2:
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0.0
    f = math.factorial
    delta = Fraction(f(j1 + j2 - j3) * f(j1 - j2 + j3) * f(-j1 + j2 + j3), f(j1 + j2 + j3 + 1))
    norm = (2 * j3 + 1) * delta * f(j1 + m1) * f(j1 - m1) * f(j2 + m2) * f(j2 - m2) * f(j3 + m3) * f(j3 - m3)
    total = Fraction(0)
    for k in range(0, j1 + j2 + j3 + 1):
        args = (k, j1 + j2 - j3 - k, j1 - m1 - k, j2 + m2 - k, j3 - j2 + m1 + k, j3 - j1 - m2 + k)
        if min(args) < 0:
            continue
        den = 1
        for a in args:
            den *= f(a)
        total += Fraction((-1) ** k, den)
    return float(total) * math.sqrt(norm)


def real_change_of_basis(l):
    """Rows: real harmonics m=-l..l; columns: complex harmonics m=-l..l."""
    U = np.zeros((2 * l + 1, 2 * l + 1), dtype=complex)
    for m in range(1, l + 1):
        U[l - m, l - m] = 1j / math.sqrt(2)
        U[l - m, l + m] = -1j * (-1) ** m / math.sqrt(2)
        U[l + m, l - m] = 1 / math.sqrt(2)
        U[l + m, l + m] = (-1) ** m / math.sqrt(2)
    U[l, l] = 1.0
    return U


def real_cg_oracle(l1, l2, l3):
    """Real block [m3, m1, m2] = (-i)^(l1+l2+l3) sum conj(U3) U1 U2 <..|..>."""
    cplx = np.zeros((2 * l3 + 1, 2 * l1 + 1, 2 * l2 + 1))
    for m1 in range(-l1, l1 + 1):
        for m2 in range(-l2, l2 + 1):
            m3 = m1 + m2
            if abs(m3) <= l3:
                cplx[m3 + l3, m1 + l1, m2 + l2] = racah_cg(l1, m1, l2, m2, l3, m3)
    U1, U2, U3 = (real_change_of_basis(l) for l in (l1, l2, l3))
    out = np.zeros(cplx.shape, dtype=complex)
    for a in range(2 * l3 + 1):
        for b in range(2 * l1 + 1):
            for c in range(2 * l2 + 1):
                out[a, b, c] = np.sum(U3[a].conj()[:, None, None] * U1[b][None, :, None]
                                      * U2[c][None, None, :] * cplx)
    out *= (-1j) ** (l1 + l2 + l3)
    assert np.abs(out.imag).max() < 1e-12
    return out.real


# PASS/FAIL lines from the acceptance suite, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
