"""Independent oracles shared across the test modules.

These are written from the textbook formulas with explicit loops so they share
no code with the package implementation.
"""

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "freqalign", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("freqalign")


def dct_direct(x):
    """Orthonormal DCT-II along axis 0 by O(N^2) summation."""
    x = np.asarray(x, dtype=np.float64)
    N = x.shape[0]
    out = np.zeros_like(x)
    for k in range(N):
        s = math.sqrt(1.0 / N) if k == 0 else math.sqrt(2.0 / N)
        acc = np.zeros(x.shape[1:])
        for n in range(N):
            acc = acc + x[n] * math.cos(math.pi * (n + 0.5) * k / N)
        out[k] = s * acc
    return out


def idct_direct(c):
    c = np.asarray(c, dtype=np.float64)
    N = c.shape[0]
    out = np.zeros_like(c)
    for n in range(N):
        acc = np.zeros(c.shape[1:])
        for k in range(N):
            s = math.sqrt(1.0 / N) if k == 0 else math.sqrt(2.0 / N)
            acc = acc + s * c[k] * math.cos(math.pi * (n + 0.5) * k / N)
        out[n] = acc
    return out


def dct2_direct(plane):
    """2-D orthonormal DCT-II by quadruple summation over an H x W plane."""
    plane = np.asarray(plane, dtype=np.float64)
    H, W = plane.shape
    out = np.zeros((H, W))
    for u in range(H):
        su = math.sqrt((1.0 if u == 0 else 2.0) / H)
        for v in range(W):
            sv = math.sqrt((1.0 if v == 0 else 2.0) / W)
            acc = 0.0
            for i in range(H):
                for j in range(W):
                    acc += plane[i, j] * math.cos(math.pi * (i + 0.5) * u / H) * math.cos(math.pi * (j + 0.5) * v / W)
            out[u, v] = su * sv * acc
    return out


def idct2_direct(coeffs):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    H, W = coeffs.shape
    out = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            acc = 0.0
            for u in range(H):
                su = math.sqrt((1.0 if u == 0 else 2.0) / H)
                for v in range(W):
                    sv = math.sqrt((1.0 if v == 0 else 2.0) / W)
                    acc += su * sv * coeffs[u, v] * math.cos(math.pi * (i + 0.5) * u / H) * math.cos(math.pi * (j + 0.5) * v / W)
            out[i, j] = acc
    return out


def sinkhorn_fixed_point(cost, lam, iters=10_000):
    """Plain (non-log) alternating scaling toward uniform marginals."""
    n, m = cost.shape
    K = np.exp(-cost / lam)
    u = np.ones(n)
    v = np.ones(m)
    for _ in range(iters):
        u = (1.0 / n) / (K @ v)
        v = (1.0 / m) / (K.T @ u)
    return u[:, None] * K * v[None, :]


def cosine_cost_naive(src, tgt):
    C = np.zeros((len(src), len(tgt)))
    for a, x in enumerate(src):
        for b, y in enumerate(tgt):
            C[a, b] = 1.0 - float(np.dot(x / np.linalg.norm(x), y / np.linalg.norm(y)))
    return C


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
