"""Quadrature rules and cached Beta pdf/cdf tables on fixed nodes.

Posterior parameters stay integral under uniform priors and binary data, so
most densities are evaluated through lookup tables indexed by ``(alpha, beta)``.
Non-integral parameters fall back to direct evaluation.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point Gauss-Legendre rule on (0, 1)."""
    x, w = leggauss(n)
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_legendre_on(a, b, n):
    """Gauss-Legendre rule on (a, b); ``a`` and ``b`` may be arrays (broadcast on the left)."""
    z, w = gauss_legendre(n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    return a + (b - a) * z, (b - a) * w


@lru_cache(maxsize=None)
def uniform_grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed uniform grid on [0, 1] with trapezoid weights."""
    x = np.linspace(0.0, 1.0, n)
    w = np.full(n, 1.0 / (n - 1))
    w[0] = w[-1] = 0.5 / (n - 1)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def nodes_for_degree(degree: int, minimum: int = 32) -> int:
    """Smallest Gauss-Legendre order from a fixed ladder that integrates ``degree`` exactly."""
    need = int(np.ceil((degree + 1) / 2))
    n = minimum
    while n < need:
        n *= 2
    return n


def beta_pdf(x, a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = special.xlogy(a - 1.0, x) + special.xlog1py(b - 1.0, -x) - special.betaln(a, b)
    return np.exp(logp)


def beta_cdf(x, a, b):
    return special.betainc(a, b, np.clip(x, 0.0, 1.0))


def _is_integral(v) -> bool:
    v = np.asarray(v)
    return bool(np.all(v == np.round(v)))


class BetaTable:
    """pdf and cdf of Beta(alpha, beta) on fixed nodes for all integer parameters.

    Rows are indexed by ``n = alpha + beta - 2`` (0..max_n) in triangular order,
    ``row = n (n + 1) / 2 + alpha - 1``.
    """

    def __init__(self, nodes, max_n: int):
        self.nodes = np.asarray(nodes, dtype=float)
        self.max_n = int(max_n)
        n = np.arange(self.max_n + 1)
        alpha = np.concatenate([np.arange(1, k + 2) for k in n]).astype(float)
        total = np.repeat(n + 2, n + 1).astype(float)
        beta = total - alpha
        x = self.nodes[None, :]
        self.pdf_rows = beta_pdf(x, alpha[:, None], beta[:, None])
        self.cdf_rows = beta_cdf(x, alpha[:, None], beta[:, None])

    def rows(self, alpha, beta):
        alpha = np.asarray(alpha)
        beta = np.asarray(beta)
        n = (alpha + beta - 2).astype(np.int64)
        return n * (n + 1) // 2 + alpha.astype(np.int64) - 1

    def covers(self, alpha, beta) -> bool:
        alpha = np.asarray(alpha)
        beta = np.asarray(beta)
        return (
            _is_integral(alpha)
            and _is_integral(beta)
            and bool(np.all(alpha >= 1))
            and bool(np.all(beta >= 1))
            and bool(np.all(alpha + beta - 2 <= self.max_n))
        )

    def pdf(self, alpha, beta):
        if self.covers(alpha, beta):
            return self.pdf_rows[self.rows(alpha, beta)]
        return beta_pdf(self.nodes, np.asarray(alpha, float)[..., None], np.asarray(beta, float)[..., None])

    def cdf(self, alpha, beta):
        if self.covers(alpha, beta):
            return self.cdf_rows[self.rows(alpha, beta)]
        return beta_cdf(self.nodes, np.asarray(alpha, float)[..., None], np.asarray(beta, float)[..., None])


_TABLES: dict = {}


def beta_table(kind: str, size: int, max_n: int) -> BetaTable:
    """Shared table on a ``'gl'`` (Gauss-Legendre) or ``'uniform'`` node set.

    A table covering at least ``max_n`` is reused when one exists; new tables
    are sized up to a multiple of 32 so that slowly growing counts do not
    trigger a rebuild at every step.
    """
    max_n = int(-(-max(int(max_n), 1) // 32) * 32)
    for (k, s, m), table in _TABLES.items():
        if k == kind and s == size and m >= max_n:
            return table
    nodes = gauss_legendre(size)[0] if kind == "gl" else uniform_grid(size)[0]
    table = BetaTable(nodes, max_n)
    _TABLES[(kind, size, max_n)] = table
    return table


def beta_on_nodes(kind, size, alpha, beta, which):
    """pdf or cdf of Beta(alpha, beta) on a ``'gl'`` or ``'uniform'`` node set, shape ``alpha.shape + (size,)``.

    Integer parameters come from the shared tables; anything else is evaluated directly.
    """
    integral = np.all(alpha == np.round(alpha)) and np.all(beta == np.round(beta))
    if integral and alpha.size and np.all(alpha >= 1) and np.all(beta >= 1):
        top = int(np.max(alpha + beta)) - 2
        if top <= 768:
            table = beta_table(kind, size, top)
            return table.pdf(alpha, beta) if which == "pdf" else table.cdf(alpha, beta)
    nodes = gauss_legendre(size)[0] if kind == "gl" else uniform_grid(size)[0]
    fn = beta_pdf if which == "pdf" else beta_cdf
    return fn(nodes, alpha[..., None], beta[..., None])
