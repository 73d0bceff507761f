"""Conjugate posterior engines: Beta, Normal (known variance) and Dirichlet arms.

States are immutable values. ``update`` returns a new state; nothing is
modified in place.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import integrate, special

from .errors import FamilyMismatchError, InvalidSpecError
from .quadrature import beta_cdf, beta_pdf, uniform_grid

# Cell order of a co-primary outcome y = (y1, y2).
CELLS = ((1, 1), (1, 0), (0, 1), (0, 0))
CELL_INDEX = {c: i for i, c in enumerate(CELLS)}


@dataclass(frozen=True)
class BetaArm:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise InvalidSpecError(f"Beta parameters must be positive, got ({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def variance(self) -> float:
        s = self.alpha + self.beta
        return self.alpha * self.beta / (s * s * (s + 1.0))


@dataclass(frozen=True)
class NormalArm:
    """Normal mean with a N(0, prior_var) prior and known outcome variance."""

    prior_var: float = 1.0
    outcome_var: float = 1.0
    n: int = 0
    sum_y: float = 0.0

    def __post_init__(self):
        if not (self.prior_var > 0 and self.outcome_var > 0):
            raise InvalidSpecError("Normal arm variances must be positive")

    @property
    def precision(self) -> float:
        return 1.0 / self.prior_var + self.n / self.outcome_var

    @property
    def variance(self) -> float:
        return 1.0 / self.precision

    @property
    def mean(self) -> float:
        return (self.sum_y / self.outcome_var) / self.precision


@dataclass(frozen=True)
class DirichletArm:
    """Dirichlet over the four cells of two binary endpoints, ordered as ``CELLS``."""

    counts: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        c = tuple(float(v) for v in self.counts)
        if len(c) != 4 or min(c) <= 0:
            raise InvalidSpecError(f"Dirichlet arm needs four positive counts, got {self.counts}")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> float:
        return sum(self.counts)

    @property
    def marginal_params(self):
        """Beta parameters of the two endpoint marginals (nu_1, nu_2)."""
        c11, c10, c01, c00 = self.counts
        return (c11 + c10, c01 + c00), (c11 + c01, c10 + c00)


PosteriorState = Union[BetaArm, NormalArm, DirichletArm]


def update(state: PosteriorState, outcome) -> PosteriorState:
    """Conjugate update of one arm with one outcome."""
    if isinstance(state, BetaArm):
        if isinstance(outcome, (bool, np.bool_)) or outcome in (0, 1):
            y = int(outcome)
            return BetaArm(state.alpha + y, state.beta + 1 - y)
        raise FamilyMismatchError(f"Beta arm expects a binary outcome, got {outcome!r}")
    if isinstance(state, NormalArm):
        if isinstance(outcome, (tuple, list, np.ndarray)) or isinstance(outcome, (bool, np.bool_)):
            raise FamilyMismatchError(f"Normal arm expects a real outcome, got {outcome!r}")
        return NormalArm(state.prior_var, state.outcome_var, state.n + 1, state.sum_y + float(outcome))
    if isinstance(state, DirichletArm):
        key = tuple(int(v) for v in outcome) if isinstance(outcome, (tuple, list, np.ndarray)) else None
        if key not in CELL_INDEX:
            raise FamilyMismatchError(f"Dirichlet arm expects a cell in {{0,1}}^2, got {outcome!r}")
        counts = list(state.counts)
        counts[CELL_INDEX[key]] += 1.0
        return DirichletArm(tuple(counts))
    raise FamilyMismatchError(f"unknown posterior family {type(state).__name__}")


def posterior_variance(state: PosteriorState) -> float:
    """Posterior variance of the arm mean (for a Dirichlet arm, of the both-endpoints cell)."""
    if isinstance(state, (BetaArm, NormalArm)):
        return state.variance
    if isinstance(state, DirichletArm):
        a = state.counts[0]
        return BetaArm(a, state.total - a).variance
    raise FamilyMismatchError(f"unknown posterior family {type(state).__name__}")


def beta_var(alpha, beta):
    """Vectorised Beta variance."""
    s = alpha + beta
    return alpha * beta / (s * s * (s + 1.0))


def _integral(*values) -> bool:
    return all(float(v).is_integer() for v in values)


def prob_greater_exact(a: BetaArm, b: BetaArm) -> float:
    """P(theta_a > theta_b) by the finite-sum formula; needs integer ``a.alpha``."""
    a1, b1, a2, b2 = a.alpha, a.beta, b.alpha, b.beta
    i = np.arange(int(a1), dtype=float)
    logs = (
        special.betaln(a2 + i, b1 + b2)
        - np.log(b1 + i)
        - special.betaln(1.0 + i, b1)
        - special.betaln(a2, b2)
    )
    return float(np.exp(logs).sum())


def prob_greater_quad(a: BetaArm, b: BetaArm) -> float:
    """P(theta_a > theta_b) by adaptive quadrature of f_b(x) (1 - F_a(x))."""

    def integrand(x):
        return beta_pdf(x, b.alpha, b.beta) * special.betaincc(a.alpha, a.beta, x)

    # splitting at the modes keeps the adaptive rule from stepping over narrow peaks
    pts = sorted({min(max(s.mean, 1e-6), 1 - 1e-6) for s in (a, b)})
    val, _ = integrate.quad(integrand, 0.0, 1.0, points=pts, epsabs=1e-13, epsrel=1e-12, limit=400)
    return float(val)


def prob_greater(a: BetaArm, b: BetaArm) -> float:
    """P(theta_a > theta_b) for independent Beta posteriors."""
    if _integral(a.alpha, a.beta, b.alpha, b.beta):
        return prob_greater_exact(a, b)
    return prob_greater_quad(a, b)


def best_arm_density(states: Sequence[BetaArm], x):
    """Density of max_a theta_a at ``x``: sum_a pdf_a(x) prod_{j != a} cdf_j(x)."""
    x = np.asarray(x, dtype=float)
    alpha = np.array([s.alpha for s in states])
    beta = np.array([s.beta for s in states])
    pdf = beta_pdf(x[..., None], alpha, beta)
    cdf = beta_cdf(x[..., None], alpha, beta)
    return max_density(pdf, cdf)


def max_density(pdf, cdf):
    """sum_a pdf_a prod_{j != a} cdf_j along the last axis, without division."""
    k = pdf.shape[-1]
    ones = np.ones(pdf.shape[:-1] + (1,))
    left = np.concatenate([ones, np.cumprod(cdf[..., :-1], axis=-1)], axis=-1)
    right = np.concatenate([np.cumprod(cdf[..., :0:-1], axis=-1)[..., ::-1], ones], axis=-1)
    if k == 1:
        return pdf[..., 0]
    return np.sum(pdf * left * right, axis=-1)


def best_arm_density_grid(states: Sequence[BetaArm], n_grid: int = 1024):
    """Best-arm density on the closed uniform grid, plus trapezoid weights."""
    x, w = uniform_grid(n_grid)
    return x, best_arm_density(states, x), w


@dataclass(frozen=True)
class DirichletSummary:
    nu1: float
    nu2: float
    draws: int = 0
    seed: int | None = None
    effects: dict = field(default_factory=dict)


def dirichlet_marginals(
    state: DirichletArm,
    control: DirichletArm | None = None,
    draws: int = 4096,
    seed: int = 0,
) -> DirichletSummary:
    """Posterior means of the endpoint marginals and, against a control, effect moments.

    Effect moments and indicator probabilities are Monte Carlo estimates with
    ``draws`` samples from a generator seeded with ``seed``.
    """
    c = np.asarray(state.counts)
    tot = c.sum()
    nu1 = (c[0] + c[1]) / tot
    nu2 = (c[0] + c[2]) / tot
    if control is None:
        return DirichletSummary(float(nu1), float(nu2))
    rng = np.random.default_rng(seed)
    th_a = rng.dirichlet(c, size=draws)
    th_0 = rng.dirichlet(np.asarray(control.counts), size=draws)
    g1 = (th_a[:, 0] + th_a[:, 1]) - (th_0[:, 0] + th_0[:, 1])
    g2 = (th_a[:, 0] + th_a[:, 2]) - (th_0[:, 0] + th_0[:, 2])
    gb = th_a[:, 0] - th_0[:, 0]
    e1 = g1 > 0
    e2 = g2 > 0
    effects = {
        "gamma1_mean": float(g1.mean()),
        "gamma1_var": float(g1.var(ddof=1)),
        "gamma2_mean": float(g2.mean()),
        "gamma2_var": float(g2.var(ddof=1)),
        "gamma_both_mean": float(gb.mean()),
        "gamma_both_var": float(gb.var(ddof=1)),
        "p_E1": float(e1.mean()),
        "p_E2": float(e2.mean()),
        "p_E": float((e1 & e2).mean()),
    }
    return DirichletSummary(float(nu1), float(nu2), draws, seed, effects)


@dataclass(frozen=True)
class TrialHistory:
    """Accumulated trial data: per-arm posterior states and assignment counts."""

    states: tuple
    assignment_counts: tuple = ()

    def __post_init__(self):
        states = tuple(self.states)
        counts = tuple(int(c) for c in self.assignment_counts) or (0,) * len(states)
        if len(counts) != len(states):
            raise InvalidSpecError("one assignment count per arm is required")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "assignment_counts", counts)

    @classmethod
    def fresh(cls, prior: PosteriorState, n_arms: int) -> "TrialHistory":
        return cls((prior,) * n_arms)

    @property
    def t(self) -> int:
        return sum(self.assignment_counts)

    @property
    def n_arms(self) -> int:
        return len(self.states)

    @property
    def allocation_props(self) -> np.ndarray:
        counts = np.asarray(self.assignment_counts, dtype=float)
        if counts.sum() == 0:
            return np.zeros_like(counts)
        return counts / counts.sum()

    def record(self, arm: int, outcome) -> "TrialHistory":
        states = list(self.states)
        states[arm] = update(states[arm], outcome)
        counts = list(self.assignment_counts)
        counts[arm] += 1
        return TrialHistory(tuple(states), tuple(counts))

    def replace_arm(self, arm: int, state: PosteriorState) -> "TrialHistory":
        states = list(self.states)
        states[arm] = state
        return TrialHistory(tuple(states), self.assignment_counts)

    @property
    def family(self) -> str:
        kinds = {type(s) for s in self.states}
        if len(kinds) != 1:
            raise FamilyMismatchError("mixed posterior families in one history")
        return {BetaArm: "beta", NormalArm: "normal", DirichletArm: "dirichlet"}[kinds.pop()]

    def beta_arrays(self):
        if self.family != "beta":
            raise FamilyMismatchError("history does not hold Beta arms")
        return (
            np.array([s.alpha for s in self.states], dtype=float),
            np.array([s.beta for s in self.states], dtype=float),
        )

    def dirichlet_counts(self):
        if self.family != "dirichlet":
            raise FamilyMismatchError("history does not hold Dirichlet arms")
        return np.array([s.counts for s in self.states], dtype=float)

    def normal_arrays(self):
        if self.family != "normal":
            raise FamilyMismatchError("history does not hold Normal arms")
        return (
            np.array([s.prior_var for s in self.states], dtype=float),
            np.array([s.outcome_var for s in self.states], dtype=float),
            np.array([s.n for s in self.states], dtype=float),
            np.array([s.sum_y for s in self.states], dtype=float),
        )


def entropy_on_grid(density, weights):
    """-int p log p by the quadrature ``weights`` along the last axis."""
    return -np.sum(weights * special.xlogy(density, density), axis=-1)


__all__ = [
    "CELLS",
    "BetaArm",
    "NormalArm",
    "DirichletArm",
    "TrialHistory",
    "update",
    "posterior_variance",
    "prob_greater",
    "prob_greater_exact",
    "prob_greater_quad",
    "best_arm_density",
    "best_arm_density_grid",
    "max_density",
    "dirichlet_marginals",
    "beta_var",
    "entropy_on_grid",
]
