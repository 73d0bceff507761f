"""Exact finite-horizon dynamic programming over trial states.

A trial state is the tuple of per-arm sufficient statistics (outcome counts).
States are enumerated stage by stage; arms that are exchangeable (same prior,
symmetric utility) are stored in sorted order so that permuted states share
one entry. Each stage is a sorted array of integer keys, children are located
with ``searchsorted``, and the backward pass keeps only two stages of values.

The module also provides exact evaluation of any Markov assignment policy on
the same lattice, a brute-force path enumerator for tiny horizons, the
fixed-allocation oracle for known response rates, and the asymptotic
allocation limit of the uncertainty-directed rule.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from math import comb, factorial
from typing import Callable

import numpy as np
from scipy import special, stats

from .errors import InvalidSpecError, LatticeTooLargeError
from .metrics import (
    AsymEntropyCoprimary,
    MetricSpec,
    asym_entropy,
    build_metric,
)
from .policies import (
    PolicySpec,
    binary_policy_probabilities,
    bud_probabilities,
    myopic_probabilities,
    uniform_probabilities,
)
from .posteriors import BetaArm, beta_var, prob_greater_exact
from .quadrature import gauss_legendre

DEFAULT_BUDGET = 60_000_000
CHUNK = 50_000
UTILITY_CHUNK = 4096


# ---------------------------------------------------------------------------
# per-arm statistics
# ---------------------------------------------------------------------------


@dataclass
class ArmSpace:
    """All per-arm count vectors with total at most ``horizon``.

    ``counts[c]`` are the observed counts of code ``c``; ``child[c, y]`` is the
    code after one more outcome ``y`` (-1 past the horizon); ``pred[c, y]`` is
    the posterior predictive probability of outcome ``y``.
    """

    prior: np.ndarray
    horizon: int
    counts: np.ndarray
    child: np.ndarray
    pred: np.ndarray
    lookup: np.ndarray

    @property
    def n_outcomes(self) -> int:
        return self.prior.size

    @property
    def size(self) -> int:
        return self.counts.shape[0]

    @classmethod
    def build(cls, prior, horizon: int) -> "ArmSpace":
        prior = np.asarray(prior, dtype=float)
        o = prior.size
        rows = [c for n in range(horizon + 1) for c in _compositions(n, o)]
        counts = np.array(rows, dtype=np.int64).reshape(-1, o)
        lookup = np.full((horizon + 2,) * o, -1, dtype=np.int64)
        lookup[tuple(counts.T)] = np.arange(len(counts))
        child = np.full((len(counts), o), -1, dtype=np.int64)
        for y in range(o):
            nxt = counts.copy()
            nxt[:, y] += 1
            ok = nxt.sum(axis=1) <= horizon
            child[ok, y] = lookup[tuple(nxt[ok].T)]
        post = prior + counts
        pred = post / post.sum(axis=1, keepdims=True)
        return cls(prior, horizon, counts, child, pred, lookup)

    def params(self, codes):
        """Posterior parameters ``(..., A, O)`` for an array of codes."""
        return self.prior + self.counts[codes]

    def code_of(self, params):
        """Codes of posterior parameters ``(..., O)`` (inverse of ``params``)."""
        obs = np.rint(np.asarray(params) - self.prior).astype(np.int64)
        return self.lookup[tuple(np.moveaxis(obs, -1, 0))]


def _compositions(n: int, parts: int):
    """Count vectors of length ``parts`` summing to ``n``, in lexicographic order."""
    if parts == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(n - first, parts - 1):
            yield (first,) + rest


# ---------------------------------------------------------------------------
# lattice
# ---------------------------------------------------------------------------


def estimate_states(n_arms: int, n_outcomes: int, T: int, exchangeable: int) -> int:
    """Approximate number of canonical states over all stages."""
    cells = n_arms * n_outcomes
    total = comb(T + cells, cells)  # sum over t <= T of C(t + cells - 1, cells - 1)
    return int(total // factorial(max(exchangeable, 1)))


@dataclass
class Lattice:
    space: ArmSpace
    n_arms: int
    T: int
    free_from: int
    keys: list = field(default_factory=list)
    codes: list = field(default_factory=list)

    @property
    def n_states(self) -> int:
        return int(sum(len(k) for k in self.keys))

    def canonical(self, codes):
        if self.n_arms - self.free_from > 1:
            codes = codes.copy()
            codes[:, self.free_from:] = np.sort(codes[:, self.free_from:], axis=1)
        return codes

    def key(self, codes):
        radix = np.int64(self.space.size)
        k = np.zeros(codes.shape[0], dtype=np.int64)
        for i in range(self.n_arms - 1, -1, -1):
            k = k * radix + codes[:, i]
        return k

    def child_codes(self, codes, arm: int, outcome: int):
        nxt = codes.copy()
        nxt[:, arm] = self.space.child[codes[:, arm], outcome]
        return self.canonical(nxt)

    def locate(self, t: int, codes):
        """Indices of (canonical) ``codes`` in stage ``t``."""
        keys = self.keys[t]
        k = self.key(codes)
        idx = np.searchsorted(keys, k)
        return idx

    def params(self, t: int, sl=slice(None)):
        return self.space.params(self.codes[t][sl])


def build_lattice(prior, n_arms: int, T: int, free_from: int = 0, budget: int = DEFAULT_BUDGET) -> Lattice:
    """Enumerate every reachable state for ``T`` patients.

    Arms ``free_from, ..., n_arms - 1`` are exchangeable and stored sorted.
    Raises LatticeTooLargeError when the state count would exceed ``budget``.
    """
    if T < 0 or n_arms < 1:
        raise InvalidSpecError("need T >= 0 and at least one arm")
    space = ArmSpace.build(prior, T)
    if float(space.size) ** n_arms >= 2.0**62:
        raise LatticeTooLargeError(estimate_states(n_arms, space.n_outcomes, T, n_arms - free_from), budget)
    est = estimate_states(n_arms, space.n_outcomes, T, n_arms - free_from)
    if est > budget:
        raise LatticeTooLargeError(est, budget)
    lat = Lattice(space, n_arms, T, free_from)
    codes = np.zeros((1, n_arms), dtype=np.int64)
    lat.codes.append(codes)
    lat.keys.append(lat.key(codes))
    total = 1
    for _ in range(T):
        kids = [lat.child_codes(codes, a, y) for a in range(n_arms) for y in range(space.n_outcomes)]
        kids = np.concatenate(kids)
        keys, first = np.unique(lat.key(kids), return_index=True)
        codes = kids[first]
        total += len(keys)
        if total > budget:
            raise LatticeTooLargeError(total, budget)
        lat.codes.append(codes)
        lat.keys.append(keys)
    return lat


# ---------------------------------------------------------------------------
# utilities on the lattice
# ---------------------------------------------------------------------------


class StageUtility:
    """u evaluated on whole stages, computed in chunks and memoised per stage."""

    def __init__(self, lattice: Lattice, fn: Callable):
        self.lattice = lattice
        self.fn = fn
        self._cache = {}

    def __call__(self, t: int):
        if t not in self._cache:
            n = len(self.lattice.keys[t])
            out = np.empty(n)
            for s in range(0, n, UTILITY_CHUNK):
                sl = slice(s, min(s + UTILITY_CHUNK, n))
                out[sl] = self.fn(self.lattice.params(t, sl))
            self._cache[t] = out
        return self._cache[t]

    def drop(self, t: int):
        self._cache.pop(t, None)


def binary_utility(metric) -> Callable:
    """Adapter: ``params (N, A, 2)`` -> ``metric.raw(alpha, beta)``."""
    return lambda p: metric.raw(p[..., 0], p[..., 1])


@dataclass
class BIResult:
    root_value: float
    values: list | None = None
    first_action_values: np.ndarray | None = None


def backward_induction(lattice: Lattice, utility: StageUtility, keep_values: bool = False) -> BIResult:
    """Optimal expected terminal utility: V_T = u, V_t = max_a E[V_{t+1} | a]."""
    T = lattice.T
    v_next = utility(T)
    stored = [None] * (T + 1)
    if keep_values:
        stored[T] = v_next
    q_root = None
    for t in range(T - 1, -1, -1):
        codes = lattice.codes[t]
        q = _q_values(lattice, t, codes, v_next)
        if t == 0:
            q_root = q[0]
        v_next = q.max(axis=1)
        if keep_values:
            stored[t] = v_next
        utility.drop(t + 1)
    root = float(v_next[0]) if T > 0 else float(utility(0)[0])
    return BIResult(root, stored if keep_values else None, q_root)


def _q_values(lattice: Lattice, t: int, codes, v_next):
    """E[V_{t+1} | state, arm] for every state of stage ``t``, ``(N, A)``."""
    sp = lattice.space
    q = np.zeros((codes.shape[0], lattice.n_arms))
    for a in range(lattice.n_arms):
        for y in range(sp.n_outcomes):
            idx = lattice.locate(t + 1, lattice.child_codes(codes, a, y))
            q[:, a] += sp.pred[codes[:, a], y] * v_next[idx]
    return q


def q_values(lattice: Lattice, t: int, values_next):
    """Public form of the one-step lookahead used by the Bellman check."""
    return _q_values(lattice, t, lattice.codes[t], values_next)


def myopic_gains(lattice: Lattice, utility: StageUtility, t: int, sl=slice(None)):
    """E[u(child) | a] - u(state) for states of stage ``t``, ``(N, A)``."""
    codes = lattice.codes[t][sl]
    return _q_values(lattice, t, codes, utility(t + 1)) - utility(t)[sl][:, None]


def evaluate_policy(lattice: Lattice, utility: StageUtility, probabilities: Callable) -> float:
    """Exact expected terminal utility of a Markov policy.

    ``probabilities(t, sl)`` returns assignment probabilities ``(N, A)`` for the
    states ``lattice.codes[t][sl]``.
    """
    T = lattice.T
    sp = lattice.space
    mass = np.ones(1)
    for t in range(T):
        codes = lattice.codes[t]
        nxt = np.zeros(len(lattice.keys[t + 1]))
        for s in range(0, len(codes), CHUNK):
            sl = slice(s, min(s + CHUNK, len(codes)))
            c = codes[sl]
            p = probabilities(t, sl)
            for a in range(lattice.n_arms):
                for y in range(sp.n_outcomes):
                    idx = lattice.locate(t + 1, lattice.child_codes(c, a, y))
                    w = mass[sl] * p[:, a] * sp.pred[c[:, a], y]
                    nxt += np.bincount(idx, weights=w, minlength=nxt.size)
        mass = nxt
    return float(np.dot(mass, utility(T)))


def policy_probabilities(lattice: Lattice, utility: StageUtility, spec: PolicySpec, prior=(1.0, 1.0)) -> Callable:
    """Assignment probabilities on the lattice for a PolicySpec.

    Uncertainty-directed policies use the lattice utility for gains unless the
    design carries its own metric. Other policies need binary arms.
    """
    T = lattice.T
    family = "binary" if lattice.space.n_outcomes == 2 else "dirichlet"
    own = None if spec.metric is None else build_metric(spec.metric, family, tuple(lattice.space.prior))

    def fn(t, sl):
        if spec.kind in ("BUD", "Myopic"):
            if own is None:
                g = np.maximum(myopic_gains(lattice, utility, t, sl), 0.0)
            else:
                par = lattice.params(t, sl)
                g = own.gains(par[..., 0], par[..., 1]) if family == "binary" else own.gains(par)
            return bud_probabilities(g, spec.h(t, T)) if spec.kind == "BUD" else myopic_probabilities(g)
        if spec.kind == "BR":
            return uniform_probabilities((len(lattice.codes[t][sl]), lattice.n_arms))
        if lattice.space.n_outcomes != 2:
            raise InvalidSpecError(f"policy {spec.kind} needs binary arms")
        par = lattice.params(t, sl)
        return binary_policy_probabilities(spec, par[..., 0], par[..., 1], t, T, prior)

    return fn


# ---------------------------------------------------------------------------
# brute force (tiny horizons)
# ---------------------------------------------------------------------------


def brute_force_value(prior, n_arms: int, T: int, utility: Callable) -> float:
    """Optimal value by enumerating every action/outcome path, no state sharing.

    ``utility`` takes posterior parameters ``(1, A, O)``.
    """
    prior = np.asarray(prior, dtype=float)
    o = prior.size

    def rec(state, left):
        if left == 0:
            return float(np.asarray(utility(state[None]))[0])
        best = -np.inf
        for a in range(n_arms):
            tot = state[a].sum()
            v = 0.0
            for y in range(o):
                nxt = state.copy()
                nxt[a, y] += 1
                v += state[a, y] / tot * rec(nxt, left - 1)
            best = max(best, v)
        return best

    return rec(np.tile(prior, (n_arms, 1)), T)


def brute_force_policy_value(prior, n_arms: int, T: int, utility: Callable, probabilities: Callable) -> float:
    """Expected utility of a policy by full path enumeration; ``probabilities(params (1,A,O), t)``."""
    prior = np.asarray(prior, dtype=float)
    o = prior.size

    def rec(state, t):
        if t == T:
            return float(np.asarray(utility(state[None]))[0])
        p = np.asarray(probabilities(state[None], t))[0]
        v = 0.0
        for a in range(n_arms):
            if p[a] == 0:
                continue
            tot = state[a].sum()
            for y in range(o):
                nxt = state.copy()
                nxt[a, y] += 1
                v += p[a] * state[a, y] / tot * rec(nxt, t + 1)
        return v

    return rec(np.tile(prior, (n_arms, 1)), 0)


# ---------------------------------------------------------------------------
# best-arm regret study
# ---------------------------------------------------------------------------


@dataclass
class RegretTable:
    T: int
    optimal: float
    prior_value: float
    designs: dict

    def regret(self) -> dict:
        return {k: self.optimal - v for k, v in self.designs.items()}

    def rows(self):
        for k, v in self.designs.items():
            yield {"T": self.T, "design": k, "value": v, "regret": self.optimal - v}


def solve_binary(metric_spec: MetricSpec, n_arms: int, T: int, designs=(), prior=(1.0, 1.0),
                 budget: int = DEFAULT_BUDGET) -> RegretTable:
    """Backward induction plus exact evaluation of each design on binary arms.

    With a control (``metric_spec.control``) arm 0 is kept apart; otherwise all
    arms are exchangeable.
    """
    metric = build_metric(metric_spec, "binary", prior)
    lat = build_lattice(prior, n_arms, T, free_from=1 if metric.needs_control else 0, budget=budget)
    util = StageUtility(lat, binary_utility(metric))
    out = {}
    for spec in designs:
        out[spec.label] = evaluate_policy(lat, util, policy_probabilities(lat, util, spec, prior))
    root = backward_induction(lat, util).root_value
    prior_value = float(metric.raw(*metric.prior_state(n_arms)))
    return RegretTable(T, root, prior_value, out)


def regret(design_value: float, optimal_value: float, se: float = 0.0) -> float:
    """optimal - design, clamped at 0 when the shortfall is within 3 standard errors of noise."""
    d = float(optimal_value - design_value)
    if d < 0 and d > -3.0 * se - 1e-12:
        return 0.0
    return d


# ---------------------------------------------------------------------------
# fixed-allocation oracle
# ---------------------------------------------------------------------------


def expected_posterior_variance(n: int, theta: float, prior=(1.0, 1.0)) -> float:
    """E[Var(theta | s)] for s ~ Binomial(n, theta) under a Beta prior."""
    s = np.arange(n + 1)
    w = stats.binom.pmf(s, n, theta)
    return float(np.sum(w * beta_var(prior[0] + s, prior[1] + n - s)))


def oracle_allocation(theta, prior=(1.0, 1.0), T: int = 0, control: bool = True):
    """Best fixed allocation for known rates under the variance-sum utility.

    The expected utility separates over arms, so an exact knapsack over arms
    solves it. Returns ``(allocation, value)`` with ``value`` on the raw
    utility scale (not offset by the prior value).
    """
    theta = np.asarray(theta, dtype=float)
    n_arms = theta.size
    w = np.ones(n_arms)
    if control:
        w[0] = n_arms - 1
    f = np.array([[-w[a] * expected_posterior_variance(n, theta[a], prior) for n in range(T + 1)] for a in range(n_arms)])
    best = f[0].copy()
    choice = [np.zeros(T + 1, dtype=np.int64)]
    for a in range(1, n_arms):
        nb = np.full(T + 1, -np.inf)
        ch = np.zeros(T + 1, dtype=np.int64)
        for total in range(T + 1):
            cand = best[: total + 1][::-1] + f[a, : total + 1]
            k = int(np.argmax(cand))
            nb[total] = cand[k]
            ch[total] = k
        best = nb
        choice.append(ch)
    alloc = np.zeros(n_arms, dtype=np.int64)
    left = T
    for a in range(n_arms - 1, 0, -1):
        alloc[a] = choice[a][left]
        left -= alloc[a]
    alloc[0] = left
    return alloc, float(best[T])


def allocation_value(theta, alloc, prior=(1.0, 1.0), control: bool = True) -> float:
    """Expected variance-sum utility of a fixed allocation, by enumerating all outcome tuples."""
    theta = np.asarray(theta, dtype=float)
    alloc = [int(n) for n in alloc]
    w = np.ones(theta.size)
    if control:
        w[0] = theta.size - 1
    total = 0.0
    for s in product(*(range(n + 1) for n in alloc)):
        p = np.prod([stats.binom.pmf(si, n, th) for si, n, th in zip(s, alloc, theta)])
        v = -sum(w[a] * beta_var(prior[0] + s[a], prior[1] + alloc[a] - s[a]) for a in range(theta.size))
        total += p * v
    return float(total)


def asymptotic_limit(sigmas, h: float):
    """Limit allocation proportions rho_a proportional to sigma_a^(2h / (1 + 2h)); h=inf gives Neyman."""
    sig = np.asarray(sigmas, dtype=float)
    if np.any(sig <= 0) or h < 0:
        raise InvalidSpecError("need positive sigmas and h >= 0")
    expo = 1.0 if np.isinf(h) else 2.0 * h / (1.0 + 2.0 * h)
    r = sig**expo
    return r / r.sum()


# ---------------------------------------------------------------------------
# co-primary endpoints
# ---------------------------------------------------------------------------


class DirichletOrthantTable:
    """P(nu_1a > nu_10, nu_2a > nu_20) for every pair of Dirichlet arm codes.

    Each code's joint law of (nu_1, nu_2) is put on a ``grid x grid`` lattice of
    cells: the density integrates the Dirichlet over theta_11 with a
    Gauss-Legendre rule that is exact for integer parameters. Orthant
    probabilities use mid-rank cumulative masses of the control, so ties
    within a cell count one half per coordinate.
    """

    def __init__(self, space: ArmSpace, grid: int = 64):
        self.space = space
        self.grid = grid
        mass = self._cell_masses()
        cdf = _midrank_cdf(mass.reshape(-1, grid, grid)).reshape(mass.shape)
        self.table = mass @ cdf.T  # [arm code, control code]
        m1, m2 = _marginal_tables(space)
        self.p1 = m1
        self.p2 = m2

    def _cell_masses(self):
        g = self.grid
        mid = (np.arange(g) + 0.5) / g
        n1, n2 = np.meshgrid(mid, mid, indexing="ij")
        n1 = n1.ravel()
        n2 = n2.ravel()
        lo = np.maximum(0.0, n1 + n2 - 1.0)
        hi = np.minimum(n1, n2)
        deg = int(self.space.counts.sum(axis=1).max() + self.space.prior.sum())
        z, w = gauss_legendre(max(8, deg // 2 + 2))
        x = lo[:, None] + (hi - lo)[:, None] * z[None, :]
        jac = (hi - lo)[:, None] * w[None, :]
        cells = np.stack([x, n1[:, None] - x, n2[:, None] - x, 1.0 - n1[:, None] - n2[:, None] + x], -1)
        with np.errstate(divide="ignore"):
            logc = np.log(np.clip(cells, 1e-300, None))
        par = self.space.params(np.arange(self.space.size))  # (M, 4)
        log_norm = special.gammaln(par.sum(axis=1)) - special.gammaln(par).sum(axis=1)
        out = np.empty((self.space.size, g * g))
        flat = logc.reshape(-1, 4)
        for s in range(0, self.space.size, 256):
            sl = slice(s, min(s + 256, self.space.size))
            dens = np.exp(flat @ (par[sl] - 1.0).T + log_norm[sl]).reshape(g * g, z.size, -1)
            out[sl] = (np.einsum("pkm,pk->mp", dens, jac)) / (g * g)
        out /= out.sum(axis=1, keepdims=True)
        return out

    def joint(self, params):
        """Evaluator for AsymEntropyCoprimary: ``params (..., A, 4)`` -> ``(..., A-1)``."""
        codes = self.space.code_of(params)
        return self.table[codes[..., 1:], codes[..., :1]]


def _midrank_cdf(mass):
    """C[i, j] = P(X < x_i, Y < y_j) with cell ties weighted 1/2 per coordinate."""
    c = np.cumsum(np.cumsum(mass, axis=-2), axis=-1)
    below_x = np.concatenate([np.zeros_like(c[..., :1, :]), c[..., :-1, :]], axis=-2)
    below_xy = np.concatenate([np.zeros_like(below_x[..., :1]), below_x[..., :-1]], axis=-1)
    below_y = np.concatenate([np.zeros_like(c[..., :1]), c[..., :-1]], axis=-1)
    # inclusion-exclusion for the mid-rank weights
    return 0.25 * (c + below_x + below_y + below_xy)


def _marginal_tables(space: ArmSpace):
    """Exact P(nu_la > nu_l0) tables ``[arm code, control code]`` for both endpoints."""
    par = space.params(np.arange(space.size))
    out = []
    for cols in ((0, 1), (0, 2)):
        a = par[:, list(cols)].sum(axis=1)
        b = par.sum(axis=1) - a
        pairs = np.stack([a, b], 1)
        uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
        inv = inv.ravel()
        tab = np.empty((len(uniq), len(uniq)))
        for i, (ai, bi) in enumerate(uniq):
            for j, (aj, bj) in enumerate(uniq):
                tab[i, j] = prob_greater_exact(BetaArm(ai, bi), BetaArm(aj, bj))
        out.append(tab[np.ix_(inv, inv)])
    return out


def coprimary_utility(table: DirichletOrthantTable, weight: float = 5.0, beta_exp: float = 6.0) -> Callable:
    """u(params) = -sum_a {H(P(E_a)) + w (H(P(E_1a)) + H(P(E_2a)))} from lookup tables."""
    contrib = (asym_entropy(table.table, beta_exp)
               + weight * (asym_entropy(table.p1, beta_exp) + asym_entropy(table.p2, beta_exp)))

    def fn(params):
        codes = table.space.code_of(params)
        return -contrib[codes[..., 1:], codes[..., :1]].sum(axis=-1)

    return fn


@dataclass
class CoprimaryComparison:
    T: int
    optimal: float
    prior_value: float
    designs: dict

    def shortfall_pct(self, relative_to: str = "gain") -> dict:
        """Percent reduction of expected utility against the optimum.

        ``"gain"`` divides by the optimal improvement over the prior value;
        ``"value"`` divides by the magnitude of the optimal value.
        """
        base = self.optimal - self.prior_value if relative_to == "gain" else abs(self.optimal)
        return {k: 100.0 * (self.optimal - v) / base for k, v in self.designs.items()}


def solve_coprimary(T: int, n_arms: int = 3, metric_spec: MetricSpec | None = None, designs=(),
                    prior=(1.0, 1.0, 1.0, 1.0), grid: int = 64, budget: int = DEFAULT_BUDGET) -> CoprimaryComparison:
    """Backward induction and exact design values for two co-primary binary endpoints."""
    spec = metric_spec or MetricSpec("AsymEntropyCoprimary")
    lat = build_lattice(prior, n_arms, T, free_from=1, budget=budget)
    table = DirichletOrthantTable(lat.space, grid)
    fn = coprimary_utility(table, spec.weight, spec.beta_exp)
    util = StageUtility(lat, fn)
    values = {d.label: evaluate_policy(lat, util, policy_probabilities(lat, util, d)) for d in designs}
    root = backward_induction(lat, util).root_value
    prior_value = float(fn(np.tile(np.asarray(prior, dtype=float), (1, n_arms, 1)))[0])
    return CoprimaryComparison(T, root, prior_value, values)


def coprimary_metric_with_table(table: DirichletOrthantTable, spec: MetricSpec, prior=(1.0, 1.0, 1.0, 1.0)):
    """AsymEntropyCoprimary whose joint probabilities come from ``table`` (deterministic)."""
    return AsymEntropyCoprimary(spec, prior, joint=table.joint)
