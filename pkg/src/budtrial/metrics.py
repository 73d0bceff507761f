"""Information functionals u(state) and their one-step expected gains.

Every metric works on batched array states so that many trials (or many
lattice states) are scored at once:

* binary arms: ``(alpha, beta)`` arrays of shape ``(..., A)``
* normal arms: ``(prior_var, outcome_var, n)`` arrays of shape ``(..., A)``
* co-primary arms: Dirichlet ``counts`` of shape ``(..., A, 4)`` in the cell
  order (11, 10, 01, 00)

Arm 0 is the control whenever a metric is defined relative to a control.
Larger values always mean more information.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy import special

from .errors import FamilyMismatchError, InvalidSpecError, MissingControlError
from .posteriors import TrialHistory, beta_var, max_density
from .quadrature import beta_cdf, beta_on_nodes, beta_pdf, gauss_legendre, gauss_legendre_on, uniform_grid

KINDS = (
    "VarianceSum",
    "TruncatedVarianceSum",
    "EntropyOfMax",
    "AsymEntropyBiomarker",
    "AsymEntropyCoprimary",
    "VarianceCoprimary",
    "DifferentialEntropySum",
    "MADSum",
    "DiscretizedVariance",
    "DiscretizedEntropy",
    "MaxEffectVariance",
)

# Kinds defined as a reduction relative to the prior carry the offset by default.
_OFFSET_DEFAULT = {
    "VarianceSum": True,
    "TruncatedVarianceSum": True,
    "DifferentialEntropySum": True,
    "MADSum": True,
    "DiscretizedVariance": True,
    "DiscretizedEntropy": True,
}

FAMILY_OF_KIND = {
    "VarianceSum": ("binary", "normal"),
    "TruncatedVarianceSum": ("binary",),
    "EntropyOfMax": ("binary",),
    "AsymEntropyBiomarker": ("biomarker",),
    "AsymEntropyCoprimary": ("dirichlet",),
    "VarianceCoprimary": ("dirichlet",),
    "DifferentialEntropySum": ("binary",),
    "MADSum": ("binary",),
    "DiscretizedVariance": ("binary",),
    "DiscretizedEntropy": ("binary",),
    "MaxEffectVariance": ("binary",),
}


@dataclass(frozen=True)
class MetricSpec:
    """Declarative description of an information functional.

    ``offset`` subtracts the value of the same functional at the prior, so the
    empty history scores 0. ``None`` picks the per-kind default.
    """

    kind: str = "VarianceSum"
    weight: float = 5.0
    beta_exp: float = 6.0
    cutpoints: tuple = (0.0, 0.25)
    offset: bool | None = None
    control: bool = True
    grid: int = 1024
    quad_nodes: int = 256
    mc_draws: int = 4096

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpecError(f"unknown metric kind {self.kind!r}")
        if self.weight < 0:
            raise InvalidSpecError("metric weight must be nonnegative")
        if self.kind.startswith("AsymEntropy") and not self.beta_exp > 1:
            raise InvalidSpecError("asymmetric entropy needs beta_exp > 1")
        cuts = tuple(float(c) for c in self.cutpoints)
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise InvalidSpecError("cutpoints must be strictly increasing")
        if self.kind.startswith("Discretized") and any(not -1.0 < c < 1.0 for c in cuts):
            raise InvalidSpecError("cutpoints must lie in (-1, 1)")
        object.__setattr__(self, "cutpoints", cuts)
        if self.grid < 16 or self.quad_nodes < 8 or self.mc_draws < 1:
            raise InvalidSpecError("grid, quad_nodes and mc_draws are too small")

    @property
    def use_offset(self) -> bool:
        if self.offset is None:
            return _OFFSET_DEFAULT.get(self.kind, False)
        return bool(self.offset)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cutpoints"] = list(self.cutpoints)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricSpec":
        d = dict(d)
        if "cutpoints" in d:
            d["cutpoints"] = tuple(d["cutpoints"])
        return cls(**d)


def asym_entropy(p, beta_exp):
    """H_as(p) = p - p**beta_exp."""
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    return p - p**beta_exp


def eval_asym_entropy(p, beta_exp: float):
    if not beta_exp > 1:
        raise InvalidSpecError("asymmetric entropy needs beta_exp > 1")
    return asym_entropy(p, beta_exp)


class Metric:
    """Base class. Subclasses implement ``raw`` and may override ``children``."""

    family = "binary"
    n_outcomes = 2
    needs_control = False

    def __init__(self, spec: MetricSpec, prior=None):
        self.spec = spec
        self.prior = prior

    # -- values ---------------------------------------------------------
    def raw(self, *state):
        raise NotImplementedError

    def prior_state(self, n_arms: int):
        if self.family == "binary":
            a0, b0 = self.prior if self.prior is not None else (1.0, 1.0)
            return np.full(n_arms, float(a0)), np.full(n_arms, float(b0))
        if self.family == "dirichlet":
            c0 = self.prior if self.prior is not None else (1.0, 1.0, 1.0, 1.0)
            return (np.tile(np.asarray(c0, dtype=float), (n_arms, 1)),)
        raise FamilyMismatchError(f"no default prior for family {self.family}")

    def baseline(self, n_arms: int) -> float:
        if not self.spec.use_offset:
            return 0.0
        return float(self.raw(*self.prior_state(n_arms)))

    def value(self, *state):
        n_arms = np.shape(state[0])[-1 if self.family != "dirichlet" else -2]
        return self.raw(*state) - self.baseline(n_arms)

    # -- gains ----------------------------------------------------------
    def children(self, *state):
        """Values of u after one more outcome on each arm, with predictive probabilities.

        Returns ``(values, probs)``, both shaped ``(..., A, n_outcomes)``.
        """
        if self.family != "binary":
            raise NotImplementedError
        alpha, beta = (np.asarray(s, dtype=float) for s in state)
        n_arms = alpha.shape[-1]
        eye = np.eye(n_arms)
        a_s = alpha[..., None, :] + eye
        b_f = beta[..., None, :] + eye
        a_rep = np.broadcast_to(alpha[..., None, :], a_s.shape)
        b_rep = np.broadcast_to(beta[..., None, :], a_s.shape)
        u_s = self.raw(a_s, b_rep)
        u_f = self.raw(a_rep, b_f)
        p = alpha / (alpha + beta)
        return np.stack([u_s, u_f], axis=-1), np.stack([p, 1.0 - p], axis=-1)

    def gains(self, *state, clamp: bool = True):
        """Expected one-step increase of u for each arm, shape ``(..., A)``."""
        values, probs = self.children(*state)
        g = np.sum(values * probs, axis=-1) - np.asarray(self.raw(*state))[..., None]
        return np.maximum(g, 0.0) if clamp else g

    def check_arms(self, n_arms: int):
        if self.needs_control and n_arms < 2:
            raise MissingControlError(f"{self.spec.kind} needs a control arm and at least one experimental arm")


# ---------------------------------------------------------------------------
# variance of the treatment effects
# ---------------------------------------------------------------------------


class VarianceSum(Metric):
    """Sum over experimental arms of -Var(theta_a - theta_0); without a control, -sum_a Var(theta_a)."""

    def __init__(self, spec, prior=None):
        super().__init__(spec, prior)
        self.needs_control = spec.control

    def _weights(self, n_arms):
        if not self.spec.control:
            return np.ones(n_arms)
        self.check_arms(n_arms)
        w = np.ones(n_arms)
        w[0] = n_arms - 1
        return w

    def raw(self, alpha, beta):
        alpha = np.asarray(alpha, dtype=float)
        beta = np.asarray(beta, dtype=float)
        return -np.sum(self._weights(alpha.shape[-1]) * beta_var(alpha, beta), axis=-1)

    def gains(self, alpha, beta, clamp: bool = True):
        alpha = np.asarray(alpha, dtype=float)
        beta = np.asarray(beta, dtype=float)
        p = alpha / (alpha + beta)
        drop = beta_var(alpha, beta) - p * beta_var(alpha + 1, beta) - (1 - p) * beta_var(alpha, beta + 1)
        g = self._weights(alpha.shape[-1]) * drop
        return np.maximum(g, 0.0) if clamp else g


class NormalVarianceSum(Metric):
    """-sum_a Var(theta_a) for Normal arms with known outcome variance."""

    family = "normal"

    @staticmethod
    def _var(prior_var, outcome_var, n):
        return 1.0 / (1.0 / prior_var + n / outcome_var)

    def raw(self, prior_var, outcome_var, n):
        return -np.sum(self._var(prior_var, outcome_var, np.asarray(n, dtype=float)), axis=-1)

    def value(self, prior_var, outcome_var, n):
        if not self.spec.use_offset:
            return self.raw(prior_var, outcome_var, n)
        return self.raw(prior_var, outcome_var, n) - self.raw(prior_var, outcome_var, np.zeros_like(n))

    def gains(self, prior_var, outcome_var, n, clamp: bool = True):
        n = np.asarray(n, dtype=float)
        g = self._var(prior_var, outcome_var, n) - self._var(prior_var, outcome_var, n + 1)
        return np.maximum(g, 0.0) if clamp else g


class TruncatedVarianceSum(Metric):
    """-sum_a Var(gamma_a 1{gamma_a > 0}), gamma_a = theta_a - theta_0.

    Moments are one-dimensional Gauss-Legendre integrals over theta_0 of closed
    form Beta partial moments of theta_a above theta_0.
    """

    needs_control = True

    def raw(self, alpha, beta):
        alpha = np.asarray(alpha, dtype=float)
        beta = np.asarray(beta, dtype=float)
        self.check_arms(alpha.shape[-1])
        mean, second = truncated_effect_moments(alpha, beta, self.spec.quad_nodes)
        return -np.sum(second - mean**2, axis=-1)


def truncated_effect_moments(alpha, beta, n_nodes: int = 256):
    """E[g+] and E[(g+)^2] for g = theta_a - theta_0, a >= 1, shapes ``(..., A-1)``."""
    z, w = gauss_legendre(n_nodes)
    a0, b0 = alpha[..., :1], beta[..., :1]
    aa, ba = alpha[..., 1:], beta[..., 1:]
    f0 = beta_on_nodes("gl", n_nodes, a0, b0, "pdf") * w  # (..., 1, N)
    s = aa + ba
    m1 = (aa / s)[..., None]
    m2 = (aa * (aa + 1) / (s * (s + 1)))[..., None]
    s0 = 1.0 - beta_on_nodes("gl", n_nodes, aa, ba, "cdf")
    s1 = m1 * (1.0 - beta_on_nodes("gl", n_nodes, aa + 1, ba, "cdf"))
    s2 = m2 * (1.0 - beta_on_nodes("gl", n_nodes, aa + 2, ba, "cdf"))
    first = np.sum(f0 * (s1 - z * s0), axis=-1)
    second = np.sum(f0 * (s2 - 2 * z * s1 + z * z * s0), axis=-1)
    return first, second


class MaxEffectVariance(Metric):
    """-Var(max_a gamma_a) = -(Var(max_{a>=1} theta_a) + Var(theta_0))."""

    needs_control = True

    def raw(self, alpha, beta):
        alpha = np.asarray(alpha, dtype=float)
        beta = np.asarray(beta, dtype=float)
        self.check_arms(alpha.shape[-1])
        x, w = gauss_legendre(self.spec.quad_nodes)
        cdf = beta_on_nodes("gl", self.spec.quad_nodes, alpha[..., 1:], beta[..., 1:], "cdf")
        surv = 1.0 - np.prod(cdf, axis=-2)
        m1 = np.sum(w * surv, axis=-1)
        m2 = np.sum(w * 2 * x * surv, axis=-1)
        return -(m2 - m1**2 + beta_var(alpha[..., 0], beta[..., 0]))


# ---------------------------------------------------------------------------
# best-arm entropy
# ---------------------------------------------------------------------------


class EntropyOfMax(Metric):
    """Negative differential entropy of max_a theta_a on a uniform trapezoid grid."""

    def _tables(self, alpha, beta):
        n = self.spec.grid
        return (
            beta_on_nodes("uniform", n, alpha, beta, "pdf"),
            beta_on_nodes("uniform", n, alpha, beta, "cdf"),
        )

    def raw(self, alpha, beta):
        alpha = np.asarray(alpha, dtype=float)
        beta = np.asarray(beta, dtype=float)
        pdf, cdf = self._tables(alpha, beta)
        dens = max_density(np.moveaxis(pdf, -2, -1), np.moveaxis(cdf, -2, -1))
        _, w = uniform_grid(self.spec.grid)
        return np.sum(w * special.xlogy(dens, dens), axis=-1)

    def children(self, alpha, beta):
        alpha = np.asarray(alpha, dtype=float)
        beta = np.asarray(beta, dtype=float)
        _, w = uniform_grid(self.spec.grid)
        pdf, cdf = self._tables(alpha, beta)  # (..., A, N)
        q, d = _leave_one_out(pdf, cdf)
        pdf_s, cdf_s = self._tables(alpha + 1, beta)
        pdf_f, cdf_f = self._tables(alpha, beta + 1)
        dens_s = pdf_s * q + cdf_s * d
        dens_f = pdf_f * q + cdf_f * d
        u_s = np.sum(w * special.xlogy(dens_s, dens_s), axis=-1)
        u_f = np.sum(w * special.xlogy(dens_f, dens_f), axis=-1)
        p = alpha / (alpha + beta)
        return np.stack([u_s, u_f], axis=-1), np.stack([p, 1 - p], axis=-1)


def _leave_one_out(pdf, cdf):
    """Q_b = prod_{j != b} F_j and D_b = sum_{a != b} f_a prod_{j != a, b} F_j along axis -2."""
    n_arms = pdf.shape[-2]
    q = np.empty_like(cdf)
    d = np.zeros_like(cdf)
    for b in range(n_arms):
        others = [j for j in range(n_arms) if j != b]
        q[..., b, :] = np.prod(cdf[..., others, :], axis=-2) if others else 1.0
        for a in others:
            rest = [j for j in others if j != a]
            term = pdf[..., a, :]
            if rest:
                term = term * np.prod(cdf[..., rest, :], axis=-2)
            d[..., b, :] += term
    return q, d


# ---------------------------------------------------------------------------
# effect-distribution variants: entropy, mean absolute deviation, discretized
# ---------------------------------------------------------------------------


def effect_density(alpha, beta, n_grid: int = 1024):
    """Density of gamma_a = theta_a - theta_0 on the grid ``k/(n-1)``, k = -(n-1)..(n-1).

    Computed by discrete correlation of the two Beta densities on the uniform
    grid (trapezoid weights).
    Returns ``(g, density, weights)`` with density shaped ``(..., A-1, 2n-1)``.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    x, w = uniform_grid(n_grid)
    f = beta_on_nodes("uniform", n_grid, alpha, beta, "pdf")
    f0 = f[..., :1, :] * w
    fa = f[..., 1:, :] * w
    m = 2 * n_grid - 1
    size = 1 << int(np.ceil(np.log2(2 * m)))
    spec = np.fft.rfft(fa, size, axis=-1) * np.conj(np.fft.rfft(f0, size, axis=-1))
    corr = np.fft.irfft(spec, size, axis=-1)
    # lag k (theta_a index minus theta_0 index) sits at position k mod size
    lags = np.arange(-(n_grid - 1), n_grid)
    dens = np.clip(corr[..., lags % size], 0.0, None)
    h = 1.0 / (n_grid - 1)
    g = lags * h
    gw = np.full(m, h)
    gw[0] = gw[-1] = 0.5 * h
    # no renormalisation: children then average exactly to the parent, which
    # keeps the concavity argument behind nonnegative gains intact on the grid
    return g, dens / h, gw


class DifferentialEntropySum(Metric):
    """sum_a int p(gamma_a) log p(gamma_a)."""

    needs_control = True

    def raw(self, alpha, beta):
        self.check_arms(np.shape(alpha)[-1])
        _, dens, gw = effect_density(alpha, beta, self.spec.grid)
        return np.sum(gw * special.xlogy(dens, dens), axis=(-1, -2))


class MADSum(Metric):
    """-sum_a E|gamma_a - median(gamma_a)|."""

    needs_control = True

    def raw(self, alpha, beta):
        self.check_arms(np.shape(alpha)[-1])
        g, dens, gw = effect_density(alpha, beta, self.spec.grid)
        mass = dens * gw
        cdf = np.cumsum(mass, axis=-1)
        # the weighted median grid point minimises sum |g - c| exactly
        idx = np.argmax(cdf >= 0.5 * cdf[..., -1:], axis=-1)
        med = g[idx]
        mad = np.sum(mass * np.abs(g - med[..., None]), axis=-1)
        return -np.sum(mad, axis=-1)


def effect_class_probs(alpha, beta, cutpoints, n_nodes: int = 256):
    """Probabilities of gamma_a falling in the intervals delimited by ``cutpoints``.

    Shape ``(..., A-1, len(cutpoints) + 1)``; P(gamma <= c) = int f_0(z) F_a(z + c) dz.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    a0, b0 = alpha[..., :1, None], beta[..., :1, None]
    aa, ba = alpha[..., 1:, None], beta[..., 1:, None]
    below = []
    for c in cutpoints:
        lo, hi = max(0.0, -c), min(1.0, 1.0 - c)
        z, w = gauss_legendre_on(lo, hi, n_nodes)
        inner = np.sum(w * beta_pdf(z, a0, b0) * beta_cdf(z + c, aa, ba), axis=-1)
        # theta_0 above 1 - c puts theta_0 + c past the top of theta_a's support
        tail = 1.0 - beta_cdf(hi, a0[..., 0], b0[..., 0]) if c > 0 else 0.0
        below.append(np.clip(inner + tail, 0.0, 1.0))
    cum = np.stack(below + [np.ones_like(below[0])], axis=-1)
    cum = np.maximum.accumulate(cum, axis=-1)
    return np.diff(cum, axis=-1, prepend=0.0)


class DiscretizedVariance(Metric):
    """-sum_a Var(class index of gamma_a)."""

    needs_control = True

    def raw(self, alpha, beta):
        self.check_arms(np.shape(alpha)[-1])
        probs = effect_class_probs(alpha, beta, self.spec.cutpoints, self.spec.quad_nodes)
        k = np.arange(probs.shape[-1])
        mean = np.sum(probs * k, axis=-1)
        var = np.sum(probs * k * k, axis=-1) - mean**2
        return -np.sum(var, axis=-1)


class DiscretizedEntropy(Metric):
    """sum_a sum_c p_c log p_c over the classes of gamma_a."""

    needs_control = True

    def raw(self, alpha, beta):
        self.check_arms(np.shape(alpha)[-1])
        probs = effect_class_probs(alpha, beta, self.spec.cutpoints, self.spec.quad_nodes)
        return np.sum(special.xlogy(probs, probs), axis=(-1, -2))


# ---------------------------------------------------------------------------
# co-primary endpoints (Dirichlet arms)
# ---------------------------------------------------------------------------


def coprimary_marginals(counts):
    """Beta parameters of nu_1, nu_2 and of the both-endpoints cell, each ``(..., A, 2)``."""
    c = np.asarray(counts, dtype=float)
    tot = c.sum(axis=-1)
    nu1_a = c[..., 0] + c[..., 1]
    nu2_a = c[..., 0] + c[..., 2]
    both = c[..., 0]
    return (
        np.stack([nu1_a, tot - nu1_a], -1),
        np.stack([nu2_a, tot - nu2_a], -1),
        np.stack([both, tot - both], -1),
    )


class VarianceCoprimary(Metric):
    """-sum_a {Var(gamma_a) + w (Var(gamma_1a) + Var(gamma_2a))} with Beta-marginal variances."""

    family = "dirichlet"
    n_outcomes = 4
    needs_control = True

    def raw(self, counts):
        counts = np.asarray(counts, dtype=float)
        self.check_arms(counts.shape[-2])
        m1, m2, mb = coprimary_marginals(counts)
        v1 = beta_var(m1[..., 0], m1[..., 1])
        v2 = beta_var(m2[..., 0], m2[..., 1])
        vb = beta_var(mb[..., 0], mb[..., 1])
        w = self.spec.weight
        per_arm = (vb[..., 1:] + vb[..., :1]) + w * ((v1[..., 1:] + v1[..., :1]) + (v2[..., 1:] + v2[..., :1]))
        return -np.sum(per_arm, axis=-1)

    def children(self, counts):
        counts = np.asarray(counts, dtype=float)
        values = self.raw(_dirichlet_children(counts))
        probs = counts / counts.sum(axis=-1, keepdims=True)
        return values, probs


def marginal_orthant_probs(counts, n_nodes: int = 128):
    """Exact P(nu_1a > nu_10) and P(nu_2a > nu_20) for a >= 1, each ``(..., A-1)``."""
    m1, m2, _ = coprimary_marginals(counts)
    out = []
    for m in (m1, m2):
        out.append(beta_prob_greater(m[..., 1:, 0], m[..., 1:, 1], m[..., :1, 0], m[..., :1, 1], n_nodes))
    return out


def beta_prob_greater(a1, b1, a2, b2, n_nodes: int = 128):
    """Vectorised P(X > Y), X ~ Beta(a1, b1), Y ~ Beta(a2, b2), by Gauss-Legendre on Y."""
    z, w = gauss_legendre(n_nodes)
    a1, b1, a2, b2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a1, b1, a2, b2)))
    fy = beta_on_nodes("gl", n_nodes, a2, b2, "pdf")
    sx = 1.0 - beta_on_nodes("gl", n_nodes, a1, b1, "cdf")
    return np.clip(np.sum(w * fy * sx, axis=-1), 0.0, 1.0)


class AsymEntropyCoprimary(Metric):
    """-sum_a {H_as[P(E_a)] + w (H_as[P(E_1a)] + H_as[P(E_2a)])}.

    P(E_1a) and P(E_2a) are exact; the joint P(E_a) is a Monte Carlo estimate.
    ``joint`` may be replaced with a deterministic evaluator (used by the
    backward-induction solver).
    """

    family = "dirichlet"
    n_outcomes = 4
    needs_control = True

    def __init__(self, spec, prior=None, rng=None, joint: Callable | None = None):
        super().__init__(spec, prior)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.joint = joint

    def combine(self, p_e, p_e1, p_e2):
        b = self.spec.beta_exp
        w = self.spec.weight
        return -np.sum(asym_entropy(p_e, b) + w * (asym_entropy(p_e1, b) + asym_entropy(p_e2, b)), axis=-1)

    def raw(self, counts, draws=None):
        counts = np.asarray(counts, dtype=float)
        self.check_arms(counts.shape[-2])
        p1, p2 = marginal_orthant_probs(counts)
        if self.joint is not None:
            pj = self.joint(counts)
        else:
            g = draws if draws is not None else gamma_draws(self.rng, counts, self.spec.mc_draws)
            pj = joint_positive_prob(g)
        return self.combine(pj, p1, p2)

    def children(self, counts, rng=None):
        counts = np.asarray(counts, dtype=float)
        kids = _dirichlet_children(counts)
        p1, p2 = marginal_orthant_probs(kids)
        if self.joint is not None:
            pj = self.joint(kids)
        else:
            gen = rng if rng is not None else self.rng
            pj = joint_positive_prob_children(gen, counts, self.spec.mc_draws)
        values = self.combine(pj, p1, p2)
        probs = counts / counts.sum(axis=-1, keepdims=True)
        return values, probs

    def gains(self, counts, clamp: bool = True, rng=None, draws=None):
        """Gains with common random numbers: current and child values share base draws.

        ``draws`` may supply the ``(base, extra)`` Gamma and Exp(1) arrays directly.
        """
        counts = np.asarray(counts, dtype=float)
        gen = rng if rng is not None else self.rng
        if self.joint is not None:
            values, probs = self.children(counts)
            cur = self.raw(counts)
        else:
            base, extra = draws if draws is not None else _gamma_with_increments(gen, counts, self.spec.mc_draws)
            p1, p2 = marginal_orthant_probs(counts)
            cur = self.combine(joint_positive_prob(base), p1, p2)
            kids_pj = _children_joint_from(base, extra)
            kids = _dirichlet_children(counts)
            k1, k2 = marginal_orthant_probs(kids)
            values = self.combine(kids_pj, k1, k2)
            probs = counts / counts.sum(axis=-1, keepdims=True)
        g = np.sum(values * probs, axis=-1) - np.asarray(cur)[..., None]
        return np.maximum(g, 0.0) if clamp else g


def _dirichlet_children(counts):
    """All one-outcome children, indexed ``[..., arm, cell, arm', cell']``."""
    n_arms = counts.shape[-2]
    kids = np.broadcast_to(counts[..., None, None, :, :], counts.shape[:-2] + (n_arms, 4, n_arms, 4)).copy()
    eye = np.eye(4)
    for a in range(n_arms):
        kids[..., a, :, a, :] += eye
    return kids


def gamma_draws(rng, counts, n_draws):
    """Unnormalised Dirichlet draws: Gamma(count) per cell, shape ``(..., A, 4, D)``."""
    counts = np.asarray(counts, dtype=float)
    return rng.standard_gamma(np.broadcast_to(counts[..., None], counts.shape + (n_draws,)))


def _gamma_with_increments(rng, counts, n_draws):
    base = gamma_draws(rng, counts, n_draws)
    extra = rng.standard_exponential(base.shape)
    return base, extra


def _effects_from_gamma(g):
    """(gamma_1, gamma_2) draws for arms >= 1 from Gamma draws ``(..., A, 4, D)``."""
    tot = g.sum(axis=-2)
    nu1 = (g[..., 0, :] + g[..., 1, :]) / tot
    nu2 = (g[..., 0, :] + g[..., 2, :]) / tot
    return nu1, nu2


def joint_positive_prob(g):
    """MC estimate of P(nu_1a > nu_10, nu_2a > nu_20) for arms >= 1, ``(..., A-1)``."""
    nu1, nu2 = _effects_from_gamma(g)
    e = (nu1[..., 1:, :] > nu1[..., :1, :]) & (nu2[..., 1:, :] > nu2[..., :1, :])
    return e.mean(axis=-1)


def _children_joint_from(base, extra):
    """Joint probabilities for every one-outcome child, ``(..., A, 4, A-1)``.

    The child adding one count to cell y of arm a replaces that arm's Gamma(c)
    draw by Gamma(c) + Exp(1) ~ Gamma(c + 1), so all children share draws.
    Only the changed arm's comparison is recomputed, except for control
    children, which change every comparison.
    """
    n_arms = base.shape[-3]
    nu1, nu2 = _effects_from_gamma(base)  # (..., A, D)
    cur = ((nu1[..., 1:, :] > nu1[..., :1, :]) & (nu2[..., 1:, :] > nu2[..., :1, :])).mean(axis=-1)
    # child margins for every (arm, cell): (..., A, 4, D)
    tot = base.sum(axis=-2)[..., None, :] + extra
    first = np.array([1.0, 1.0, 0.0, 0.0])[:, None]
    second = np.array([1.0, 0.0, 1.0, 0.0])[:, None]
    k1 = ((base[..., 0, :] + base[..., 1, :])[..., None, :] + first * extra) / tot
    k2 = ((base[..., 0, :] + base[..., 2, :])[..., None, :] + second * extra) / tot
    out = np.broadcast_to(cur[..., None, None, :], base.shape[:-3] + (n_arms, 4, n_arms - 1)).copy()
    # experimental-arm children against the unchanged control
    c1 = nu1[..., :1, None, :]
    c2 = nu2[..., :1, None, :]
    own = ((k1[..., 1:, :, :] > c1) & (k2[..., 1:, :, :] > c2)).mean(axis=-1)  # (..., A-1, 4)
    idx = np.arange(n_arms - 1)
    out[..., idx + 1, :, idx] = np.moveaxis(own, -2, 0)
    # control children against every unchanged experimental arm
    e1 = nu1[..., 1:, None, :]
    e2 = nu2[..., 1:, None, :]
    ctrl = ((e1 > k1[..., :1, :, :]) & (e2 > k2[..., :1, :, :])).mean(axis=-1)  # (..., A-1, 4)
    out[..., 0, :, :] = np.swapaxes(ctrl, -1, -2)
    return out


def joint_positive_prob_children(rng, counts, n_draws):
    base, extra = _gamma_with_increments(rng, counts, n_draws)
    return _children_joint_from(base, extra)


# ---------------------------------------------------------------------------
# factory and history-level wrappers
# ---------------------------------------------------------------------------


_CLASSES = {
    "VarianceSum": VarianceSum,
    "TruncatedVarianceSum": TruncatedVarianceSum,
    "EntropyOfMax": EntropyOfMax,
    "VarianceCoprimary": VarianceCoprimary,
    "AsymEntropyCoprimary": AsymEntropyCoprimary,
    "DifferentialEntropySum": DifferentialEntropySum,
    "MADSum": MADSum,
    "DiscretizedVariance": DiscretizedVariance,
    "DiscretizedEntropy": DiscretizedEntropy,
    "MaxEffectVariance": MaxEffectVariance,
}


def build_metric(spec: MetricSpec, family: str = "binary", prior=None, **kwargs) -> Metric:
    """Instantiate the evaluator for ``spec`` on arms of the given posterior family."""
    if family not in FAMILY_OF_KIND[spec.kind]:
        raise FamilyMismatchError(f"metric {spec.kind} does not apply to {family} arms")
    if spec.kind == "AsymEntropyBiomarker":
        raise FamilyMismatchError("the biomarker metric is built from a BiomarkerConfig (see biomarker module)")
    if spec.kind == "VarianceSum" and family == "normal":
        return NormalVarianceSum(spec, prior)
    return _CLASSES[spec.kind](spec, prior, **kwargs)


def history_state(history: TrialHistory):
    fam = history.family
    if fam == "beta":
        return "binary", history.beta_arrays()
    if fam == "normal":
        pv, ov, n, _ = history.normal_arrays()
        return "normal", (pv, ov, n)
    return "dirichlet", (history.dirichlet_counts(),)


def evaluate(history: TrialHistory, spec: MetricSpec, prior=None, **kwargs) -> float:
    """u(history) in the offset or raw form selected by ``spec``."""
    family, state = history_state(history)
    metric = build_metric(spec, family, prior, **kwargs)
    return float(metric.value(*state))


def eval_variance_sum(history: TrialHistory, offset: bool = True) -> float:
    return evaluate(history, MetricSpec("VarianceSum", offset=offset))


def eval_truncated_variance_sum(history: TrialHistory, offset: bool = True) -> float:
    return evaluate(history, MetricSpec("TruncatedVarianceSum", offset=offset))


def eval_entropy_of_max(history: TrialHistory, grid: int = 1024) -> float:
    return evaluate(history, MetricSpec("EntropyOfMax", grid=grid, control=False))


def eval_coprimary_variance(history: TrialHistory, weight: float = 1.0) -> float:
    return evaluate(history, MetricSpec("VarianceCoprimary", weight=weight))


def eval_sensitivity_variants(history: TrialHistory, spec: MetricSpec) -> float:
    if spec.kind not in ("DifferentialEntropySum", "MADSum", "DiscretizedVariance", "DiscretizedEntropy"):
        raise InvalidSpecError(f"{spec.kind} is not a sensitivity variant")
    return evaluate(history, spec)
