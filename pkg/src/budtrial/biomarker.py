"""Biomarker-stratified model: subgroup response rates under a constrained prior.

Patients carry a profile x in {0,1}^B (encoded as an integer, bit l is marker
l+1). Arm a >= 1 targets marker ``targets[a-1]`` (1-based). For every arm,
``E1`` says the arm beats control among patients positive for its target
marker and ``E0`` says it does among marker-negative patients.

Two resolutions of the response rates are supported:

* ``"marker"`` (default): one rate per arm and target-marker status; the
  control has one rate per marker and status. Arms sharing a target marker
  share those control rates, and the model factorises over target markers.
* ``"profile"``: one rate per arm and full profile x, with ``E1``/``E0`` the
  union over all profiles with the given target-marker status.

The prior puts mass (1 - pi, pi (1 - lam),
pi lam, 0) on the per-arm configurations (E1, E0) = (0,0), (1,0), (1,1), (0,1)
and, given the configurations, a flat product-Beta prior restricted to the
consistent region.

Posterior configuration probabilities are computed exactly. Given the control
rates, arms are independent, so the probability of any intersection of the
events N1_a = {E1_a = 0} and N0_a = {E0_a = 0} factorises over subgroups into
one-dimensional integrals int f_{x,0} prod_{a in S} F_{x,a}. A Moebius
transform per arm turns these into configuration probabilities. A Monte Carlo
reweighting estimator is provided as an independent check.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from scipy import stats

from .errors import EmptyRegionError, InvalidSpecError
from .metrics import asym_entropy
from .quadrature import beta_on_nodes, gauss_legendre, nodes_for_degree

# per-arm configuration order
CONFIGS = ((0, 0), (1, 0), (1, 1), (0, 1))
# rows: configurations; columns: patterns (none, N1, N0, N1 and N0)
MOEBIUS = np.array(
    [
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, -1.0],
        [1.0, -1.0, -1.0, 1.0],
        [0.0, 1.0, 0.0, -1.0],
    ]
)


@dataclass(frozen=True)
class BiomarkerConfig:
    n_markers: int = 4
    n_arms: int = 4
    targets: tuple = (1, 2, 3, 4)
    prevalences: tuple = (0.5, 0.5, 0.5, 0.5)
    pi: float = 0.5
    lam: float = 0.5
    resolution: str = "marker"

    def __post_init__(self):
        targets = tuple(int(b) for b in self.targets)
        prev = tuple(float(p) for p in self.prevalences)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "prevalences", prev)
        if self.n_markers < 1 or self.n_arms < 1:
            raise InvalidSpecError("need at least one marker and one experimental arm")
        if len(targets) != self.n_arms:
            raise InvalidSpecError(f"targets needs {self.n_arms} entries, got {len(targets)}")
        if any(not 1 <= b <= self.n_markers for b in targets):
            raise InvalidSpecError(f"targets must lie in 1..{self.n_markers}, got {targets}")
        if len(prev) != self.n_markers or any(not 0 <= p <= 1 for p in prev):
            raise InvalidSpecError("one prevalence in [0, 1] per marker is required")
        if not (0 <= self.pi <= 1 and 0 <= self.lam <= 1):
            raise InvalidSpecError("pi and lam must lie in [0, 1]")
        if self.resolution not in ("marker", "profile"):
            raise InvalidSpecError(f"resolution must be 'marker' or 'profile', got {self.resolution!r}")

    @property
    def n_profiles(self) -> int:
        return 1 << self.n_markers

    def marker_status(self, profile, marker: int):
        """Status (0/1) of the 1-based ``marker`` in integer profiles."""
        return (np.asarray(profile) >> (marker - 1)) & 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = list(self.targets)
        d["prevalences"] = list(self.prevalences)
        return d


def prior_config_distribution(pi: float, lam: float):
    """Prior over (E1, E0) in the order (0,0), (1,0), (1,1)."""
    if not (0 <= pi <= 1 and 0 <= lam <= 1):
        raise InvalidSpecError("pi and lam must lie in [0, 1]")
    return np.array([1 - pi, pi * (1 - lam), pi * lam])


@dataclass
class SubgroupBank:
    """Beta statistics per (profile, arm), arm 0 the control."""

    alpha: np.ndarray
    beta: np.ndarray

    @classmethod
    def fresh(cls, config: BiomarkerConfig) -> "SubgroupBank":
        shape = (config.n_profiles, config.n_arms + 1)
        return cls(np.ones(shape), np.ones(shape))

    def record(self, profile: int, arm: int, outcome: int) -> "SubgroupBank":
        a = self.alpha.copy()
        b = self.beta.copy()
        a[profile, arm] += outcome
        b[profile, arm] += 1 - outcome
        return SubgroupBank(a, b)


def _subset_products(cdf):
    """prod_{a in S} cdf[..., a, :] for every subset S of the arm axis, shape ``(..., 2^K, N)``."""
    k = cdf.shape[-2]
    out = np.empty(cdf.shape[:-2] + (1 << k, cdf.shape[-1]))
    out[..., 0, :] = 1.0
    for mask in range(1, 1 << k):
        low = (mask & -mask).bit_length() - 1
        out[..., mask, :] = out[..., mask & (mask - 1), :] * cdf[..., low, :]
    return out


def indicator_marginals(post, k: int):
    """(P(E1), P(E0), P(E1 or E0)) per experimental arm from a 4^K posterior, ``(..., K, 3)``."""
    t = post.reshape(post.shape[:-1] + (4,) * k)
    nl = post.ndim - 1
    out = []
    for a in range(k):
        m = t.sum(axis=tuple(nl + j for j in range(k) if j != a))
        out.append(np.stack([m[..., 1] + m[..., 2], m[..., 2] + m[..., 3], m[..., 1] + m[..., 2] + m[..., 3]], -1))
    return np.clip(np.stack(out, axis=-2), 0.0, 1.0)


class BiomarkerModel:
    """Exact posterior over indicator configurations with one rate per (profile, arm).

    This is the ``"profile"`` resolution; it is also the engine behind each
    factor of :class:`MarkerLevelModel` (a one-marker configuration).
    """

    def __init__(self, config: BiomarkerConfig, n_nodes: int = 256):
        self.config = config
        self.n_nodes = n_nodes
        k = config.n_arms
        self.k = k
        n_pat = 4**k
        digits = np.array(list(product(range(4), repeat=k)))  # (4^K, K), arm 1 first
        has_n1 = np.isin(digits, (1, 3))
        has_n0 = np.isin(digits, (2, 3))
        # subset mask of arms constrained in each subgroup, for every pattern
        sidx = np.zeros((config.n_profiles, n_pat), dtype=np.int64)
        for x in range(config.n_profiles):
            for a in range(k):
                pos = (x >> (config.targets[a] - 1)) & 1
                member = has_n1[:, a] if pos else has_n0[:, a]
                sidx[x] |= member.astype(np.int64) << a
        self.subset_index = sidx
        # flat-prior region masses: int prod of |S| uniform cdfs against a uniform = 1/(|S|+1)
        sizes = np.array([bin(m).count("1") for m in range(1 << k)])
        flat_log_i = -np.log1p(sizes.astype(float))
        flat_g = np.exp(flat_log_i[sidx].sum(axis=0))
        self.flat_mass = self._moebius(flat_g)
        pri = np.append(prior_config_distribution(config.pi, config.lam), 0.0)
        prior_tensor = np.ones(n_pat)
        for a in range(k):
            prior_tensor = prior_tensor * pri[digits[:, a]]
        with np.errstate(divide="ignore", invalid="ignore"):
            self.weights = np.where(prior_tensor > 0, prior_tensor / self.flat_mass, 0.0)
        self.config_digits = digits

    # -- building blocks ------------------------------------------------
    def _moebius(self, g):
        """Pattern probabilities -> configuration probabilities, last axis of size 4^K."""
        lead = g.shape[:-1]
        t = g.reshape(lead + (4,) * self.k)
        nl = len(lead)
        for a in range(self.k):
            t = np.moveaxis(np.tensordot(t, MOEBIUS, axes=([nl + a], [1])), -1, nl + a)
        return t.reshape(lead + (4**self.k,))

    def nodes_for(self, alpha, beta) -> int:
        """Smallest rule from the ladder that is exact for integer parameters (capped at ``n_nodes``).

        The integrand is a polynomial of degree (a0 + b0 - 2) + sum_a (a_a + b_a - 1).
        """
        tot = alpha + beta
        deg = tot[..., 0] - 2 + np.sum(tot[..., 1:] - 1, axis=-1)
        return min(nodes_for_degree(int(np.max(deg)), minimum=16), self.n_nodes)

    def log_subgroup_integrals(self, alpha, beta):
        """log int f_{x,0} prod_{a in S} F_{x,a} for every subset S; ``(..., 2^K)``.

        ``alpha``, ``beta`` hold one subgroup row per leading index, shape ``(..., K+1)``.
        """
        n = self.nodes_for(alpha, beta)
        _, w = gauss_legendre(n)
        f0 = beta_on_nodes("gl", n, alpha[..., 0], beta[..., 0], "pdf")
        cdf = beta_on_nodes("gl", n, alpha[..., 1:], beta[..., 1:], "cdf")
        prods = _subset_products(cdf)
        val = np.sum(prods * (w * f0)[..., None, :], axis=-1)
        with np.errstate(divide="ignore"):
            return np.log(np.clip(val, 1e-300, None))

    def pattern_log_probs(self, log_i):
        """log P(pattern) from per-subgroup integrals ``(..., X, 2^K)`` -> ``(..., 4^K)``."""
        gathered = np.take_along_axis(
            log_i, np.broadcast_to(self.subset_index, log_i.shape[:-2] + self.subset_index.shape), axis=-1
        )
        return gathered.sum(axis=-2)

    def config_posterior(self, log_g):
        """Normalised configuration posterior and its unnormalised mass (for predictives)."""
        shift = log_g.max(axis=-1, keepdims=True)
        c = self._moebius(np.exp(log_g - shift))
        c = np.clip(c, 0.0, None)
        un = c * self.weights
        z = un.sum(axis=-1, keepdims=True)
        return un / z, np.log(z[..., 0]) + shift[..., 0]

    def indicator_probs(self, post):
        return indicator_marginals(post, self.k)

    def utility_from_indicators(self, ind, w: float = 5.0, beta_exp: float = 6.0):
        h = asym_entropy(ind, beta_exp)
        return -np.sum(h[..., 2] + w * (h[..., 0] + h[..., 1]), axis=-1)

    # -- whole-bank evaluation ------------------------------------------
    def posterior(self, alpha, beta):
        log_i = self.log_subgroup_integrals(alpha, beta)
        post, _ = self.config_posterior(self.pattern_log_probs(log_i))
        return post

    def indicators(self, alpha, beta):
        return self.indicator_probs(self.posterior(alpha, beta))

    def utility(self, alpha, beta, w: float = 5.0, beta_exp: float = 6.0):
        return self.utility_from_indicators(self.indicators(alpha, beta), w, beta_exp)

    def gains(self, alpha, beta, profile, w: float = 5.0, beta_exp: float = 6.0):
        """Per-arm gains ``(R, A)`` for patients with integer ``profile`` ``(R,)``; banks ``(R, X, A)``."""
        log_i = self.log_subgroup_integrals(alpha, beta)
        return self.step_gains(alpha, beta, log_i, profile, w, beta_exp)[0]

    def hypotheticals(self, alpha, beta, log_i, profile):
        """Row updates for one new patient with ``profile`` on every arm and outcome.

        ``alpha``, ``beta``: ``(R, X, A)``; ``log_i``: ``(R, X, 2^K)``; ``profile``: ``(R,)``.
        Returns log integrals of the patient's subgroup, ``(R, A, 2, 2^K)``
        (outcome index 0 = response, 1 = no response).
        """
        r = np.arange(alpha.shape[0])
        a_row = alpha[r, profile]  # (R, A)
        b_row = beta[r, profile]
        n_arms = a_row.shape[-1]
        eye = np.eye(n_arms)
        a_h = np.stack([a_row[:, None, :] + eye, np.broadcast_to(a_row[:, None, :], (len(r), n_arms, n_arms))], 2)
        b_h = np.stack([np.broadcast_to(b_row[:, None, :], (len(r), n_arms, n_arms)), b_row[:, None, :] + eye], 2)
        return self.log_subgroup_integrals(a_h, b_h)

    def step_gains(self, alpha, beta, log_i, profile, w=5.0, beta_exp=6.0):
        """Gains of each arm for patients with the given profiles.

        Returns ``(gains (R, A), hyp_log_i (R, A, 2, 2^K))``.
        """
        r = np.arange(alpha.shape[0])
        hyp = self.hypotheticals(alpha, beta, log_i, profile)
        sidx_x = self.subset_index[profile]  # (R, 4^K)
        log_all = self.pattern_log_probs(log_i)  # (R, 4^K)
        own = np.take_along_axis(log_i[r, profile], sidx_x, axis=-1)
        other = log_all - own
        cur_post, cur_logz = self.config_posterior(log_all)
        u_cur = self.utility_from_indicators(self.indicator_probs(cur_post), w, beta_exp)
        hyp_own = np.take_along_axis(hyp, np.broadcast_to(sidx_x[:, None, None, :], hyp.shape[:3] + sidx_x.shape[-1:]), axis=-1)
        hyp_post, hyp_logz = self.config_posterior(other[:, None, None, :] + hyp_own)
        u_hyp = self.utility_from_indicators(self.indicator_probs(hyp_post), w, beta_exp)  # (R, A, 2)
        a_row = alpha[r, profile]
        b_row = beta[r, profile]
        m = a_row / (a_row + b_row)
        # predictive response probability under the constrained posterior
        p1 = m * np.exp(hyp_logz[..., 0] - cur_logz[:, None])
        p0 = (1 - m) * np.exp(hyp_logz[..., 1] - cur_logz[:, None])
        s = p1 + p0  # equals one up to quadrature error
        p1, p0 = p1 / s, p0 / s
        g = p1 * u_hyp[..., 0] + p0 * u_hyp[..., 1] - u_cur[:, None]
        return np.maximum(g, 0.0), hyp, p1


class MarkerLevelModel:
    """Each arm compared with control inside the two groups defined by its target marker.

    Banks stay at profile resolution ``(..., X, K+1)`` and are collapsed onto
    the marker groups on demand. Arms sharing a target marker form one factor
    with a shared control; factors are independent a posteriori.
    """

    def __init__(self, config: BiomarkerConfig, n_nodes: int = 256):
        self.config = config
        self.k = config.n_arms
        self.factors = []
        for marker in range(1, config.n_markers + 1):
            arms = np.array([a for a, b in enumerate(config.targets) if b == marker], dtype=np.int64)
            if arms.size == 0:
                continue
            sub = BiomarkerConfig(
                n_markers=1,
                n_arms=arms.size,
                targets=(1,) * arms.size,
                prevalences=(config.prevalences[marker - 1],),
                pi=config.pi,
                lam=config.lam,
                resolution="profile",
            )
            self.factors.append((marker, arms, BiomarkerModel(sub, n_nodes)))

    def collapse(self, alpha, beta, marker: int, arms):
        """Beta parameters ``(..., 2, 1 + len(arms))`` of the control and ``arms`` by status of ``marker``."""
        status = (np.arange(self.config.n_profiles) >> (marker - 1)) & 1
        cols = np.concatenate([[0], np.asarray(arms) + 1])
        out = []
        for par in (alpha, beta):
            extra = np.asarray(par, dtype=float)[..., cols] - 1.0
            out.append(np.stack([extra[..., status == 0, :].sum(-2), extra[..., status == 1, :].sum(-2)], -2) + 1.0)
        return out[0], out[1]

    def indicators(self, alpha, beta):
        alpha = np.asarray(alpha, dtype=float)
        out = np.empty(alpha.shape[:-2] + (self.k, 3))
        for marker, arms, engine in self.factors:
            a2, b2 = self.collapse(alpha, beta, marker, arms)
            out[..., arms, :] = engine.indicators(a2, b2)
        return out

    def utility_from_indicators(self, ind, w: float = 5.0, beta_exp: float = 6.0):
        h = asym_entropy(ind, beta_exp)
        return -np.sum(h[..., 2] + w * (h[..., 0] + h[..., 1]), axis=-1)

    def utility(self, alpha, beta, w: float = 5.0, beta_exp: float = 6.0):
        return self.utility_from_indicators(self.indicators(alpha, beta), w, beta_exp)

    def gains(self, alpha, beta, profile, w: float = 5.0, beta_exp: float = 6.0):
        """Per-arm gains ``(R, K+1)``. The control's gain adds its gains in every factor."""
        profile = np.asarray(profile)
        g = np.zeros((alpha.shape[0], self.k + 1))
        for marker, arms, engine in self.factors:
            a2, b2 = self.collapse(alpha, beta, marker, arms)
            status = (profile >> (marker - 1)) & 1
            log_i = engine.log_subgroup_integrals(a2, b2)
            gb, _, _ = engine.step_gains(a2, b2, log_i, status, w, beta_exp)
            g[:, 0] += gb[:, 0]
            g[:, arms + 1] = gb[:, 1:]
        return g


def build_biomarker_model(config: BiomarkerConfig, n_nodes: int = 256):
    """Model of the configured resolution; both expose ``indicators``, ``utility`` and ``gains``."""
    if config.resolution == "marker":
        return MarkerLevelModel(config, n_nodes)
    return BiomarkerModel(config, n_nodes)


def posterior_indicator_probs(bank: SubgroupBank, config: BiomarkerConfig, method: str = "exact",
                              mc_draws: int = 32768, rng=None, flat_draws: int = 1 << 20):
    """Per-arm P(E1), P(E0), P(E1 or E0) given the data in ``bank``, shape ``(K, 3)``."""
    if method == "exact":
        return build_biomarker_model(config).indicators(bank.alpha, bank.beta)
    if method != "mc":
        raise InvalidSpecError(f"unknown method {method!r}")
    if mc_draws < 1024:
        raise InvalidSpecError("mc_draws must be at least 1024")
    rng = rng if rng is not None else np.random.default_rng(0)
    if config.resolution == "profile":
        return mc_indicator_probs(bank, config, mc_draws, rng, flat_draws)
    model = MarkerLevelModel(config)
    out = np.empty((config.n_arms, 3))
    for marker, arms, engine in model.factors:
        a2, b2 = model.collapse(bank.alpha, bank.beta, marker, arms)
        out[arms] = mc_indicator_probs(SubgroupBank(a2, b2), engine.config, mc_draws, rng, flat_draws)
    return out


def _config_index(theta, config: BiomarkerConfig):
    """Per-draw configuration index over 4^K, from theta of shape ``(D, X, A)``."""
    x = np.arange(config.n_profiles)
    better = theta[:, :, 1:] > theta[:, :, :1]  # (D, X, K)
    idx = np.zeros(theta.shape[0], dtype=np.int64)
    for a in range(config.n_arms):
        pos = ((x >> (config.targets[a] - 1)) & 1).astype(bool)
        e1 = better[:, pos, a].any(axis=1)
        e0 = better[:, ~pos, a].any(axis=1)
        code = np.where(e1 & e0, 2, np.where(e1, 1, np.where(e0, 3, 0)))
        idx = idx * 4 + code
    return idx


@lru_cache(maxsize=16)
def flat_region_masses(config: BiomarkerConfig, draws: int = 1 << 20, seed: int = 0):
    """Monte Carlo flat-prior masses of every configuration (data independent, cached)."""
    rng = np.random.default_rng(seed)
    counts = np.zeros(4**config.n_arms)
    chunk = 1 << 16
    done = 0
    while done < draws:
        n = min(chunk, draws - done)
        theta = rng.random((n, config.n_profiles, config.n_arms + 1))
        counts += np.bincount(_config_index(theta, config), minlength=counts.size)
        done += n
    return counts / draws


def mc_indicator_probs(bank: SubgroupBank, config: BiomarkerConfig, mc_draws: int, rng, flat_draws: int = 1 << 20):
    """Reweighting estimator: classify unconstrained posterior draws, reweight by prior / flat mass."""
    half = mc_draws // 2
    u = rng.random((half,) + bank.alpha.shape)
    u = np.concatenate([u, 1.0 - u])  # antithetic pairs
    theta = stats.beta.ppf(u, bank.alpha, bank.beta)
    p_u = np.bincount(_config_index(theta, config), minlength=4**config.n_arms) / theta.shape[0]
    z = flat_region_masses(config, flat_draws)
    pri = np.append(prior_config_distribution(config.pi, config.lam), 0.0)
    digits = np.array(list(product(range(4), repeat=config.n_arms)))
    prior_tensor = np.prod(pri[digits], axis=1)
    need = (prior_tensor > 0) & (p_u > 0)
    if np.any(need & (z == 0)):
        raise EmptyRegionError("flat-prior draws never reached a configuration seen in the posterior; raise flat_draws")
    with np.errstate(divide="ignore", invalid="ignore"):
        post = np.where(need, prior_tensor * p_u / np.where(z > 0, z, 1.0), 0.0)
    return indicator_marginals(post / post.sum(), config.n_arms)


def single_arm_exact(alpha, beta, pi, lam):
    """Closed-form (P(E1), P(E0), P(E1 or E0)) for one marker and one experimental arm.

    ``alpha``, ``beta`` are ``(2, 2)`` arrays indexed [profile, arm]; the two
    subgroup comparisons are independent and each is a Beta comparison.
    """
    from .posteriors import BetaArm, prob_greater

    p1 = prob_greater(BetaArm(alpha[1, 1], beta[1, 1]), BetaArm(alpha[1, 0], beta[1, 0]))
    p0 = prob_greater(BetaArm(alpha[0, 1], beta[0, 1]), BetaArm(alpha[0, 0], beta[0, 0]))
    region = {(0, 0): (1 - p1) * (1 - p0), (1, 0): p1 * (1 - p0), (1, 1): p1 * p0}
    prior = dict(zip(((0, 0), (1, 0), (1, 1)), prior_config_distribution(pi, lam)))
    # flat masses are 1/4 each, a common factor
    post = {c: prior[c] * region[c] for c in region}
    z = sum(post.values())
    e1 = (post[(1, 0)] + post[(1, 1)]) / z
    e0 = post[(1, 1)] / z
    return np.array([e1, e0, e1])


def biomarker_utility(bank: SubgroupBank, config: BiomarkerConfig, w: float = 5.0, beta_exp: float = 6.0,
                      indicators=None) -> float:
    """-sum_a {H_as[P(E1 or E0)] + w (H_as[P(E1)] + H_as[P(E0)])}."""
    model = build_biomarker_model(config)
    ind = model.indicators(bank.alpha, bank.beta) if indicators is None else np.asarray(indicators)
    return float(model.utility_from_indicators(ind, w, beta_exp))


def profile_conditional_probabilities(bank: SubgroupBank, config: BiomarkerConfig, profile: int,
                                      h: float = 3.0, w: float = 5.0, beta_exp: float = 6.0,
                                      model=None):
    """Uncertainty-directed assignment probabilities over arms 0..K for one patient profile."""
    from .policies import bud_probabilities

    model = model or build_biomarker_model(config)
    g = model.gains(bank.alpha[None], bank.beta[None], np.array([profile]), w, beta_exp)
    return bud_probabilities(g[0], h)


def draw_profiles(prevalences, uniforms):
    """Integer profiles from independent markers; ``uniforms`` has shape ``(..., B)``."""
    status = (np.asarray(uniforms) < np.asarray(prevalences)).astype(np.int64)
    return np.sum(status << np.arange(status.shape[-1]), axis=-1)


def truth_table(config: BiomarkerConfig, control: float = 0.35, rates=None):
    """Response-rate table ``(X, K+1)``.

    ``rates`` maps arm -> (rate if target marker positive, rate otherwise);
    unspecified arms equal the control.
    """
    x = np.arange(config.n_profiles)
    theta = np.full((config.n_profiles, config.n_arms + 1), float(control))
    for arm, (pos_rate, neg_rate) in (rates or {}).items():
        pos = ((x >> (config.targets[arm - 1] - 1)) & 1).astype(bool)
        theta[pos, arm] = pos_rate
        theta[~pos, arm] = neg_rate
    return theta
