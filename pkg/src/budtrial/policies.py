"""Allocation rules: the uncertainty-directed rule, its myopic limit, and comparators.

Batched functions take binary-arm arrays ``alpha, beta`` of shape ``(..., A)``
and return assignment distributions of the same shape. Arm 0 is the control
for the controlled comparators.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import FamilyMismatchError, InvalidSpecError, MissingControlError
from .metrics import Metric, MetricSpec, history_state
from .posteriors import TrialHistory
from .quadrature import beta_on_nodes, gauss_legendre

POLICY_KINDS = (
    "BUD",
    "Myopic",
    "BR",
    "BAR_Trippa",
    "BAR_Thompson",
    "BAR2_Thall",
    "RPW",
    "DBCD_Neyman",
    "DBCD_SqrtRate",
    "OracleFixed",
)


@dataclass(frozen=True)
class HSchedule:
    """Exponent schedule h(t) = scale * (t / T) ** power; ``power = 0`` is a constant."""

    scale: float = 3.0
    power: float = 0.0

    def __post_init__(self):
        if self.scale < 0:
            raise InvalidSpecError(f"h must be nonnegative, got scale {self.scale}")

    def __call__(self, t, T):
        if self.power == 0:
            return float(self.scale)
        return float(self.scale * (t / T) ** self.power)

    @classmethod
    def parse(cls, value) -> "HSchedule":
        if isinstance(value, HSchedule):
            return value
        if isinstance(value, (int, float)):
            return cls(float(value), 0.0)
        return cls(float(value.get("scale", 3.0)), float(value.get("power", 0.0)))


@dataclass(frozen=True)
class PolicySpec:
    kind: str = "BUD"
    h: HSchedule = field(default_factory=HSchedule)
    label: str = ""
    rpw_success: float = 1.0
    dbcd_gamma: float = 2.0
    bar_scale: float = 3.0
    bar_power: float = 0.75
    bar_control: float = 0.25
    thompson_power: float = 1.0
    allocation: tuple = ()
    metric: MetricSpec | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise InvalidSpecError(f"unknown policy kind {self.kind!r}")
        object.__setattr__(self, "h", HSchedule.parse(self.h))
        object.__setattr__(self, "allocation", tuple(int(n) for n in self.allocation))
        if not self.label:
            object.__setattr__(self, "label", self.kind)
        if self.kind == "OracleFixed" and not self.allocation:
            raise InvalidSpecError("OracleFixed needs a per-arm allocation")
        if isinstance(self.metric, dict):
            object.__setattr__(self, "metric", MetricSpec.from_dict(self.metric))

    def metric_or(self, default: MetricSpec) -> MetricSpec:
        """The design's own metric if it has one, else the scenario's."""
        return self.metric if self.metric is not None else default

    def to_dict(self) -> dict:
        d = asdict(self)
        d["allocation"] = list(self.allocation)
        d["metric"] = None if self.metric is None else self.metric.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PolicySpec":
        d = dict(d)
        if "h" in d:
            d["h"] = HSchedule.parse(d["h"])
        return cls(**d)


# ---------------------------------------------------------------------------
# gains and the uncertainty-directed rule
# ---------------------------------------------------------------------------


def expected_gain(history: TrialHistory, metric: Metric, arm: int) -> float:
    """Predictive expected increase of ``metric`` from one more patient on ``arm``."""
    family, state = history_state(history)
    if family != metric.family:
        raise FamilyMismatchError(f"{type(metric).__name__} does not apply to {family} arms")
    return float(metric.gains(*state)[arm])


def bud_probabilities(gains, h_value: float):
    """p(a) proportional to gains[a] ** h along the last axis.

    h = 0 or an all-zero gain vector gives the uniform distribution.
    """
    if h_value < 0:
        raise InvalidSpecError(f"h must be nonnegative, got {h_value}")
    g = np.maximum(np.asarray(gains, dtype=float), 0.0)
    top = g.max(axis=-1, keepdims=True)
    if h_value == 0:
        w = np.ones_like(g)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(top > 0, (g / np.where(top > 0, top, 1.0)) ** h_value, 1.0)
    return w / w.sum(axis=-1, keepdims=True)


def myopic_probabilities(gains):
    """Point mass on the largest gain, ties split evenly."""
    g = np.asarray(gains, dtype=float)
    top = g.max(axis=-1, keepdims=True)
    w = (g >= top - 1e-15 * np.abs(top)).astype(float)
    return w / w.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# comparators
# ---------------------------------------------------------------------------


def uniform_probabilities(shape):
    return np.full(shape, 1.0 / shape[-1])


def prob_each_is_max(alpha, beta, n_nodes: int = 128):
    """P(theta_a = max_j theta_j) for each arm by Gauss-Legendre quadrature."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    _, w = gauss_legendre(n_nodes)
    pdf = beta_on_nodes("gl", n_nodes, alpha, beta, "pdf")
    cdf = beta_on_nodes("gl", n_nodes, alpha, beta, "cdf")
    n_arms = alpha.shape[-1]
    out = np.empty(alpha.shape)
    for a in range(n_arms):
        others = [j for j in range(n_arms) if j != a]
        rest = np.prod(cdf[..., others, :], axis=-2) if others else 1.0
        out[..., a] = np.sum(w * pdf[..., a, :] * rest, axis=-1)
    out = np.clip(out, 0.0, None)
    return out / out.sum(axis=-1, keepdims=True)


def prob_beats_control(alpha, beta, n_nodes: int = 128):
    """P(theta_a > theta_0) for a >= 1, shape ``(..., A-1)``."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    _, w = gauss_legendre(n_nodes)
    f0 = beta_on_nodes("gl", n_nodes, alpha[..., :1], beta[..., :1], "pdf")
    sa = 1.0 - beta_on_nodes("gl", n_nodes, alpha[..., 1:], beta[..., 1:], "cdf")
    return np.clip(np.sum(w * f0 * sa, axis=-1), 0.0, 1.0)


def power_normalize(weights, power):
    w = np.asarray(weights, dtype=float)
    if power == 0:
        return uniform_probabilities(w.shape)
    top = w.max(axis=-1, keepdims=True)
    scaled = np.where(top > 0, (w / np.where(top > 0, top, 1.0)) ** power, 1.0)
    return scaled / scaled.sum(axis=-1, keepdims=True)


def bar2_probabilities(alpha, beta, t, T):
    """P(arm is best among all arms) ** (t / 2T), normalised."""
    return power_normalize(prob_each_is_max(alpha, beta), t / (2.0 * T))


def thompson_probabilities(alpha, beta, power: float = 1.0):
    return power_normalize(prob_each_is_max(alpha, beta), power)


def bar_trippa_probabilities(alpha, beta, n_assigned, t, T, spec: PolicySpec):
    """Experimental arms by P(theta_a > theta_0) ** (scale (t/T) ** power); control kept level
    with the largest experimental arm through exp(coef / K * (n_max - n_0))."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape[-1] < 2:
        raise MissingControlError("BAR_Trippa needs a control arm")
    n_assigned = np.asarray(n_assigned, dtype=float)
    k = alpha.shape[-1] - 1
    expo = spec.bar_scale * (t / T) ** spec.bar_power
    exp_part = power_normalize(prob_beats_control(alpha, beta), expo)
    gap = n_assigned[..., 1:].max(axis=-1) - n_assigned[..., 0]
    c0 = np.exp(np.clip(spec.bar_control / k * gap, -50, 50)) / k
    p0 = c0 / (1.0 + c0)
    return np.concatenate([p0[..., None], (1.0 - p0)[..., None] * exp_part], axis=-1)


def rpw_probabilities(successes, failures, spec: PolicySpec):
    """Urn with one initial ball per arm; a success adds balls to its arm, a failure
    spreads one ball over the other arms."""
    s = np.asarray(successes, dtype=float)
    f = np.asarray(failures, dtype=float)
    n_arms = s.shape[-1]
    if n_arms == 1:
        return np.ones_like(s)
    balls = 1.0 + spec.rpw_success * s + (f.sum(axis=-1, keepdims=True) - f) / (n_arms - 1)
    return balls / balls.sum(axis=-1, keepdims=True)


def hu_zhang(target, current, gamma: float = 2.0):
    """Hu-Zhang allocation g(x, rho) = rho (rho/x)^gamma / sum_j rho_j (rho_j/x_j)^gamma."""
    rho = np.asarray(target, dtype=float)
    x = np.asarray(current, dtype=float)
    with np.errstate(divide="ignore"):
        w = rho * np.where(x > 0, (rho / np.where(x > 0, x, 1.0)) ** gamma, np.inf)
    inf = np.isinf(w)
    if np.any(inf):
        w = np.where(inf.any(axis=-1, keepdims=True), inf.astype(float), w)
    return w / w.sum(axis=-1, keepdims=True)


def dbcd_probabilities(alpha, beta, n_assigned, spec: PolicySpec):
    """DBCD towards a Neyman (sqrt(theta(1-theta))) or sqrt(theta) target.

    Response rates are estimated by posterior means. Until every arm has one
    patient, the first empty arm is chosen.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n = np.asarray(n_assigned, dtype=float)
    theta = alpha / (alpha + beta)
    rho = np.sqrt(theta * (1 - theta)) if spec.kind == "DBCD_Neyman" else np.sqrt(theta)
    rho = rho / rho.sum(axis=-1, keepdims=True)
    t = n.sum(axis=-1, keepdims=True)
    x = n / np.where(t > 0, t, 1.0)
    probs = hu_zhang(rho, x, spec.dbcd_gamma)
    empty = n == 0
    first_empty = (np.cumsum(empty, axis=-1) == 1) & empty
    return np.where(empty.any(axis=-1, keepdims=True), first_empty.astype(float), probs)


def oracle_fixed_probabilities(n_assigned, allocation):
    """Deterministic: the arm furthest below its fixed allocation (lowest index on ties)."""
    n = np.asarray(n_assigned, dtype=float)
    deficit = np.asarray(allocation, dtype=float) - n
    pick = np.argmax(deficit, axis=-1)
    return np.eye(n.shape[-1])[pick]


def binary_policy_probabilities(spec: PolicySpec, alpha, beta, t, T, prior=(1.0, 1.0),
                                metric: Metric | None = None, n_assigned=None):
    """Assignment probabilities for any policy on binary arms (batched)."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if n_assigned is None:
        n_assigned = alpha + beta - prior[0] - prior[1]
    kind = spec.kind
    if kind in ("BUD", "Myopic"):
        if metric is None:
            raise InvalidSpecError(f"{kind} needs a metric")
        g = metric.gains(alpha, beta)
        return bud_probabilities(g, spec.h(t, T)) if kind == "BUD" else myopic_probabilities(g)
    if kind == "BR":
        return uniform_probabilities(alpha.shape)
    if kind == "BAR2_Thall":
        return bar2_probabilities(alpha, beta, t, T)
    if kind == "BAR_Thompson":
        return thompson_probabilities(alpha, beta, spec.thompson_power)
    if kind == "BAR_Trippa":
        return bar_trippa_probabilities(alpha, beta, n_assigned, t, T, spec)
    if kind == "RPW":
        return rpw_probabilities(alpha - prior[0], beta - prior[1], spec)
    if kind in ("DBCD_Neyman", "DBCD_SqrtRate"):
        return dbcd_probabilities(alpha, beta, n_assigned, spec)
    if kind == "OracleFixed":
        return oracle_fixed_probabilities(n_assigned, spec.allocation)
    raise InvalidSpecError(f"policy {kind} is not available for binary arms")


def comparator_probabilities(history: TrialHistory, spec: PolicySpec, T: int, prior=(1.0, 1.0)):
    """Assignment distribution of a non-uncertainty-directed policy for one history."""
    if spec.kind in ("BUD", "Myopic"):
        raise InvalidSpecError("use bud_probabilities for uncertainty-directed policies")
    if spec.kind == "BR":
        return uniform_probabilities((history.n_arms,))
    alpha, beta = history.beta_arrays()
    return binary_policy_probabilities(
        spec, alpha, beta, history.t, T, prior, n_assigned=np.asarray(history.assignment_counts, dtype=float)
    )


def select_action(probabilities, rng_or_uniform) -> int:
    """Categorical draw by inversion of the cumulative distribution.

    Accepts a Generator or a pre-drawn uniform in [0, 1).
    """
    p = np.asarray(probabilities, dtype=float)
    u = rng_or_uniform.random() if hasattr(rng_or_uniform, "random") else float(rng_or_uniform)
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, u * c[-1], side="right"), p.size - 1))


def select_actions(probabilities, uniforms):
    """Batched ``select_action`` over the leading axis."""
    c = np.cumsum(np.asarray(probabilities, dtype=float), axis=-1)
    u = np.asarray(uniforms, dtype=float)[..., None] * c[..., -1:]
    idx = (c <= u).sum(axis=-1)
    return np.minimum(idx, c.shape[-1] - 1)
