"""Scenario execution: single trials, batches of replications, and aggregated
operating characteristics.

Every replication owns named random streams derived from the master seed, so
results do not depend on how replications are grouped or parallelised.
Replications are simulated in fixed-size chunks, vectorised across the chunk.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .biomarker import BiomarkerConfig, build_biomarker_model, draw_profiles
from .errors import InvalidSpecError
from .inference import (
    STATISTICS,
    bootstrap_threshold,
    fisher_one_sided_arrays,
)
from .metrics import (
    AsymEntropyCoprimary,
    MetricSpec,
    build_metric,
    coprimary_marginals,
)
from .policies import (
    PolicySpec,
    binary_policy_probabilities,
    bud_probabilities,
    myopic_probabilities,
    prob_each_is_max,
    select_actions,
    uniform_probabilities,
)

FAMILIES = ("multi-arm-controlled", "best-arm", "normal", "biomarker", "co-primary")
STREAMS = {"assignment": 0, "outcomes": 1, "profiles": 2, "metric": 3, "truth": 4}
CHUNK = 250
WORKERS_ENV = "BUDTRIAL_WORKERS"


def stream(master, rep: int, name: str) -> np.random.Generator:
    """Generator for one named stream of one replication."""
    entropy = list(master) if isinstance(master, (tuple, list)) else int(master)
    return np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(int(rep), STREAMS[name])))


@dataclass(frozen=True)
class AnalysisSpec:
    test: str = "fisher"
    level: float = 0.05
    statistic: str = "difference"
    null_replications: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulated scenario: truth, prior, metric, designs and replication plan.

    ``truth`` depends on the family: response rates per arm (binary), means per
    arm (normal), four cell probabilities per arm (co-primary), or a
    ``{"control": rate, "rates": {arm: [target positive, target negative]}}`` map or explicit
    ``(2^B, K+1)`` table (biomarker). For binary families ``"prior"`` draws the
    rates from the prior in every replication.
    """

    name: str
    family: str
    T: int
    truth: object
    designs: tuple
    metric: MetricSpec = field(default_factory=MetricSpec)
    prior: tuple = (1.0, 1.0)
    replications: int = 1000
    seed: int = 20240101
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    biomarker: BiomarkerConfig | None = None
    prior_var: float = 1.0
    outcome_var: tuple = ()
    scenario: str = ""
    chunk: int = CHUNK
    arms_if_drawn: int = 4

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidSpecError(f"unknown family {self.family!r}")
        if self.T < 0 or self.replications < 1:
            raise InvalidSpecError("T must be >= 0 and replications >= 1")
        object.__setattr__(self, "designs", tuple(self.designs))
        if not self.scenario:
            object.__setattr__(self, "scenario", self.name)
        if self.family == "biomarker" and self.biomarker is None:
            raise InvalidSpecError("biomarker family needs a biomarker block")

    @property
    def n_arms(self) -> int:
        if self.family == "biomarker":
            return self.biomarker.n_arms + 1
        if self.draws_truth:
            return self.arms_if_drawn
        return len(self.truth)

    @property
    def draws_truth(self) -> bool:
        return isinstance(self.truth, str) and self.truth == "prior"

    def truth_table(self):
        if self.family != "biomarker":
            return np.asarray(self.truth, dtype=float)
        if isinstance(self.truth, dict):
            from .biomarker import truth_table

            rates = {int(k): tuple(v) for k, v in self.truth.get("rates", {}).items()}
            return truth_table(self.biomarker, self.truth.get("control", 0.35), rates)
        return np.asarray(self.truth, dtype=float)

    def with_design(self, design: PolicySpec) -> "ScenarioConfig":
        return replace(self, designs=(design,))


def cells_from_marginals(nu1: float, nu2: float, odds_ratio: float):
    """Cell probabilities (11, 10, 01, 00) with the given endpoint marginals and odds ratio.

    theta_11 solves theta_11 theta_00 = OR theta_10 theta_01 (Plackett's construction).
    """
    if not (0 < nu1 < 1 and 0 < nu2 < 1 and odds_ratio > 0):
        raise InvalidSpecError("marginals must lie in (0, 1) and the odds ratio must be positive")
    lo, hi = max(0.0, nu1 + nu2 - 1.0), min(nu1, nu2)
    if odds_ratio == 1.0:
        p11 = nu1 * nu2
    else:
        # (1 - OR) p^2 + (1 - nu1 - nu2 + OR (nu1 + nu2)) p - OR nu1 nu2 = 0
        a = 1.0 - odds_ratio
        b = 1.0 - nu1 - nu2 + odds_ratio * (nu1 + nu2)
        c = -odds_ratio * nu1 * nu2
        roots = np.roots([a, b, c]).real
        p11 = float(roots[(roots >= lo - 1e-12) & (roots <= hi + 1e-12)][0])
    return (p11, nu1 - p11, nu2 - p11, 1.0 - nu1 - nu2 + p11)


# ---------------------------------------------------------------------------
# chunk engines: each returns a dict of per-replication arrays
# ---------------------------------------------------------------------------


def _uniforms(cfg, reps, name, size, master=None):
    master = cfg.seed if master is None else master
    return np.stack([stream(master, r, name).random(size) for r in reps])


def _binary_chunk(cfg: ScenarioConfig, policy: PolicySpec, reps, master=None, keep_path=False):
    master = cfg.seed if master is None else master
    n_rep = len(reps)
    T = cfg.T
    if cfg.draws_truth:
        n_arms = cfg.arms_if_drawn
        theta = np.stack([stream(master, r, "truth").beta(cfg.prior[0], cfg.prior[1], n_arms) for r in reps])
    else:
        theta = np.broadcast_to(np.asarray(cfg.truth, dtype=float), (n_rep, len(cfg.truth))).copy()
    n_arms = theta.shape[1]
    u_a = _uniforms(cfg, reps, "assignment", T, master)
    u_y = _uniforms(cfg, reps, "outcomes", T, master)
    alpha = np.full((n_rep, n_arms), float(cfg.prior[0]))
    beta = np.full((n_rep, n_arms), float(cfg.prior[1]))
    n = np.zeros((n_rep, n_arms))
    controlled = cfg.family == "multi-arm-controlled"
    metric = None
    if policy.kind in ("BUD", "Myopic"):
        spec = policy.metric_or(cfg.metric)
        metric = build_metric(replace(spec, control=controlled and spec.control), "binary", cfg.prior)
    rows = np.arange(n_rep)
    path = np.empty((n_rep, T), dtype=np.int64) if keep_path else None
    for t in range(T):
        p = binary_policy_probabilities(policy, alpha, beta, t, T, cfg.prior, metric, n)
        a = select_actions(p, u_a[:, t])
        y = (u_y[:, t] < theta[rows, a]).astype(float)
        alpha[rows, a] += y
        beta[rows, a] += 1.0 - y
        n[rows, a] += 1.0
        if keep_path:
            path[:, t] = a
    out = {"n": n, "alpha": alpha, "beta": beta, "theta": theta}
    if keep_path:
        out["path"] = path
    return out


def _binary_summary(cfg: ScenarioConfig, raw):
    n, alpha, beta, theta = raw["n"], raw["alpha"], raw["beta"], raw["theta"]
    succ = alpha - cfg.prior[0]
    out = {"n": n}
    if cfg.family == "multi-arm-controlled":
        post = alpha / (alpha + beta)
        gamma = theta[:, 1:] - theta[:, :1]
        out["sq_err"] = (post[:, 1:] - post[:, :1] - gamma) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            rate = np.where(n > 0, succ / np.where(n > 0, n, 1), 0.0)
        out["sq_err_raw"] = (rate[:, 1:] - rate[:, :1] - gamma) ** 2
        p = fisher_one_sided_arrays(succ[:, 1:], n[:, 1:], succ[:, :1], n[:, :1])
        out["reject"] = (p <= cfg.analysis.level).astype(float)
        metric = build_metric(cfg.metric, "binary", cfg.prior)
        out["utility"] = metric.value(alpha, beta)
    else:
        pmax = prob_each_is_max(alpha, beta, 256)
        pick = np.argmax(pmax, axis=1)
        rows = np.arange(len(pick))
        out["selected"] = np.eye(theta.shape[1])[pick]
        best = theta.max(axis=1)
        # the best response rate is estimated by the selected arm's posterior mean
        est = alpha[rows, pick] / (alpha[rows, pick] + beta[rows, pick])
        out["sq_err"] = ((est - best) ** 2)[:, None]
        m = n[rows, pick]
        rate = np.where(m > 0, succ[rows, pick] / np.where(m > 0, m, 1), 0.0)
        out["sq_err_raw"] = ((rate - best) ** 2)[:, None]
        metric = build_metric(replace(cfg.metric, control=False), "binary", cfg.prior)
        out["utility"] = metric.value(alpha, beta)
    return out


def _normal_chunk(cfg: ScenarioConfig, policy: PolicySpec, reps, master=None):
    master = cfg.seed if master is None else master
    n_rep = len(reps)
    T = cfg.T
    means = np.asarray(cfg.truth, dtype=float)
    n_arms = means.size
    ov = np.asarray(cfg.outcome_var, dtype=float) if cfg.outcome_var else np.ones(n_arms)
    pv = np.full(n_arms, float(cfg.prior_var))
    u_a = _uniforms(cfg, reps, "assignment", T, master)
    z = np.stack([stream(master, r, "outcomes").standard_normal(T) for r in reps])
    n = np.zeros((n_rep, n_arms))
    sums = np.zeros((n_rep, n_arms))
    metric = build_metric(MetricSpec("VarianceSum", control=False), "normal")
    rows = np.arange(n_rep)
    for t in range(T):
        if policy.kind == "BR":
            p = uniform_probabilities(n.shape)
        elif policy.kind == "BUD":
            p = bud_probabilities(metric.gains(pv, ov, n), policy.h(t, T))
        elif policy.kind == "Myopic":
            p = myopic_probabilities(metric.gains(pv, ov, n))
        else:
            raise InvalidSpecError(f"policy {policy.kind} is not available for normal arms")
        a = select_actions(p, u_a[:, t])
        sums[rows, a] += means[a] + np.sqrt(ov[a]) * z[:, t]
        n[rows, a] += 1.0
    prec = 1.0 / pv + n / ov
    post_mean = (sums / ov) / prec
    return {"n": n, "sq_err": (post_mean - means) ** 2, "utility": metric.value(pv, ov, n)}


def _coprimary_chunk(cfg: ScenarioConfig, policy: PolicySpec, reps, master=None):
    master = cfg.seed if master is None else master
    n_rep = len(reps)
    T = cfg.T
    theta = np.asarray(cfg.truth, dtype=float)
    n_arms = theta.shape[0]
    cum = np.cumsum(theta, axis=1)
    cum[:, -1] = 1.0
    u_a = _uniforms(cfg, reps, "assignment", T, master)
    u_y = _uniforms(cfg, reps, "outcomes", T, master)
    prior = np.asarray(cfg.prior if len(cfg.prior) == 4 else (1.0, 1.0, 1.0, 1.0), dtype=float)
    counts = np.broadcast_to(prior, (n_rep, n_arms, 4)).copy()
    metric = None
    rngs = None
    if policy.kind in ("BUD", "Myopic"):
        metric = build_metric(policy.metric_or(cfg.metric), "dirichlet", tuple(prior))
        if isinstance(metric, AsymEntropyCoprimary):
            rngs = [stream(master, r, "metric") for r in reps]
    rows = np.arange(n_rep)
    draws = policy.metric_or(cfg.metric).mc_draws
    if rngs is not None:
        # Gamma draws persist across steps: adding the Exp(1) increment of the
        # observed cell turns a Gamma(c) draw into a Gamma(c + 1) draw.
        base = np.stack([g.standard_gamma(np.broadcast_to(c[..., None], c.shape + (draws,))) for g, c in zip(rngs, counts)])
    for t in range(T):
        if policy.kind == "BR":
            p = uniform_probabilities((n_rep, n_arms))
        else:
            if rngs is not None:
                extra = np.stack([g.standard_exponential((n_arms, 4, draws)) for g in rngs])
                gains = metric.gains(counts, draws=(base, extra))
            else:
                gains = metric.gains(counts)
            p = bud_probabilities(gains, policy.h(t, T)) if policy.kind == "BUD" else myopic_probabilities(gains)
        a = select_actions(p, u_a[:, t])
        cell = (u_y[:, t, None] >= cum[a]).sum(axis=1)
        counts[rows, a, cell] += 1.0
        if rngs is not None:
            base[rows, a, cell] += extra[rows, a, cell]
    obs = counts - prior
    n = obs.sum(axis=2)
    m1, m2, mb = coprimary_marginals(counts)
    true_nu1 = theta[:, 0] + theta[:, 1]
    true_nu2 = theta[:, 0] + theta[:, 2]
    out = {"n": n}
    rejects = []
    for ell, (m, nu) in enumerate(((m1, true_nu1), (m2, true_nu2)), start=1):
        est = m[..., 0] / m.sum(axis=-1)
        out[f"sq_err_{ell}"] = (est[:, 1:] - est[:, :1] - (nu[1:] - nu[0])) ** 2
        x = (obs[..., 0] + obs[..., 1]) if ell == 1 else (obs[..., 0] + obs[..., 2])
        p = fisher_one_sided_arrays(x[:, 1:], n[:, 1:], x[:, :1], n[:, :1])
        rejects.append(p <= cfg.analysis.level)
        out[f"reject_{ell}"] = rejects[-1].astype(float)
    out["reject_both"] = (rejects[0] & rejects[1]).astype(float)
    est_b = mb[..., 0] / mb.sum(axis=-1)
    out["sq_err"] = (est_b[:, 1:] - est_b[:, :1] - (theta[1:, 0] - theta[0, 0])) ** 2
    return out


def _biomarker_chunk(cfg: ScenarioConfig, policy: PolicySpec, reps, master=None, truth=None):
    master = cfg.seed if master is None else master
    bcfg = cfg.biomarker
    n_rep = len(reps)
    T = cfg.T
    theta = cfg.truth_table() if truth is None else truth
    n_prof, n_arms = theta.shape
    u_a = _uniforms(cfg, reps, "assignment", T, master)
    u_y = _uniforms(cfg, reps, "outcomes", T, master)
    u_x = np.stack([stream(master, r, "profiles").random((T, bcfg.n_markers)) for r in reps])
    profiles = draw_profiles(bcfg.prevalences, u_x)  # (R, T)
    alpha = np.ones((n_rep, n_prof, n_arms))
    beta = np.ones((n_rep, n_prof, n_arms))
    rows = np.arange(n_rep)
    model = None
    if policy.kind == "BUD":
        model = build_biomarker_model(bcfg)
    elif policy.kind != "BR":
        raise InvalidSpecError(f"policy {policy.kind} is not available for the biomarker family")
    spec = policy.metric_or(cfg.metric)
    w, b_exp = spec.weight, spec.beta_exp
    for t in range(T):
        x = profiles[:, t]
        if model is not None:
            p = bud_probabilities(model.gains(alpha, beta, x, w, b_exp), policy.h(t, T))
        else:
            p = uniform_probabilities((n_rep, n_arms))
        a = select_actions(p, u_a[:, t])
        y = (u_y[:, t] < theta[x, a]).astype(float)
        alpha[rows, x, a] += y
        beta[rows, x, a] += 1.0 - y
    return _biomarker_summary(cfg, alpha - 1.0, beta - 1.0)


def _biomarker_summary(cfg, succ, fail):
    bcfg = cfg.biomarker
    n = succ + fail  # (R, X, A)
    xs = np.arange(bcfg.n_profiles)
    pos = np.stack([((xs >> m) & 1).astype(bool) for m in range(bcfg.n_markers)])  # (B, X)
    # patients per arm within each marker-positive group, (R, A, B)
    n_pos = np.einsum("rxa,bx->rab", n, pos.astype(float))
    stat_fn = STATISTICS[cfg.analysis.statistic]
    stats_ = np.empty((n.shape[0], bcfg.n_arms, 2))
    fisher = np.empty_like(stats_)
    for k, target in enumerate(bcfg.targets):
        for col, sel in enumerate((pos[target - 1], ~pos[target - 1])):
            xa = succ[:, sel, k + 1].sum(1)
            na = n[:, sel, k + 1].sum(1)
            x0 = succ[:, sel, 0].sum(1)
            n0 = n[:, sel, 0].sum(1)
            stats_[:, k, col] = stat_fn(xa, na, x0, n0)
            fisher[:, k, col] = fisher_one_sided_arrays(xa, na, x0, n0)
    return {"n": n.sum(axis=1), "n_pos": n_pos, "statistic": stats_, "fisher_p": fisher}


def _run_chunk(args):
    cfg, policy, reps, master, truth = args
    if cfg.family in ("multi-arm-controlled", "best-arm"):
        return _binary_summary(cfg, _binary_chunk(cfg, policy, reps, master))
    if cfg.family == "normal":
        return _normal_chunk(cfg, policy, reps, master)
    if cfg.family == "co-primary":
        return _coprimary_chunk(cfg, policy, reps, master)
    return _biomarker_chunk(cfg, policy, reps, master, truth)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def simulate_design(cfg: ScenarioConfig, policy: PolicySpec, replications=None, workers=None,
                    master=None, truth=None):
    """Per-replication summaries for one design, concatenated in replication order.

    ``truth`` overrides the biomarker response-rate table of ``cfg``.
    """
    reps = np.arange(cfg.replications if replications is None else replications)
    chunks = [reps[i:i + cfg.chunk] for i in range(0, len(reps), cfg.chunk)]
    master = cfg.seed if master is None else master
    jobs = [(cfg, policy, c, master, truth) for c in chunks]
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class OCReport:
    """Operating characteristics of one design in one scenario."""

    design: str
    scenario: str
    family: str
    T: int
    replications: int
    arms: list
    ess: list
    sd: list
    power_or_P: list
    mse_e3: list
    extra: dict = field(default_factory=dict)

    def rows(self):
        for i, arm in enumerate(self.arms):
            yield {
                "design": self.design,
                "scenario": self.scenario,
                "arm": arm,
                "ESS": self.ess[i],
                "SD": self.sd[i],
                "power_or_P": self.power_or_P[i],
                "MSE_e3": self.mse_e3[i],
            }

    def to_dict(self):
        return _plain(asdict(self))


def _plain(obj):
    """Nested numpy values to plain Python for JSON output (NaN becomes None)."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if np.isnan(obj) else float(obj)
    return obj


CSV_COLUMNS = ("design", "scenario", "arm", "ESS", "SD", "power_or_P", "MSE_e3")


def _fmt(v):
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rep in reports:
        for row in rep.rows():
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def _nan():
    return float("nan")


def aggregate(cfg: ScenarioConfig, policy: PolicySpec, s: dict, null: dict | None = None) -> OCReport:
    """Reduce per-replication summaries to an OCReport."""
    n = s["n"]
    ess = n.mean(axis=0)
    sd = n.std(axis=0, ddof=1) if n.shape[0] > 1 else np.zeros(n.shape[1])
    extra = {}
    if cfg.family == "multi-arm-controlled":
        arms = ["control"] + [f"arm{a}" for a in range(1, n.shape[1])]
        power = [_nan()] + list(s["reject"].mean(axis=0))
        mse = [_nan()] + list(1e3 * s["sq_err"].mean(axis=0))
        extra["mse_raw_e3"] = list(1e3 * np.nanmean(s["sq_err_raw"], axis=0))
        extra["rejection_rate"] = power[1:]
        extra["utility_mean"] = float(s["utility"].mean())
        extra["utility_se"] = float(s["utility"].std(ddof=1) / np.sqrt(len(s["utility"]))) if len(s["utility"]) > 1 else 0.0
        extra["utility_quartiles"] = list(np.quantile(s["utility"], [0.25, 0.5, 0.75]))
    elif cfg.family == "best-arm":
        arms = [f"arm{a}" for a in range(1, n.shape[1] + 1)]
        power = list(s["selected"].mean(axis=0))
        mse = [float(1e3 * s["sq_err"].mean())] * n.shape[1]
        extra["mse_raw_e3"] = float(1e3 * s["sq_err_raw"].mean())
        extra["utility_mean"] = float(s["utility"].mean())
        extra["utility_se"] = float(s["utility"].std(ddof=1) / np.sqrt(len(s["utility"]))) if len(s["utility"]) > 1 else 0.0
    elif cfg.family == "normal":
        arms = [f"arm{a}" for a in range(n.shape[1])]
        power = [_nan()] * n.shape[1]
        mse = list(1e3 * s["sq_err"].mean(axis=0))
        extra["utility_mean"] = float(s["utility"].mean())
    elif cfg.family == "co-primary":
        arms = ["control"] + [f"arm{a}" for a in range(1, n.shape[1])]
        power = [_nan()] + list(s["reject_both"].mean(axis=0))
        mse = [_nan()] + list(1e3 * s["sq_err"].mean(axis=0))
        for ell in (1, 2):
            extra[f"power_endpoint{ell}"] = list(s[f"reject_{ell}"].mean(axis=0))
            extra[f"mse_endpoint{ell}_e3"] = list(1e3 * s[f"sq_err_{ell}"].mean(axis=0))
    else:
        bcfg = cfg.biomarker
        n_pos = s["n_pos"]  # (R, A, B)
        arms, ess, sd, power, mse = [], [], [], [], []
        for a in range(n_pos.shape[1]):
            for m in range(bcfg.n_markers):
                arms.append(f"{'control' if a == 0 else f'arm{a}'}|BMK{m + 1}+")
                ess.append(float(n_pos[:, a, m].mean()))
                sd.append(float(n_pos[:, a, m].std(ddof=1)) if n_pos.shape[0] > 1 else 0.0)
                power.append(_nan())
                mse.append(_nan())
        stat = s["statistic"]
        if null is not None:
            thr = bootstrap_threshold(null["statistic"], cfg.analysis.level)
            rej = stat > thr
            extra["thresholds"] = thr.tolist()
        else:
            rej = s["fisher_p"] <= cfg.analysis.level
        extra["fisher_rejection"] = (s["fisher_p"] <= cfg.analysis.level).mean(axis=0).tolist()
        for k in range(bcfg.n_arms):
            for col, tag in enumerate(("targeted", "nontargeted")):
                arms.append(f"arm{k + 1}|{tag}")
                ess.append(float(s["n"][:, k + 1].mean()))
                sd.append(float(s["n"][:, k + 1].std(ddof=1)) if stat.shape[0] > 1 else 0.0)
                power.append(float(rej[:, k, col].mean()))
                mse.append(_nan())
        extra["test"] = "bootstrap" if null is not None else "fisher"
    return OCReport(
        design=policy.label,
        scenario=cfg.scenario,
        family=cfg.family,
        T=cfg.T,
        replications=int(n.shape[0]),
        arms=arms,
        ess=[float(v) for v in ess],
        sd=[float(v) for v in sd],
        power_or_P=[float(v) for v in power],
        mse_e3=[float(v) for v in mse],
        extra=extra,
    )


def hypothesis_nulls(cfg: ScenarioConfig):
    """Null response tables for the biomarker hypotheses, grouped by table.

    Hypothesis ``(k, col)`` compares arm ``k + 1`` with control among patients
    whose target marker is positive (``col = 0``) or negative (``col = 1``).
    Its null keeps the scenario's rates and sets that arm's rates in that
    group equal to control. Returns ``[(table, mask)]`` where ``mask`` has
    shape ``(K, 2)`` and marks the hypotheses calibrated on ``table``.
    """
    bcfg = cfg.biomarker
    theta = cfg.truth_table()
    x = np.arange(theta.shape[0])
    groups = []
    for k in range(bcfg.n_arms):
        for col in range(2):
            pos = ((x >> (bcfg.targets[k] - 1)) & 1).astype(bool)
            rows = pos if col == 0 else ~pos
            table = theta.copy()
            table[rows, k + 1] = table[rows, 0]
            for ref, mask in groups:
                if np.array_equal(ref, table):
                    mask[k, col] = True
                    break
            else:
                mask = np.zeros((bcfg.n_arms, 2), dtype=bool)
                mask[k, col] = True
                groups.append((table, mask))
    return groups


def simulate_null(cfg: ScenarioConfig, policy: PolicySpec, workers=None) -> dict:
    """Null statistics for every biomarker hypothesis, each from its own null table.

    All null tables share the master seed ``(seed, 1)``.
    """
    statistic = None
    for table, mask in hypothesis_nulls(cfg):
        s = simulate_design(cfg, policy, cfg.analysis.null_replications, workers, master=(cfg.seed, 1), truth=table)
        if statistic is None:
            statistic = np.empty_like(s["statistic"])
        statistic[:, mask] = s["statistic"][:, mask]
    return {"statistic": statistic}


def run_batch(cfg: ScenarioConfig, workers=None) -> list:
    """Simulate every design of ``cfg``; one OCReport per design."""
    reports = []
    for policy in cfg.designs:
        s = simulate_design(cfg, policy, workers=workers)
        null = None
        if cfg.family == "biomarker" and cfg.analysis.null_replications > 0:
            null = simulate_null(cfg, policy, workers)
        reports.append(aggregate(cfg, policy, s, null))
    return reports


# ---------------------------------------------------------------------------
# single trials
# ---------------------------------------------------------------------------


@dataclass
class TrialRecord:
    replication: int
    assignments: np.ndarray
    counts: np.ndarray
    final_state: dict

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.assignments).tobytes())
        for k in sorted(self.final_state):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.final_state[k]).tobytes())
        return h.hexdigest()


def run_trial(cfg: ScenarioConfig, replication_index: int, design: int = 0) -> TrialRecord:
    """One replication of one design (binary families), with the full assignment path."""
    if cfg.family not in ("multi-arm-controlled", "best-arm"):
        raise InvalidSpecError("run_trial records paths for binary families; use run_batch otherwise")
    raw = _binary_chunk(cfg, cfg.designs[design], np.array([replication_index]), keep_path=True)
    return TrialRecord(
        replication=int(replication_index),
        assignments=raw["path"][0],
        counts=raw["n"][0],
        final_state={"alpha": raw["alpha"][0], "beta": raw["beta"][0]},
    )


# ---------------------------------------------------------------------------
# regret against the fixed-allocation oracle
# ---------------------------------------------------------------------------


def regret_curve(cfg: ScenarioConfig, T_values, workers=None):
    """Oracle expected utility minus each design's mean terminal utility, per T.

    Uses the variance-sum utility, for which the oracle is exact; both sides
    carry the same prior offset.
    Returns a list of dicts ``{"T", "design", "regret", "se", "oracle"}``.
    """
    from .dp import oracle_allocation, regret

    out = []
    theta = np.asarray(cfg.truth, dtype=float)
    metric = build_metric(cfg.metric, "binary", cfg.prior)
    baseline = metric.baseline(theta.size)
    for T in T_values:
        if T == 0:
            for policy in cfg.designs:
                out.append({"T": 0, "design": policy.label, "regret": 0.0, "se": 0.0, "oracle": 0.0})
            continue
        _, best = oracle_allocation(theta, cfg.prior, T, control=cfg.metric.control)
        best -= baseline
        sub = replace(cfg, T=int(T))
        for policy in cfg.designs:
            s = simulate_design(sub, policy, workers=workers)
            u = s["utility"]
            se = float(u.std(ddof=1) / np.sqrt(len(u)))
            out.append({"T": int(T), "design": policy.label, "regret": regret(u.mean(), best, se), "se": se, "oracle": best})
    return out


def config_hash(cfg_dict: dict) -> str:
    return hashlib.sha256(json.dumps(cfg_dict, sort_keys=True).encode()).hexdigest()


def manifest(cfg_dict: dict, seed: int) -> dict:
    return {"config_sha256": config_hash(cfg_dict), "seed": int(seed), "version": __version__}
