"""Acceptance criteria on the bundled scenarios.

Each test records one PASS/FAIL line, shown in the terminal summary under
"acceptance criteria" (and printed immediately with ``-s``).
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from budtrial import config as cfgmod
from budtrial import dp, harness
from budtrial.biomarker import BiomarkerConfig, SubgroupBank, posterior_indicator_probs, single_arm_exact
from budtrial.harness import ScenarioConfig
from budtrial.inference import fisher_by_enumeration, fisher_one_sided_arrays
from budtrial.metrics import KINDS, MetricSpec, build_metric
from budtrial.policies import PolicySpec
from budtrial.posteriors import BetaArm, prob_greater
from budtrial.quadrature import gauss_legendre

from conftest import ACCEPTANCE_LINES, random_beta_states


def record(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def preset(name, **changes):
    return replace(cfgmod.scenario_from_dict(cfgmod.read_json(cfgmod.preset_path(name))), **changes)


def report(cfg, label):
    design = next(d for d in cfg.designs if d.label == label)
    return harness.run_batch(cfg.with_design(design))[0]


def within(x, target, tol):
    return abs(x - target) <= tol


class TestCriterion1:
    def test_table1_scenario1_bud(self):
        start = time.time()
        rep = report(preset("table1_scenario1"), "BUD")
        elapsed = time.time() - start
        ess, sd, mse = np.array(rep.ess), np.array(rep.sd), np.array(rep.mse_e3[1:])
        checks = [
            within(ess[0], 118, 3),
            all(within(e, 73, 3) for e in ess[1:]),
            np.all(sd[1:] <= 5),
            all(within(m, t, 0.6) for m, t in zip(mse, (5.44, 5.43, 5.52))),
        ]
        ok = record(
            1, all(checks),
            f"ESS {np.round(ess, 1).tolist()} (118/73 +-3), arm SD {np.round(sd[1:], 2).tolist()} (<=5), "
            f"MSE x1e3 {np.round(mse, 2).tolist()} (5.44/5.43/5.52 +-0.6), {elapsed:.0f}s",
        )
        assert ok


class TestCriterion2:
    def test_table1_scenario2(self):
        cfg = preset("table1_scenario2")
        bud, br, bar2 = (report(cfg, k) for k in ("BUD", "BR", "BAR2"))
        checks = [
            within(bud.power_or_P[1], 0.822, 0.03),
            within(br.power_or_P[1], 0.786, 0.02),
            within(bar2.ess[1], 161, 8),
        ]
        ok = record(
            2, all(checks),
            f"BUD arm-1 power {bud.power_or_P[1]:.3f} (0.822 +-0.03), BR {br.power_or_P[1]:.3f} (0.786 +-0.02), "
            f"BAR2 arm-1 ESS {bar2.ess[1]:.1f} (161 +-8)",
        )
        assert ok


class TestCriterion3:
    TABLE = {
        "BR": (0.022, 0.022, 0.013, 0.943),
        "BAR": (0.014, 0.016, 0.014, 0.955),
        "RPW": (0.014, 0.013, 0.012, 0.960),
    }

    def test_table2_scenario2(self):
        cfg = preset("table2_scenario2")
        reps = {d.label: report(cfg, d.label) for d in cfg.designs}
        bud = reps["BUD"]
        checks = [within(bud.power_or_P[3], 0.979, 0.01), within(bud.mse_e3[0], 6.33, 0.8)]
        others = []
        for label, target in self.TABLE.items():
            got = np.array(reps[label].power_or_P)
            checks.append(np.all(np.abs(got - target) <= 0.02))
            others.append(f"{label} P {np.round(got, 3).tolist()}")
        ok = record(
            3, all(checks),
            f"BUD P4 {bud.power_or_P[3]:.3f} (0.979 +-0.01), MSE x1e3 {bud.mse_e3[0]:.2f} (6.33 +-0.8); "
            + "; ".join(others) + " (table +-0.02)",
        )
        assert ok


BEST_ARM_DESIGNS = (
    PolicySpec("BUD"),
    PolicySpec("BAR_Thompson", thompson_power=2.0, label="BAR"),
    PolicySpec("BR"),
    PolicySpec("RPW"),
)
BEST_ARM_METRIC = MetricSpec("EntropyOfMax", control=False)


def bi_regret(T):
    r = dp.solve_binary(BEST_ARM_METRIC, 4, T, BEST_ARM_DESIGNS).regret()
    return np.array([r[k] for k in ("BUD", "BAR", "BR", "RPW")])


class TestCriterion4:
    def test_smoke_T10_T15(self):
        r10 = bi_regret(10)
        r15 = bi_regret(15)
        ok10 = np.all(np.abs(r10 - (0.014, 0.035, 0.15, 0.12)) <= 0.01)
        ordered = r15[0] < r15[1] < r15[3] < r15[2]
        ok = record(
            "4 (smoke)", ok10 and ordered,
            f"T=10 regret (BUD, BAR, BR, RPW) {np.round(r10, 4).tolist()} vs (0.014, 0.035, 0.15, 0.12) +-0.01; "
            f"T=15 {np.round(r15, 4).tolist()} ordered BUD<BAR<RPW<BR: {ordered}",
        )
        assert ok

    def test_T30(self):
        start = time.time()
        r30 = bi_regret(30)
        ok = record(
            "4 (T=30)", bool(np.all(np.abs(r30 - (0.017, 0.047, 0.30, 0.22)) <= 0.02)),
            f"T=30 regret {np.round(r30, 4).tolist()} vs (0.017, 0.047, 0.30, 0.22) +-0.02, {time.time() - start:.0f}s",
        )
        assert ok


class TestCriterion5:
    def test_normal_limit(self):
        cfg = preset("normal_unequal_variances")
        rep = report(cfg, "BUD")
        target = (43.7, 43.7, 38.6, 24.1)
        ess = np.array(rep.ess)
        theta = np.array([0.2, 0.5, 0.7, 0.9])
        bcfg = ScenarioConfig(
            name="binary_limit", family="multi-arm-controlled", T=2000, truth=tuple(theta),
            metric=MetricSpec("VarianceSum", control=False), designs=(PolicySpec("BUD"),), replications=500,
        )
        share = harness.simulate_design(bcfg, bcfg.designs[0])["n"].mean(axis=0) / 2000
        limit = dp.asymptotic_limit(np.sqrt(theta * (1 - theta)), 3.0)
        ok = record(
            5, bool(np.all(np.abs(ess - target) <= 3) and np.all(np.abs(share - limit) <= 0.02)),
            f"normal T=150 mean allocations {np.round(ess, 1).tolist()} vs {list(target)} +-3; "
            f"binary T=2000 shares {np.round(share, 3).tolist()} vs limit {np.round(limit, 3).tolist()} +-0.02",
        )
        assert ok


class TestCriterion6:
    def test_biomarker_scenario2(self):
        rep = report(preset("table3_scenario2"), "BUD")
        col = dict(zip(rep.arms, zip(rep.ess, rep.power_or_P)))
        power = col["arm1|targeted"][1]
        type1 = np.array([col[f"arm{k}|nontargeted"][1] for k in range(1, 5)])
        ctrl = np.array([col[f"control|BMK{m}+"][0] for m in range(1, 5)])
        checks = [within(power, 0.869, 0.04), np.all(np.abs(type1 - 0.10) <= 0.02), np.all(np.abs(ctrl - 90) <= 5)]
        ok = record(
            6, all(checks),
            f"arm-1 targeted power {power:.3f} (0.869 +-0.04), non-targeted type I {np.round(type1, 3).tolist()} "
            f"(0.10 +-0.02), control ESS per marker-positive group {np.round(ctrl, 1).tolist()} (90 +-5)",
        )
        assert ok


COPRIMARY_DESIGNS = (
    PolicySpec("BUD", label="BUD1"),
    PolicySpec("BUD", label="BUD2", metric={"kind": "VarianceCoprimary"}),
    PolicySpec("BR"),
)
COPRIMARY_TARGET = {"BUD": (0.59, 1.21, 2.04), "BR": (36.92, 61.39, 77.4)}


@pytest.fixture(scope="module")
def coprimary_bi():
    spec = MetricSpec("AsymEntropyCoprimary")
    return {T: dp.solve_coprimary(T, 3, spec, COPRIMARY_DESIGNS, grid=64 if T < 15 else 48) for T in (5, 10, 15)}


class TestCriterion7:
    """Shortfall of expected utility against the optimal design, in percent.

    Both readings of "reduction of expected utility" are reported: relative to
    the optimal gain over the prior value and relative to the optimal value.
    Neither reproduces the reference numbers (see the project notes); the
    comparison is kept as a known failure.
    """

    def _lines(self, res, label):
        gain = [res[T].shortfall_pct("gain")[label] for T in (5, 10, 15)]
        value = [res[T].shortfall_pct("value")[label] for T in (5, 10, 15)]
        return np.array(gain), np.array(value)

    @pytest.mark.xfail(strict=True, reason="reference shortfalls not reproduced; analysis in the project notes")
    def test_bud_shortfall(self, coprimary_bi):
        gain, value = self._lines(coprimary_bi, "BUD1")
        g2, v2 = self._lines(coprimary_bi, "BUD2")
        target = np.array(COPRIMARY_TARGET["BUD"])
        ok = bool(np.all(np.abs(gain - target) <= 0.5) or np.all(np.abs(value - target) <= 0.5))
        record(
            "7 (BUD)", ok,
            f"BUD1 shortfall % at T=5,10,15: of gain {np.round(gain, 2).tolist()}, of value {np.round(value, 2).tolist()} "
            f"vs {target.tolist()} +-0.5; BUD2 (variance metric) of gain {np.round(g2, 2).tolist()}, "
            f"of value {np.round(v2, 2).tolist()}",
        )
        assert ok

    @pytest.mark.xfail(strict=True, reason="reference shortfalls not reproduced; analysis in the project notes")
    def test_br_shortfall(self, coprimary_bi):
        gain, value = self._lines(coprimary_bi, "BR")
        target = np.array(COPRIMARY_TARGET["BR"])
        ok = bool(np.all(np.abs(gain - target) <= 3) or np.all(np.abs(value - target) <= 3))
        record(
            "7 (BR)", ok,
            f"BR shortfall % at T=5,10,15: of gain {np.round(gain, 2).tolist()}, of value {np.round(value, 2).tolist()} "
            f"vs {target.tolist()} +-3",
        )
        assert ok

    def test_bi_dominates_designs(self, coprimary_bi):
        ok = all(v <= r.optimal + 1e-12 for r in coprimary_bi.values() for v in r.designs.values())
        ok &= all(r.designs["BUD1"] > r.designs["BR"] for r in coprimary_bi.values())
        record("7 (ordering)", ok, "optimal >= BUD1 > BR at T=5,10,15")
        assert ok


class TestCoprimaryProperties:
    REPS = 300

    def test_power_and_mse(self):
        lines, ok = [], True
        for s in (2, 3, 4):
            cfg = preset(f"coprimary_scenario{s}", replications=self.REPS)
            reps = {d.label: report(cfg, d.label) for d in cfg.designs}
            power = {k: r.power_or_P[1] for k, r in reps.items()}
            se = np.sqrt(power["BR"] * (1 - power["BR"]) / self.REPS)
            mse = {k: np.mean(r.extra["mse_endpoint1_e3"] + r.extra["mse_endpoint2_e3"]) for k, r in reps.items()}
            ok &= power["BUD1"] >= power["BR"] - 3 * se and power["BUD2"] >= power["BR"] - 3 * se
            ok &= mse["BUD2"] == min(mse.values())
            lines.append(
                f"S{s} power " + ", ".join(f"{k} {v:.3f}" for k, v in power.items())
                + "; MSE x1e3 " + ", ".join(f"{k} {v:.2f}" for k, v in mse.items())
            )
        record("co-primary properties", ok, " | ".join(lines) + " (BUD power >= BR - 3SE, BUD2 lowest MSE)")
        assert ok


class TestCriterion8:
    def test_property_suites(self, rng):
        results = {}
        alpha, beta = random_beta_states(rng, 500)
        worst = 0.0
        for kind in KINDS:
            if kind in ("AsymEntropyBiomarker", "AsymEntropyCoprimary", "VarianceCoprimary"):
                continue
            m = build_metric(MetricSpec(kind, grid=512, quad_nodes=128), "binary", (1, 1))
            worst = min(worst, m.gains(alpha, beta, clamp=False).min())
        counts = rng.integers(1, 15, (500, 3, 4)).astype(float)
        worst = min(worst, build_metric(MetricSpec("VarianceCoprimary"), "dirichlet").gains(counts, clamp=False).min())
        results["gain nonnegativity"] = worst > -1e-9

        xa, xc = rng.integers(0, 9, 40), rng.integers(0, 9, 40)
        p = fisher_one_sided_arrays(xa, np.full(40, 8), xc, np.full(40, 8))
        ref = [fisher_by_enumeration(a, 8, c, 8) for a, c in zip(xa, xc)]
        results["Fisher vs enumeration"] = np.allclose(p, ref, rtol=1e-12, atol=0)

        x, w = gauss_legendre(400)
        from scipy import stats

        errs = []
        for _ in range(20):
            a1, b1, a2, b2 = rng.integers(1, 30, 4)
            quad = np.sum(w * stats.beta.pdf(x, a1, b1) * stats.beta.cdf(x, a2, b2))
            errs.append(abs(prob_greater(BetaArm(a1, b1), BetaArm(a2, b2)) - quad))
        results["prob_greater vs quadrature"] = max(errs) < 1e-10

        metric = build_metric(MetricSpec("VarianceSum", offset=False), "binary", (1, 1))
        bi_ok = True
        for n_arms in (2, 3):
            for T in range(1, 5):
                lat = dp.build_lattice((1, 1), n_arms, T, free_from=1)
                root = dp.backward_induction(lat, dp.StageUtility(lat, dp.binary_utility(metric))).root_value
                bi_ok &= np.isclose(root, dp.brute_force_value((1, 1), n_arms, T, dp.binary_utility(metric)), rtol=1e-12)
        results["BI root vs enumeration"] = bool(bi_ok)

        one = BiomarkerConfig(n_markers=1, n_arms=1, targets=(1,), prevalences=(0.5,))
        worst_ratio = 0.0
        for i in range(20):
            bank = SubgroupBank(rng.integers(1, 15, (2, 2)).astype(float), rng.integers(1, 15, (2, 2)).astype(float))
            exact = single_arm_exact(bank.alpha, bank.beta, 0.5, 0.5)
            est = np.array([posterior_indicator_probs(bank, one, "mc", 8192, np.random.default_rng(77 * i + j))[0]
                            for j in range(12)])
            se = np.maximum(est.std(axis=0, ddof=1), 1 / 8192)
            worst_ratio = max(worst_ratio, float(np.max(np.abs(est[0] - exact) / se)))
        results["biomarker MC vs exact"] = worst_ratio < 3

        cfg = preset("smoke", replications=40, chunk=10)
        results["parallel determinism"] = (
            harness.reports_to_csv(harness.run_batch(cfg, workers=1)) == harness.reports_to_csv(harness.run_batch(cfg, workers=2))
        )
        ok = record(8, all(results.values()), ", ".join(f"{k}: {'ok' if v else 'FAILED'}" for k, v in results.items()))
        assert ok
