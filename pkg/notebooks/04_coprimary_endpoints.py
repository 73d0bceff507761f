"""
Two co-primary binary endpoints
===============================

Each patient yields a pair of binary outcomes with a Dirichlet model per arm.
Two uncertainty-directed designs are compared: one targets the probabilities
that an arm improves each endpoint (BUD1), the other the posterior variances
of the effects (BUD2).
"""

from dataclasses import replace

from budtrial import config, dp, harness
from budtrial.metrics import MetricSpec
from budtrial.policies import PolicySpec

# cell probabilities (both, first only, second only, neither) for the effective arm
print("arm 1 cells:", [round(c, 4) for c in harness.cells_from_marginals(0.6, 0.75, 0.3)])

raw = config.read_json(config.preset_path("coprimary_scenario2"))
cfg = replace(config.scenario_from_dict(raw), replications=40)
for rep in harness.run_batch(cfg):
    print(f"{rep.design:5s} ESS {[round(e, 1) for e in rep.ess]} power(both) {rep.power_or_P[1]:.3f}")

# exact comparison with the optimal design for three arms and five patients
designs = (PolicySpec("BUD", label="BUD1"), PolicySpec("BR"))
res = dp.solve_coprimary(5, 3, MetricSpec("AsymEntropyCoprimary"), designs, grid=48)
print("optimal", round(res.optimal, 4), "shortfall % of gain:", {k: round(v, 2) for k, v in res.shortfall_pct().items()})
