"""
Limiting allocation of the uncertainty-directed rule
====================================================

With independent Normal arms and known variances, the share of patients on arm
a tends to sigma_a^(2h/(1+2h)) normalised. Large h approaches Neyman allocation.
"""

from dataclasses import replace

import numpy as np

from budtrial import config, dp, harness

raw = config.read_json(config.preset_path("normal_unequal_variances"))
cfg = replace(config.scenario_from_dict(raw), replications=500)
sigma = np.sqrt(cfg.outcome_var)

for h in (0.0, 1.0, 3.0, np.inf):
    print(f"h={h}: limit shares {np.round(dp.asymptotic_limit(sigma, h), 4)}")

rep = harness.run_batch(cfg.with_design(cfg.designs[0]))[0]
print("simulated mean allocation at T=150:", np.round(rep.ess, 1))
print("limit x T:                         ", np.round(150 * dp.asymptotic_limit(sigma, 3.0), 1))
