"""
How far from optimal is the uncertainty-directed rule?
======================================================

For small trials the Bayes-optimal design is computable by backward induction
over the lattice of success/failure counts. Every design's expected utility is
then evaluated exactly on the same lattice.
"""

from budtrial import dp
from budtrial.metrics import MetricSpec, build_metric
from budtrial.policies import PolicySpec

designs = (
    PolicySpec("BUD"),
    PolicySpec("BAR_Thompson", thompson_power=2.0, label="BAR"),
    PolicySpec("BR"),
    PolicySpec("RPW"),
)
metric = MetricSpec("EntropyOfMax", control=False)  # negative entropy of the best response rate

for T in (5, 10):
    table = dp.solve_binary(metric, n_arms=4, T=T, designs=designs)
    print(f"T={T}: optimal {table.optimal:.4f}, prior {table.prior_value:.4f}")
    for label, r in table.regret().items():
        print(f"   {label:4s} regret {r:.4f}")

# the smallest case can be checked by hand: two arms, one patient, variance utility
lat = dp.build_lattice((1, 1), 2, 1, free_from=1)
util = dp.StageUtility(lat, dp.binary_utility(build_metric(MetricSpec("VarianceSum", offset=False), "binary")))
print("one-patient optimum:", dp.backward_induction(lat, util).root_value, "= -5/36 =", -5 / 36)
