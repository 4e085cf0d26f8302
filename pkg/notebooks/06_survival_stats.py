"""
Comparing conditions
====================

Runs that never succeed are right-censored at the training cap. Conditions are
compared by restricted mean survival time, a one-sided log-rank test, a label
permutation test on RMST and Fisher's exact test on success counts.
"""

# %%
import numpy as np

from brainca.harness import emit_report
from brainca.records import RunRecord
from brainca.stats import (SurvivalData, fisher_exact_one_sided, kaplan_meier, log_rank_one_sided,
                           permutation_test_rmst, rmst)

rng = np.random.default_rng(1)
slow = np.minimum(rng.exponential(600, 30).astype(int) + 1, 2000)
fast = np.minimum(rng.exponential(350, 30).astype(int) + 1, 2000)
a = SurvivalData(fast, fast >= 2000)
b = SurvivalData(slow, slow >= 2000)

# %%
print("RMST fast", round(rmst(a, 2000), 1), "slow", round(rmst(b, 2000), 1))
print("log-rank p", round(log_rank_one_sided(a, b), 5))
print("permutation p", permutation_test_rmst(a, b, n_perm=1999, tau=2000))
print("Fisher p", round(fisher_exact_one_sided(int((~a.censored).sum()), 30, int((~b.censored).sum()), 30), 4))
times, surv = kaplan_meier(a)
print("KM head:", [(float(t), round(float(p), 3)) for t, p in zip(times[:5], surv[:5])])

# %% [markdown]
# The harness writes the same numbers as CSV and a plain-text report.

# %%
records = [RunRecord("morpho", c, s, t < 2000, int(t), int(t), config={"max_episodes": 2000})
           for c, ts in (("lr3", fast), ("v3", slow)) for s, t in enumerate(ts)]
paths = emit_report(records, 2000, "/tmp/brainca_report", n_perm=1999)
print(paths["report"].read_text())
