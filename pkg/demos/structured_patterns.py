"""
Memory for hierarchically similar patterns
==========================================

A tree-growing restaurant process makes each child pattern a copy of its
parent with b active bits moved. Small b gives families of very similar
leaves. We first look at how leaf similarity falls with b, then at how the
K-winner advantage over the slot memory depends on it.
"""

import numpy as np

from slotfree import continual, metrics
from slotfree.patterns import mean_pairwise_similarity, tgcrp_generate

rng = np.random.default_rng(0)
print("flips  leaves  mean leaf similarity")
for b in (5, 10, 15, 20, 30):
    tree = tgcrp_generate(4000, 1000, 0.1, b, rng)
    leaves = tree.leaf_patterns()
    print(f"{b:>5} {len(leaves):>7} {mean_pairwise_similarity(leaves):>10.3f}")

# random patterns of the same sparsity overlap by s_v = 0.1 on average.

for b in (5, 15):
    exp = continual.ExperimentConfig(flips=b, cue_levels=(1.0,), n_samples=3,
                                     runs_per_sample=10)
    curves = {name: continual.aggregate(continual.run_many(continual.preset(name), exp), exp)[0]
              for name in ("mhn", "kw-f005")}
    flags = continual.compare(curves["kw-f005"], curves["mhn"])
    print(f"\nb={b}: ages with K-winner ahead {int((flags == 1).sum())}, "
          f"slot memory ahead {int((flags == -1).sum())}")
    for a in (1, 10, 50, 200, 1000):
        print(f"  age {a:>4}: d'(mhn)={curves['mhn'].dprime[a - 1]:6.2f}  "
              f"d'(kw)={curves['kw-f005'].dprime[a - 1]:6.2f}")
