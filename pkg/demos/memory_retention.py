"""
Retention of a slot memory and a K-winner memory
================================================

Both networks see 4000 random sparse patterns once each, then are frozen and
probed with the newest 1000. A pattern counts as remembered to the extent
its retrieval beats that of a never-seen pattern. The slot memory recalls
the newest patterns perfectly but forgets fast; the K-winner memory spreads
each pattern over many graded weights and keeps a signal for much longer.

This runs a reduced experiment (4 d' samples of 10 runs); the full version
is ``slotfree run-memory --preset kw-f005 --compare mhn``.
"""

import numpy as np

from slotfree import continual, metrics

exp = continual.ExperimentConfig(n_samples=4, runs_per_sample=10, cue_levels=(1.0,))

curves = {}
for name in ("mhn", "kw-f005"):
    results = continual.run_many(continual.preset(name), exp)
    curves[name] = continual.aggregate(results, exp)[0]

flags = continual.compare(curves["kw-f005"], curves["mhn"])

# the slot memory decays at the rate one slot in n_h is overwritten per pattern
C, beta = metrics.mhn_theory_constants(1000, 0.1, 100, 1.0)
print(f"slot memory prediction: C={C:.3f}, beta={beta:.5f}")
for name, curve in curves.items():
    fit = curve.fit_decay(200)
    print(f"{name:>8}: C={fit.C:.3f} beta={fit.beta:.5f} r2={fit.r2:.3f} "
          f"pseudo rho={curve.rho_pseudo.mean():.3f}")

# d' by age on a log-spaced grid
print("\n age   d'(mhn)  d'(kw)  flag")
for a in (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000):
    print(f"{a:>4} {curves['mhn'].dprime[a - 1]:8.2f} {curves['kw-f005'].dprime[a - 1]:7.2f} "
          f"{flags[a - 1]:+d}")

first = metrics.first_reliable_age(flags)
print(f"\nK-winner reliably ahead from age {first}")
print("segments (sign, first age, last age):", metrics.segments(flags)[:5])
