"""A small mean-field study: N random unit circles against a reference system.

Run with ``python demos/meanfield_small.py``.  e2 is the dictionary
distance between the N-filament current and the reference current; e1 is
the distance of a tagged filament from its mean-field twin.  Both shrink
roughly like N^-1/2.
"""

import numpy as np

from filaments import MollifiedBiotSavart, RandomCurveLaw, meanfield_study

law = RandomCurveLaw(radius=(1.0, 1.0))
rep = meanfield_study(law, [4, 8, 16, 32], MollifiedBiotSavart(0.5), T=0.5, dt=0.05, M=16, trials=8, N_ref=256)

for N, e1, e2 in zip(rep.index, rep.mean("e1"), rep.mean("e2")):
    print(f"N={N:3d}  e1={e1:.4f}  e2={e2:.5f}")
print(f"empirical rate of e2: N^{rep.summary['e2_slope']:.2f}")
print(f"reference error:      {rep.summary['reference_error']:.2e}")
