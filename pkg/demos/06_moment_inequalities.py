"""
Constants behind the moment estimates
=====================================

The superadditivity constant C_l bounds (i+j)^l - i^l - j^l by
C_l (i^(l-1) j + i j^(l-1)); the fragmentation deficit i^l - sum_j j^l beta_ij
is at least min(l-1, 1) i^(l-1). Two elementary lemmas close the estimates;
random sampling looks for counterexamples.
"""

import numpy as np

from coagfrag.diagnostics import bound_elem1, bound_elem2, sample_elem1, sample_elem2
from coagfrag.kernels import (PowerLawDaughterDistribution, frag_deficit_bound, frag_moment_deficit,
                              superadditivity_constant)

for l in (1.5, 2.0, 2.5, 3.0):
    print(f"C_{l} = {superadditivity_constant(l, 2000):.15f}")
print("sqrt(2) - 1 =", np.sqrt(2) - 1)

# uniform daughters: equality at i = 2 (a binary split), slack beyond
d = PowerLawDaughterDistribution(0.0)
for i in (2, 3, 10, 100):
    print(i, frag_moment_deficit(d, i, 2.0), frag_deficit_bound(i, 2.0))

print("bound_elem1(1, 0.5) =", bound_elem1(1.0, 0.5))
print("bound_elem2(0.5, 1, 1, 1, 2) =", bound_elem2(0.5, 1.0, 1.0, 1, 2.0))

rng = np.random.default_rng(0)
s1 = sample_elem1(rng, 100_000)
s2 = sample_elem2(rng, 2_000)
print(f"elem1: {s1.violations} violations in {s1.samples}, worst ratio {s1.worst_ratio:.6f}")
print(f"elem2: {s2.violations} violations in {s2.samples}, worst ratio {s2.worst_ratio:.6f}")
