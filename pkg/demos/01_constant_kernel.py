"""
Constant kernel: solver and reference integrator against the exact solution
===========================================================================

With a_ij = 1 and a unit mass of monomers the untruncated equations have the
closed form c_i(t) = (t/2)^(i-1) / (1 + t/2)^(i+1). A truncation at n = 512
keeps the tail negligible up to t = 4, so both integrators should reproduce it
to about the size of their tolerances.
"""

import numpy as np

from coagfrag.grid import Grid
from coagfrag.kernels import FragmentationRates, KernelSet, PowerLawCoagulation, PowerLawDaughterDistribution
from coagfrag.oracle import HomogeneousState, constant_kernel_exact, ode_reference
from coagfrag.reaction import TruncatedState
from coagfrag.solver import StepperConfig, simulate

n = 512
kernels = KernelSet(PowerLawCoagulation(0.5, 0.0, 0.0),  # C_Q (i^0 j^0 + i^0 j^0) = 1
                    FragmentationRates(0.0, 1.0),
                    PowerLawDaughterDistribution(0.0))
times = [0.5, 1.0, 2.0, 4.0]

# one spatial cell is enough: the state is homogeneous
c0 = np.zeros(n)
c0[0] = 1.0
state = TruncatedState.uniform(Grid(1, 1.0, 1), c0)

res = simulate(state, kernels, 1.0, "conservative", 4.0,
               StepperConfig(rtol=1e-10, atol=1e-14, dt_max=0.25), sample_times=times)
ref = ode_reference(kernels, "conservative", HomogeneousState(n, c0), 4.0, 1e-10, times)

i = np.arange(1, 21)
print(" t    max|solver - exact|   max|oracle - exact|   mass")
for k, t in enumerate(res.times):
    exact = constant_kernel_exact(i, t)
    e_sol = np.abs(res.states[k][:20, 0] - exact).max()
    e_ref = np.abs(ref.at(t)[:20] - exact).max()
    print(f"{t:4.1f}   {e_sol:.3e}             {e_ref:.3e}             {res.total_mass[k]:.15f}")

# the first few concentrations at t = 2, where c_1 = 1/4 and c_2 = 1/8
print(res.states[-2][:4, 0], constant_kernel_exact(np.arange(1, 5), 2.0))
print(res.stats.to_dict())
