"""W+ along a perturbed Sol trajectory.

The conjugate heat equation is solved backward from a uniform density at
the final time; W+ is then sampled at every checkpoint and compared with
its dissipation.  Writes the samples to wplus_samples.csv.
"""
import numpy as np

from bundleflow import BaseDomain, SolitonSpec, make_soliton, perturb
from bundleflow.experiments import run_monotonicity

spec = SolitonSpec("sol", X=(-1.0, 1.0),
                   domain=BaseDomain(dim=1, sizes=(64,), periods=(2 * np.pi,)))
start = perturb(make_soliton(spec, 1.0), 1e-2, seed=0)
report = run_monotonicity(start, 4.0, "W+", checkpoint_every=64)
print(f"{'t':>8} {'W+':>14} {'dW+/dt (fd)':>14} {'dissipation':>14}")
for rec in report.records[::16]:
    print(f"{rec['t']:8.3f} {rec['value']:14.8f} {rec['fd_derivative']:14.3e} "
          f"{rec['dissipation']:14.3e}")
for v in report.verdicts:
    print(v.line())
report.write(".")
