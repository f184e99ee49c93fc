"""Blow down a perturbed Sol flow and measure how close it gets to an expander.

For each scale s the flow at time s is rescaled back to time 1 and the
expander harmonic-Einstein residual evaluated; the floor is the residual of
the exact closed form on the same grid.
"""
import numpy as np

from bundleflow import BaseDomain, SolitonSpec, make_soliton, perturb
from bundleflow.experiments import run_blowdown

spec = SolitonSpec("sol", X=(-1.0, 1.0), domain=BaseDomain(dim=1, sizes=(64,), periods=(np.pi,)))
report = run_blowdown(perturb(make_soliton(spec, 1.0), 1e-2, seed=0), (1, 4, 16), reference=spec)
print(f"stencil floor {report.extras['floor']:.3e}")
for rec in report.records:
    print(f"s = {rec['s']:5.0f}   residual = {rec['total']:.3e}")
for v in report.verdicts:
    print(v.line())
