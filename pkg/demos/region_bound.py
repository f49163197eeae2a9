"""Activation regions of a four-neuron spiking layer.

With one timestep the network is piecewise affine: the ball around the
centre point is cut by a single firing boundary, giving two regions, and the
output change is bounded by the largest regional slope. With two timesteps
the reset makes the map jump at the boundary and the bound breaks.
"""
import numpy as np

from snnguard import analysis
from snnguard.verification import TINY_CENTER, tiny_region_model

offsets = analysis.ball_samples(2, 10_000, np.random.default_rng(0))
for t_steps in (1, 2):
    model = tiny_region_model(t_steps)
    enum = analysis.enumerate_regions(model, TINY_CENTER, 0.05, offsets=offsets)
    rep = analysis.verify_region_bound(enum, model, TINY_CENTER, 0.05, offsets=offsets)
    print(f"T = {t_steps}: K = {enum.K}, counts {enum.counts}, residual {enum.max_residual:.1e}")
    print(f"  max |df|^2 = {rep.max_change:.3e}, bound = {rep.bound:.3e}, holds: {rep.holds}")
    if rep.violations:
        delta, change = rep.violations[0]
        print(f"  witness delta = {np.round(delta, 4)}, |df|^2 = {change:.3e}")

model = tiny_region_model(1)
eps = np.array([0.05, 0.025, 0.0125, 0.00625])
lhs = []
for e in eps:
    enum = analysis.enumerate_regions(model, TINY_CENTER, e, offsets=offsets)
    lhs.append(analysis.verify_region_bound(enum, model, TINY_CENTER, e, offsets=offsets).max_change)
print("log-log slope of max |df|^2 against eps:", round(analysis.loglog_slope(eps, lhs), 4))
