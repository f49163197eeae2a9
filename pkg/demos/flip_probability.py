"""How likely is Gaussian membrane noise to flip a spike decision?

Prints the closed-form flip probability next to a Monte Carlo estimate for
potentials a few noise widths either side of threshold, then shows the sign
change of its sensitivity to the noise scale.
"""
import numpy as np

from snnguard.neurons import NeuronParams, dflip_dsigma, flip_probability

params = NeuronParams()
rng = np.random.default_rng(0)
sigma = 0.5
print(f"sigma = {sigma}")
print(f"{'v':>6} {'closed form':>12} {'Monte Carlo':>12}")
for k in range(-8, 9, 2):
    v = params.v_th + k * sigma / 4
    xi = rng.normal(0.0, sigma, size=200_000)
    mc = np.mean((v + xi >= params.v_th) != (v >= params.v_th))
    print(f"{v:6.3f} {flip_probability(v, params, sigma):12.5f} {mc:12.5f}")

# more noise helps near threshold and hurts far from it
z = np.array([-1.5, -0.5, 0.0, 0.5, 1.5])
d = dflip_dsigma(0.1, params.v_th - z * sigma, params, sigma)
for zi, di in zip(z, d):
    print(f"z = {zi:+.1f}: d(delta P)/d sigma = {di:+.4f}")
