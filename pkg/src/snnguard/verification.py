"""Self-contained theory checks with their shipped fixtures.

Each suite returns a :class:`SuiteResult`; the ``verify`` command runs them
all and fails if any does not pass.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from . import analysis
from .network import LayerSpec, LinearModel, SnnModel, init_model, smooth_proxy
from .neurons import NeuronParams, delta_flip_probability, dflip_dsigma, flip_probability
from .tensor import Tensor


@dataclass
class SuiteResult:
    name: str
    passed: bool
    summary: str
    details: Dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.summary} ({self.seconds:.1f}s)"


# ----------------------------------------------------------------- fixtures
TINY_WEIGHT = np.array([[1.01, 1.01], [0.4, 0.2], [2.0, 1.6], [-1.0, 0.5]])
TINY_READOUT = np.array([[1.0, -0.5, 0.3, 0.8], [-0.7, 0.9, 0.2, -0.4]])
TINY_CENTER = np.array([0.5, 0.5])


def tiny_region_model(t_steps: int = 1) -> SnnModel:
    """2 -> 4 spiking neurons -> 2 outputs read from membrane potentials.

    At ``TINY_CENTER`` neuron 0 sits 0.01 above threshold and the others
    are at least 0.2 away, so a ball of radius 0.05 is cut by exactly one
    firing boundary.
    """
    return SnnModel([LayerSpec(Tensor(TINY_WEIGHT))], Tensor(TINY_READOUT), t_steps=t_steps, decoder="membrane")


def ratio_fixture(seed: int = 0, temperature: float = 0.5):
    """Seeded 8 -> 12 -> 3 network, its smooth proxy, and an input point."""
    rng = np.random.default_rng(seed)
    model = init_model([8, 12, 3], 3, rng, gain=3.0)
    return smooth_proxy(model, temperature), rng.uniform(size=8)


def linear_fixture(seed: int = 0) -> LinearModel:
    return LinearModel(Tensor(np.random.default_rng(seed).normal(size=(3, 8))))


# ------------------------------------------------------------------- suites
def _timed(fn: Callable[..., SuiteResult]) -> Callable[..., SuiteResult]:
    def run(*args, **kwargs):
        t = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


@_timed
def flip_monte_carlo(samples: int = 10**6, seed: int = 0) -> SuiteResult:
    """Empirical flip rate vs the closed form on v = v_th +- k sigma / 4, k = 0..8."""
    params = NeuronParams()
    rng = np.random.default_rng(seed)
    worst = 0.0
    cells = 0
    for sigma in (0.25, 0.5, 1.0):
        xi = rng.normal(0.0, sigma, size=samples)
        for k in range(-8, 9):
            v = params.v_th + k * sigma / 4
            fires = v >= params.v_th
            rate = np.mean((v + xi >= params.v_th) != fires)
            p = flip_probability(v, params, sigma)
            tol = 4.0 * np.sqrt(p * (1 - p) / samples)
            worst = max(worst, abs(rate - p) / tol)
            cells += 1
    ok = worst <= 1.0
    return SuiteResult("flip-probability Monte Carlo", ok,
                       f"{cells} cells, worst |error| = {worst:.2f} x tolerance", {"worst_ratio": worst})


@_timed
def sigma_sensitivity(step: float = 1e-5) -> SuiteResult:
    """Analytic d(dP)/d(sigma) vs central differences, and its sign pattern in z."""
    params = NeuronParams()
    sigma, dv = 0.5, 0.1
    zs = np.linspace(-2.0, 2.0, 41)
    v = params.v_th - zs * sigma
    analytic = dflip_dsigma(dv, v, params, sigma)
    fd = (delta_flip_probability(dv, v, params, sigma + step)
          - delta_flip_probability(dv, v, params, sigma - step)) / (2 * step)
    err = float(np.max(np.abs(analytic - fd)))
    inside = np.abs(zs) < 1 - 1e-9
    outside = np.abs(zs) > 1 + 1e-9
    edge = ~(inside | outside)
    signs = bool(np.all(analytic[inside] < 0) and np.all(analytic[outside] > 0)
                 and np.all(np.abs(analytic[edge]) < 1e-12))
    ok = err < 1e-8 and signs
    return SuiteResult("noise-scale sensitivity", ok, f"max FD error {err:.2e}, sign pattern {'ok' if signs else 'wrong'}",
                       {"max_error": err})


@_timed
def ratio_test(epsilons=(1e-2, 5e-3, 2.5e-3, 1.25e-3), samples: int = 2000) -> SuiteResult:
    """First-order ratio test on the smooth-proxy fixture and on a linear map."""
    proxy, x = ratio_fixture()
    rep = analysis.verify_first_order_bound(proxy, x, epsilons, samples)
    lin = analysis.verify_first_order_bound(linear_fixture(), x, epsilons, samples)
    lin_ok = bool(np.all((lin.ratios >= 0.95) & (lin.ratios <= 1.0 + 1e-9)))
    ok = rep.passed and lin_ok
    summary = (f"proxy r = {np.array2string(rep.ratios, precision=5)}, c = {rep.fitted_c:.3f} "
               f"({'stable' if rep.stable else 'unstable'}); linear r in "
               f"[{lin.ratios.min():.6f}, {lin.ratios.max():.6f}]")
    return SuiteResult("first-order ratio test", ok, summary, {"c": rep.fitted_c})


@_timed
def region_bound(samples: int = 10000, epsilon: float = 0.05,
                 sweep=(0.05, 0.025, 0.0125, 0.00625)) -> SuiteResult:
    """Region enumeration and the region-wise bound on the tiny fixture."""
    model = tiny_region_model(1)
    offsets = analysis.ball_samples(2, samples, np.random.default_rng(0))
    enum = analysis.enumerate_regions(model, TINY_CENTER, epsilon, offsets=offsets)
    rep = analysis.verify_region_bound(enum, model, TINY_CENTER, epsilon, offsets=offsets)
    lhs, rhs = [], []
    for e in sweep:
        en = analysis.enumerate_regions(model, TINY_CENTER, e, offsets=offsets)
        r = analysis.verify_region_bound(en, model, TINY_CENTER, e, offsets=offsets)
        lhs.append(r.max_change)
        rhs.append(r.bound)
    s_lhs, s_rhs = analysis.loglog_slope(sweep, lhs), analysis.loglog_slope(sweep, rhs)
    ok = (enum.K == 2 and enum.max_residual < 1e-9 and rep.holds
          and abs(s_lhs - 2) <= 0.05 and abs(s_rhs - 2) <= 0.05)
    summary = (f"K = {enum.K}, affine residual {enum.max_residual:.1e}, bound "
               f"{'holds' if rep.holds else f'violated ({len(rep.violations)} witnesses)'}, "
               f"slopes {s_lhs:.3f} / {s_rhs:.3f}")
    return SuiteResult("region-wise bound", ok, summary,
                       {"K": enum.K, "residual": enum.max_residual, "slope_lhs": s_lhs, "slope_rhs": s_rhs})


SUITES = (flip_monte_carlo, sigma_sensitivity, ratio_test, region_bound)


def run_all(quick: bool = False) -> List[SuiteResult]:
    if quick:
        return [flip_monte_carlo(samples=10**5), sigma_sensitivity(), ratio_test(samples=500),
                region_bound(samples=2000)]
    return [suite() for suite in SUITES]
