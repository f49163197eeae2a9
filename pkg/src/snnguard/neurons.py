"""LIF / Noisy-LIF dynamics, surrogate slopes and flip-probability formulas.

One LIF step with hard reset::

    V[t] = tau * U[t-1] + I[t] (+ xi[t])
    S[t] = H(V[t] - v_th)
    U[t] = V[t] * (1 - S[t]) + v_reset * S[t]

``xi`` is zero-mean Gaussian noise with variance ``noise_variance``; it is
sampled outside the tape and enters as a constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.special import ndtr

from .tensor import Tensor, register_custom_backward, sigmoid

SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class NeuronParams:
    tau: float = 0.5
    v_th: float = 1.0
    v_reset: float = 0.0
    noise_variance: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.tau <= 1.0):
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if not self.v_th > self.v_reset:
            raise ValueError(f"v_th ({self.v_th}) must exceed v_reset ({self.v_reset})")
        if self.noise_variance < 0:
            raise ValueError(f"noise_variance must be >= 0, got {self.noise_variance}")

    @property
    def noise_std(self) -> float:
        return math.sqrt(self.noise_variance)


SURROGATE_KINDS = ("rectangular", "triangular", "exponential")


@dataclass(frozen=True)
class SurrogateSpec:
    kind: str = "triangular"
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in SURROGATE_KINDS:
            raise ValueError(f"unknown surrogate kind {self.kind!r}; expected one of {SURROGATE_KINDS}")
        if not self.width > 0:
            raise ValueError(f"surrogate width must be > 0, got {self.width}")


def surrogate_slope(d, spec: SurrogateSpec):
    """Surrogate dS/dV as a function of the distance ``d = v - v_th``."""
    a = np.abs(np.asarray(d, dtype=np.float64))
    w = spec.width
    if spec.kind == "triangular":
        return np.maximum(0.0, 1.0 - a / w) / w
    if spec.kind == "rectangular":
        return np.where(a < w, 1.0 / (2.0 * w), 0.0)
    return np.exp(-a / w) / (2.0 * w)


def surrogate_derivative(v, params: NeuronParams, spec: SurrogateSpec):
    """Surrogate spike derivative at membrane potential ``v`` (peaks at ``v_th``).

    triangular:  max(0, 1 - |v - v_th| / w) / w
    rectangular: 1 / (2 w) inside |v - v_th| < w, else 0
    exponential: exp(-|v - v_th| / w) / (2 w)
    """
    out = surrogate_slope(np.asarray(v, dtype=np.float64) - params.v_th, spec)
    return float(out) if np.ndim(out) == 0 else out


def heaviside(d: np.ndarray) -> np.ndarray:
    # fires at d == 0, matching the v >= v_th branch of the flip formula
    return (d >= 0).astype(np.float64)


@lru_cache(maxsize=None)
def spike_function(spec: SurrogateSpec):
    """Differentiable spike op on ``v - v_th``: exact step forward, surrogate backward."""
    return register_custom_backward(heaviside, lambda d: surrogate_slope(d, spec), name=f"spike_{spec.kind}")


def sample_noise(shape, params: NeuronParams, rng: np.random.Generator) -> Optional[np.ndarray]:
    """Draw ``xi ~ N(0, noise_variance)``; ``None`` for a deterministic neuron."""
    if params.noise_variance == 0:
        return None
    return rng.normal(0.0, params.noise_std, size=shape)


def lif_step(u_prev, synaptic_input, params: NeuronParams, noise_sample=None,
             surrogate: SurrogateSpec = SurrogateSpec(), detach_reset: bool = False,
             proxy_temperature: Optional[float] = None) -> Tuple[Tensor, Tensor, Tensor]:
    """Advance one timestep and return ``(v, s, u)``.

    With ``proxy_temperature`` set the step is replaced by
    ``sigmoid((v - v_th) / temperature)``, giving a C1 stand-in for analysis.
    ``detach_reset`` cuts the gradient through the ``(1 - s)`` reset factor.
    """
    u_prev = u_prev if isinstance(u_prev, Tensor) else Tensor(u_prev)
    synaptic_input = synaptic_input if isinstance(synaptic_input, Tensor) else Tensor(synaptic_input)
    if u_prev.shape != synaptic_input.shape:
        raise ValueError(f"lif_step: u_prev shape {u_prev.shape} != input shape {synaptic_input.shape}")
    v = u_prev * params.tau + synaptic_input
    if noise_sample is not None:
        noise_sample = np.asarray(noise_sample, dtype=np.float64)
        if noise_sample.shape != v.shape:
            raise ValueError(f"lif_step: noise shape {noise_sample.shape} != potential shape {v.shape}")
        v = v + Tensor(noise_sample)
    if proxy_temperature is None:
        s = spike_function(surrogate)(v - params.v_th)
    else:
        s = sigmoid((v - params.v_th) * (1.0 / proxy_temperature))
    gate = s.detach() if detach_reset else s
    u = v * (1.0 - gate) + gate * params.v_reset
    return v, s, u


# ------------------------------------------------------------ probabilities
def normal_cdf(z):
    """Standard normal CDF; scipy's ndtr keeps full relative precision in both tails."""
    return ndtr(z)


def normal_pdf(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-0.5 * z * z) / SQRT_2PI


def _check_sigma(sigma):
    if not np.all(np.asarray(sigma) > 0):
        raise ValueError(f"sigma must be > 0, got {sigma}")


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def flip_probability(v, params: NeuronParams, sigma):
    """Chance that ``N(0, sigma^2)`` noise moves ``v`` to the other side of ``v_th``.

    Phi((v_th - v) / sigma) when the neuron fires (v >= v_th), else
    1 - Phi((v_th - v) / sigma). The second branch is evaluated as
    Phi((v - v_th) / sigma) so deep tails stay accurate.
    """
    _check_sigma(sigma)
    v = np.asarray(v, dtype=np.float64)
    z = (params.v_th - v) / sigma
    return _scalar(np.where(v >= params.v_th, ndtr(z), ndtr(-z)))


def noisy_fire_probability(v, params: NeuronParams, sigma):
    """Marginal firing probability of a Noisy-LIF unit: 1 - Phi((v_th - v) / sigma)."""
    _check_sigma(sigma)
    v = np.asarray(v, dtype=np.float64)
    return _scalar(ndtr((v - params.v_th) / sigma))


def delta_flip_probability(delta_v, v, params: NeuronParams, sigma, mu: float = 0.0):
    """First-order change in firing probability for a potential shift ``delta_v``."""
    _check_sigma(sigma)
    z = (params.v_th - np.asarray(v, dtype=np.float64) - mu) / sigma
    return _scalar(normal_pdf(z) * np.asarray(delta_v, dtype=np.float64) / sigma)


def dflip_dsigma(delta_v, v, params: NeuronParams, sigma, mu: float = 0.0):
    """Sensitivity of :func:`delta_flip_probability` to the noise scale.

    Equals ``delta_v * phi(z) / sigma**2 * (z**2 - 1)``, negative inside
    ``|z| < 1`` for a positive shift.
    """
    _check_sigma(sigma)
    z = (params.v_th - np.asarray(v, dtype=np.float64) - mu) / sigma
    return _scalar(np.asarray(delta_v, dtype=np.float64) * normal_pdf(z) / sigma**2 * (z * z - 1.0))
