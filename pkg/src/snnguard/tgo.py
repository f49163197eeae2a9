"""Threshold guarding: membrane-potential margin penalty and its schedule.

The penalty for one layer sums the hinge ``max(0, margin - |V - v_th|)``
over its neurons and timesteps and divides by (timesteps x layers), so its
value does not change with T. It is added to the task loss with a weight
that ramps from 0 to ``lambda_max`` along a half cosine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .network import ForwardRecord
from .tensor import Tensor, add_n


@dataclass(frozen=True)
class TgoConfig:
    margin: float = 0.2
    lambda_max: float = 0.4
    epoch_max: int = 30
    noise_variance: float = 0.4
    squared: bool = False

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        if self.lambda_max < 0:
            raise ValueError(f"lambda_max must be >= 0, got {self.lambda_max}")
        if self.epoch_max < 1:
            raise ValueError(f"epoch_max must be >= 1, got {self.epoch_max}")
        if self.noise_variance < 0:
            raise ValueError(f"noise_variance must be >= 0, got {self.noise_variance}")


Potentials = Union[Tensor, Sequence[Tensor]]


def membrane_constraint(potentials: Potentials, v_th: float, margin: float,
                        t_steps: Optional[int] = None, layer_count: int = 1,
                        squared: bool = False) -> Tensor:
    """Hinge penalty on potentials that sit within ``margin`` of ``v_th``.

    ``potentials`` holds one layer's pre-reset potentials: a list with one
    [batch x neurons] tensor per timestep, or a single tensor. The hinge is
    summed over neurons and timesteps, divided by ``t_steps * layer_count``
    and averaged over the batch. ``t_steps`` defaults to the number of
    recorded steps; a 1-D tensor counts as a single sample.

    At both kinks (``|V - v_th| == margin`` and ``V == v_th``) the
    subgradient is 0. ``squared`` squares each hinge term.
    """
    if not margin > 0:
        raise ValueError(f"margin must be > 0, got {margin}")
    items = [potentials] if isinstance(potentials, Tensor) else list(potentials)
    if not items:
        raise ValueError("no potentials to constrain")
    t_steps = len(items) if t_steps is None else t_steps
    batch = items[0].shape[0] if items[0].ndim == 2 else 1
    terms = []
    for v in items:
        h = ((v - v_th).abs() * -1.0 + margin).max_with_scalar(0.0)
        if squared:
            h = h * h
        terms.append(h.sum())
    total = add_n(terms) if len(terms) > 1 else terms[0]
    return total * (1.0 / (batch * t_steps * layer_count))


def layer_constraints(record: ForwardRecord, margin: float, squared: bool = False):
    """One constraint value per spiking layer of a recorded forward pass."""
    if not record.states:
        raise ValueError("forward record holds no membrane potentials; run with record=True")
    n_layers = len(record.states)
    return [membrane_constraint(st.v, st.v_th, margin, layer_count=n_layers, squared=squared)
            for st in record.states]


def total_loss(task_loss: Tensor, constraints: Sequence[Tensor], lam: float) -> Tensor:
    """``task_loss + lam * sum(constraints)``."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if lam == 0 or not constraints:
        return task_loss
    return task_loss + add_n(list(constraints)) * lam


def lambda_schedule(epoch: int, epoch_max: int, lambda_max: float) -> float:
    """``0.5 * lambda_max * (1 - cos(pi * epoch / epoch_max))``."""
    if not 0 <= epoch <= epoch_max:
        raise ValueError(f"epoch {epoch} outside [0, {epoch_max}]")
    if epoch == 0:
        return 0.0
    if epoch == epoch_max:
        return float(lambda_max)
    return 0.5 * lambda_max * (1.0 - math.cos(math.pi * epoch / epoch_max))


def threshold_neighbor_fraction(record_or_potentials, v_th: float, margin: float) -> float:
    """Fraction of recorded potentials with ``|V - v_th| < margin``."""
    values = _flatten_potentials(record_or_potentials)
    if values.size == 0:
        raise ValueError("no recorded potentials")
    return float(np.mean(np.abs(values - v_th) < margin))


def _flatten_potentials(obj) -> np.ndarray:
    if isinstance(obj, ForwardRecord):
        if not obj.states:
            raise ValueError("forward record holds no membrane potentials; run with record=True")
        return np.concatenate([p.ravel() for p in obj.potentials()])
    if isinstance(obj, np.ndarray):
        return obj.ravel()
    return np.concatenate([np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64).ravel()
                           for p in obj]) if len(obj) else np.zeros(0)
