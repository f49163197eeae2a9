"""Time-unrolled dense spiking networks, cross-entropy, and BPTT gradients."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .neurons import NeuronParams, SurrogateSpec, lif_step, sample_noise
from .tensor import ShapeError, Tensor, add_n, backward, pick

DECODERS = ("rate", "membrane")


@dataclass
class LayerSpec:
    weight: Tensor  # [out x in]
    neuron: NeuronParams = NeuronParams()
    surrogate: SurrogateSpec = SurrogateSpec()

    @property
    def shape(self):
        return self.weight.shape


@dataclass
class NeuronLayerState:
    """Per-timestep pre-reset potentials ``v``, spikes ``s`` and post-reset potentials ``u``."""

    v: List[Tensor] = field(default_factory=list)
    s: List[Tensor] = field(default_factory=list)
    u: List[Tensor] = field(default_factory=list)
    v_th: float = 1.0

    def potentials(self) -> np.ndarray:
        """Stacked ``v`` as an array of shape [T, batch, neurons]."""
        return np.stack([t.data for t in self.v])

    def spikes(self) -> np.ndarray:
        return np.stack([t.data for t in self.s])


@dataclass
class ForwardRecord:
    logits: Tensor
    states: List[NeuronLayerState] = field(default_factory=list)

    def potentials(self) -> List[np.ndarray]:
        return [st.potentials() for st in self.states]

    def spikes(self) -> List[np.ndarray]:
        return [st.spikes() for st in self.states]


@dataclass
class SnnModel:
    """Dense spiking MLP with direct-current input coding and a linear readout.

    ``decoder="rate"`` averages ``readout @ S_last[t]`` over time (the
    training decoder); ``decoder="membrane"`` reads the last layer's
    pre-reset potentials instead, which makes the network piecewise affine
    in its input for region analysis.
    """

    layers: List[LayerSpec]
    readout: Tensor  # [classes x out_last]
    t_steps: int = 4
    decoder: str = "rate"
    noise_active: bool = True
    detach_reset: bool = False
    proxy_temperature: Optional[float] = None

    def __post_init__(self):
        if self.t_steps < 1:
            raise ValueError(f"t_steps must be >= 1, got {self.t_steps}")
        if self.decoder not in DECODERS:
            raise ValueError(f"unknown decoder {self.decoder!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise ShapeError(f"layer shapes do not chain: {prev.shape} -> {nxt.shape}")
        if self.layers and self.readout.shape[1] != self.layers[-1].shape[0]:
            raise ShapeError(f"readout {self.readout.shape} does not match last layer {self.layers[-1].shape}")

    @property
    def n_inputs(self) -> int:
        return self.layers[0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.readout.shape[0]

    @property
    def stochastic(self) -> bool:
        return self.noise_active and any(l.neuron.noise_variance > 0 for l in self.layers)

    def parameters(self) -> List[Tensor]:
        return [l.weight for l in self.layers] + [self.readout]

    def parameter_arrays(self) -> List[np.ndarray]:
        return [p.data for p in self.parameters()]

    def with_parameters(self, arrays: Sequence[np.ndarray], trainable: bool = True) -> "SnnModel":
        arrays = list(arrays)
        if len(arrays) != len(self.layers) + 1:
            raise ValueError(f"expected {len(self.layers) + 1} arrays, got {len(arrays)}")
        layers = []
        for layer, arr in zip(self.layers, arrays):
            if arr.shape != layer.shape:
                raise ShapeError(f"weight shape {arr.shape} does not match layer {layer.shape}")
            layers.append(dataclasses.replace(layer, weight=Tensor(arr, requires_grad=trainable)))
        if arrays[-1].shape != self.readout.shape:
            raise ShapeError(f"readout shape {arrays[-1].shape} does not match {self.readout.shape}")
        return dataclasses.replace(self, layers=layers, readout=Tensor(arrays[-1], requires_grad=trainable))

    def frozen(self) -> "SnnModel":
        """Same model with constant weights, for input-space gradients."""
        return self.with_parameters(self.parameter_arrays(), trainable=False)

    def replace(self, **changes) -> "SnnModel":
        return dataclasses.replace(self, **changes)

    def logits(self, x, rng: Optional[np.random.Generator] = None) -> Tensor:
        return forward(self, x, record=False, rng=rng).logits


def init_model(layer_sizes: Sequence[int], n_classes: int, rng: np.random.Generator,
               t_steps: int = 4, neuron: NeuronParams = NeuronParams(),
               surrogate: SurrogateSpec = SurrogateSpec(), gain: float = 1.0,
               decoder: str = "rate") -> SnnModel:
    """Uniform fan-in init: each weight ~ U(-a, a) with ``a = gain * sqrt(3 / fan_in)``.

    ``gain=1`` gives unit variance per unit of input energy; spiking layers
    with v_th=1 usually want 2-4 so that neurons reach threshold at all.
    """
    layers = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        a = gain * np.sqrt(3.0 / fan_in)
        layers.append(LayerSpec(Tensor(rng.uniform(-a, a, size=(fan_out, fan_in)), requires_grad=True),
                                neuron, surrogate))
    a = np.sqrt(3.0 / layer_sizes[-1])
    readout = Tensor(rng.uniform(-a, a, size=(n_classes, layer_sizes[-1])), requires_grad=True)
    return SnnModel(layers, readout, t_steps=t_steps, decoder=decoder)


def forward(model: SnnModel, x, record: bool = False,
            rng: Optional[np.random.Generator] = None) -> ForwardRecord:
    """Run all T steps. Noise (if any) is drawn in (timestep, layer) order from ``rng``."""
    if not model.layers:
        raise ValueError("model has no layers")
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise ShapeError(f"input shape {x.shape} does not match model input width {model.n_inputs}")
    if model.stochastic and rng is None:
        raise ValueError("a noisy model needs an rng to draw membrane noise from")
    batch = x.shape[0]
    states = [NeuronLayerState(v_th=l.neuron.v_th) for l in model.layers]
    u = [Tensor(np.zeros((batch, l.shape[0]))) for l in model.layers]
    drive = x @ model.layers[0].weight.T  # constant current, identical every step
    for _ in range(model.t_steps):
        current = drive
        for i, layer in enumerate(model.layers):
            if i > 0:
                current = states[i - 1].s[-1] @ layer.weight.T
            noise = sample_noise(current.shape, layer.neuron, rng) if model.stochastic else None
            v, s, u[i] = lif_step(u[i], current, layer.neuron, noise, layer.surrogate,
                                  model.detach_reset, model.proxy_temperature)
            states[i].v.append(v)
            states[i].s.append(s)
            states[i].u.append(u[i])
    last = states[-1].s if model.decoder == "rate" else states[-1].v
    logits = (add_n(last) @ model.readout.T) * (1.0 / model.t_steps)
    return ForwardRecord(logits, states if record else [])


def smooth_proxy(model: SnnModel, temperature: float = 0.1) -> SnnModel:
    """Copy of ``model`` with every spike replaced by ``sigmoid((v - v_th) / temperature)``."""
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    return model.replace(proxy_temperature=float(temperature))


# ------------------------------------------------------------------- losses
def _check_labels(labels, batch: int, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape != (batch,):
        raise ShapeError(f"{labels.shape[0]} labels for a batch of {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"label out of range [0, {classes}): {labels.min()}..{labels.max()}")
    return labels


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def per_sample_loss(logits: np.ndarray, labels) -> np.ndarray:
    labels = _check_labels(labels, logits.shape[0], logits.shape[1])
    return -log_softmax(logits)[np.arange(len(labels)), labels]


def loss(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy ``-log softmax(logits)[y]`` as a single tape node."""
    z = logits.data
    labels = _check_labels(labels, z.shape[0], z.shape[1])
    lsm = log_softmax(z)
    batch = z.shape[0]
    value = -lsm[np.arange(batch), labels].mean()

    def back(g):
        p = np.exp(lsm)
        p[np.arange(batch), labels] -= 1.0
        return (p * (float(g) / batch),)

    return Tensor.from_op(np.asarray(value), (logits,), back, "cross_entropy")


cross_entropy = loss


def margin_loss(logits: Tensor, labels, targets) -> Tensor:
    """Mean targeted margin ``logit[target] - logit[label]``."""
    return (pick(logits, targets) - pick(logits, labels)).mean()


def accuracy(logits: np.ndarray, labels) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


# ---------------------------------------------------------------- gradients
LossFn = Callable[[Tensor, np.ndarray], Tensor]


def input_gradient(model, x, labels, rng: Optional[np.random.Generator] = None,
                   loss_fn: Optional[LossFn] = None) -> np.ndarray:
    """d loss / d x for one forward pass (one noise draw if the model is noisy)."""
    loss_fn = loss_fn or loss
    xt = Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
    net = model.frozen()
    value = loss_fn(net.logits(xt, rng), labels)
    backward(value)
    return np.array(xt.grad) if xt.grad is not None else np.zeros(xt.shape)


def weight_gradients(model: SnnModel, x, labels, total_loss_fn=None,
                     rng: Optional[np.random.Generator] = None):
    """Gradients of a scalar objective w.r.t. every weight matrix (readout last).

    ``total_loss_fn(record, labels)`` receives the recorded forward pass, so it
    can add membrane-potential penalties to the task loss. Returns
    ``(grads, loss_value, record)``.
    """
    net = model.with_parameters(model.parameter_arrays(), trainable=True)
    record = forward(net, x, record=True, rng=rng)
    objective = total_loss_fn(record, labels) if total_loss_fn is not None else loss(record.logits, labels)
    backward(objective)
    grads = [np.zeros(p.shape) if p.grad is None else p.grad for p in net.parameters()]
    return grads, objective.item(), record


@dataclass
class LinearModel:
    """Plain softmax-linear classifier ``logits = x @ W.T``; a closed-form reference for tests and demos."""

    weight: Tensor  # [classes x inputs]
    stochastic: bool = False

    def logits(self, x, rng=None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        return x @ self.weight.T

    def frozen(self) -> "LinearModel":
        return LinearModel(Tensor(self.weight.data))

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]
