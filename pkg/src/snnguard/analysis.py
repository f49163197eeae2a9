"""Numerical checks of the robustness theory and the diagnostic plots' raw data.

Everything here treats a model as a map ``f: R^n -> R^m`` evaluated one row
at a time. Anything exposing ``logits(x, rng)`` works, and so does a plain
callable ``Tensor -> Tensor``. Maps must be deterministic: build the smooth
proxy or switch membrane noise off first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .network import ForwardRecord, SnnModel, forward, input_gradient, loss as cross_entropy
from .neurons import NeuronParams, flip_probability
from .tensor import Tensor, backward
from .tgo import threshold_neighbor_fraction

Map = Callable[[Tensor], Tensor]


class JacobianConvergenceError(RuntimeError):
    def __init__(self, message: str, estimate: "JacobianEstimate"):
        super().__init__(message)
        self.estimate = estimate


class RegionCapError(RuntimeError):
    pass


# ------------------------------------------------------------------ plumbing
def as_map(model) -> Map:
    """Row-wise map ``Tensor[B x n] -> Tensor[B x m]`` for a model or callable."""
    if hasattr(model, "logits"):
        if getattr(model, "stochastic", False):
            raise ValueError("analysis needs a deterministic model; switch noise off or use the smooth proxy")
        net = model.frozen()
        return lambda xt: net.logits(xt, None)
    if callable(model):
        return model
    raise TypeError(f"cannot treat {type(model).__name__} as a map")


def _row(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 1:
        raise ValueError(f"expected a single input vector, got shape {x.shape}")
    return x


def evaluate_rows(f: Map, xs: np.ndarray, chunk: int = 4096) -> np.ndarray:
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    return np.concatenate([f(Tensor(xs[s:s + chunk])).data for s in range(0, len(xs), chunk)])


def vjp(f: Map, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``J(x)^T u`` by one reverse pass."""
    xt = Tensor(_row(x)[None], requires_grad=True)
    out = f(xt)
    if not out.requires_grad:
        return np.zeros(xt.shape[1])
    backward((out * Tensor(np.asarray(u, dtype=np.float64).reshape(out.shape))).sum())
    return np.zeros(xt.shape[1]) if xt.grad is None else xt.grad[0].copy()


def jvp_fd(f: Map, x: np.ndarray, v: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """``J(x) v`` by a central difference along ``v``."""
    x = _row(x)
    pair = evaluate_rows(f, np.stack([x + step * v, x - step * v]))
    return (pair[0] - pair[1]) / (2.0 * step)


def dense_jacobian(f: Map, x: np.ndarray) -> np.ndarray:
    """Exact Jacobian from one reverse pass per output (small maps only)."""
    x = _row(x)
    m = evaluate_rows(f, x[None]).shape[1]
    return np.stack([vjp(f, x, np.eye(m)[i]) for i in range(m)])


# ------------------------------------------------------- Jacobian spectral norm
@dataclass
class JacobianEstimate:
    spectral_norm: float
    iterations: int
    residual: float
    direction: np.ndarray  # unit input direction attaining the estimate
    converged: bool = True


def jacobian_spectral_norm(model, x, tol: float = 1e-12, max_iters: int = 1000,
                           seed: int = 0, fd_step: float = 1e-6) -> JacobianEstimate:
    """Largest singular value of the input Jacobian by power iteration on ``J^T J``.

    ``J^T u`` comes from reverse mode and ``J v`` from central differences.
    Stops when successive estimates of ``sigma^2`` differ by less than
    ``tol * max(1, sigma^2)``; raises :class:`JacobianConvergenceError`
    otherwise.
    """
    f = as_map(model)
    x = _row(x)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=x.shape)
    v /= np.linalg.norm(v)
    prev = None
    residual = np.inf
    for it in range(1, max_iters + 1):
        jv = jvp_fd(f, x, v, fd_step)
        eig = float(jv @ jv)  # Rayleigh quotient v^T J^T J v
        w = vjp(f, x, jv)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return JacobianEstimate(0.0, it, 0.0, v)
        if prev is not None:
            residual = abs(eig - prev)
            if residual < tol * max(1.0, eig):
                return JacobianEstimate(float(np.sqrt(eig)), it, residual, v)
        prev = eig
        v = w / norm_w
    est = JacobianEstimate(float(np.sqrt(prev)), max_iters, residual, v, converged=False)
    raise JacobianConvergenceError(f"power iteration did not converge in {max_iters} steps "
                                   f"(last residual {residual:.3e})", est)


# ------------------------------------------------------------- adversarial measure
def sample_directions(n: int, samples: int, p_norm, rng: np.random.Generator) -> np.ndarray:
    """Directions in the unit ``p_norm`` ball.

    p=2: uniform on the sphere. p=inf: half random sign vertices, half
    uniform points of the cube.
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    if p_norm == 2:
        d = rng.normal(size=(samples, n))
        return d / np.linalg.norm(d, axis=1, keepdims=True)
    if p_norm in (np.inf, "inf"):
        k = (samples + 1) // 2
        vertices = rng.choice([-1.0, 1.0], size=(k, n))
        interior = rng.uniform(-1.0, 1.0, size=(samples - k, n))
        return np.concatenate([vertices, interior])
    raise ValueError(f"p_norm must be 2 or inf, got {p_norm!r}")


def output_changes(model, x, epsilon: float, directions: np.ndarray) -> np.ndarray:
    """``||f(x + eps d) - f(x)||^2`` for every row ``d`` of ``directions``."""
    f = as_map(model)
    x = _row(x)
    base = evaluate_rows(f, x[None])[0]
    moved = evaluate_rows(f, x[None] + epsilon * directions)
    return np.sum((moved - base) ** 2, axis=1)


def empirical_radv(model, x, epsilon: float, p_norm=2, samples: int = 1000,
                   rng: Optional[np.random.Generator] = None,
                   directions: Optional[np.ndarray] = None) -> float:
    """Largest squared output change over sampled directions: a lower bound on the true max."""
    if epsilon == 0:
        return 0.0
    x = _row(x)
    if directions is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        directions = sample_directions(len(x), samples, p_norm, rng)
    return float(output_changes(model, x, epsilon, directions).max())


@dataclass
class RatioReport:
    epsilons: np.ndarray
    ratios: np.ndarray
    aligned_ratios: np.ndarray  # ratio along +-the top singular direction alone
    slopes: np.ndarray  # (r - 1) / eps per epsilon
    fitted_c: float
    spectral_norm: float
    stable: bool
    passed: bool
    tolerance: float = 0.2
    note: str = ""


def verify_first_order_bound(proxy_model, x, epsilons: Sequence[float], samples: int = 2000,
                             seed: int = 0, tolerance: float = 0.2,
                             linear_slack: float = 1e-9) -> RatioReport:
    """Ratio test ``r(eps) = sqrt(radv) / (eps ||J||)`` over a shrinking sequence.

    The same random directions plus +-the top singular direction are used
    for every epsilon. With ``c_i = (r_i - 1) / eps_i``, the fitted ``c``
    is their median; the test passes when every ``c_i`` lies within
    ``tolerance`` of it. If no ratio exceeds ``1 + linear_slack`` there is
    no measurable second-order excess and the test passes with ``c = 0``.
    """
    x = _row(x)
    eps = np.asarray(epsilons, dtype=np.float64)
    if len(eps) < 2 or np.any(np.diff(eps) >= 0) or np.any(eps <= 0):
        raise ValueError("epsilons must be a positive decreasing sequence of length >= 2")
    jac = jacobian_spectral_norm(proxy_model, x)
    if jac.spectral_norm == 0:
        raise ValueError("zero Jacobian: the ratio is undefined")
    rng = np.random.default_rng(seed)
    top = np.stack([jac.direction, -jac.direction])
    dirs = np.concatenate([top, sample_directions(len(x), samples, 2, rng)])
    ratios, aligned = [], []
    for e in eps:
        change = output_changes(proxy_model, x, e, dirs)
        ratios.append(np.sqrt(change.max()) / (e * jac.spectral_norm))
        aligned.append(np.sqrt(change[:2].max()) / (e * jac.spectral_norm))
    ratios, aligned = np.array(ratios), np.array(aligned)
    slopes = (ratios - 1.0) / eps
    if np.all(ratios <= 1.0 + linear_slack):
        return RatioReport(eps, ratios, aligned, slopes, 0.0, jac.spectral_norm, True, True, tolerance,
                           "no excess over the first-order term")
    c = float(np.median(slopes))
    stable = bool(c > 0 and np.all(np.abs(slopes - c) <= tolerance * c))
    passed = stable and bool(np.all(ratios <= 1.0 + (1 + tolerance) * c * eps))
    return RatioReport(eps, ratios, aligned, slopes, c, jac.spectral_norm, stable, passed, tolerance)


# ----------------------------------------------------------------- regions
def spike_patterns(model: SnnModel, xs: np.ndarray) -> np.ndarray:
    """Boolean spike signature per input row: all layers, all timesteps, flattened."""
    rec = forward(model.frozen(), np.atleast_2d(xs), record=True, rng=None)
    parts = [np.moveaxis(s, 1, 0).reshape(len(xs), -1) for s in rec.spikes()]
    return np.concatenate(parts, axis=1) > 0.5


def forward_with_pattern(model: SnnModel, xs: np.ndarray, pattern: np.ndarray) -> np.ndarray:
    """Network output with every spike pinned to ``pattern``: an affine function of the input."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    pattern = np.asarray(pattern, dtype=np.float64)
    sizes = [l.shape[0] for l in model.layers]
    # unpack the flat signature into [layer][t] slices
    spikes, offset = [], 0
    for n in sizes:
        block = pattern[offset:offset + n * model.t_steps].reshape(model.t_steps, n)
        spikes.append(block)
        offset += n * model.t_steps
    u = [np.zeros((len(xs), n)) for n in sizes]
    last_v, last_s = [], []
    drive = xs @ model.layers[0].weight.data.T
    for t in range(model.t_steps):
        current = drive
        for i, layer in enumerate(model.layers):
            if i > 0:
                current = np.broadcast_to(spikes[i - 1][t] @ layer.weight.data.T, (len(xs), sizes[i]))
            v = layer.neuron.tau * u[i] + current
            s = spikes[i][t]
            u[i] = v * (1.0 - s) + s * layer.neuron.v_reset
            if i == len(model.layers) - 1:
                last_v.append(v)
                last_s.append(np.broadcast_to(s, v.shape))
    last = last_s if model.decoder == "rate" else last_v
    return (sum(last) @ model.readout.data.T) / model.t_steps


@dataclass
class RegionEnumeration:
    patterns: List[bytes]
    affine_maps: List[Tuple[np.ndarray, np.ndarray]]  # (A [m x n], b [m]) per pattern
    counts: List[int]
    max_residual: float
    center_pattern: bytes

    @property
    def K(self) -> int:
        return len(self.patterns)


def ball_samples(n: int, samples: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points of the unit l2 ball in R^n."""
    d = sample_directions(n, samples, 2, rng)
    return d * rng.uniform(size=(samples, 1)) ** (1.0 / n)


def _affine_for(model: SnnModel, pattern: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    probes = np.vstack([np.zeros(n), np.eye(n)])
    out = forward_with_pattern(model, probes, pattern)
    b = out[0]
    return (out[1:] - b).T, b


def enumerate_regions(model: SnnModel, x, epsilon: float, samples: int = 10000,
                      rng: Optional[np.random.Generator] = None, cap: int = 64,
                      offsets: Optional[np.ndarray] = None) -> RegionEnumeration:
    """Distinct spike patterns met in the l2 ball of radius ``epsilon`` around ``x``.

    ``offsets`` (rows in the unit ball) may be passed to reuse the same
    sample positions at several radii. For each pattern the affine map is
    read off by probing the pattern-pinned network at the origin and the
    unit vectors, then checked against the real network on every sample
    that realizes it.
    """
    if model.stochastic:
        raise ValueError("region enumeration needs a deterministic model")
    x = _row(x)
    if offsets is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        offsets = ball_samples(len(x), samples, rng)
    pts = np.vstack([x[None], x[None] + epsilon * offsets])
    pats = spike_patterns(model, pts)
    outputs = evaluate_rows(as_map(model), pts)
    keys = [p.tobytes() for p in pats]
    order: Dict[bytes, int] = {}
    for k in keys:
        if k not in order:
            if len(order) >= cap:
                raise RegionCapError(f"more than {cap} spike patterns in the ball; model too large to enumerate")
            order[k] = len(order)
    groups: List[List[int]] = [[] for _ in order]
    for i, k in enumerate(keys):
        groups[order[k]].append(i)
    maps, counts, worst = [], [], 0.0
    for key, idx in zip(order, groups):
        pattern = pats[idx[0]]
        A, b = _affine_for(model, pattern, len(x))
        residual = np.abs(outputs[idx] - (pts[idx] @ A.T + b)).max()
        worst = max(worst, float(residual))
        maps.append((A, b))
        counts.append(len(idx))
    return RegionEnumeration(list(order), maps, counts, worst, keys[0])


@dataclass
class RegionBoundReport:
    holds: bool
    bound: float  # eps^2 * max_k ||A_k||_2^2
    max_change: float
    max_operator_norm: float
    violations: List[Tuple[np.ndarray, float]] = field(default_factory=list)  # (delta, squared change)
    within_region_residual: float = 0.0
    unseen_patterns: int = 0


def verify_region_bound(enumeration: RegionEnumeration, model: SnnModel, x, epsilon: float,
                        samples: int = 10000, rng: Optional[np.random.Generator] = None,
                        offsets: Optional[np.ndarray] = None, max_witnesses: int = 5) -> RegionBoundReport:
    """Check ``||f(x + eps d) - f(x)||^2 <= eps^2 max_k ||A_k||_2^2`` for sampled ``||d|| <= 1``.

    Where ``x + eps d`` shares the pattern of ``x`` the exact identity
    ``f(x + eps d) - f(x) = eps A d`` is checked as well. Violations are
    returned with their witnessing ``d``.
    """
    x = _row(x)
    if offsets is None:
        rng = rng if rng is not None else np.random.default_rng(1)
        offsets = ball_samples(len(x), samples, rng)
    norm = max(np.linalg.norm(A, 2) for A, _ in enumeration.affine_maps)
    bound = epsilon ** 2 * norm ** 2
    f = as_map(model)
    base = evaluate_rows(f, x[None])[0]
    pts = x[None] + epsilon * offsets
    diff = evaluate_rows(f, pts) - base
    change = np.sum(diff ** 2, axis=1)
    slack = 1e-12 * max(bound, 1e-300)
    bad = np.flatnonzero(change > bound + slack)
    witnesses = [(offsets[i].copy(), float(change[i])) for i in bad[:max_witnesses]]
    pats = spike_patterns(model, pts)
    known = set(enumeration.patterns)
    keys = [p.tobytes() for p in pats]
    unseen = sum(k not in known for k in keys)
    same = np.array([k == enumeration.center_pattern for k in keys])
    residual = 0.0
    if same.any():
        A = enumeration.affine_maps[enumeration.patterns.index(enumeration.center_pattern)][0]
        residual = float(np.abs(diff[same] - epsilon * offsets[same] @ A.T).max())
    return RegionBoundReport(len(bad) == 0, bound, float(change.max()), float(norm), witnesses, residual, unseen)


def loglog_slope(epsilons, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(epsilons)``."""
    return float(np.polyfit(np.log(epsilons), np.log(values), 1)[0])


# ---------------------------------------------------------------- landscape
@dataclass
class LandscapeGrid:
    alphas: np.ndarray
    betas: np.ndarray
    losses: np.ndarray  # [len(alphas) x len(betas)]
    d1: np.ndarray
    d2: np.ndarray
    gradient_direction: bool = True  # False when d1 fell back to a random direction


def _axis(extent: float, points: int) -> np.ndarray:
    a = extent * np.linspace(-1.0, 1.0, points)
    a[np.abs(a) < 1e-12 * max(extent, 1.0)] = 0.0
    return a


def landscape_grid(loss_at: Callable[[np.ndarray], float], theta: np.ndarray, gradient: np.ndarray,
                   extent: float = 1.0, points: int = 21, seed: int = 0) -> LandscapeGrid:
    """Loss on the plane ``theta + a d1 + b d2`` with ``d1`` the normalized gradient.

    ``d2`` is a random unit vector orthogonalized against ``d1``. A zero
    gradient falls back to two random orthonormal directions.
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    rng = np.random.default_rng(seed)
    g = np.asarray(gradient, dtype=np.float64).ravel()
    norm = np.linalg.norm(g)
    from_gradient = norm > 0
    d1 = g / norm if from_gradient else _unit(rng.normal(size=theta.shape))
    r = rng.normal(size=theta.shape)
    d2 = r - (r @ d1) * d1
    d2 = _unit(d2 - (d2 @ d1) * d1)
    alphas, betas = _axis(extent, points), _axis(extent, points)
    losses = np.array([[loss_at(theta + a * d1 + b * d2) for b in betas] for a in alphas])
    return LandscapeGrid(alphas, betas, losses, d1, d2, from_gradient)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def loss_landscape(model: SnnModel, x, labels, extent: float = 1.0, points: int = 21,
                   seed: int = 0, noise_seed: int = 0) -> LandscapeGrid:
    """Weight-space loss landscape around a trained model.

    Noisy models are evaluated with the same noise draw (``noise_seed``) at
    every grid point so the surface is not blurred by resampling.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if len(x) == 0:
        raise ValueError("empty batch")
    arrays = model.parameter_arrays()
    shapes = [a.shape for a in arrays]
    sizes = [a.size for a in arrays]
    theta = np.concatenate([a.ravel() for a in arrays])

    def unpack(vec):
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return [p.reshape(s) for p, s in zip(parts, shapes)]

    def loss_at(vec):
        net = model.with_parameters(unpack(vec), trainable=False)
        rng = np.random.default_rng(noise_seed) if net.stochastic else None
        return cross_entropy(net.logits(Tensor(x), rng), labels).item()

    from .network import weight_gradients
    rng = np.random.default_rng(noise_seed) if model.stochastic else None
    grads, _, _ = weight_gradients(model, x, labels, rng=rng)
    return landscape_grid(loss_at, theta, np.concatenate([g.ravel() for g in grads]), extent, points, seed)


# ----------------------------------------------------------------- heatmaps
SPARSITY_RELATIVE = 1e-3


@dataclass
class GradientHeatmap:
    grad: np.ndarray
    sparsity: float
    all_zero: bool = False


def sparsity(g: np.ndarray, relative: float = SPARSITY_RELATIVE) -> Tuple[float, bool]:
    """Fraction of entries below ``relative * max|g|``; an all-zero array counts as fully sparse."""
    g = np.abs(np.asarray(g, dtype=np.float64))
    top = g.max() if g.size else 0.0
    if top == 0:
        return 1.0, True
    return float(np.mean(g < relative * top)), False


def gradient_heatmap(model, x, label, rng: Optional[np.random.Generator] = None,
                     loss_scale: float = 1.0) -> GradientHeatmap:
    """``|d loss / d x|`` for one input and its relative-threshold sparsity."""
    x = np.asarray(x, dtype=np.float64)
    row = x.reshape(1, -1)
    loss_fn = None if loss_scale == 1.0 else (lambda z, y: cross_entropy(z, y) * loss_scale)
    g = np.abs(input_gradient(model, row, np.atleast_1d(label), rng, loss_fn)).reshape(x.shape)
    s, zero = sparsity(g)
    return GradientHeatmap(g, s, zero)


def batch_sparsity(model, x, labels, seed: int = 0) -> np.ndarray:
    """Per-sample sparsity; noisy models use one seeded draw per sample."""
    out = np.empty(len(x))
    for i in range(len(x)):
        rng = np.random.default_rng([seed, i]) if getattr(model, "stochastic", False) else None
        out[i] = gradient_heatmap(model, x[i], labels[i], rng).sparsity
    return out


# --------------------------------------------------------------- histograms
@dataclass
class MembraneHistogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: int
    overflow: int
    neighbor_fraction: float

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow


def _potentials(record) -> Tuple[np.ndarray, float]:
    if isinstance(record, ForwardRecord):
        if not record.states:
            raise ValueError("forward record holds no membrane potentials; run with record=True")
        v = np.concatenate([p.ravel() for p in record.potentials()])
        return v, record.states[0].v_th
    return np.asarray(record, dtype=np.float64).ravel(), None


def membrane_histogram(record, bins: int = 40, value_range: Tuple[float, float] = (-1.0, 3.0),
                       v_th: Optional[float] = None, margin: float = 0.2) -> MembraneHistogram:
    """Counts of recorded potentials per bin.

    Values below ``value_range[0]`` go to ``underflow`` and values above
    ``value_range[1]`` to ``overflow``; the upper edge itself belongs to
    the last bin.
    """
    v, rec_th = _potentials(record)
    if v.size == 0:
        raise ValueError("no recorded potentials")
    v_th = rec_th if v_th is None else v_th
    v_th = 1.0 if v_th is None else v_th
    lo, hi = value_range
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    return MembraneHistogram(edges, counts, int(np.sum(v < lo)), int(np.sum(v > hi)),
                             threshold_neighbor_fraction(v, v_th, margin))


# -------------------------------------------------------------------- flips
@dataclass
class FlipReport:
    rate: float
    per_layer: List[float]
    bin_edges: np.ndarray  # distance-to-threshold edges, last one inf
    bin_entries: np.ndarray
    bin_flips: np.ndarray

    @property
    def bin_rates(self) -> np.ndarray:
        return np.divide(self.bin_flips, self.bin_entries, out=np.zeros(len(self.bin_flips)),
                         where=self.bin_entries > 0)


def flip_rate_under_attack(model: SnnModel, x, x_adv, shared_seed: int = 0, margin: float = 0.2,
                           bins: int = 3) -> FlipReport:
    """Share of (neuron, timestep) spikes that differ between clean and attacked runs.

    Both runs use the noise stream ``default_rng(shared_seed)``. Flips are
    cross-tabulated by the clean potential's distance to threshold in bins
    ``[0, m), [m, 2m), ..., [bins*m, inf)`` with ``m = margin``.
    """
    x, x_adv = np.atleast_2d(x), np.atleast_2d(x_adv)
    if x.shape != x_adv.shape:
        raise ValueError(f"clean batch {x.shape} and attacked batch {x_adv.shape} differ in shape")
    net = model.frozen()
    clean = forward(net, x, record=True, rng=np.random.default_rng(shared_seed))
    adv = forward(net, x_adv, record=True, rng=np.random.default_rng(shared_seed))
    edges = np.append(margin * np.arange(bins + 1), np.inf)
    entries = np.zeros(bins + 1, dtype=np.int64)
    flips = np.zeros(bins + 1, dtype=np.int64)
    per_layer, n_flip, n_all = [], 0, 0
    for st_c, st_a in zip(clean.states, adv.states):
        changed = st_c.spikes() != st_a.spikes()
        per_layer.append(float(changed.mean()))
        n_flip += int(changed.sum())
        n_all += changed.size
        dist = np.abs(st_c.potentials() - st_c.v_th).ravel()
        which = np.searchsorted(edges, dist, side="right") - 1
        entries += np.bincount(which, minlength=bins + 1)
        flips += np.bincount(which, weights=changed.ravel(), minlength=bins + 1).astype(np.int64)
    return FlipReport(n_flip / n_all, per_layer, edges, entries, flips)


@dataclass
class JitterFlipStudy:
    empirical: np.ndarray  # per (sample, neuron) flip frequency
    analytic: np.ndarray
    spearman: float


def jitter_flip_study(model: SnnModel, x, jitter_std: float, draws: int = 2000, seed: int = 0,
                      min_probability: float = 0.0) -> JitterFlipStudy:
    """Empirical vs analytic flip rate of first-layer, first-step neurons under input jitter.

    Input noise ``N(0, s^2 I)`` moves neuron ``i``'s potential by
    ``N(0, s^2 ||W_i||^2)``, so its analytic flip probability is the
    Gaussian flip formula with ``sigma_i = s ||W_i||`` at the clean
    potential. Entries whose analytic probability is below
    ``min_probability`` are dropped before ranking.
    """
    from scipy.stats import spearmanr

    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    layer = model.layers[0]
    W = layer.weight.data
    params = NeuronParams(layer.neuron.tau, layer.neuron.v_th, layer.neuron.v_reset, 0.0)
    v = x @ W.T  # t = 1: u_prev = 0
    sigma = jitter_std * np.linalg.norm(W, axis=1)
    fired = v >= params.v_th
    rng = np.random.default_rng(seed)
    counts = np.zeros_like(v)
    for _ in range(draws):
        vj = (x + rng.normal(0.0, jitter_std, size=x.shape)) @ W.T
        counts += (vj >= params.v_th) != fired
    empirical = (counts / draws).ravel()
    analytic = np.asarray(flip_probability(v, params, np.broadcast_to(sigma, v.shape))).ravel()
    keep = analytic >= min_probability
    rho = float(spearmanr(empirical[keep], analytic[keep]).correlation)
    return JitterFlipStudy(empirical[keep], analytic[keep], rho)
