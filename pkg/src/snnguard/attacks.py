"""l-infinity gradient-sign attacks: FGSM, RFGSM, PGD, multi-targeted PGD, APGD, EoT.

Every attack works on any model exposing ``logits(x, rng) -> Tensor``,
``frozen()`` and ``stochastic``. Randomness (start points and membrane noise)
comes from ``np.random.default_rng(cfg.seed)`` unless an explicit generator
is passed, so a seeded attack is byte-reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .network import input_gradient, loss as cross_entropy, margin_loss, per_sample_loss
from .tensor import Tensor, backward

ATTACK_KINDS = ("fgsm", "rfgsm", "pgd", "mtpgd", "apgd")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "fgsm"
    epsilon: float = 8 / 255
    step: float = 0.01
    iterations: int = 1
    random_init: bool = False
    eot_repeats: int = 1
    targets: Optional[Tuple[int, ...]] = None
    seed: int = 0
    name: str = ""
    grad_clip: float = 1.0
    momentum: float = 0.75

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {ATTACK_KINDS}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.iterations > 1 and not self.step > 0:
            raise ValueError(f"step must be > 0 for iterated attacks, got {self.step}")
        if self.eot_repeats < 1:
            raise ValueError(f"eot_repeats must be >= 1, got {self.eot_repeats}")
        if self.targets is not None:
            object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind in ("pgd", "mtpgd", "apgd"):
            return f"{self.kind.upper()}{self.iterations}"
        return self.kind.upper()


def project(z: np.ndarray, x: np.ndarray, epsilon: float) -> np.ndarray:
    """Clip onto the l-inf ball of radius ``epsilon`` around ``x``, then onto [0, 1]."""
    return np.clip(np.clip(z, x - epsilon, x + epsilon), 0.0, 1.0)


def _rng(cfg: AttackConfig, rng: Optional[np.random.Generator]) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(cfg.seed)


# ------------------------------------------------------------------ gradients
def eot_gradient(model, x, labels, repeats: int, rng: Optional[np.random.Generator] = None,
                 loss_fn=None) -> np.ndarray:
    """Input gradient averaged over ``repeats`` independent noise draws.

    A deterministic model needs no averaging, so its plain gradient is
    returned unchanged for every ``repeats``.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    if not getattr(model, "stochastic", False):
        return input_gradient(model, x, labels, rng, loss_fn)
    if rng is None:
        raise ValueError("a noisy model needs an rng for EoT sampling")
    acc = input_gradient(model, x, labels, rng, loss_fn)
    for _ in range(repeats - 1):
        acc = acc + input_gradient(model, x, labels, rng, loss_fn)
    return acc / repeats


def _loss_and_gradient(model, x, labels, repeats, rng, loss_fn=None):
    """Per-sample cross-entropy and the input gradient of ``loss_fn`` (EoT-averaged)."""
    loss_fn = loss_fn or cross_entropy
    draws = repeats if getattr(model, "stochastic", False) else 1
    net = model.frozen()
    losses, grad = 0.0, 0.0
    for _ in range(draws):
        xt = Tensor(x, requires_grad=True)
        logits = net.logits(xt, rng)
        backward(loss_fn(logits, labels))
        losses = losses + per_sample_loss(logits.data, labels)
        grad = grad + xt.grad
    if draws == 1:
        return losses, grad
    return losses / draws, grad / draws


def _gradient(model, x, labels, cfg, rng, loss_fn=None):
    return eot_gradient(model, x, labels, cfg.eot_repeats, rng, loss_fn)


# -------------------------------------------------------------------- attacks
def fgsm(model, x, labels, cfg: AttackConfig, rng=None) -> np.ndarray:
    """One signed-gradient step of size epsilon, clipped to [0, 1]. sign(0) = 0."""
    x = np.asarray(x, dtype=np.float64)
    if cfg.epsilon == 0:
        return x.copy()
    g = _gradient(model, x, labels, cfg, _rng(cfg, rng))
    return project(x + cfg.epsilon * np.sign(g), x, cfg.epsilon)


def rfgsm(model, x, labels, cfg: AttackConfig, rng=None) -> np.ndarray:
    """Uniform start in [-eps/2, eps/2], then one signed step of eps/2, projected."""
    x = np.asarray(x, dtype=np.float64)
    if cfg.epsilon == 0:
        return x.copy()
    rng = _rng(cfg, rng)
    half = cfg.epsilon / 2
    start = np.clip(x + rng.uniform(-half, half, size=x.shape), 0.0, 1.0)
    g = _gradient(model, start, labels, cfg, rng)
    return project(start + half * np.sign(g), x, cfg.epsilon)


def pgd(model, x, labels, cfg: AttackConfig, rng=None, loss_fn=None) -> np.ndarray:
    """``iterations`` signed steps of size ``step``, each projected back onto the ball."""
    x = np.asarray(x, dtype=np.float64)
    if cfg.epsilon == 0:
        return x.copy()
    rng = _rng(cfg, rng)
    adv = x.copy()
    if cfg.random_init:
        adv = project(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), x, cfg.epsilon)
    for _ in range(cfg.iterations):
        g = _gradient(model, adv, labels, cfg, rng, loss_fn)
        adv = project(adv + cfg.step * np.sign(g), x, cfg.epsilon)
    return adv


def _clip_rows(g: np.ndarray, bound: float) -> np.ndarray:
    norms = np.linalg.norm(g.reshape(len(g), -1), axis=1)
    factor = np.minimum(1.0, bound / np.maximum(norms, 1e-300))
    return g * factor.reshape((-1,) + (1,) * (g.ndim - 1))


def targeted_pgd(model, x, labels, targets, cfg: AttackConfig, rng) -> np.ndarray:
    """PGD ascent on ``logit[target] - logit[label]`` from a random start.

    Each step's gradient is l2-clipped per sample to ``cfg.grad_clip`` before
    the sign is taken.
    """
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    adv = project(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), x, cfg.epsilon)
    objective = lambda z, y: margin_loss(z, y, targets)  # noqa: E731
    for _ in range(cfg.iterations):
        g = _clip_rows(_gradient(model, adv, labels, cfg, rng, objective), cfg.grad_clip)
        adv = project(adv + cfg.step * np.sign(g), x, cfg.epsilon)
    return adv


def _target_sets(labels: np.ndarray, n_classes: int, targets) -> List[np.ndarray]:
    if targets is None:
        return [(labels + k) % n_classes for k in range(1, n_classes)]
    if len(targets) == 0:
        raise ValueError("mtpgd needs at least one target class")
    return [np.full_like(labels, c) for c in targets]


def _scoring_loss(model, x, labels, rng) -> np.ndarray:
    return per_sample_loss(model.frozen().logits(Tensor(x), rng).data, labels)


def mtpgd(model, x, labels, cfg: AttackConfig, rng=None, return_candidates: bool = False):
    """Multi-targeted PGD: one targeted run per wrong class, keep the highest-loss result per sample.

    Candidates are scored by cross-entropy. With noisy models every candidate
    is scored under the same noise draw so the comparison is paired.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if cfg.epsilon == 0:
        return (x.copy(), []) if return_candidates else x.copy()
    rng = _rng(cfg, rng)
    sets = _target_sets(labels, model.n_classes, cfg.targets)
    score_seed = int(rng.integers(2**63 - 1))
    best = x.copy()
    best_loss = np.full(len(x), -np.inf)
    candidates = []
    for tgt in sets:
        cand = targeted_pgd(model, x, labels, tgt, cfg, rng)
        cand_loss = _scoring_loss(model, cand, labels, np.random.default_rng(score_seed))
        cand_loss = np.where(tgt == labels, -np.inf, cand_loss)
        candidates.append((cand, cand_loss))
        better = cand_loss > best_loss
        best[better] = cand[better]
        best_loss = np.where(better, cand_loss, best_loss)
    return (best, candidates) if return_candidates else best


def apgd_checkpoints(iterations: int) -> List[int]:
    """Iterations at which APGD reconsiders its step size.

    Fractions p0 = 0, p1 = 0.22, p_{j+1} = p_j + max(p_j - p_{j-1} - 0.03, 0.06).
    """
    p = [0.0, 0.22]
    while p[-1] < 1.0:
        p.append(p[-1] + max(p[-1] - p[-2] - 0.03, 0.06))
    points = sorted({int(math.ceil(q * iterations - 1e-9)) for q in p[1:] if q <= 1.0 + 1e-12})
    return [w for w in points if 0 < w < iterations]


def apgd(model, x, labels, cfg: AttackConfig, rng=None, return_history: bool = False):
    """Simplified Auto-PGD with cross-entropy.

    Signed steps start at ``2 * epsilon`` and are mixed with the previous
    move through ``cfg.momentum``. At each checkpoint a sample's step is
    halved (and it restarts from its best point) if fewer than 75% of the
    steps since the last checkpoint raised its loss, or if neither its step
    nor its best loss changed over the last interval. The best iterate by
    loss is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if cfg.epsilon == 0:
        return (x.copy(), []) if return_history else x.copy()
    rng = _rng(cfg, rng)
    n = len(x)
    shape = (-1,) + (1,) * (x.ndim - 1)
    eta = np.full(n, 2.0 * cfg.epsilon)
    alpha = cfg.momentum
    cur = x.copy()
    if cfg.random_init:
        cur = project(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), x, cfg.epsilon)
    loss, g = _loss_and_gradient(model, cur, labels, cfg.eot_repeats, rng)
    best, best_loss = cur.copy(), loss.copy()
    prev = cur.copy()
    checkpoints = set(apgd_checkpoints(cfg.iterations))
    increases = np.zeros(n)
    last_eta = eta.copy()
    loss_at_checkpoint = best_loss.copy()
    since = 0
    history = [best_loss.copy()]
    prev_loss = loss
    for k in range(1, cfg.iterations):
        z = project(cur + eta.reshape(shape) * np.sign(g), x, cfg.epsilon)
        a = 1.0 if k == 1 else alpha
        nxt = project(cur + a * (z - cur) + (1 - a) * (cur - prev), x, cfg.epsilon)
        prev, cur = cur, nxt
        loss, g = _loss_and_gradient(model, cur, labels, cfg.eot_repeats, rng)
        increases += loss > prev_loss
        prev_loss = loss
        since += 1
        improved = loss > best_loss
        best[improved] = cur[improved]
        best_loss = np.where(improved, loss, best_loss)
        if k in checkpoints:
            stalled = (eta == last_eta) & (best_loss == loss_at_checkpoint)
            halve = (increases < 0.75 * since) | stalled
            last_eta = eta.copy()
            eta = np.where(halve, eta / 2.0, eta)
            if halve.any():
                cur = cur.copy()
                cur[halve] = best[halve]
                prev = prev.copy()
                prev[halve] = best[halve]
                loss, g = _loss_and_gradient(model, cur, labels, cfg.eot_repeats, rng)
                prev_loss = loss
            increases[:] = 0
            since = 0
            loss_at_checkpoint = best_loss.copy()
            history.append(best_loss.copy())
    history.append(best_loss.copy())
    return (best, history) if return_history else best


ATTACKS = {"fgsm": fgsm, "rfgsm": rfgsm, "pgd": pgd, "mtpgd": mtpgd, "apgd": apgd}


def run_attack(model, x, labels, cfg: AttackConfig, rng=None) -> np.ndarray:
    return ATTACKS[cfg.kind](model, x, labels, cfg, rng)
