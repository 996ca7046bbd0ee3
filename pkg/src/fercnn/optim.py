"""Class-weighted softmax cross-entropy (fused over logits) and the five
stochastic optimizers: sgd, sgd+momentum, adam, nadam, adamax.

The nadam rule here is the schedule-free Nesterov variant (no decaying
momentum schedule): with t' = t+1,

    m <- b1*m + (1-b1)*g          v <- b2*v + (1-b2)*g^2
    vhat = v / (1 - b2^t')
    w <- w - lr * (b1*m/(1-b1^(t'+1)) + (1-b1)*g/(1-b1^t')) / (sqrt(vhat)+eps)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError

OPTIMIZER_KINDS = ("sgd", "momentum", "adam", "nadam", "adamax")


@dataclass
class OptimizerConfig:
    kind: str = "nadam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    momentum_coeff: float = 0.9

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}; choose from {OPTIMIZER_KINDS}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        for name in ("beta1", "beta2", "momentum_coeff"):
            val = getattr(self, name)
            if not 0.0 <= val < 1.0:
                raise ValueError(f"{name} must be in [0,1), got {val}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass
class OptimizerState:
    """Step counter plus per-parameter moment accumulators, lazily shaped to
    match each parameter on first use."""

    t: int = 0
    slots: dict = field(default_factory=dict)

    def slot(self, key: str, param: np.ndarray, names: tuple[str, ...]) -> dict:
        entry = self.slots.get(key)
        if entry is None:
            entry = {n: np.zeros_like(param, dtype=np.float64 if param.dtype == np.float64 else np.float32)
                     for n in names}
            self.slots[key] = entry
        return entry


def optimizer_step(config: OptimizerConfig, state: OptimizerState,
                   params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
    """One update over every parameter, in place. `params` and `grads` map the
    same keys to same-shaped arrays; state advances by exactly one step."""
    if set(params) != set(grads):
        raise ValueError("params and grads must cover the same keys")
    for key, g in grads.items():
        if g.shape != params[key].shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {params[key].shape} for {key}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {key}")

    state.t += 1
    t = state.t
    lr, b1, b2, eps = config.learning_rate, config.beta1, config.beta2, config.epsilon

    for key, w in params.items():
        g = grads[key]
        if config.kind == "sgd":
            w -= lr * g
        elif config.kind == "momentum":
            s = state.slot(key, w, ("vel",))
            s["vel"][...] = config.momentum_coeff * s["vel"] + g
            w -= lr * s["vel"]
        elif config.kind == "adam":
            s = state.slot(key, w, ("m", "v"))
            s["m"][...] = b1 * s["m"] + (1 - b1) * g
            s["v"][...] = b2 * s["v"] + (1 - b2) * g * g
            m_hat = s["m"] / (1 - b1 ** t)
            v_hat = s["v"] / (1 - b2 ** t)
            w -= lr * m_hat / (np.sqrt(v_hat) + eps)
        elif config.kind == "nadam":
            s = state.slot(key, w, ("m", "v"))
            s["m"][...] = b1 * s["m"] + (1 - b1) * g
            s["v"][...] = b2 * s["v"] + (1 - b2) * g * g
            v_hat = s["v"] / (1 - b2 ** t)
            nesterov = b1 * s["m"] / (1 - b1 ** (t + 1)) + (1 - b1) * g / (1 - b1 ** t)
            w -= lr * nesterov / (np.sqrt(v_hat) + eps)
        elif config.kind == "adamax":
            s = state.slot(key, w, ("m", "u"))
            s["m"][...] = b1 * s["m"] + (1 - b1) * g
            s["u"][...] = np.maximum(b2 * s["u"], np.abs(g))
            w -= (lr / (1 - b1 ** t)) * s["m"] / (s["u"] + eps)
    return params, state


@dataclass
class ClassWeights:
    """Per-class loss multipliers; all positive."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1:
            raise ValueError("class weights must be a flat vector")
        if (self.weights <= 0).any():
            raise ValueError("class weights must all be > 0")

    @classmethod
    def uniform(cls, n_classes: int = 7) -> "ClassWeights":
        return cls(np.ones(n_classes))


def weighted_softmax_cross_entropy(logits: np.ndarray, labels, weights: ClassWeights | None = None):
    """Mean of per-sample -w_y * log p_y, computed in log-sum-exp form (never
    a log of a stored probability). Returns (loss, dlogits) where each dlogits
    row is (w_y / batch) * (p - onehot(y))."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must be in 0..{k - 1}")
    if weights is None:
        w = np.ones(k, dtype=logits.dtype)
    else:
        w = np.asarray(weights.weights, dtype=logits.dtype)
        if w.shape != (k,):
            raise ValueError(f"expected {k} class weights, got {w.shape}")

    zmax = logits.max(axis=1, keepdims=True)
    shifted = logits - zmax
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + zmax
    logp = logits - lse
    wy = w[labels]
    loss = float(np.mean(-wy * logp[np.arange(n), labels]))

    p = np.exp(logp)
    dlogits = p * (wy / n)[:, None]
    dlogits[np.arange(n), labels] -= wy / n
    return loss, dlogits.astype(logits.dtype, copy=False)
