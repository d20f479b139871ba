"""GAN-style transition discriminator and its imitation reward."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import FeedForwardNet, sigmoid

CLAMP = 1e-7


@dataclass
class GanDiscriminator:
    net: FeedForwardNet  # (2F,) -> logit
    weight_decay: float = 1e-4
    gradient_penalty: bool = False  # kept off; no penalty is implemented

    @classmethod
    def build(cls, transition_dim, hidden=(256, 256), weight_decay=1e-4, rng=None):
        return cls(FeedForwardNet.build([transition_dim, *hidden, 1], activation="relu", rng=rng), weight_decay)

    def params(self):
        return self.net.params()

    def logits(self, transitions):
        return self.net.predict(np.atleast_2d(transitions))[:, 0]


def discriminate(d: GanDiscriminator, transitions):
    """Probability that each transition came from the dataset."""
    out = sigmoid(d.logits(transitions))
    return out if np.ndim(transitions) > 1 else float(out[0])


def imitation_reward(prob):
    """-log(1 - D) with D clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(prob, CLAMP, 1.0 - CLAMP)
    return -np.log1p(-p)


def gan_reward(d: GanDiscriminator, transitions):
    return imitation_reward(discriminate(d, transitions))


def _decay(d: GanDiscriminator):
    weights = d.net.params()[0::2]
    value = 0.5 * d.weight_decay * sum(float(np.sum(w * w)) for w in weights)
    grads = []
    for k, p in enumerate(d.net.params()):
        grads.append(d.weight_decay * p if k % 2 == 0 else np.zeros_like(p))
    return value, grads


def gan_loss(d: GanDiscriminator, dataset_batch, policy_batch):
    """Binary cross-entropy (dataset -> 1, policy -> 0) plus L2 weight decay.

    Returns ``(loss, grads)``; probabilities are clamped before the logs, so
    saturated rows contribute no gradient.
    """
    xm = np.atleast_2d(dataset_batch)
    xp = np.atleast_2d(policy_batch)
    if len(xm) == 0 or len(xp) == 0:
        raise ValueError("both batches must be non-empty")
    nm = xm.shape[0]
    logits, cache = d.net.forward_cached(np.concatenate([xm, xp], axis=0))
    p = sigmoid(logits[:, 0])
    pc = np.clip(p, CLAMP, 1.0 - CLAMP)
    inside = (p > CLAMP) & (p < 1.0 - CLAMP)
    lm = -np.mean(np.log(pc[:nm]))
    lp = -np.mean(np.log1p(-pc[nm:]))
    decay, decay_grads = _decay(d)
    # d/dlogit of -log(p) = -(1 - p); of -log(1 - p) = p
    g = np.empty_like(p)
    g[:nm] = -(1.0 - p[:nm]) / nm
    g[nm:] = p[nm:] / xp.shape[0]
    g *= inside
    grads, _ = d.net.backward(g[:, None], cache, input_grad=False)
    grads = [a + b for a, b in zip(grads, decay_grads)]
    return float(lm + lp + decay), grads
