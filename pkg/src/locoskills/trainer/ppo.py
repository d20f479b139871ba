"""PPO pieces: GAE with per-step discounts and the clipped-surrogate update."""
from __future__ import annotations

import numpy as np

from ..numkit import Adam, FeedForwardNet, clip_grad_norm
from ..policy import GaussianPolicy


def compute_gae(rewards, values, last_value, deltas=None, dones=None, gamma=0.99, lam=0.95):
    """Generalised advantage estimation over a (T, N) rollout.

    The discount at step t is ``gamma * (1 - deltas[t])``; ``dones[t]`` marks
    that the transition at t ended an episode, which zeroes the bootstrap.
    Returns ``(advantages, returns)``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    T = rewards.shape[0]
    deltas = np.zeros_like(rewards) if deltas is None else np.asarray(deltas, dtype=np.float64)
    dones = np.zeros_like(rewards) if dones is None else np.asarray(dones, dtype=np.float64)
    disc = gamma * (1.0 - deltas) * (1.0 - dones)
    adv = np.zeros_like(rewards)
    next_value = np.asarray(last_value, dtype=np.float64)
    running = np.zeros_like(next_value)
    for t in range(T - 1, -1, -1):
        td = rewards[t] + disc[t] * next_value - values[t]
        running = td + disc[t] * lam * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def normalize(x, eps=1e-8):
    return (x - x.mean()) / (x.std() + eps)


def surrogate_loss(policy: GaussianPolicy, obs, actions, logp_old, adv, clip=0.2, entropy_coef=0.0):
    """Clipped PPO objective (negated, to minimise) and its gradient in ``policy.params()`` order.

    The returned ``info`` holds the probability ratios and the approximate KL
    ``mean((r - 1) - log r)`` of the new policy from the old one.
    """
    mu, cache = policy.mean_net.forward_cached(obs)
    logp = policy.log_prob(mu, actions)
    log_ratio = logp - logp_old
    ratio = np.exp(log_ratio)
    n = obs.shape[0]
    s1 = ratio * adv
    s2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    loss = -float(np.mean(np.minimum(s1, s2))) - entropy_coef * float(policy.entropy())
    # gradient flows only where the unclipped term is the active minimum
    active = (s1 <= s2).astype(np.float64)
    g_logp = -(active * adv * ratio) / n
    inv_std = np.exp(-policy.log_std)
    zsc = (actions - mu) * inv_std
    g_mu = g_logp[:, None] * zsc * inv_std
    g_logstd = np.sum(g_logp[:, None] * (zsc * zsc - 1.0), axis=0)
    g_logstd = g_logstd - entropy_coef  # entropy gradient is 1 per dimension
    grads, _ = policy.mean_net.backward(g_mu, cache, input_grad=False)
    info = {"ratio": ratio, "approx_kl": float(np.mean((ratio - 1.0) - log_ratio))}
    return loss, grads + [g_logstd], info


def value_loss(value_net: FeedForwardNet, obs, returns):
    """Mean squared error of the value head and its parameter gradients."""
    v, cache = value_net.forward_cached(obs)
    err = v[:, 0] - returns
    grads, _ = value_net.backward((2.0 / obs.shape[0]) * err[:, None], cache, input_grad=False)
    return float(np.mean(err * err)), grads


def ppo_update(
    policy: GaussianPolicy,
    value_net: FeedForwardNet,
    batch: dict,
    cfg,
    rng,
    policy_opt: Adam,
    value_opt: Adam,
    diversity_fn=None,
):
    """Clipped-surrogate policy update plus value regression.

    ``batch`` holds flat arrays ``obs``, ``actions``, ``logp``, ``advantages``,
    ``returns``. ``diversity_fn(idx) -> (loss, grads)`` adds an auxiliary term
    for the rows ``idx``, weighted by ``cfg.diversity_weight``.
    """
    obs, actions, logp_old = batch["obs"], batch["actions"], batch["logp"]
    adv = normalize(batch["advantages"])
    returns = batch["returns"]
    n = obs.shape[0]
    mb = min(cfg.minibatch, n)
    stats = {"policy_loss": [], "value_loss": [], "diversity_loss": [], "approx_kl": [], "clip_frac": []}
    stopped = False
    for _ in range(cfg.ppo_epochs):
        perm = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            idx = perm[start:start + mb]
            loss, grads, info = surrogate_loss(
                policy, obs[idx], actions[idx], logp_old[idx], adv[idx], cfg.clip, cfg.entropy_coef
            )
            approx_kl, ratio = info["approx_kl"], info["ratio"]
            if approx_kl > cfg.max_kl:
                stopped = True
                break
            if diversity_fn is not None and cfg.diversity_weight > 0.0:
                dloss, dgrads = diversity_fn(idx)
                grads = [g + cfg.diversity_weight * d for g, d in zip(grads, dgrads)]
                stats["diversity_loss"].append(dloss)
            grads, _ = clip_grad_norm(grads, cfg.max_grad_norm)
            policy_opt.step(grads)
            np.clip(policy.log_std, cfg.min_log_std, cfg.max_log_std, out=policy.log_std)

            vloss, vgrads = value_loss(value_net, obs[idx], returns[idx])
            vgrads, _ = clip_grad_norm(vgrads, cfg.max_grad_norm)
            value_opt.step(vgrads)

            stats["policy_loss"].append(loss)
            stats["value_loss"].append(vloss)
            stats["approx_kl"].append(approx_kl)
            stats["clip_frac"].append(float(np.mean(np.abs(ratio - 1.0) > cfg.clip)))
        if stopped:
            break
    out = {k: (float(np.mean(v)) if v else 0.0) for k, v in stats.items()}
    out["early_stop"] = stopped
    return out
