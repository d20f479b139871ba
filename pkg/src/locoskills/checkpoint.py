"""Plain-JSON checkpoints.

A checkpoint file holds one or more tagged components (policy, value, gan,
diffusion, encoder, high-level), each with its hyperparameters, layer shapes,
flattened parameters and optimizer moments, plus the training epoch, the
config hash and whatever loop state is needed to resume bit-for-bit.
Floats are written with ``repr`` precision, so a load restores every
parameter exactly.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from . import adversary, diffdisc, skills
from .numkit import AdamState, net_from_dict, net_to_dict
from .policy import GaussianPolicy

FORMAT_VERSION = 1
COMPONENT_TAGS = ("policy", "value", "gan", "diffusion", "encoder", "high-level")


class CheckpointError(ValueError):
    pass


def _arr(x):
    return np.asarray(x, dtype=np.float64).tolist()


def optimizer_to_dict(opt) -> dict | None:
    if opt is None:
        return None
    st: AdamState = opt.state
    return {
        "step": st.step, "lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps,
        "m": [_arr(m) for m in st.m], "v": [_arr(v) for v in st.v],
    }


def optimizer_load(opt, d):
    if opt is None or d is None:
        return
    st: AdamState = opt.state
    if len(d["m"]) != len(st.m):
        raise CheckpointError("optimizer state does not match the parameter list")
    st.step, st.lr, st.beta1, st.beta2, st.eps = int(d["step"]), d["lr"], d["beta1"], d["beta2"], d["eps"]
    for k in range(len(st.m)):
        st.m[k][...] = np.asarray(d["m"][k]).reshape(st.m[k].shape)
        st.v[k][...] = np.asarray(d["v"][k]).reshape(st.v[k].shape)


def component_to_dict(tag: str, model, optimizer=None) -> dict:
    if tag not in COMPONENT_TAGS:
        raise CheckpointError(f"unknown component tag {tag!r}")
    rec = {"component": tag, "hyperparameters": {}}
    if tag in ("policy", "high-level"):
        rec["network"] = net_to_dict(model.mean_net)
        rec["log_std"] = _arr(model.log_std)
    elif tag == "value":
        rec["network"] = net_to_dict(model)
    elif tag == "gan":
        rec["network"] = net_to_dict(model.net)
        rec["hyperparameters"] = {"weight_decay": model.weight_decay, "gradient_penalty": model.gradient_penalty}
    elif tag == "diffusion":
        rec["network"] = net_to_dict(model.net)
        rec["hyperparameters"] = {
            "weight_decay": model.weight_decay, "k": model.k, "steps": model.schedule.steps,
            "label_dataset": _arr(model.label_dataset), "label_policy": _arr(model.label_policy),
        }
    elif tag == "encoder":
        rec["network"] = net_to_dict(model.net)
        rec["hyperparameters"] = {"kappa": model.kappa}
    rec["optimizer"] = optimizer_to_dict(optimizer)
    return rec


def component_from_dict(rec: dict, expect: str | None = None):
    tag = rec.get("component")
    if tag not in COMPONENT_TAGS:
        raise CheckpointError(f"unknown component tag {tag!r}")
    if expect is not None and tag != expect:
        raise CheckpointError(f"expected a {expect!r} component, found {tag!r}")
    try:
        net = net_from_dict(rec["network"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{tag}: bad network record ({exc})") from None
    hp = rec.get("hyperparameters", {})
    if tag in ("policy", "high-level"):
        log_std = np.asarray(rec["log_std"], dtype=np.float64)
        if log_std.shape != (net.output_dim,):
            raise CheckpointError(f"{tag}: log_std has {log_std.size} entries, network outputs {net.output_dim}")
        return GaussianPolicy(net, log_std)
    if tag == "value":
        return net
    if tag == "gan":
        return adversary.GanDiscriminator(net, hp["weight_decay"], hp.get("gradient_penalty", False))
    if tag == "diffusion":
        return diffdisc.DiffusionDiscriminator(
            net, diffdisc.DiffusionSchedule(int(hp["steps"])), int(hp["k"]), hp["weight_decay"],
            np.asarray(hp["label_dataset"]), np.asarray(hp["label_policy"]),
        )
    return skills.SkillEncoder(net, hp["kappa"])


def rng_state(rng) -> dict:
    return rng.bit_generator.state


def rng_restore(rng, state):
    rng.bit_generator.state = state


def save(path, kind: str, epoch: int, config_hash: str, components: list, state: dict | None = None):
    """Write atomically: a crash mid-write never leaves a truncated checkpoint behind."""
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "epoch": int(epoch),
        "config_hash": config_hash,
        "components": components,
        "state": state or {},
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)
    return path


def load(path, kind: str | None = None) -> dict:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such checkpoint") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc.msg})") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {doc.get('format_version')!r}")
    if kind is not None and doc.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {doc.get('kind')!r}")
    return doc


def find_component(doc, tag):
    for rec in doc["components"]:
        if rec.get("component") == tag:
            return rec
    tags = [r.get("component") for r in doc["components"]]
    raise CheckpointError(f"checkpoint has no {tag!r} component (found {tags})")


# trainer state ---------------------------------------------------------------------

def _envs_state(envs, names):
    return {n: _arr(getattr(envs, n)) for n in names}


def _envs_restore(envs, d, names):
    for n in names:
        cur = getattr(envs, n)
        setattr(envs, n, np.asarray(d[n], dtype=cur.dtype).reshape(cur.shape))


LOW_ENV_FIELDS = ("state", "last_action", "z", "episode_step", "latent_timer", "episode_return")
HIGH_ENV_FIELDS = ("state", "last_action", "z", "target", "episode_step", "episode_return")


def low_level_components(trainer) -> list:
    a = trainer.agent
    return [
        component_to_dict("policy", a.policy, trainer.policy_opt),
        component_to_dict("value", a.value, trainer.value_opt),
        component_to_dict("encoder", a.encoder, trainer.encoder_opt),
        component_to_dict(a.disc.kind if a.disc.kind == "gan" else "diffusion", a.disc.model, a.disc.opt),
    ]


def save_low_level(path, trainer, config_hash):
    cat = trainer.cat
    state = {
        "rng": {k: rng_state(r) for k, r in trainer.rng.items()},
        "envs": _envs_state(trainer.envs, LOW_ENV_FIELDS),
        "cat": {"c_max": _arr(cat.c_max), "p_max": _arr(cat.p_max)},
        "robot": trainer.agent.robot,
    }
    return save(path, "low-level", trainer.epoch, config_hash, low_level_components(trainer), state)


def restore_low_level(doc, trainer):
    """Load parameters, optimizer moments and loop state into a freshly built trainer."""
    a = trainer.agent
    pol = component_from_dict(find_component(doc, "policy"))
    _copy_params(a.policy.params(), pol.params(), "policy")
    _copy_params(a.value.params(), component_from_dict(find_component(doc, "value")).params(), "value")
    _copy_params(a.encoder.params(), component_from_dict(find_component(doc, "encoder")).params(), "encoder")
    dtag = "gan" if a.disc.kind == "gan" else "diffusion"
    _copy_params(a.disc.model.params(), component_from_dict(find_component(doc, dtag)).params(), dtag)
    optimizer_load(trainer.policy_opt, find_component(doc, "policy")["optimizer"])
    optimizer_load(trainer.value_opt, find_component(doc, "value")["optimizer"])
    optimizer_load(trainer.encoder_opt, find_component(doc, "encoder")["optimizer"])
    optimizer_load(a.disc.opt, find_component(doc, dtag)["optimizer"])
    st = doc["state"]
    for k, r in trainer.rng.items():
        rng_restore(r, st["rng"][k])
    _envs_restore(trainer.envs, st["envs"], LOW_ENV_FIELDS)
    trainer.cat.c_max = np.asarray(st["cat"]["c_max"], dtype=np.float64)
    trainer.cat.p_max = np.asarray(st["cat"]["p_max"], dtype=np.float64)
    trainer.epoch = int(doc["epoch"])


def save_high_level(path, trainer, config_hash, low_checkpoint=None):
    comps = [
        component_to_dict("high-level", trainer.agent.policy, trainer.policy_opt),
        component_to_dict("value", trainer.agent.value, trainer.value_opt),
        component_to_dict("policy", trainer.low.policy),
    ]
    state = {
        "rng": {k: rng_state(r) for k, r in trainer.rng.items()},
        "envs": _envs_state(trainer.envs, HIGH_ENV_FIELDS),
        "low_checkpoint": None if low_checkpoint is None else str(low_checkpoint),
    }
    return save(path, "high-level", trainer.epoch, config_hash, comps, state)


def restore_high_level(doc, trainer):
    _copy_params(trainer.agent.policy.params(), component_from_dict(find_component(doc, "high-level")).params(),
                 "high-level")
    _copy_params(trainer.agent.value.params(), component_from_dict(find_component(doc, "value")).params(), "value")
    optimizer_load(trainer.policy_opt, find_component(doc, "high-level")["optimizer"])
    optimizer_load(trainer.value_opt, find_component(doc, "value")["optimizer"])
    st = doc["state"]
    for k, r in trainer.rng.items():
        rng_restore(r, st["rng"][k])
    _envs_restore(trainer.envs, st["envs"], HIGH_ENV_FIELDS)
    trainer.epoch = int(doc["epoch"])


def _copy_params(dst, src, tag):
    if len(dst) != len(src) or any(d.shape != s.shape for d, s in zip(dst, src)):
        raise CheckpointError(f"{tag}: checkpoint shapes do not match the configured network")
    for d, s in zip(dst, src):
        d[...] = s
