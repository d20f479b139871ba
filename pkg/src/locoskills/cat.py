"""Constraints as terminations: violation-driven termination probability and its schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CMAX_FLOOR = 1e-6


@dataclass
class CatState:
    names: list
    final_pmax: np.ndarray
    ramp_start_fraction: float = 0.7
    ema_rate: float = 0.05
    c_max: np.ndarray = None
    p_max: np.ndarray = None

    def __post_init__(self):
        self.final_pmax = np.asarray(self.final_pmax, dtype=np.float64)
        n = len(self.names)
        if self.final_pmax.shape != (n,):
            raise ValueError("final_pmax needs one value per constraint")
        if np.any((self.final_pmax < 0.0) | (self.final_pmax > 1.0)):
            raise ValueError("final_pmax must lie in [0, 1]")
        if self.c_max is None:
            self.c_max = np.ones(n)
        if self.p_max is None:
            self.p_max = np.zeros(n)
        self.c_max = np.maximum(np.asarray(self.c_max, dtype=np.float64), CMAX_FLOOR)
        self.p_max = np.asarray(self.p_max, dtype=np.float64)

    @classmethod
    def from_constraints(cls, constraints, ema_rate=0.05):
        return cls(
            [c.name for c in constraints],
            [c.final_pmax for c in constraints],
            constraints[0].ramp_start_fraction if constraints else 0.7,
            ema_rate,
        )


def positive_violation(c):
    return np.maximum(0.0, c)


def delta(cat: CatState, violations) -> np.ndarray:
    """Termination probability max_i p_max_i * clip(c+_i / c_max_i, 0, 1).

    ``violations`` holds c+ with the constraint index on the last axis.
    """
    v = np.asarray(violations, dtype=np.float64)
    return np.max(cat.p_max * np.clip(v / cat.c_max, 0.0, 1.0), axis=-1)


def update_cmax(cat: CatState, batch_violations) -> CatState:
    """EMA of the per-constraint batch maximum of c+, floored at 1e-6."""
    v = np.asarray(batch_violations, dtype=np.float64).reshape(-1, len(cat.names))
    if v.shape[0] == 0:
        raise ValueError("empty violation batch")
    batch_max = v.max(axis=0)
    cat.c_max = np.maximum((1.0 - cat.ema_rate) * cat.c_max + cat.ema_rate * batch_max, CMAX_FLOOR)
    return cat


def effective_discount(delta_t, gamma):
    return gamma * (1.0 - np.asarray(delta_t, dtype=np.float64))


def pmax_at(final, epoch, total_epochs, start_fraction=0.7):
    """Zero until ``start_fraction`` of training, then a linear ramp reaching ``final``."""
    if epoch > total_epochs:
        raise ValueError("epoch exceeds total_epochs")
    final = np.asarray(final, dtype=np.float64)
    start = start_fraction * total_epochs
    if epoch < start:
        return np.zeros_like(final)
    if total_epochs <= start:
        return final.copy()
    return final * (epoch - start) / (total_epochs - start)


def schedule_pmax(cat: CatState, epoch, total_epochs) -> CatState:
    cat.p_max = np.maximum(cat.p_max, pmax_at(cat.final_pmax, epoch, total_epochs, cat.ramp_start_fraction))
    return cat
