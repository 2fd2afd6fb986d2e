"""Adadelta on dictionaries of numpy parameters."""

from __future__ import annotations

from typing import Mapping

import numpy as np

RHO = 0.95
EPS = 1e-8


def init_adadelta(params: Mapping[str, np.ndarray]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    return {k: (np.zeros_like(v), np.zeros_like(v)) for k, v in params.items()}


def adadelta_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
                  state: Mapping[str, tuple[np.ndarray, np.ndarray]], rho: float = RHO,
                  eps: float = EPS, lr: float = 1.0):
    """One Adadelta update; returns (new_params, new_state).

    state[name] = (E[g^2], E[dx^2]). Parameters without a gradient entry are
    left untouched.
    """
    new_params = dict(params)
    new_state = dict(state)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} vs parameter shape {p.shape}")
        acc_g, acc_dx = state[name]
        acc_g = rho * acc_g + (1.0 - rho) * g * g
        update = np.sqrt(acc_dx + eps) / np.sqrt(acc_g + eps) * g
        acc_dx = rho * acc_dx + (1.0 - rho) * update * update
        new_params[name] = p - lr * update
        new_state[name] = (acc_g, acc_dx)
    return new_params, new_state
