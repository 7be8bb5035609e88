"""First-order optimizers: SGD with classical momentum, Nesterov accelerated
gradient, and rmsprop combined with momentum.

momentum:  v <- mu v - eps * grad(theta);           theta <- theta + v
nag:       v <- mu v - eps * grad(theta + mu v);    theta <- theta + v
rmsprop:   r <- gamma r + (1 - gamma) g^2
           v <- mu v - eps * g / sqrt(r + floor);   theta <- theta + v
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, DivergenceError
from .params import Gradients, RnnParams, param_map

METHODS = ("momentum", "nag", "rmsprop")


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "rmsprop"
    mu: float = 0.9          # momentum coefficient
    step_rate: float = 1e-3
    decay: float = 0.9       # rmsprop accumulator decay
    epsilon: float = 1e-8    # rmsprop numerical floor

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown optimizer method {self.method!r}")
        if not 0.0 <= self.mu < 1.0:
            raise ContractError("mu must lie in [0, 1)")
        if self.step_rate <= 0:
            raise ContractError("step_rate must be > 0")
        if not 0.0 < self.decay < 1.0:
            raise ContractError("decay must lie in (0, 1)")


@dataclass
class OptimizerState:
    config: OptimizerConfig
    velocity: Gradients
    accum: Optional[Gradients] = None  # rmsprop only

    @classmethod
    def init(cls, config: OptimizerConfig, params: RnnParams) -> "OptimizerState":
        accum = Gradients.zeros_like(params) if config.method == "rmsprop" else None
        return cls(config=config, velocity=Gradients.zeros_like(params),
                   accum=accum)


def step(state: OptimizerState, params: RnnParams, grad_fn):
    """One optimizer update. grad_fn(params) -> (loss, Gradients) and must be
    evaluable at arbitrary parameter values (NAG evaluates at the lookahead
    point theta + mu v). Returns (new_state, new_params, loss).

    Raises DivergenceError on non-finite loss or gradients; the caller reports
    the trial as diverged.
    """
    cfg = state.config
    v = state.velocity

    if cfg.method == "nag":
        lookahead = param_map(lambda th, vv: th + cfg.mu * vv, params, v,
                              cls=RnnParams)
        loss, g = grad_fn(lookahead)
    else:
        loss, g = grad_fn(params)
    if not np.isfinite(loss) or not g.all_finite():
        raise DivergenceError(f"non-finite loss/gradient (loss={loss})")

    if cfg.method == "rmsprop":
        r = param_map(lambda rr, gg: cfg.decay * rr + (1.0 - cfg.decay) * gg * gg,
                      state.accum, g)
        v_new = param_map(
            lambda vv, gg, rr: cfg.mu * vv - cfg.step_rate * gg / np.sqrt(rr + cfg.epsilon),
            v, g, r)
    else:
        r = state.accum
        v_new = param_map(lambda vv, gg: cfg.mu * vv - cfg.step_rate * gg, v, g)

    try:
        new_params = param_map(lambda th, vv: th + vv, params, v_new,
                               cls=RnnParams)
    except ContractError as exc:
        raise DivergenceError(f"non-finite parameters after update: {exc}") from exc
    return OptimizerState(config=cfg, velocity=v_new, accum=r), new_params, loss
