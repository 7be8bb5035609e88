"""Optimizer updates and their degenerate-case identities."""

import numpy as np
import pytest

from rnnlab import (ContractError, DivergenceError, OptimizerConfig,
                    OptimizerState, RnnParams)
from rnnlab.optim import step
from rnnlab.params import PARAM_FIELDS, param_map


def random_params(seed, hidden=4, notes=5):
    rng = np.random.default_rng(seed)
    return RnnParams(rng.normal(0, 0.3, (hidden, notes)),
                     rng.normal(0, 0.3, (hidden, hidden)),
                     rng.normal(0, 0.3, (notes, hidden)),
                     rng.normal(0, 0.3, hidden), rng.normal(0, 0.3, notes))


def quadratic_grad(params):
    loss = 0.5 * sum(float((getattr(params, f) ** 2).sum())
                     for f in PARAM_FIELDS)
    return loss, param_map(lambda a: a.copy(), params)


def test_config_validation():
    with pytest.raises(ContractError):
        OptimizerConfig(method="adam")
    with pytest.raises(ContractError):
        OptimizerConfig(mu=1.0)
    with pytest.raises(ContractError):
        OptimizerConfig(step_rate=0.0)
    with pytest.raises(ContractError):
        OptimizerConfig(decay=1.0)


def test_mu_zero_momentum_and_nag_equal_plain_sgd_bitwise():
    p0 = random_params(0)
    states = {m: OptimizerState.init(OptimizerConfig(m, mu=0.0,
                                                     step_rate=0.05), p0)
              for m in ("momentum", "nag")}
    params = {m: p0.copy() for m in ("momentum", "nag")}
    sgd = p0.copy()
    for _ in range(100):
        for m in ("momentum", "nag"):
            states[m], params[m], _ = step(states[m], params[m],
                                           quadratic_grad)
        _, g = quadratic_grad(sgd)
        sgd = param_map(lambda a, b: a - 0.05 * b, sgd, g, cls=RnnParams)
    for m in ("momentum", "nag"):
        for name in PARAM_FIELDS:
            assert np.array_equal(getattr(params[m], name),
                                  getattr(sgd, name))


def test_nag_differs_from_momentum_when_mu_positive():
    p0 = random_params(1)
    sm = OptimizerState.init(OptimizerConfig("momentum", mu=0.9,
                                             step_rate=0.05), p0)
    sn = OptimizerState.init(OptimizerConfig("nag", mu=0.9,
                                             step_rate=0.05), p0)
    pm, pn = p0.copy(), p0.copy()
    for _ in range(3):
        sm, pm, _ = step(sm, pm, quadratic_grad)
        sn, pn, _ = step(sn, pn, quadratic_grad)
    assert not np.allclose(pm.w_hh, pn.w_hh)


def test_nag_evaluates_gradient_at_lookahead_point():
    p0 = random_params(2)
    cfg = OptimizerConfig("nag", mu=0.9, step_rate=0.05)
    state = OptimizerState.init(cfg, p0)
    state, p1, _ = step(state, p0, quadratic_grad)  # first step: v = 0
    seen = []

    def spy(params):
        seen.append(params.w_hh.copy())
        return quadratic_grad(params)

    step(state, p1, spy)
    lookahead = p1.w_hh + cfg.mu * state.velocity.w_hh
    assert np.allclose(seen[0], lookahead, atol=1e-15)


def test_momentum_converges_on_quadratic():
    p = random_params(3)
    state = OptimizerState.init(OptimizerConfig("momentum", mu=0.9,
                                                step_rate=0.1), p)
    for _ in range(200):
        state, p, loss = step(state, p, quadratic_grad)
    assert loss < 1e-6


def test_rmsprop_step_size_invariant_to_gradient_scale():
    def last_step_size(scale):
        p = random_params(4)
        state = OptimizerState.init(OptimizerConfig("rmsprop", mu=0.0,
                                                    step_rate=0.01), p)
        delta = None
        for _ in range(500):
            g = param_map(lambda a: np.full_like(a, scale), p)
            old = p.w_hh.copy()
            state, p, _ = step(state, p, lambda _: (0.0, g))
            delta = np.abs(p.w_hh - old).mean()
        return delta

    assert last_step_size(3.0) == pytest.approx(last_step_size(300.0),
                                                rel=0.01)


def test_divergence_on_non_finite_gradient():
    p = random_params(5)
    state = OptimizerState.init(OptimizerConfig("momentum"), p)
    bad = param_map(lambda a: np.full_like(a, np.inf), p)
    with pytest.raises(DivergenceError):
        step(state, p, lambda _: (1.0, bad))
    with pytest.raises(DivergenceError):
        step(state, p, lambda _: (float("nan"),
                                  param_map(np.zeros_like, p)))


def test_step_does_not_mutate_inputs():
    p = random_params(6)
    digest = p.sha256()
    state = OptimizerState.init(OptimizerConfig("rmsprop"), p)
    v_before = state.velocity.w_hh.copy()
    step(state, p, quadratic_grad)
    assert p.sha256() == digest
    assert np.array_equal(state.velocity.w_hh, v_before)
