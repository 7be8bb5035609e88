"""Perturbation specs/plans, norm penalties, and the noisy-weight moments."""

import numpy as np
import pytest

from rnnlab import (ContractError, PerturbationSpec, RegPenaltySpec,
                    RnnParams, SequenceBatch, effective_weights, forward,
                    norm_penalty, noisy_moments, sample_plan,
                    sampled_activation_grad)


def small_params(seed=0):
    rng = np.random.default_rng(seed)
    return RnnParams(rng.normal(0, 0.5, (3, 4)), rng.normal(0, 0.5, (3, 3)),
                     rng.normal(0, 0.5, (4, 3)), rng.normal(0, 0.5, 3),
                     rng.normal(0, 0.5, 4))


SHAPES = {"w_ih": (3, 4), "w_hh": (3, 3), "w_ho": (4, 3)}


# --- spec validation ---------------------------------------------------------

def test_spec_rejects_unknown_kind_and_scope():
    with pytest.raises(ContractError):
        PerturbationSpec(kind="gaussian")
    with pytest.raises(ContractError):
        PerturbationSpec(kind="additive", scope="per_batch", sigma=0.1)


def test_noise_kinds_require_positive_sigma():
    for kind in ("additive", "multiplicative", "feedforward_additive"):
        with pytest.raises(ContractError):
            PerturbationSpec(kind=kind, targets=("w_ih",))


def test_dropconnect_requires_valid_drop_p():
    with pytest.raises(ContractError):
        PerturbationSpec(kind="dropconnect", drop_p=1.5)


def test_feedforward_noise_is_per_time_step_on_feedforward_weights_only():
    with pytest.raises(ContractError):
        PerturbationSpec(kind="feedforward_additive", sigma=0.1,
                         targets=("w_hh",))
    with pytest.raises(ContractError):
        PerturbationSpec(kind="feedforward_additive", sigma=0.1,
                         scope="per_sequence", targets=("w_ih",))
    PerturbationSpec(kind="feedforward_additive", sigma=0.1,
                     targets=("w_ih", "w_ho"))  # valid


# --- plan sampling -----------------------------------------------------------

def test_per_time_step_plan_has_one_realization_per_step():
    spec = PerturbationSpec(kind="additive", scope="per_time_step", sigma=0.1)
    plan = sample_plan(spec, SHAPES, 7, np.random.default_rng(0))
    assert plan.deltas["w_hh"].shape == (7, 3, 3)
    realizations = [plan.realization("w_hh", t) for t in range(7)]
    assert not np.allclose(realizations[0], realizations[1])


def test_per_sequence_plan_shares_one_realization():
    spec = PerturbationSpec(kind="additive", scope="per_sequence", sigma=0.1)
    plan = sample_plan(spec, SHAPES, 7, np.random.default_rng(0))
    assert plan.deltas["w_hh"].shape == (1, 3, 3)
    assert np.array_equal(plan.realization("w_hh", 0),
                          plan.realization("w_hh", 6))


def test_kind_none_gives_no_plan():
    assert sample_plan(PerturbationSpec(), SHAPES, 5,
                       np.random.default_rng(0)) is None


def test_fresh_plans_are_independent_draws():
    spec = PerturbationSpec(kind="additive", scope="per_sequence", sigma=0.1)
    rng = np.random.default_rng(1)
    p1 = sample_plan(spec, SHAPES, 5, rng)
    p2 = sample_plan(spec, SHAPES, 5, rng)
    assert not np.allclose(p1.deltas["w_hh"], p2.deltas["w_hh"])


def test_noise_is_non_cumulative_across_steps():
    # Each step's effective matrix is clean + that step's draw, not a
    # running sum of previous draws.
    params = small_params()
    spec = PerturbationSpec(kind="additive", scope="per_time_step", sigma=0.1)
    plan = sample_plan(spec, SHAPES, 5, np.random.default_rng(2))
    for t in range(5):
        eff = plan.effective("w_hh", params.w_hh, t)
        assert np.allclose(eff - params.w_hh, plan.deltas["w_hh"][t])


def test_effective_weights_leave_clean_arrays_untouched():
    params = small_params()
    before = params.sha256()
    spec = PerturbationSpec(kind="multiplicative", scope="per_time_step",
                            sigma=0.3, targets=("w_ih", "w_hh", "w_ho"))
    plan = sample_plan(spec, SHAPES, 4, np.random.default_rng(3))
    for t in range(4):
        effective_weights(params, plan, t)
    assert params.sha256() == before


def test_dropconnect_mask_rate_matches_drop_p():
    spec = PerturbationSpec(kind="dropconnect", drop_p=0.3)
    shapes = {"w_hh": (200, 200)}
    plan = sample_plan(spec, shapes, 50, np.random.default_rng(4))
    masks = plan.deltas["w_hh"]
    assert set(np.unique(masks)) <= {0.0, 1.0}
    assert masks.mean() == pytest.approx(0.7, abs=0.005)


def test_multiplicative_noise_preserves_sparsity_additive_destroys_it():
    w = np.array([[0.0, 2.0], [0.0, 0.0]])
    params = RnnParams(np.zeros((2, 3)), w, np.zeros((3, 2)), np.zeros(2),
                       np.zeros(3))
    shapes = {"w_hh": (2, 2)}
    rng = np.random.default_rng(5)
    mult = sample_plan(PerturbationSpec(kind="multiplicative", sigma=0.5),
                       shapes, 3, rng)
    add = sample_plan(PerturbationSpec(kind="additive", sigma=0.5),
                      shapes, 3, rng)
    eff_mult = mult.effective("w_hh", params.w_hh, 1)
    eff_add = add.effective("w_hh", params.w_hh, 1)
    assert np.all(eff_mult[w == 0.0] == 0.0)
    assert np.all(eff_add[w == 0.0] != 0.0)


def test_grad_factor_per_kind():
    rng = np.random.default_rng(6)
    mult = sample_plan(PerturbationSpec(kind="multiplicative", sigma=0.2),
                       SHAPES, 3, rng)
    assert np.allclose(mult.grad_factor("w_hh", 1),
                       1.0 + mult.deltas["w_hh"][1])
    drop = sample_plan(PerturbationSpec(kind="dropconnect", drop_p=0.5),
                       SHAPES, 3, rng)
    assert np.array_equal(drop.grad_factor("w_hh", 2),
                          drop.deltas["w_hh"][2])
    add = sample_plan(PerturbationSpec(kind="additive", sigma=0.2),
                      SHAPES, 3, rng)
    assert add.grad_factor("w_hh", 0) is None
    assert add.grad_factor("w_ih", 0) is None  # untargeted


def test_drop_p_zero_plan_is_identity():
    params = small_params()
    plan = sample_plan(PerturbationSpec(kind="dropconnect", drop_p=0.0),
                       SHAPES, 4, np.random.default_rng(7))
    batch = SequenceBatch(
        (np.random.default_rng(8).random((2, 4, 4)) < 0.3).astype(float))
    clean = forward(params, batch)
    noisy = forward(params, batch, plan=plan)
    assert np.array_equal(clean.outputs, noisy.outputs)


# --- norm penalties ----------------------------------------------------------

def test_l1_penalty_value_and_subgradient():
    params = small_params()
    spec = RegPenaltySpec(norm="L1", lam=0.05)
    value, grads = norm_penalty(params, spec)
    want = 0.05 * sum(np.abs(getattr(params, n)).sum()
                      for n in ("w_ih", "w_hh", "w_ho"))
    assert value == pytest.approx(want, rel=1e-14)
    assert np.allclose(grads.w_hh, 0.05 * np.sign(params.w_hh))
    assert np.all(grads.b_h == 0.0) and np.all(grads.b_o == 0.0)


def test_l2_penalty_value_and_gradient():
    params = small_params()
    spec = RegPenaltySpec(norm="L2", lam=0.01)
    value, grads = norm_penalty(params, spec)
    want = 0.01 * sum((getattr(params, n) ** 2).sum()
                      for n in ("w_ih", "w_hh", "w_ho"))
    assert value == pytest.approx(want, rel=1e-14)
    assert np.allclose(grads.w_ih, 0.02 * params.w_ih)


def test_penalty_spec_validation():
    with pytest.raises(ContractError):
        RegPenaltySpec(norm="L3")
    with pytest.raises(ContractError):
        RegPenaltySpec(lam=-0.1)
    with pytest.raises(ContractError):
        RegPenaltySpec(targets=("b_h",))


# --- noisy-weight moments ----------------------------------------------------

def test_noisy_moments_closed_form():
    w = np.array([1.0, -2.0, 0.5])
    x = np.array([0.2, 1.0, -1.0])
    mean, var = noisy_moments(w, x, 0.1)
    a = float(w @ x)
    assert mean == pytest.approx(a)
    assert var == pytest.approx(0.01 * a * a)


def test_noisy_moments_monte_carlo():
    rng = np.random.default_rng(9)
    w = rng.normal(0, 1, 10)
    x = rng.normal(0, 1, 10)
    sigma = 0.2
    draws = rng.normal(0, sigma, (200_000, 10))
    samples = ((w + draws * w) * x).sum(axis=1)
    mean, var = noisy_moments(w, x, sigma)
    se = samples.std() / np.sqrt(samples.size)
    assert abs(samples.mean() - mean) < 3 * se
    # The exact variance is sigma^2 * sum((w x)^2); the rank-one summary
    # sigma^2 (w^T x)^2 treats the weight noise as a single shared scalar, so
    # compare against the matching simulation.
    shared = ((w + rng.normal(0, sigma, (200_000, 1)) * w) * x).sum(axis=1)
    assert var == pytest.approx(shared.var(), rel=0.03)


def test_sampled_activation_grad_sign_correction():
    w = np.array([-1.0, 0.5])
    x = np.array([1.0, 1.0])  # w^T x = -0.5 < 0
    s, sigma = 0.8, 0.1
    a_hat, grad, reg = sampled_activation_grad(w, x, sigma, s)
    assert a_hat == pytest.approx(-0.5 + s * sigma * 0.5)
    assert np.allclose(reg, -s * sigma * x)  # sign(w^T x) = -1
    # finite-difference check of d a_hat / d w at fixed s
    eps = 1e-7
    for i in range(2):
        wp, wm = w.copy(), w.copy()
        wp[i] += eps
        wm[i] -= eps
        fd = (sampled_activation_grad(wp, x, sigma, s)[0]
              - sampled_activation_grad(wm, x, sigma, s)[0]) / (2 * eps)
        assert grad[i] == pytest.approx(fd, abs=1e-6)
    # the uncorrected form drops the sign factor and disagrees here
    _, grad_u, reg_u = sampled_activation_grad(w, x, sigma, s,
                                               sign_corrected=False)
    assert np.allclose(reg_u, s * sigma * x)
    assert not np.allclose(grad_u, grad)
