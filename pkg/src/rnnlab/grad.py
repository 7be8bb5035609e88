"""Exact backpropagation-through-time for the model, plus a finite-difference
oracle for verifying it.

Gradients are taken with respect to the CLEAN parameters. When a plan
perturbs weights, the gradient w.r.t. a clean matrix sums over steps the
gradient through each step's effective copy, with the elementwise chain
factor (1 + noise) for multiplicative noise and the keep mask for
dropconnect; additive noise contributes factor 1.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .model import (CLIP_HI, CLIP_LO, HIDDEN_ACTS, SequenceBatch, _sigmoid,
                    ce_loss, forward)
from .params import PARAM_FIELDS, Gradients, RnnParams, param_map
from .perturb import PerturbationPlan


def bptt(params: RnnParams, batch: SequenceBatch,
         plan: Optional[PerturbationPlan] = None,
         hidden_act: str = "tanh"):
    """Loss and exact gradients of ce_loss(forward(...)) w.r.t. clean params.

    Returns (loss, Gradients). Gradients are means over the batch, matching
    the loss normalizer. The clean params are never modified.
    """
    trace = forward(params, batch, plan=plan, hidden_act=hidden_act)
    loss = ce_loss(trace, batch)
    grads = Gradients.zeros_like(params)
    u = batch.frames
    n, t_total, d = u.shape
    if t_total < 2:
        return loss, grads
    n_out = t_total - 1
    h = params.n_hidden
    _, dact = HIDDEN_ACTS[hidden_act]
    w_norm = 1.0 / (n * n_out)

    def eff(name, t):
        clean = getattr(params, name)
        return clean if plan is None else plan.effective(name, clean, t)

    def factor(name, t):
        return None if plan is None else plan.grad_factor(name, t)

    def step_factors(name):
        """True if the chain factor differs across steps."""
        return (plan is not None and name in plan.targets
                and plan.kind in ("multiplicative", "dropconnect")
                and plan.per_step)

    # Output-layer error signal. Where the sigmoid output was clamped for the
    # log, the clamp's derivative is zero.
    y = trace.outputs
    x = u[:, 1:, :]
    yc = np.clip(y, CLIP_LO, CLIP_HI)
    inside = (y > CLIP_LO) & (y < CLIP_HI)
    dl_dy = (-(x / yc) + (1.0 - x) / (1.0 - yc)) * w_norm
    g_o = dl_dy * (y * (1.0 - y)) * inside  # [n, T-1, notes]

    grads.b_o[:] = g_o.sum(axis=(0, 1))

    # Backward recurrence through the hidden states.
    dz = np.empty((n, t_total, h))
    dz_next = None
    for t in range(t_total - 1, -1, -1):
        dx = np.zeros((n, h))
        if t <= n_out - 1:
            dx += g_o[:, t] @ eff("w_ho", t)
        if dz_next is not None:
            dx += dz_next @ eff("w_hh", t + 1)
        dz_next = dx * dact(trace.hidden[:, t])
        dz[:, t] = dz_next
    grads.b_h[:] = dz.sum(axis=(0, 1))

    x_prev = np.concatenate([trace.x0[:, None, :], trace.hidden[:, :-1]], axis=1)

    def accumulate(name, sig, inp, steps):
        """Sum over steps of factor_t ∘ (sig_t.T @ inp_t)."""
        if step_factors(name):
            total = np.zeros_like(getattr(params, name))
            for t in range(steps):
                total += factor(name, t) * (sig[:, t].T @ inp[:, t])
            return total
        total = np.einsum("nta,ntb->ab", sig[:, :steps], inp[:, :steps])
        f = factor(name, 0)
        return total if f is None else f * total

    grads.w_ho[:] = accumulate("w_ho", g_o, trace.hidden, n_out)
    grads.w_hh[:] = accumulate("w_hh", dz, x_prev, t_total)
    grads.w_ih[:] = accumulate("w_ih", dz, u, t_total)
    return loss, grads


def finite_diff(params: RnnParams, batch: SequenceBatch,
                plan: Optional[PerturbationPlan] = None,
                eps: float = 1e-5,
                hidden_act: str = "tanh") -> Gradients:
    """Central-difference gradients, (f(θ+e) - f(θ-e)) / (2 eps) componentwise.

    The plan (if any) is a fixed realization reused for every probe, so the
    differentiated function is deterministic.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    probe = params.copy()
    t_total = batch.n_steps

    def f_full():
        return ce_loss(forward(probe, batch, plan=plan, hidden_act=hidden_act),
                       batch)

    # Output-layer parameters cannot affect the hidden recurrence, and a
    # single w_ho/b_o entry only moves one output column. Those probes reuse
    # the base-point hidden states and logits and re-evaluate the loss on the
    # affected column alone; the result is still an exact evaluation of the
    # perturbed loss.
    base = forward(probe, batch, plan=plan, hidden_act=hidden_act)
    if t_total >= 2:
        x_next = batch.frames[:, 1:, :]
        yb = np.clip(base.outputs, CLIP_LO, CLIP_HI)
        llb = x_next * np.log(yb) + (1.0 - x_next) * np.log(1.0 - yb)
        # per-sequence, per-note contribution and per-sequence total
        note_ce = -llb.sum(axis=1) / (t_total - 1)  # [n, notes]
        total_ce = note_ce.sum(axis=1)              # [n]

    def output_coeff(i, j):
        """d(logit column i)/d(w_ho[i, j]) over steps: [T-1] or scalar."""
        if plan is None or "w_ho" not in plan.targets:
            return 1.0
        d = plan.deltas["w_ho"][:t_total - 1, i, j]
        if plan.kind == "multiplicative":
            c = 1.0 + d
        elif plan.kind == "dropconnect":
            c = d
        else:
            return 1.0  # additive kinds
        return c if c.shape[0] > 1 else float(c[0])

    def f_output(name, i, j, delta):
        if t_total < 2:
            return 0.0
        if name == "b_o":
            o_col = base.outputs_pre[:, :, i] + delta
        else:
            coeff = output_coeff(i, j)
            shift = delta * coeff * base.hidden[:, :t_total - 1, j]
            o_col = base.outputs_pre[:, :, i] + shift
        y = np.clip(_sigmoid(o_col), CLIP_LO, CLIP_HI)
        xc = x_next[:, :, i]
        ll = xc * np.log(y) + (1.0 - xc) * np.log(1.0 - y)
        new_note = -ll.sum(axis=1) / (t_total - 1)
        return float((total_ce - note_ce[:, i] + new_note).mean())

    grads = Gradients.zeros_like(params)
    for name in PARAM_FIELDS:
        arr = getattr(probe, name)
        flat = arr.reshape(-1)
        gflat = getattr(grads, name).reshape(-1)
        ncols = arr.shape[1] if arr.ndim == 2 else 1
        for i in range(flat.size):
            if name in ("w_ho", "b_o"):
                r, c = divmod(i, ncols)
                fp = f_output(name, r, c, eps)
                fm = f_output(name, r, c, -eps)
            else:
                orig = flat[i]
                flat[i] = orig + eps
                fp = f_full()
                flat[i] = orig - eps
                fm = f_full()
                flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
    return grads


def grad_check(params: RnnParams, batch: SequenceBatch,
               plan: Optional[PerturbationPlan] = None,
               eps: float = 1e-3,
               hidden_act: str = "tanh",
               richardson: bool = True) -> float:
    """Max over components of |a - b| / max(1e-8, |a| + |b|) between the BPTT
    gradient and the finite-difference oracle.

    With richardson=True the oracle combines central differences at eps and
    eps/2 as (4 D(eps/2) - D(eps)) / 3, cancelling the leading truncation
    term so a larger eps (smaller cancellation noise) can be used.
    """
    _, analytic = bptt(params, batch, plan=plan, hidden_act=hidden_act)
    numeric = finite_diff(params, batch, plan=plan, eps=eps,
                          hidden_act=hidden_act)
    if richardson:
        half = finite_diff(params, batch, plan=plan, eps=eps / 2.0,
                           hidden_act=hidden_act)
        numeric = param_map(lambda d1, d2: (4.0 * d2 - d1) / 3.0, numeric, half)
    worst = 0.0
    for name in PARAM_FIELDS:
        a = getattr(analytic, name)
        b = getattr(numeric, name)
        rel = np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))
        if rel.size:
            worst = max(worst, float(rel.max()))
    return worst
