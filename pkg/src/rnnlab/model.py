"""RNN forward pass and mean cross-entropy loss for next-frame prediction.

The network is
    X_t = act(W_hh X_{t-1} + W_ih u_t + b_h),   X_0 = 0
    Y_t = sigmoid(W_ho X_t + b_o)
with Y_t predicting frame u_{t+1}. The hidden activation is tanh for real
models; sigmoid and identity variants exist for the scalar demo and for
closed-form gradient tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import ContractError, DataError
from .params import RnnParams
from .perturb import PerturbationPlan

N_NOTES = 88

# Log arguments are clamped to this range for numerical safety.
CLIP_LO = 1e-8
CLIP_HI = 1.0 - 1e-8

LN2_BASELINE = N_NOTES * np.log(2.0)  # loss of the uninformative 0.5 output


def _sigmoid(z):
    return expit(z)


HIDDEN_ACTS = {
    "tanh": (np.tanh, lambda x: 1.0 - x * x),
    "sigmoid": (_sigmoid, lambda x: x * (1.0 - x)),
    "identity": (lambda z: z, lambda x: np.ones_like(x)),
}


@dataclass
class SequenceBatch:
    """Binary piano-roll frames [n, T, 88] with padding metadata.

    pad_prefix[i] counts the leading all-zero frames added by the chunking
    protocol; lengths[i] = T - pad_prefix[i] is the true content length.
    """

    frames: np.ndarray
    lengths: np.ndarray = None
    pad_prefix: np.ndarray = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ContractError(f"frames must be [n, T, notes], got {self.frames.shape}")
        n, t, _ = self.frames.shape
        if self.pad_prefix is None:
            self.pad_prefix = np.zeros(n, dtype=np.int64)
        self.pad_prefix = np.asarray(self.pad_prefix, dtype=np.int64)
        if self.lengths is None:
            self.lengths = t - self.pad_prefix
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        if self.pad_prefix.shape != (n,) or self.lengths.shape != (n,):
            raise ContractError("lengths/pad_prefix must have one entry per sequence")
        if np.any(self.pad_prefix < 0) or np.any(self.pad_prefix > t):
            raise ContractError("pad_prefix must lie in [0, T]")
        if np.any(self.lengths + self.pad_prefix != t):
            raise ContractError("lengths + pad_prefix must equal T")
        vals = np.unique(self.frames)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise DataError("frame entries must be binary (0 or 1)")
        for i in range(n):
            p = self.pad_prefix[i]
            if p and np.any(self.frames[i, :p]):
                raise DataError(f"sequence {i}: padded prefix frames must be all-zero")

    @property
    def n_sequences(self) -> int:
        return self.frames.shape[0]

    @property
    def n_steps(self) -> int:
        return self.frames.shape[1]

    @classmethod
    def single(cls, frames: np.ndarray, pad_prefix: int = 0) -> "SequenceBatch":
        frames = np.asarray(frames, dtype=np.float64)
        return cls(frames[None, :, :], pad_prefix=np.array([pad_prefix]))

    @classmethod
    def stack(cls, chunks) -> "SequenceBatch":
        """Stack equal-length (frames, pad_prefix) chunks into one batch."""
        frames = np.stack([c[0] for c in chunks])
        pads = np.array([c[1] for c in chunks], dtype=np.int64)
        return cls(frames, pad_prefix=pads)


@dataclass
class ForwardTrace:
    """Everything the backward pass needs: hidden states X_1..X_T, outputs
    Y_1..Y_{T-1} and both pre-activations."""

    hidden: np.ndarray        # [n, T, hidden]
    hidden_pre: np.ndarray    # [n, T, hidden]
    outputs: np.ndarray       # [n, T-1, notes]
    outputs_pre: np.ndarray   # [n, T-1, notes]
    hidden_act: str = "tanh"
    x0: np.ndarray = None     # [n, hidden] initial state actually used


def forward(params: RnnParams, batch: SequenceBatch,
            plan: Optional[PerturbationPlan] = None,
            hidden_act: str = "tanh",
            x0: Optional[np.ndarray] = None) -> ForwardTrace:
    """Run the network over a batch, honoring a perturbation plan.

    The plan substitutes effective weights at each step; the clean params are
    never modified. Deterministic given (params, batch, plan).
    """
    if hidden_act not in HIDDEN_ACTS:
        raise ContractError(f"unknown hidden activation {hidden_act!r}")
    act, _ = HIDDEN_ACTS[hidden_act]
    u = batch.frames
    n, t_total, d = u.shape
    if d != params.n_input:
        raise ContractError(f"input dim {d} != w_ih columns {params.n_input}")
    if plan is not None and plan.n_steps != t_total:
        raise ContractError(f"plan has {plan.n_steps} steps, batch has {t_total}")
    h = params.n_hidden

    if x0 is None:
        x_prev = np.zeros((n, h))
    else:
        x_prev = np.asarray(x0, dtype=np.float64)
        if x_prev.shape != (n, h):
            raise ContractError(f"x0 must have shape ({n},{h})")
    x0_used = x_prev.copy()

    ih_varies = plan is not None and plan.varies("w_ih")
    hh_varies = plan is not None and plan.varies("w_hh")
    ho_varies = plan is not None and plan.varies("w_ho")

    def eff_static(name):
        clean = getattr(params, name)
        return clean if plan is None else plan.effective(name, clean, 0)

    # Input projections for all steps in one call; a per-step w_ih plan uses
    # the stacked effective matrices instead.
    if ih_varies:
        e_ih = plan.effective_stack("w_ih", params.w_ih)  # [T, h, d]
        inp = np.einsum("ntd,thd->nth", u, e_ih)
    else:
        w_ih = eff_static("w_ih")
        inp = (u.reshape(n * t_total, d) @ w_ih.T).reshape(n, t_total, h)
    inp += params.b_h

    e_hh = plan.effective_stack("w_hh", params.w_hh) if hh_varies else None
    w_hh_t = eff_static("w_hh").T if not hh_varies else None

    hidden = np.empty((n, t_total, h))
    hidden_pre = np.empty((n, t_total, h))
    for t in range(t_total):
        z = x_prev @ (e_hh[t].T if hh_varies else w_hh_t)
        z += inp[:, t]
        x_prev = act(z)
        hidden_pre[:, t] = z
        hidden[:, t] = x_prev

    n_out_steps = t_total - 1
    if n_out_steps <= 0:
        empty = np.zeros((n, 0, params.n_output))
        return ForwardTrace(hidden, hidden_pre, empty, empty.copy(),
                            hidden_act, x0_used)
    o = output_preactivations(params, hidden, plan)
    return ForwardTrace(hidden, hidden_pre, _sigmoid(o), o, hidden_act, x0_used)


def output_preactivations(params: RnnParams, hidden: np.ndarray,
                          plan: Optional[PerturbationPlan]) -> np.ndarray:
    """Output logits W_ho X_t + b_o for t = 1..T-1 given the hidden states.

    Split out of forward so callers holding fixed hidden states (e.g. the
    finite-difference oracle probing output-layer parameters) compute the
    identical quantity."""
    n, t_total, h = hidden.shape
    n_out_steps = t_total - 1
    if plan is not None and plan.varies("w_ho"):
        e_ho = plan.effective_stack("w_ho", params.w_ho)  # [T, out, h]
        return np.einsum("nth,toh->nto", hidden[:, :n_out_steps],
                         e_ho[:n_out_steps]) + params.b_o
    w_ho = params.w_ho if plan is None else plan.effective("w_ho", params.w_ho, 0)
    o = hidden[:, :n_out_steps].reshape(n * n_out_steps, h) @ w_ho.T
    return o.reshape(n, n_out_steps, params.n_output) + params.b_o


def ce_loss_per_sequence(trace: ForwardTrace, batch: SequenceBatch) -> np.ndarray:
    """Per-sequence mean cross-entropy: -(1/(T-1)) sum over steps and notes of
    the Bernoulli log-likelihood of the next frame. Padded prefix frames count
    as legitimate all-silent frames."""
    n, t_total, _ = batch.frames.shape
    if t_total < 2:
        return np.zeros(n)
    y = np.clip(trace.outputs, CLIP_LO, CLIP_HI)
    x = batch.frames[:, 1:, :]
    ll = x * np.log(y) + (1.0 - x) * np.log(1.0 - y)
    return -ll.sum(axis=(1, 2)) / (t_total - 1)


def ce_loss(trace: ForwardTrace, batch: SequenceBatch) -> float:
    """Mean CE over the batch: per-sequence mean over time, then mean over the
    N sequences. The sum over the 88 note indices is not averaged."""
    if trace.outputs.shape[0] != batch.n_sequences:
        raise ContractError("trace was not produced from this batch")
    return float(ce_loss_per_sequence(trace, batch).mean())


BatchLike = Union[SequenceBatch, Sequence[SequenceBatch]]


def evaluate(params: RnnParams, test: BatchLike,
             hidden_act: str = "tanh") -> float:
    """Clean-weight CE on test data: per-sequence mean over time, then mean
    over sequences. Test sequences keep their original lengths (no chunking,
    no perturbation plan)."""
    batches = [test] if isinstance(test, SequenceBatch) else list(test)
    per_seq = []
    for b in batches:
        trace = forward(params, b, plan=None, hidden_act=hidden_act)
        per_seq.append(ce_loss_per_sequence(trace, b))
    if not per_seq or sum(p.size for p in per_seq) == 0:
        raise DataError("empty test set")
    return float(np.concatenate(per_seq).mean())
