"""Weight perturbations used during gradient computation, and norm penalties.

Perturbations exist only inside a gradient computation: the stored clean
weights are never modified, and all evaluation happens on clean weights.
Noise realizations are non-cumulative (each step's draw is independent of
earlier steps).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError
from .params import Gradients, RnnParams, WEIGHT_FIELDS

NOISE_KINDS = ("additive", "multiplicative", "feedforward_additive")
KINDS = ("none", "additive", "multiplicative", "dropconnect", "feedforward_additive")
SCOPES = ("per_time_step", "per_sequence")

_FEEDFORWARD_TARGETS = frozenset({"w_ih", "w_ho"})


@dataclass(frozen=True)
class PerturbationSpec:
    """Declarative description of a weight perturbation.

    kind: none | additive | multiplicative | dropconnect | feedforward_additive
    scope: per_time_step (fresh realization each unrolled step) or
           per_sequence (one realization shared by all steps).
    sigma: std-dev of the zero-mean Gaussian noise (noise kinds).
    drop_p: probability an individual weight is zeroed (dropconnect).
    targets: which weight matrices are perturbed.
    """

    kind: str = "none"
    scope: str = "per_time_step"
    sigma: Optional[float] = None
    drop_p: Optional[float] = None
    targets: tuple = ("w_hh",)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown perturbation kind {self.kind!r}")
        if self.scope not in SCOPES:
            raise ContractError(f"unknown perturbation scope {self.scope!r}")
        object.__setattr__(self, "targets", tuple(self.targets))
        for t in self.targets:
            if t not in WEIGHT_FIELDS:
                raise ContractError(f"unknown perturbation target {t!r}")
        if self.kind in ("additive", "multiplicative", "feedforward_additive"):
            if self.sigma is None or self.sigma <= 0:
                raise ContractError(f"{self.kind} noise requires sigma > 0")
        if self.kind == "dropconnect":
            if self.drop_p is None or not 0.0 <= self.drop_p <= 1.0:
                raise ContractError("dropconnect requires drop_p in [0, 1]")
        if self.kind == "feedforward_additive":
            if not set(self.targets) <= _FEEDFORWARD_TARGETS:
                raise ContractError(
                    "feedforward_additive may only target w_ih and w_ho")
            if self.scope != "per_time_step":
                raise ContractError("feedforward_additive is per_time_step only")


@dataclass
class PerturbationPlan:
    """A sampled realization of a PerturbationSpec for one gradient computation.

    deltas maps each targeted matrix name to an array of shape
    [S, rows, cols]: S == n_steps for per_time_step plans, S == 1 for
    per_sequence plans (the single realization is reused at every step).
    For dropconnect the entries are {0, 1} keep masks; otherwise Gaussian
    noise values.
    """

    kind: str
    scope: str
    n_steps: int
    deltas: dict = field(default_factory=dict)
    seed: Optional[int] = None

    @property
    def per_step(self) -> bool:
        return self.scope == "per_time_step"

    @property
    def targets(self) -> frozenset:
        return frozenset(self.deltas)

    def realization(self, name: str, t: int) -> np.ndarray:
        if not 0 <= t < self.n_steps:
            raise ContractError(f"step {t} outside plan range [0, {self.n_steps})")
        arr = self.deltas[name]
        return arr[t] if arr.shape[0] > 1 else arr[0]

    def varies(self, name: str) -> bool:
        """Does the effective matrix `name` change from step to step?"""
        return name in self.deltas and self.deltas[name].shape[0] > 1

    def effective(self, name: str, clean: np.ndarray, t: int) -> np.ndarray:
        """Effective weight matrix at step t; the clean array is untouched."""
        if name not in self.deltas:
            return clean
        d = self.realization(name, t)
        if self.kind == "dropconnect":
            return clean * d
        if self.kind == "multiplicative":
            return clean * (1.0 + d)
        return clean + d  # additive, feedforward_additive

    def effective_stack(self, name: str, clean: np.ndarray) -> np.ndarray:
        """All realizations' effective matrices at once: [S, rows, cols]."""
        d = self.deltas[name]
        if self.kind == "dropconnect":
            return clean[None] * d
        if self.kind == "multiplicative":
            return clean[None] * (1.0 + d)
        return clean[None] + d

    def grad_factor(self, name: str, t: int) -> Optional[np.ndarray]:
        """Elementwise chain factor d(effective)/d(clean) at step t.

        None means the identity factor (additive kinds)."""
        if name not in self.deltas:
            return None
        if self.kind == "dropconnect":
            return self.realization(name, t)
        if self.kind == "multiplicative":
            return 1.0 + self.realization(name, t)
        return None


def effective_weights(params: RnnParams, plan: Optional[PerturbationPlan], t: int):
    """The (w_ih, w_hh, w_ho) actually used at step t under the plan."""
    if plan is None:
        return params.w_ih, params.w_hh, params.w_ho
    return tuple(plan.effective(n, getattr(params, n), t) for n in WEIGHT_FIELDS)


def sample_plan(spec: PerturbationSpec, shapes: dict, n_steps: int,
                rng) -> Optional[PerturbationPlan]:
    """Draw a fresh realization of spec for a sequence of n_steps.

    shapes maps matrix names to their shapes. A new plan must be sampled for
    every weight-update iteration. Returns None for kind 'none'.
    rng may be a numpy Generator or an int seed.
    """
    if n_steps < 1:
        raise ContractError("n_steps must be >= 1")
    if spec.kind == "none":
        return None
    seed = rng if isinstance(rng, (int, np.integer)) else None
    if seed is not None:
        rng = np.random.default_rng(seed)
    n_real = n_steps if spec.scope == "per_time_step" else 1
    deltas = {}
    for name in spec.targets:
        shape = (n_real,) + tuple(shapes[name])
        if spec.kind == "dropconnect":
            keep = 1.0 - spec.drop_p
            deltas[name] = (rng.random(shape) < keep).astype(np.float64)
        else:
            deltas[name] = rng.normal(0.0, spec.sigma, shape)
    return PerturbationPlan(kind=spec.kind, scope=spec.scope, n_steps=n_steps,
                            deltas=deltas, seed=seed)


@dataclass(frozen=True)
class RegPenaltySpec:
    """L1/L2 penalty on the three weight matrices (biases excluded)."""

    norm: str = "L2"
    lam: float = 0.0
    targets: tuple = WEIGHT_FIELDS

    def __post_init__(self):
        if self.norm not in ("L1", "L2"):
            raise ContractError(f"norm must be L1 or L2, got {self.norm!r}")
        if self.lam < 0:
            raise ContractError("lambda must be >= 0")
        for t in self.targets:
            if t not in WEIGHT_FIELDS:
                raise ContractError(f"unknown penalty target {t!r}")


def norm_penalty(params: RnnParams, spec: RegPenaltySpec):
    """Penalty value and its gradient bundle.

    L1: lam * sum |w|, subgradient lam * sign(w) with sign(0) = 0.
    L2: lam * sum w^2, gradient 2 * lam * w.
    Bias gradients are zero.
    """
    grads = Gradients.zeros_like(params)
    value = 0.0
    for name in spec.targets:
        w = getattr(params, name)
        if spec.norm == "L1":
            value += spec.lam * float(np.sum(np.abs(w)))
            setattr(grads, name, spec.lam * np.sign(w))
        else:
            value += spec.lam * float(np.sum(w * w))
            setattr(grads, name, 2.0 * spec.lam * w)
    return value, grads


def noisy_moments(w: np.ndarray, x: np.ndarray, sigma: float):
    """Mean and variance of the pre-synaptic activation a = (w + d·w)ᵀx under
    multiplicative Gaussian weight noise d ~ N(0, sigma).

    Returns (wᵀx, sigma² (wᵀx)²). The variance form treats the noise as a
    single draw shared by the unit's incoming weights, so the perturbations
    add coherently; with an independent draw per weight the variance would
    instead be sigma² Σ_i (w_i x_i)².
    """
    if sigma <= 0:
        raise ContractError("sigma must be > 0")
    a = float(np.dot(w, x))
    return a, sigma * sigma * a * a


def sampled_activation_grad(w: np.ndarray, x: np.ndarray, sigma: float, s: float,
                            sign_corrected: bool = True):
    """Sampling form of the noisy pre-synaptic activation and its gradient.

    a_hat = E[a] + s * sqrt(V[a]) = wᵀx + s * sigma * |wᵀx|, with s a draw
    from N(0, 1). Returns (a_hat, grad_w, reg_term) where grad_w is d a_hat/dw
    and reg_term is the noise-induced regularization part of that gradient.

    With sign_corrected=True the regularizer term is s*sigma*sign(wᵀx)*x,
    which is the exact derivative of sqrt(V[a]) (sign(0) taken as 0). With
    sign_corrected=False the term is s*sigma*x, dropping the sign factor;
    both forms are exposed for comparison.
    """
    if not np.isfinite(s):
        raise ContractError("s must be finite")
    a = float(np.dot(w, x))
    x = np.asarray(x, dtype=np.float64)
    a_hat = a + s * sigma * abs(a)
    sgn = np.sign(a) if sign_corrected else 1.0
    reg_term = s * sigma * sgn * x
    grad_w = x + reg_term
    return a_hat, grad_w, reg_term
