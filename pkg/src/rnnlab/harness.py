"""Experiment harness: the training loop with spectral-radius tracking,
random hyperparameter search, regularizer-strength sweeps, and the scalar
single-unit loss-surface demo.

All randomness flows from explicit seeds; a trial owns independent RNG
streams for minibatch shuffling and perturbation sampling, so enabling a
perturbation never changes the data order.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy.special import expit
from scipy.stats import kendalltau

from .data import PianoRollDataset, batch_from_chunks, chunk, eval_batches
from .errors import ContractError, DataError, DivergenceError
from .grad import bptt
from .init import InitSpec, init_params, spectral_radius
from .model import N_NOTES, SequenceBatch, evaluate
from .optim import OptimizerConfig, OptimizerState
from .optim import step as optim_step
from .params import RnnParams, param_map
from .perturb import PerturbationSpec, RegPenaltySpec, norm_penalty, sample_plan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HyperConfig:
    """One training configuration: initialization, optional perturbation and
    penalty, optimizer settings, and the training-loop knobs."""

    init: InitSpec = InitSpec()
    perturbation: Optional[PerturbationSpec] = None
    penalty: Optional[RegPenaltySpec] = None
    optimizer: OptimizerConfig = OptimizerConfig()
    batch_size: int = 27
    hidden_units: int = 100
    max_epochs: int = 200
    patience: int = 20
    chunk_len: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.hidden_units < 1:
            raise ContractError("hidden_units must be >= 1")
        if self.max_epochs < 0:
            raise ContractError("max_epochs must be >= 0")
        if self.patience < 1:
            raise ContractError("patience must be >= 1")
        if self.chunk_len < 2:
            raise ContractError("chunk_len must be >= 2")


@dataclass
class EpochRecord:
    epoch: int
    train_ce: float
    valid_ce: float
    spectral_radius: float
    seconds: float


@dataclass
class TrainingTrace:
    records: List[EpochRecord] = field(default_factory=list)
    test_ce: Optional[float] = None
    diverged: bool = False

    @property
    def best_valid(self) -> float:
        return min(r.valid_ce for r in self.records)

    @property
    def best_epoch(self) -> int:
        return min(self.records, key=lambda r: r.valid_ce).epoch


@dataclass
class TrainResult:
    trace: TrainingTrace
    params: RnnParams  # parameters from the epoch with minimal validation CE


def train(config: HyperConfig, dataset: PianoRollDataset) -> TrainResult:
    """Train one model.

    Chunks train/valid sequences, initializes via init_params, and runs
    minibatch gradient descent. Every weight update samples a fresh
    perturbation plan; penalty gradients are added to the data gradients
    before the optimizer step. Each epoch records train CE (mean minibatch
    data loss), clean-weight validation CE, spectral radius of w_hh and the
    cumulative wall-clock. The returned parameters are those of the epoch
    with minimal validation CE; test CE is evaluated with clean weights on
    the unchunked test sequences.
    """
    chunked = chunk(dataset, config.chunk_len)
    if not chunked.train:
        raise DataError("no training chunks")
    if not chunked.valid:
        raise DataError("no validation chunks")
    valid_batch = batch_from_chunks(chunked.valid)
    train_frames = np.stack([c.frames for c in chunked.train])
    train_pads = np.array([c.pad_prefix for c in chunked.train])

    params = init_params(config.init, (N_NOTES, config.hidden_units, N_NOTES))
    shapes = {n: getattr(params, n).shape for n in ("w_ih", "w_hh", "w_ho")}
    shuffle_rng, plan_rng = [
        np.random.default_rng(s)
        for s in np.random.SeedSequence(config.seed).spawn(2)]

    opt_state = OptimizerState.init(config.optimizer, params)
    trace = TrainingTrace()
    start = time.perf_counter()

    def record(epoch, train_ce):
        valid_ce = evaluate(params, valid_batch)
        trace.records.append(EpochRecord(
            epoch=epoch, train_ce=train_ce, valid_ce=valid_ce,
            spectral_radius=spectral_radius(params.w_hh),
            seconds=time.perf_counter() - start))
        return valid_ce

    init_train_ce = evaluate(
        params, SequenceBatch(train_frames, pad_prefix=train_pads))
    best_valid = record(0, init_train_ce)
    best_params = params.copy()
    since_best = 0
    n_chunks = len(chunked.train)

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n_chunks)
        losses = []
        try:
            for lo in range(0, n_chunks, config.batch_size):
                idx = order[lo:lo + config.batch_size]
                mb = SequenceBatch(train_frames[idx], pad_prefix=train_pads[idx])
                plan = None
                if config.perturbation is not None:
                    plan = sample_plan(config.perturbation, shapes,
                                       mb.n_steps, plan_rng)
                data_loss = [None]

                def grad_fn(p):
                    loss, g = bptt(p, mb, plan=plan)
                    data_loss[0] = loss
                    if config.penalty is not None:
                        pval, pg = norm_penalty(p, config.penalty)
                        loss += pval
                        g = param_map(lambda a, b: a + b, g, pg)
                    return loss, g

                opt_state, params, _ = optim_step(opt_state, params, grad_fn)
                losses.append(data_loss[0])
        except DivergenceError:
            trace.diverged = True
            break
        valid_ce = record(epoch, float(np.mean(losses)))
        if epoch % 10 == 0 or epoch == config.max_epochs:
            log.info("epoch %d: train_ce=%.4f valid_ce=%.4f rho=%.4f",
                     epoch, trace.records[-1].train_ce, valid_ce,
                     trace.records[-1].spectral_radius)
        if valid_ce < best_valid:
            best_valid = valid_ce
            best_params = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    if chunked.test:
        trace.test_ce = evaluate(best_params, eval_batches(chunked))
    return TrainResult(trace=trace, params=best_params)


# ---------------------------------------------------------------------------
# Random search over the published hyperparameter ranges.

VARIANTS = (
    "plain",               # no perturbation, no penalty
    "norm_penalty",        # L1/L2 penalty on the weight matrices
    "additive_per_time_step",
    "additive_per_sequence",
    "multiplicative_per_time_step",
    "multiplicative_per_sequence",
    "dropconnect_per_time_step",
    "dropconnect_per_sequence",
    "feedforward",         # additive noise on w_ih/w_ho, per time step
)

SIGMA_HH_CHOICES = (1e-3, 1.0, 1e-4)
SIGMA_IH_CHOICES = (1e-1, 1e-2, 1e-3)
SPARSIFY_CHOICES = (15, 25, 50)
RHO_CHOICES = (0.9, 1.0, 1.1)
MOMENTUM_CHOICES = (0.9, 0.95, 0.99)
STEP_RATE_CHOICES = (1e-2, 1e-3, 1e-4)
BATCH_CHOICES = (27, 81)
LOG10_LAMBDA_RANGE = (-4.0, -2.0)
NOISE_SIGMA_RANGE = (0.01, 0.1)


@dataclass(frozen=True)
class SearchSpace:
    """Which model variant to search and the fixed (non-sampled) knobs."""

    variant: str = "plain"
    hidden_units: int = 100
    max_epochs: int = 200
    patience: int = 20
    chunk_len: int = 100
    master_seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}; "
                                f"choose from {VARIANTS}")


def _variant_perturbation(variant: str, rng) -> Optional[PerturbationSpec]:
    if variant in ("plain", "norm_penalty"):
        return None
    if variant == "feedforward":
        return PerturbationSpec(
            kind="feedforward_additive", scope="per_time_step",
            sigma=float(rng.uniform(*NOISE_SIGMA_RANGE)),
            targets=("w_ih", "w_ho"))
    kind, scope = variant.rsplit("_per_", 1)
    scope = "per_" + scope
    if kind == "dropconnect":
        return PerturbationSpec(kind=kind, scope=scope,
                                drop_p=float(rng.uniform(0.0, 1.0)),
                                targets=("w_hh",))
    return PerturbationSpec(kind=kind, scope=scope,
                            sigma=float(rng.uniform(*NOISE_SIGMA_RANGE)),
                            targets=("w_hh",))


def sample_config(space: SearchSpace, rng, seed: int) -> HyperConfig:
    """One draw from the published ranges: discrete sets uniformly, lambda
    log-uniform, noise sigma and drop_p uniform."""
    # The published k choices assume hidden >= 50; cap at the layer size so
    # the space stays valid for desk-scale hidden counts.
    sparsify_k = min(int(rng.choice(SPARSIFY_CHOICES)), space.hidden_units)
    init = InitSpec(sigma_hh=float(rng.choice(SIGMA_HH_CHOICES)),
                    sigma_ih=float(rng.choice(SIGMA_IH_CHOICES)),
                    sparsify_k=sparsify_k,
                    rho_target=float(rng.choice(RHO_CHOICES)),
                    seed=seed)
    penalty = None
    if space.variant == "norm_penalty":
        penalty = RegPenaltySpec(
            norm=str(rng.choice(("L1", "L2"))),
            lam=float(10.0 ** rng.uniform(*LOG10_LAMBDA_RANGE)))
    perturbation = _variant_perturbation(space.variant, rng)
    optimizer = OptimizerConfig(
        method="rmsprop",
        mu=float(rng.choice(MOMENTUM_CHOICES)),
        step_rate=float(rng.choice(STEP_RATE_CHOICES)))
    return HyperConfig(init=init, perturbation=perturbation, penalty=penalty,
                       optimizer=optimizer,
                       batch_size=int(rng.choice(BATCH_CHOICES)),
                       hidden_units=space.hidden_units,
                       max_epochs=space.max_epochs,
                       patience=space.patience,
                       chunk_len=space.chunk_len,
                       seed=seed)


def config_record(config: HyperConfig) -> dict:
    """Flat summary of a config in the layout of the published best-config
    tables."""
    pert = config.perturbation
    pen = config.penalty
    return {
        "sigma_hh": config.init.sigma_hh,
        "sigma_ih": config.init.sigma_ih,
        "sparsify": config.init.sparsify_k,
        "rho_limit": config.init.rho_target,
        "regularizer": pen.norm if pen else None,
        "log10_lambda": math.log10(pen.lam) if pen and pen.lam > 0 else None,
        "dropout_p": pert.drop_p if pert and pert.kind == "dropconnect" else None,
        "noise_sigma": pert.sigma if pert and pert.sigma is not None else None,
        "perturbation_kind": pert.kind if pert else None,
        "perturbation_scope": pert.scope if pert else None,
        "momentum": config.optimizer.mu,
        "step_rate": config.optimizer.step_rate,
        "batch_size": config.batch_size,
        "hidden": config.hidden_units,
        "seed": config.seed,
    }


def _run_trial(args):
    config, dataset = args
    try:
        result = train(config, dataset)
    except DivergenceError:
        return {"diverged": True, "valid_ce": None, "test_ce": None}
    trace = result.trace
    return {"diverged": trace.diverged,
            "valid_ce": trace.best_valid if trace.records else None,
            "test_ce": trace.test_ce,
            "epochs": trace.records[-1].epoch if trace.records else 0}


@dataclass
class SearchResult:
    ranking: List[dict]   # completed trials sorted by validation CE
    diverged: List[dict]  # trials that diverged
    best: Optional[dict]
    summary: dict


def random_search(space: SearchSpace, n_trials: int,
                  dataset: PianoRollDataset, jobs: int = 1) -> SearchResult:
    """Sample n_trials configs, train each, and rank by validation CE.

    Deterministic under space.master_seed. Reports the best trial and, since
    the published tables are ambiguous about best-of versus average, also the
    mean/stddev over completed trials.
    """
    if n_trials < 1:
        raise ContractError("n_trials must be >= 1")
    ss = np.random.SeedSequence(space.master_seed)
    rng = np.random.default_rng(ss.spawn(1)[0])
    seeds = [int(s) for s in ss.generate_state(n_trials)]
    configs = [sample_config(space, rng, seed) for seed in seeds]

    work = [(c, dataset) for c in configs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_trial, work))
    else:
        outcomes = [_run_trial(w) for w in work]

    ranking, diverged = [], []
    for i, (config, out) in enumerate(zip(configs, outcomes)):
        rec = {"trial": i, **config_record(config), **out}
        (diverged if out["diverged"] or out["valid_ce"] is None
         else ranking).append(rec)
    ranking.sort(key=lambda r: r["valid_ce"])

    if ranking:
        valid = np.array([r["valid_ce"] for r in ranking])
        tests = np.array([r["test_ce"] for r in ranking if r["test_ce"] is not None])
        summary = {
            "n_trials": n_trials,
            "n_completed": len(ranking),
            "n_diverged": len(diverged),
            "valid_ce_mean": float(valid.mean()),
            "valid_ce_std": float(valid.std()),
            "test_ce_mean": float(tests.mean()) if tests.size else None,
            "test_ce_std": float(tests.std()) if tests.size else None,
        }
        best = ranking[0]
    else:
        summary = {"n_trials": n_trials, "n_completed": 0,
                   "n_diverged": len(diverged)}
        best = None
    return SearchResult(ranking=ranking, diverged=diverged, best=best,
                        summary=summary)


# ---------------------------------------------------------------------------
# Regularizer-strength sweeps.

SWEEP_AXES = ("lambda", "sigma", "drop_p")


@dataclass
class SweepRow:
    value: float
    mean_test_ce: float
    stddev: float
    test_ces: List[float] = field(default_factory=list)


@dataclass
class SweepResult:
    axis: str
    rows: List[SweepRow]
    trend_tau: Optional[float]  # Kendall tau of mean test CE against value
    trend_pvalue: Optional[float]


def _apply_axis(config: HyperConfig, axis: str, value: float) -> HyperConfig:
    if axis == "lambda":
        pen = config.penalty or RegPenaltySpec(norm="L2", lam=0.0)
        return replace(config, penalty=replace(pen, lam=float(value)))
    if axis == "sigma":
        if config.perturbation is None or config.perturbation.sigma is None:
            raise ContractError("sigma sweep needs a noise perturbation in "
                                "the base config")
        return replace(config,
                       perturbation=replace(config.perturbation,
                                            sigma=float(value)))
    if axis == "drop_p":
        if config.perturbation is None or config.perturbation.kind != "dropconnect":
            raise ContractError("drop_p sweep needs a dropconnect "
                                "perturbation in the base config")
        return replace(config,
                       perturbation=replace(config.perturbation,
                                            drop_p=float(value)))
    raise ContractError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def _sweep_point(args):
    config, dataset = args
    try:
        return train(config, dataset).trace.test_ce
    except DivergenceError:
        return None


def sweep(axis: str, values, base_config: HyperConfig,
          dataset: PianoRollDataset, n_seeds: int = 3,
          jobs: int = 1) -> SweepResult:
    """Train n_seeds models per axis value and report mean/stddev test CE.

    Repetition r of every value uses seed base_config.seed + r for both the
    initialization and the training streams. The Kendall-tau trend of mean
    test CE against the axis value is reported as an observational statistic,
    not an assertion.
    """
    values = list(values)
    if not values:
        raise ContractError("values must be non-empty")
    if n_seeds < 1:
        raise ContractError("n_seeds must be >= 1")
    work = []
    for v in values:
        cfg_v = _apply_axis(base_config, axis, v)
        for r in range(n_seeds):
            seed = base_config.seed + r
            work.append((replace(cfg_v, seed=seed,
                                 init=replace(cfg_v.init, seed=seed)),
                         dataset))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_sweep_point, work))
    else:
        outcomes = [_sweep_point(w) for w in work]

    rows = []
    for i, v in enumerate(values):
        ces = [c for c in outcomes[i * n_seeds:(i + 1) * n_seeds]
               if c is not None]
        if ces:
            rows.append(SweepRow(value=float(v),
                                 mean_test_ce=float(np.mean(ces)),
                                 stddev=float(np.std(ces)),
                                 test_ces=ces))
    tau = pvalue = None
    if len(rows) >= 2:
        res = kendalltau([r.value for r in rows],
                         [r.mean_test_ce for r in rows])
        tau, pvalue = float(res.statistic), float(res.pvalue)
    return SweepResult(axis=axis, rows=rows, trend_tau=tau,
                       trend_pvalue=pvalue)


# ---------------------------------------------------------------------------
# Single-unit loss-surface demo.


@dataclass
class SurfaceResult:
    """Loss surface of the scalar unit on a (W, b) grid.

    loss[i, j] is the loss at (w=w_values[j], b=b_values[i]). row_max_grad[i]
    is the largest |dL/dW| along row i, by central differences on the grid
    itself (one-sided at a resolution of 2).
    """

    w_values: np.ndarray
    b_values: np.ndarray
    loss: np.ndarray
    row_max_grad: np.ndarray
    target_z: float
    n_steps: int

    @property
    def max_grad(self) -> float:
        return float(self.row_max_grad.max())


def demo_surface(n_steps: int = 50, target_z: float = 0.7,
                 w_range=(-6.0, 6.0), b_range=(-6.0, 6.0),
                 resolution: int = 100,
                 penalty: Optional[RegPenaltySpec] = None) -> SurfaceResult:
    """Loss surface of the single sigmoid unit x_t = sigmoid(W x_{t-1} + b),
    x_0 = 0, L = (x_T - z)^2 (+ optional norm penalty on W and b), evaluated
    on a resolution x resolution grid."""
    if resolution < 2:
        raise ContractError("resolution must be >= 2")
    if n_steps < 1:
        raise ContractError("n_steps must be >= 1")
    w = np.linspace(w_range[0], w_range[1], resolution)
    b = np.linspace(b_range[0], b_range[1], resolution)
    ww, bb = np.meshgrid(w, b)  # [b-index, w-index]
    x = np.zeros_like(ww)
    for _ in range(n_steps):
        x = expit(ww * x + bb)
    loss = (x - target_z) ** 2
    if penalty is not None:
        if penalty.norm == "L1":
            loss = loss + penalty.lam * (np.abs(ww) + np.abs(bb))
        else:
            loss = loss + penalty.lam * (ww ** 2 + bb ** 2)
    return SurfaceResult(w_values=w, b_values=b, loss=loss,
                         row_max_grad=_row_max_grad(w, loss),
                         target_z=target_z, n_steps=n_steps)


def _grid_grad_w(w: np.ndarray, loss: np.ndarray) -> np.ndarray:
    """dL/dW on the grid by central differences along the w axis (one-sided
    when only two columns exist)."""
    if w.size >= 3:
        return (loss[:, 2:] - loss[:, :-2]) / (w[2:] - w[:-2])
    return (loss[:, 1:] - loss[:, :-1]) / (w[1] - w[0])


def _row_max_grad(w: np.ndarray, loss: np.ndarray) -> np.ndarray:
    return np.abs(_grid_grad_w(w, loss)).max(axis=1)


def max_grad_w(result: SurfaceResult, w_min: Optional[float] = None) -> float:
    """Largest |dL/dW| over the grid, optionally restricted to w > w_min."""
    g = np.abs(_grid_grad_w(result.w_values, result.loss))
    if w_min is not None:
        w = result.w_values
        centers = w[1:-1] if w.size >= 3 else 0.5 * (w[:-1] + w[1:])
        g = g[:, centers > w_min]
        if g.size == 0:
            raise ContractError(f"no grid columns with w > {w_min}")
    return float(g.max())


# ---------------------------------------------------------------------------
# Delimited/JSON report writers.


def write_trace_csv(trace: TrainingTrace, path) -> int:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_ce", "valid_ce", "spectral_radius",
                         "seconds"])
        for r in trace.records:
            writer.writerow([r.epoch, repr(r.train_ce), repr(r.valid_ce),
                             repr(r.spectral_radius), f"{r.seconds:.3f}"])
    return len(trace.records)


def write_sweep_csv(result: SweepResult, path) -> int:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "mean_test_ce", "stddev"])
        for r in result.rows:
            writer.writerow([repr(r.value), repr(r.mean_test_ce),
                             repr(r.stddev)])
    return len(result.rows)


def write_surface_csv(result: SurfaceResult, path) -> int:
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["w", "b", "loss"])
        for i, bv in enumerate(result.b_values):
            for j, wv in enumerate(result.w_values):
                writer.writerow([repr(float(wv)), repr(float(bv)),
                                 repr(float(result.loss[i, j]))])
                rows += 1
    return rows


def write_search_json(result: SearchResult, path) -> None:
    with open(path, "w") as fh:
        json.dump({"best": result.best, "summary": result.summary,
                   "ranking": result.ranking, "diverged": result.diverged},
                  fh, indent=2)
