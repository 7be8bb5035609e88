"""Command-line interface.

Subcommands: train, search, sweep, demo-surface, gradcheck, eval, synth-data.
Run configuration comes from a JSON file (schema-validated, unknown keys
rejected) and/or flags; flags win. The default output directory is the
RNNLAB_OUT environment variable, falling back to the current directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .errors import ContractError, DataError
from .grad import grad_check
from .harness import (SWEEP_AXES, VARIANTS, HyperConfig, SearchSpace,
                      demo_surface, random_search, sweep, train,
                      write_search_json, write_surface_csv, write_sweep_csv,
                      write_trace_csv)
from .init import InitSpec
from .model import SequenceBatch, evaluate
from .optim import OptimizerConfig
from .params import RnnParams
from .perturb import KINDS, SCOPES, PerturbationSpec, RegPenaltySpec, sample_plan

log = logging.getLogger(__name__)

OUT_ENV_VAR = "RNNLAB_OUT"

# JSON config schema: allowed keys per (nested) section.
_SCHEMA = {
    "": ("data", "out", "hidden_units", "batch_size", "max_epochs",
         "patience", "chunk_len", "seed", "init", "perturbation", "penalty",
         "optimizer"),
    "init": ("sigma_hh", "sigma_ih", "sparsify_k", "rho_target", "seed"),
    "perturbation": ("kind", "scope", "sigma", "drop_p", "targets"),
    "penalty": ("norm", "lambda"),
    "optimizer": ("method", "momentum", "step_rate", "decay", "epsilon"),
}


class ConfigError(ValueError):
    """Invalid run-configuration document or flags."""


def _check_keys(section: str, doc: dict) -> None:
    allowed = _SCHEMA[section]
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        where = f"section {section!r}" if section else "top level"
        raise ConfigError(f"unknown config keys at {where}: "
                          f"{', '.join(unknown)} (allowed: {', '.join(allowed)})")


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config JSON {path}: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    validate_config(doc)
    return doc


def validate_config(doc: dict) -> None:
    _check_keys("", doc)
    for section in ("init", "perturbation", "penalty", "optimizer"):
        sub = doc.get(section)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        _check_keys(section, sub)


def build_hyperconfig(doc: dict) -> HyperConfig:
    """HyperConfig from a validated config document (missing keys default)."""
    try:
        init = InitSpec(**doc.get("init", {}))
        pert_doc = doc.get("perturbation")
        perturbation = None
        if pert_doc:
            pert_doc = dict(pert_doc)
            if "targets" in pert_doc:
                pert_doc["targets"] = tuple(pert_doc["targets"])
            perturbation = PerturbationSpec(**pert_doc)
        pen_doc = doc.get("penalty")
        penalty = None
        if pen_doc:
            penalty = RegPenaltySpec(norm=pen_doc.get("norm", "L2"),
                                     lam=pen_doc.get("lambda", 0.0))
        opt_doc = dict(doc.get("optimizer", {}))
        if "momentum" in opt_doc:
            opt_doc["mu"] = opt_doc.pop("momentum")
        optimizer = OptimizerConfig(**opt_doc)
        return HyperConfig(
            init=init, perturbation=perturbation, penalty=penalty,
            optimizer=optimizer,
            batch_size=doc.get("batch_size", 27),
            hidden_units=doc.get("hidden_units", 100),
            max_epochs=doc.get("max_epochs", 200),
            patience=doc.get("patience", 20),
            chunk_len=doc.get("chunk_len", 100),
            seed=doc.get("seed", 0))
    except (ContractError, TypeError) as exc:
        raise ConfigError(f"invalid config value: {exc}")


# Flag destination -> config path, for the flags-win merge.
_OVERRIDE_PATHS = {
    "data": ("data",),
    "out": ("out",),
    "seed": ("seed",),
    "hidden": ("hidden_units",),
    "batch_size": ("batch_size",),
    "max_epochs": ("max_epochs",),
    "patience": ("patience",),
    "chunk_len": ("chunk_len",),
    "sigma_hh": ("init", "sigma_hh"),
    "sigma_ih": ("init", "sigma_ih"),
    "sparsify": ("init", "sparsify_k"),
    "rho": ("init", "rho_target"),
    "init_seed": ("init", "seed"),
    "kind": ("perturbation", "kind"),
    "scope": ("perturbation", "scope"),
    "sigma": ("perturbation", "sigma"),
    "drop_p": ("perturbation", "drop_p"),
    "targets": ("perturbation", "targets"),
    "penalty_norm": ("penalty", "norm"),
    "lam": ("penalty", "lambda"),
    "method": ("optimizer", "method"),
    "momentum": ("optimizer", "momentum"),
    "step_rate": ("optimizer", "step_rate"),
}


def apply_overrides(doc: dict, args) -> dict:
    for dest, path in _OVERRIDE_PATHS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        node = doc
        for key in path[:-1]:
            if node.get(key) is None:
                node[key] = {}
            node = node[key]
        node[path[-1]] = value
    # A perturbation section introduced purely by flags still needs a kind.
    pert = doc.get("perturbation")
    if pert is not None and "kind" not in pert:
        raise ConfigError("perturbation flags given without --kind")
    if doc.get("perturbation", {}) and doc["perturbation"].get("kind") == "none":
        doc["perturbation"] = None
    validate_config(doc)
    return doc


def _add_override_flags(parser, training=True):
    parser.add_argument("--config", help="JSON run-configuration file")
    parser.add_argument("--data", help="dataset JSON path")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int)
    if not training:
        return
    parser.add_argument("--hidden", type=int, help="hidden units")
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--max-epochs", type=int, dest="max_epochs")
    parser.add_argument("--patience", type=int)
    parser.add_argument("--chunk-len", type=int, dest="chunk_len")
    parser.add_argument("--sigma-hh", type=float, dest="sigma_hh")
    parser.add_argument("--sigma-ih", type=float, dest="sigma_ih")
    parser.add_argument("--sparsify", type=int)
    parser.add_argument("--rho", type=float)
    parser.add_argument("--init-seed", type=int, dest="init_seed")
    parser.add_argument("--kind", choices=KINDS, help="perturbation kind")
    parser.add_argument("--scope", choices=SCOPES)
    parser.add_argument("--sigma", type=float, help="perturbation noise sigma")
    parser.add_argument("--drop-p", type=float, dest="drop_p")
    parser.add_argument("--targets", type=lambda s: tuple(s.split(",")),
                        help="comma-separated perturbation targets")
    parser.add_argument("--penalty-norm", choices=("L1", "L2"),
                        dest="penalty_norm")
    parser.add_argument("--lambda", type=float, dest="lam",
                        help="penalty strength")
    parser.add_argument("--method", choices=("momentum", "nag", "rmsprop"))
    parser.add_argument("--momentum", type=float, help="momentum coefficient")
    parser.add_argument("--step-rate", type=float, dest="step_rate")


def _out_dir(args, doc=None) -> Path:
    out = args.out or (doc or {}).get("out") or os.environ.get(OUT_ENV_VAR, ".")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_doc(args) -> dict:
    doc = load_config_file(args.config) if args.config else {}
    return apply_overrides(doc, args)


def _dataset(doc, args) -> data_mod.PianoRollDataset:
    path = doc.get("data")
    if not path:
        raise ConfigError("no dataset given: use --data or the config "
                          "'data' key")
    return data_mod.load(path)


def cmd_train(args) -> int:
    doc = _load_doc(args)
    config = build_hyperconfig(doc)
    dataset = _dataset(doc, args)
    out = _out_dir(args, doc)
    result = train(config, dataset)
    trace = result.trace
    write_trace_csv(trace, out / "trace.csv")
    result.params.save(out / "params.npz")
    summary = {"test_ce": trace.test_ce, "best_valid_ce": trace.best_valid,
               "best_epoch": trace.best_epoch,
               "epochs": trace.records[-1].epoch, "diverged": trace.diverged}
    with open(out / "result.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    if args.plot:
        from .plots import render_trace
        render_trace(trace, out / "trace.png")
    print(f"test_ce={trace.test_ce} best_valid={trace.best_valid:.6g} "
          f"epochs={summary['epochs']} diverged={trace.diverged}")
    return 1 if trace.diverged else 0


def cmd_search(args) -> int:
    space = SearchSpace(variant=args.variant, hidden_units=args.hidden or 100,
                        max_epochs=args.max_epochs or 200,
                        patience=args.patience or 20,
                        chunk_len=args.chunk_len or 100,
                        master_seed=args.seed or 0)
    dataset = data_mod.load(args.data) if args.data else _dataset({}, args)
    out = _out_dir(args)
    result = random_search(space, args.trials, dataset, jobs=args.jobs)
    write_search_json(result, out / "search.json")
    if result.best is None:
        print(f"all {args.trials} trials diverged; empty ranking written")
    else:
        print(f"best valid_ce={result.best['valid_ce']:.6g} "
              f"test_ce={result.best['test_ce']} "
              f"completed={result.summary['n_completed']}/{args.trials}")
    return 0


def cmd_sweep(args) -> int:
    doc = _load_doc(args)
    config = build_hyperconfig(doc)
    dataset = _dataset(doc, args)
    out = _out_dir(args, doc)
    values = [float(v) for v in args.values.split(",")]
    result = sweep(args.axis, values, config, dataset, n_seeds=args.seeds,
                   jobs=args.jobs)
    rows = write_sweep_csv(result, out / "sweep.csv")
    if args.plot:
        from .plots import render_sweep
        render_sweep(result, out / "sweep.png")
    print(f"wrote {rows} rows to {out / 'sweep.csv'} trend_tau={result.trend_tau}")
    return 0


def cmd_demo_surface(args) -> int:
    penalty = None
    if args.lam is not None:
        penalty = RegPenaltySpec(norm=args.penalty_norm or "L2", lam=args.lam)
    result = demo_surface(n_steps=args.steps, target_z=args.target,
                          w_range=tuple(args.w_range),
                          b_range=tuple(args.b_range),
                          resolution=args.resolution, penalty=penalty)
    out_path = Path(args.out_file) if args.out_file else _out_dir(args) / "surface.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    rows = write_surface_csv(result, out_path)
    if args.plot:
        from .plots import render_surface
        render_surface(result, out_path.with_suffix(".png"))
    print(f"wrote {rows} rows to {out_path} max_grad={result.max_grad:.6g}")
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    h, d = args.hidden, args.notes
    params = RnnParams(rng.normal(0, 0.4, (h, d)), rng.normal(0, 0.4, (h, h)),
                       rng.normal(0, 0.4, (d, h)), rng.normal(0, 0.4, h),
                       rng.normal(0, 0.4, d))
    frames = (rng.random((args.batch, args.steps, d)) < 0.3).astype(float)
    batch = SequenceBatch(frames)
    plan = None
    if args.kind and args.kind != "none":
        spec = PerturbationSpec(kind=args.kind,
                                scope=args.scope or "per_time_step",
                                sigma=args.sigma, drop_p=args.drop_p,
                                targets=args.targets or ("w_hh",))
        shapes = {n: getattr(params, n).shape for n in ("w_ih", "w_hh", "w_ho")}
        plan = sample_plan(spec, shapes, args.steps, rng)
    worst = grad_check(params, batch, plan=plan, eps=args.eps)
    print(f"max relative error: {worst:.3e} (threshold {args.threshold:g})")
    return 0 if worst < args.threshold else 1


def cmd_eval(args) -> int:
    params = RnnParams.load(args.params)
    dataset = data_mod.load(args.data)
    seqs = [s for s in dataset.split(args.split) if s]
    batches = [SequenceBatch.single(data_mod.to_array(s)) for s in seqs]
    ce = evaluate(params, batches)
    print(f"{args.split}_ce={ce!r} sequences={len(batches)}")
    return 0


def cmd_synth_data(args) -> int:
    dataset = data_mod.synthesize(seed=args.seed, n_sequences=args.sequences,
                                  T=args.steps, motif_gap=args.motif_gap,
                                  noise_rate=args.noise_rate)
    out_path = Path(args.out_file) if args.out_file else _out_dir(args) / "synthetic.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    data_mod.save(dataset, out_path)
    man = data_mod.manifest(dataset)
    print(f"wrote {out_path}: train={man['train']['sequences']} "
          f"valid={man['valid']['sequences']} test={man['test']['sequences']} "
          f"T={args.steps} motif_gap={args.motif_gap}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rnnlab",
        description="Training laboratory for plain recurrent networks.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress lines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model")
    _add_override_flags(p)
    p.add_argument("--plot", action="store_true",
                   help="also render PNG figures next to the CSV output")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", help="random hyperparameter search")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=VARIANTS, default="plain")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int)
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--chunk-len", type=int, dest="chunk_len")
    p.add_argument("--out")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("sweep", help="train along one regularizer axis")
    _add_override_flags(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True,
                   help="comma-separated axis values")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("demo-surface",
                       help="single-unit loss surface on a (W, b) grid")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--target", type=float, default=0.7)
    p.add_argument("--w-range", type=float, nargs=2, default=(-6.0, 6.0),
                   dest="w_range")
    p.add_argument("--b-range", type=float, nargs=2, default=(-6.0, 6.0),
                   dest="b_range")
    p.add_argument("--resolution", type=int, default=100)
    p.add_argument("--penalty-norm", choices=("L1", "L2"), dest="penalty_norm")
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--out", dest="out_file", help="CSV output path")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_demo_surface, out=None)

    p = sub.add_parser("gradcheck",
                       help="compare BPTT to the finite-difference oracle")
    p.add_argument("--hidden", type=int, default=5)
    p.add_argument("--steps", type=int, default=7)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--notes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=4e-3)
    p.add_argument("--threshold", type=float, default=1e-5)
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--scope", choices=SCOPES)
    p.add_argument("--sigma", type=float)
    p.add_argument("--drop-p", type=float, dest="drop_p")
    p.add_argument("--targets", type=lambda s: tuple(s.split(",")))
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("eval", help="clean-weight CE of saved parameters")
    p.add_argument("--params", required=True, help="params .npz path")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"),
                   default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth-data", help="generate a synthetic corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sequences", type=int, default=200)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--motif-gap", type=int, default=1, dest="motif_gap")
    p.add_argument("--noise-rate", type=float, default=0.05, dest="noise_rate")
    p.add_argument("--out", dest="out_file", help="dataset JSON output path")
    p.set_defaults(func=cmd_synth_data, out=None)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
