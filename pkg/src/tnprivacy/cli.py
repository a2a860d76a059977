"""Command line: ``tnprivacy <subcommand> [--config PATH] [--out DIR] [--seed N] [--workers N]``.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 property or
leakage-guard failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .attack import LeakageError
from .canonical import skeleton_canonical, svd_canonical
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .data import DataError, export_csv, gen_surrogate
from .experiments import (
    cmd_canonical_props, cmd_pipeline, cmd_toy_vuln, load_dataset, provenance, _child_seed)
from .modelio import ModelFormatError, load_model, save_model
from .mps import MpsModel, apply_gauge, init_mps, materialize, sign_gauge
from .neural import Mlp
from .tensor import SingularMatrixError, SvdConvergenceError, TensorError
from .train import EmptyClassError, train_model, write_history

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_PROPERTY = 0, 1, 2, 3


def _config(args) -> ExperimentConfig:
    if args.config is None:
        return parse_config({}, args.seed, args.workers)
    return load_config(args.config, args.seed, args.workers)


def _out(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out if args.out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_toy_vuln(args) -> int:
    cfg = _config(args)
    res = cmd_toy_vuln(cfg, _out(args, cfg))
    print(f"logistic separation before={res['before']:.3f} after={res['after']:.3f}")
    return EXIT_OK


def run_pipeline(args) -> int:
    cfg = _config(args)
    res = cmd_pipeline(cfg, _out(args, cfg), cfg.workers)
    for row in res["report"].rows:
        print(f"{row.variant:>14} p={row.level:<4} attack={row.attack_mean:.3f} "
              f"[{row.attack_lo:.3f}, {row.attack_hi:.3f}] task={row.task_mean:.3f}")
    return EXIT_OK if res["leakage_ok"] else EXIT_PROPERTY


def run_canonical_props(args) -> int:
    cfg = _config(args)
    res = cmd_canonical_props(cfg, _out(args, cfg))
    for r in res["rows"]:
        print(f"{r.prop:>22} N={r.n_sites} worst={r.worst:.3e} {r.status}")
    return EXIT_OK if res["ok"] else EXIT_PROPERTY


def run_gen_data(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    d = gen_surrogate(cfg.dataset.rows, seed=_child_seed(cfg, 1))
    export_csv(d, out / "surrogate.csv", provenance(cfg))
    print(f"wrote {len(d)} rows to {out / 'surrogate.csv'}")
    return EXIT_OK


def run_train(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    data = load_dataset(cfg)
    seed = _child_seed(cfg, 8)
    if args.arch == "mps":
        model = init_mps(len(data.input_features) + 1, 2, cfg.mps.bond_dim, 2,
                         output_site=cfg.mps.output_site, seed=seed)
        tcfg = cfg.mps.train.build(seed)
    else:
        model = Mlp.init(cfg.nn.sizes, seed=seed)
        tcfg = cfg.nn.train.build(seed)
    model, history = train_model(model, data, tcfg)
    save_model(model, out / f"{args.arch}_model.txt", provenance(cfg))
    with open(out / f"{args.arch}_history.csv", "w", newline="") as fh:
        fh.write(provenance(cfg))
        write_history(history, fh)
    if history:
        print(f"final train_acc={history[-1]['train_acc']:.3f}")
    return EXIT_OK


def run_canonicalize(args) -> int:
    cfg = _config(args)
    model = load_model(args.model)
    if not isinstance(model, MpsModel):
        raise ModelFormatError(f"{args.model}: only MPS models can be canonicalized")
    if args.form == "univocal":
        canon = skeleton_canonical(model)
    elif args.form == "svd":
        canon = svd_canonical(model)
    else:
        canon = svd_canonical(model)
        canon = apply_gauge(canon, sign_gauge(canon, _child_seed(cfg, 9)))
    target = Path(args.out) / (Path(args.model).stem + f".{args.form}.txt") if args.out \
        else Path(args.model).with_suffix(f".{args.form}.txt")
    save_model(canon, target, provenance(cfg))
    ref = materialize(model)
    resid = float(np.max(np.abs(materialize(canon) - ref)) / max(float(np.max(np.abs(ref))), 1e-300))
    print(f"pi-invariance residual {resid:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tnprivacy", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--workers", type=int, help="worker processes (overrides config)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("toy-vuln", parents=[common], help="irrelevant-feature leak in the toy model") \
        .set_defaults(func=run_toy_vuln)
    sub.add_parser("pipeline", parents=[common], help="shadow-training attack over all variants") \
        .set_defaults(func=run_pipeline)
    sub.add_parser("canonical-props", parents=[common], help="canonical-form property suite") \
        .set_defaults(func=run_canonical_props)
    sub.add_parser("gen-data", parents=[common], help="write the synthetic surrogate dataset") \
        .set_defaults(func=run_gen_data)
    p = sub.add_parser("train", parents=[common], help="train one model on the configured dataset")
    p.add_argument("--arch", choices=("mps", "nn"), default="mps")
    p.set_defaults(func=run_train)
    p = sub.add_parser("canonicalize", parents=[common], help="canonicalize an MPS model file")
    p.add_argument("model", help="MPS model file")
    p.add_argument("--form", choices=("univocal", "svd", "svd+signs"), default="univocal")
    p.set_defaults(func=run_canonicalize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for path, msg in exc.problems:
            print(f"config error at {path}: {msg}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SingularMatrixError, SvdConvergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LeakageError as exc:
        print(f"leakage guard: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except (DataError, ModelFormatError, TensorError, EmptyClassError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
