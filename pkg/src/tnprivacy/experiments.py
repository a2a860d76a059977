"""Experiment runners behind the command line.

Each runner takes a validated :class:`ExperimentConfig` and an output
directory, writes CSV files that start with a provenance header, and returns
a small summary dict.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .attack import (
    AttackReport, RecordSet, evaluate_attack, normalize_features, run_shadow_pipeline,
    train_attack_lr, write_records)
from .canonical import (
    SingularIntersectionError, left_orthogonality_residual, skeleton_canonical, svd_canonical)
from .config import ExperimentConfig
from .data import BINARY, Dataset, Feature, gen_surrogate, gen_toy, ingest_csv
from .mps import apply_gauge, materialize, random_gauge, random_mps, sign_gauge
from .neural import ToyModel
from .train import train_model


def provenance(cfg: ExperimentConfig) -> str:
    return (f"# config_sha256={cfg.sha256()}\n"
            f"# seed={cfg.seed}\n"
            f"# version={__version__}\n")


def _write_csv(path: Path, cfg: ExperimentConfig, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(provenance(cfg))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def _child_seed(cfg: ExperimentConfig, *key: int) -> int:
    ss = np.random.SeedSequence(cfg.seed, spawn_key=key)
    return int(ss.generate_state(2, np.uint32).view(np.uint64)[0] >> np.uint64(1))


# -- datasets --------------------------------------------------------------

def load_dataset(cfg: ExperimentConfig) -> Dataset:
    spec = cfg.dataset
    if spec.source == "surrogate":
        return gen_surrogate(spec.rows, seed=_child_seed(cfg, 1))
    schema = tuple(Feature(f.name, f.kind, f.role, f.lo, f.hi, f.values, f.column, f.source)
                   for f in spec.features)
    return ingest_csv(spec.path, schema, spec.balance_by, seed=_child_seed(cfg, 1))


# -- toy vulnerability -----------------------------------------------------

def toy_records(cfg: ExperimentConfig):
    """``(before, after, majority)`` arrays of ``(w_irr, b)`` per toy model."""
    spec = cfg.toy
    before, after, majority = [], [], []
    for si, sign in enumerate((1, -1)):
        for k in range(spec.models_per_sign):
            init_seed, data_seed, train_seed = (_child_seed(cfg, 2, si, k, r) for r in range(3))
            m0 = ToyModel.init(init_seed, spec.init_scale, spec.activation)
            data = gen_toy(spec.rows, sign, data_seed)
            m1, _ = train_model(m0, data, spec.train.build(train_seed))
            before.append((m0.w_irr, m0.b))
            after.append((m1.w_irr, m1.b))
            majority.append(sign)
    return np.array(before), np.array(after), np.array(majority)


def separation_accuracy(x: np.ndarray, labels: np.ndarray, test_fraction: float,
                        splits: int, seed: int) -> float:
    """Held-out logistic accuracy averaged over stratified random splits."""
    y = (labels > 0).astype(np.int64)
    rng = np.random.default_rng(seed)
    accs = []
    for _ in range(splits):
        test = np.zeros(len(y), dtype=bool)
        for c in (0, 1):
            idx = rng.permutation(np.flatnonzero(y == c))
            test[idx[:int(round(test_fraction * len(idx)))]] = True
        x_tr, x_te, _ = normalize_features(x[~test], x[test])
        model = train_attack_lr(x_tr, y[~test])
        accs.append(float(np.mean(model.predict(x_te) == y[test])))
    return float(np.mean(accs))


def cmd_toy_vuln(cfg: ExperimentConfig, out: Path) -> dict:
    before, after, majority = toy_records(cfg)
    rows = []
    for phase, pts in (("before", before), ("after", after)):
        for i, (w, b) in enumerate(pts):
            rows.append((phase, i, int(majority[i]), float(w), float(b)))
    _write_csv(out / "toy_scatter.csv", cfg, ["phase", "model", "majority", "w_irr", "b"], rows)
    spec = cfg.toy
    acc = {phase: separation_accuracy(pts, majority, spec.test_fraction, spec.splits,
                                      _child_seed(cfg, 3))
           for phase, pts in (("before", before), ("after", after))}
    _write_csv(out / "toy_separation.csv", cfg, ["phase", "logistic_accuracy"],
               [(k, v) for k, v in acc.items()])
    return {"before": acc["before"], "after": acc["after"], "rows": len(rows)}


# -- shadow-training pipeline ----------------------------------------------

def pipeline_tables(report: AttackReport, records: dict, variants, levels):
    models, attacks = [], []
    for v in variants:
        for lvl in levels:
            r = report.row(lvl, v)
            sigma = r.null_sigma
            models.append((v, lvl, r.task_mean, r.task_lo, r.task_hi, len(records[(lvl, v)])))
            attacks.append((v, lvl, r.attack_mean, r.attack_lo, r.attack_hi, r.n_attacked,
                            0.5 - 2 * sigma, 0.5 + 2 * sigma, r.repetitions, r.excluded))
    return models, attacks


def cmd_pipeline(cfg: ExperimentConfig, out: Path, workers: int | None = None) -> dict:
    workers = cfg.workers if workers is None else workers
    scfg = cfg.shadow_config()
    base = load_dataset(cfg)
    records = run_shadow_pipeline(scfg, base, workers)
    for (lvl, v), rs in records.items():
        write_records(rs, out / "records" / f"level{lvl}_{v}.csv", provenance(cfg))
    report = evaluate_attack(scfg, records, workers)
    models, attacks = pipeline_tables(report, records, scfg.variants, scfg.levels)
    _write_csv(out / "models.csv", cfg,
               ["variant", "level", "task_acc_mean", "task_acc_p05", "task_acc_p95", "models"], models)
    _write_csv(out / "attacks.csv", cfg,
               ["variant", "level", "attack_acc_mean", "attack_acc_p05", "attack_acc_p95",
                "attacked_models", "null_lo", "null_hi", "repetitions", "excluded"], attacks)
    return {"report": report, "records": records, "leakage_ok": report.leakage_ok}


# -- canonical-form property suite -----------------------------------------

@dataclass
class PropertyRow:
    prop: str
    n_sites: int
    samples: int
    worst: float
    tolerance: float
    status: str  # pass | fail | expected-failure | unexpected-success


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def _site_gap(m1, m2) -> float:
    return max(_rel(a, b) for a, b in zip(m1.sites, m2.sites))


def singular_model(n_sites: int, phys_dim: int, bond_dim: int, seed=0):
    """A model whose first intersection matrix is exactly zero."""
    m = random_mps(n_sites, phys_dim, bond_dim, seed=seed)
    first = m.sites[0].copy()
    first[0, :] = 0.0
    return m.replace_sites((first,) + m.sites[1:])


def canonical_suite(cfg: ExperimentConfig) -> list[PropertyRow]:
    spec = cfg.canonical
    tol = spec.tolerance
    rows: list[PropertyRow] = []
    for n in spec.sites:
        worst = dict.fromkeys(("pi-invariance", "univocality", "idempotence", "svd-orthogonality",
                               "svd-idempotence", "composition"), 0.0)
        for k in range(spec.models):
            m = random_mps(n, spec.phys_dim, spec.bond_dim, seed=_child_seed(cfg, 4, n, k))
            ref = materialize(m)
            c = skeleton_canonical(m)
            worst["pi-invariance"] = max(worst["pi-invariance"], _rel(materialize(c), ref))
            worst["idempotence"] = max(worst["idempotence"], _site_gap(skeleton_canonical(c), c))
            for g in range(spec.gauges):
                gauge = random_gauge(m, seed=_child_seed(cfg, 5, n, k, g))
                other = skeleton_canonical(apply_gauge(m, gauge))
                worst["univocality"] = max(worst["univocality"], _site_gap(other, c))
            s = svd_canonical(m)
            worst["svd-orthogonality"] = max(worst["svd-orthogonality"], left_orthogonality_residual(s))
            worst["svd-idempotence"] = max(worst["svd-idempotence"], _site_gap(svd_canonical(s), s))
            signed = apply_gauge(s, sign_gauge(s, _child_seed(cfg, 6, n, k)))
            worst["composition"] = max(worst["composition"], _site_gap(skeleton_canonical(signed), c))
        limits = {"pi-invariance": 1e-8}
        for prop, value in worst.items():
            limit = limits.get(prop, tol)
            rows.append(PropertyRow(prop, n, spec.models, value, limit,
                                    "pass" if value <= limit else "fail"))
    if spec.include_singular and spec.sites and max(spec.sites) >= 4:
        n = max(spec.sites)
        try:
            skeleton_canonical(singular_model(n, spec.phys_dim, spec.bond_dim, _child_seed(cfg, 7)))
            status, cond = "unexpected-success", 0.0
        except SingularIntersectionError as exc:
            status, cond = "expected-failure", exc.condition
        rows.append(PropertyRow("singular-intersection", n, 1, cond, 0.0, status))
    return rows


def cmd_canonical_props(cfg: ExperimentConfig, out: Path) -> dict:
    rows = canonical_suite(cfg)
    _write_csv(out / "canonical_props.csv", cfg,
               ["property", "n_sites", "samples", "worst_residual", "tolerance", "status"],
               [(r.prop, r.n_sites, r.samples, r.worst, r.tolerance, r.status) for r in rows])
    ok = all(r.status in ("pass", "expected-failure") for r in rows)
    return {"rows": rows, "ok": ok}
