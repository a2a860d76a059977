"""Shadow-training attack on model parameters.

For every imbalance level, many datasets are drawn with a known majority
value of the irrelevant feature, several victim models are trained on each,
and their (optionally canonicalized) flattened parameters become records.
A meta-classifier fitted on the attacker's share of datasets then tries to
predict the majority value for the held-back datasets.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .canonical import SingularIntersectionError, skeleton_canonical, svd_canonical
from .data import Dataset, sample_biased
from .mps import apply_gauge, init_mps, sign_gauge
from .neural import Mlp, flatten_params, mlp_forward
from .train import MPS_REFERENCE, TrainConfig, accuracy, train_arrays, train_model

VARIANTS = ("nn", "mps-raw", "mps-svd", "mps-svd+signs", "mps-univocal")
MPS_VARIANTS = VARIANTS[1:]


class InsufficientDatasetsError(ValueError):
    pass


class LeakageError(AssertionError):
    pass


class SingleClassError(ValueError):
    pass


@dataclass(frozen=True)
class MetaConfig:
    """Meta-model hyperparameters (defaults follow the reference attacks)."""

    lr_strength: float = 1.0
    lr_max_iter: int = 1000
    mlp_hidden: tuple[int, ...] = (20, 20, 10, 10, 2)
    mlp_lr: float = 1e-3
    mlp_l2: float = 1e-4
    mlp_batch: int = 1000
    mlp_epochs: int = 1000
    mlp_patience: int | None = None
    mlp_val_fraction: float = 0.2
    normalization: str = "standardize"  # or "none"


@dataclass(frozen=True)
class ShadowConfig:
    levels: tuple[float, ...] = (0.5, 0.8, 1.0)
    attacker_datasets: int = 8  # per majority value
    attacked_datasets: int = 2  # per majority value
    models_per_dataset: int = 10
    dataset_size: int = 500
    repetitions: int = 50
    variants: tuple[str, ...] = ("nn", "mps-raw", "mps-svd", "mps-svd+signs", "mps-univocal")
    feature: str = "parity"
    seed: int = 0
    gauge_seed: int | None = None  # residual-gauge sampling stream, defaults to seed
    eval_rows: int = 1000
    holdout: float = 0.5
    nn_sizes: tuple[int, ...] = (9, 16, 16, 8, 4, 2)
    nn_train: TrainConfig = TrainConfig(batch_size=8, lr=3e-4, l2=6e-3, epochs=60, val_fraction=0.2)
    mps_train: TrainConfig = MPS_REFERENCE
    mps_bond_dim: int = 2
    mps_output_site: int | None = None  # None puts the class leg last
    meta: MetaConfig = MetaConfig()
    meta_models: tuple[tuple[str, str], ...] = (
        ("nn", "lr"), ("mps-raw", "mlp"), ("mps-svd", "mlp"),
        ("mps-svd+signs", "mlp"), ("mps-univocal", "mlp"))

    def __post_init__(self):
        if min(self.attacker_datasets, self.attacked_datasets, self.models_per_dataset,
               self.dataset_size, self.repetitions) < 1:
            raise ValueError("all counts must be at least 1")
        if not 0.0 < self.holdout < 1.0:
            raise ValueError("holdout must lie in (0, 1)")
        if any(not 0.5 <= p <= 1.0 for p in self.levels):
            raise ValueError("imbalance levels must lie in [0.5, 1]")
        for v in self.variants:
            if v not in VARIANTS:
                raise ValueError(f"unknown variant {v!r}")

    @property
    def datasets_per_class(self) -> int:
        return self.attacker_datasets + self.attacked_datasets

    @property
    def datasets_per_level(self) -> int:
        return 2 * self.datasets_per_class

    def meta_model(self, variant: str) -> str:
        return dict(self.meta_models).get(variant, "mlp")


@dataclass
class RecordSet:
    """Flattened-parameter rows for one (level, variant)."""

    level: float
    variant: str
    params: np.ndarray  # (models, n_params)
    majority: np.ndarray  # (models,)
    dataset: np.ndarray
    model: np.ndarray
    task_acc: np.ndarray
    excluded: int = 0

    def __len__(self) -> int:
        return len(self.majority)


# -- shadow models ---------------------------------------------------------

def _dataset_majority(i: int) -> int:
    return i % 2


def postprocess(model, variant: str, gauge_seed) -> object:
    if variant in ("nn", "mps-raw"):
        return model
    if variant == "mps-svd":
        return svd_canonical(model)
    if variant == "mps-svd+signs":
        c = svd_canonical(model)
        return apply_gauge(c, sign_gauge(c, gauge_seed))
    if variant == "mps-univocal":
        return skeleton_canonical(model)
    raise ValueError(f"unknown variant {variant!r}")


def _task_seeds(cfg: ShadowConfig, li: int, di: int):
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(li, di))
    data_ss, *model_ss = ss.spawn(1 + cfg.models_per_dataset)
    gauge = cfg.seed if cfg.gauge_seed is None else cfg.gauge_seed
    gauge_ss = [np.random.SeedSequence(gauge, spawn_key=(li, di, k)) for k in range(cfg.models_per_dataset)]
    return data_ss, model_ss, gauge_ss


def train_dataset_models(cfg: ShadowConfig, pools: tuple[Dataset, Dataset],
                         li: int, di: int) -> dict:
    """Train every victim model of one shadow dataset and post-process it.

    Task accuracy is measured on rows from the held-out pool drawn with the
    same imbalance as the training set.

    Returns ``{variant: [(params or None, task_acc), ...]}`` in model order;
    ``None`` marks a canonicalization failure.
    """
    level = cfg.levels[li]
    data_ss, model_ss, gauge_ss = _task_seeds(cfg, li, di)
    data_seed, eval_seed = (int(s) for s in np.random.default_rng(data_ss).integers(2 ** 63, size=2))
    majority = _dataset_majority(di)
    shadow = sample_biased(pools[0], cfg.feature, majority, level, cfg.dataset_size, data_seed)
    eval_set = sample_biased(pools[1], cfg.feature, majority, level, cfg.eval_rows, eval_seed)
    out: dict[str, list] = {v: [] for v in cfg.variants}
    n_legs = len(shadow.input_features) + 1
    for k in range(cfg.models_per_dataset):
        s_init, s_train, s_eval = (int(s) for s in np.random.default_rng(model_ss[k]).integers(2 ** 63, size=3))
        if "nn" in cfg.variants:
            net = Mlp.init(cfg.nn_sizes, seed=s_init)
            net, _ = train_model(net, shadow, _with_seed(cfg.nn_train, s_train))
            out["nn"].append((flatten_params(net), accuracy(net, eval_set)))
        mps_variants = [v for v in cfg.variants if v in MPS_VARIANTS]
        if mps_variants:
            b = cfg.mps_bond_dim
            m = init_mps(n_legs, 2, b, 2, output_site=cfg.mps_output_site, seed=s_init)
            m, _ = train_model(m, shadow, _with_seed(cfg.mps_train, s_train))
            acc = accuracy(m, eval_set, s_eval)
            for v in mps_variants:
                try:
                    out[v].append((flatten_params(postprocess(m, v, gauge_ss[k])), acc))
                except SingularIntersectionError:
                    out[v].append((None, acc))
    return out


def _with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    from dataclasses import replace
    return replace(cfg, seed=int(seed) % (2 ** 63))


def _run_task(args):
    return train_dataset_models(*args)


def map_tasks(fn, tasks: Sequence, workers: int = 1) -> list:
    """Ordered map, in-process for one worker, else over a process pool."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def split_pools(cfg: ShadowConfig, base: Dataset) -> tuple[Dataset, Dataset]:
    """Disjoint (training, evaluation) row pools; the second gets ``holdout`` of the rows."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2 ** 31,)))
    order = rng.permutation(len(base))
    cut = int(round(cfg.holdout * len(base)))
    return base.take(np.sort(order[cut:])), base.take(np.sort(order[:cut]))


def run_shadow_pipeline(cfg: ShadowConfig, base: Dataset, workers: int = 1) -> dict:
    """All records, keyed by ``(level, variant)``.

    Results depend only on the configuration seeds, never on ``workers``.
    """
    pools = split_pools(cfg, base)
    coords = [(li, di) for li in range(len(cfg.levels)) for di in range(cfg.datasets_per_level)]
    results = map_tasks(_run_task, [(cfg, pools, li, di) for li, di in coords], workers)
    records = {}
    for li, level in enumerate(cfg.levels):
        for v in cfg.variants:
            rows, maj, ds, mod, acc, excluded = [], [], [], [], [], 0
            for (tli, di), res in zip(coords, results):
                if tli != li:
                    continue
                for k, (params, a) in enumerate(res[v]):
                    if params is None:
                        excluded += 1
                        continue
                    rows.append(params)
                    maj.append(_dataset_majority(di))
                    ds.append(di)
                    mod.append(k)
                    acc.append(a)
            records[(level, v)] = RecordSet(level, v, np.array(rows), np.array(maj), np.array(ds),
                                            np.array(mod), np.array(acc), excluded)
    return records


# -- records cache ---------------------------------------------------------

def write_records(rs: RecordSet, path, header: str = "") -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        width = rs.params.shape[1] if len(rs) else 0
        w.writerow(["level", "variant", "dataset", "model", "majority", "task_acc"]
                   + [f"p{i}" for i in range(width)])
        for i in range(len(rs)):
            w.writerow([repr(rs.level), rs.variant, int(rs.dataset[i]), int(rs.model[i]),
                        int(rs.majority[i]), repr(float(rs.task_acc[i]))]
                       + [repr(float(x)) for x in rs.params[i]])


def read_records(path) -> RecordSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))[1:]
    if not rows:
        raise ValueError(f"{path} holds no records")
    return RecordSet(
        level=float(rows[0][0]), variant=rows[0][1],
        params=np.array([[float(x) for x in r[6:]] for r in rows]),
        majority=np.array([int(r[4]) for r in rows]),
        dataset=np.array([int(r[2]) for r in rows]),
        model=np.array([int(r[3]) for r in rows]),
        task_acc=np.array([float(r[5]) for r in rows]))


# -- meta-models -----------------------------------------------------------

@dataclass
class Standardizer:
    """Per-coordinate z-scoring fitted on attacker-side rows.

    Coordinates with zero spread are dropped. Applying the transform to data
    that is already standardized standardizes it again; call it once.
    """

    mean: np.ndarray
    std: np.ndarray
    keep: np.ndarray

    @property
    def dropped(self) -> np.ndarray:
        return np.flatnonzero(~self.keep)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x[:, self.keep] - self.mean[self.keep]) / self.std[self.keep]


def normalize_features(train: np.ndarray, evaluate: np.ndarray | None = None,
                       method: str = "standardize"):
    """Fit on ``train``; returns ``(train_n, eval_n, transform)``."""
    train = np.asarray(train, dtype=np.float64)
    if len(train) == 0:
        raise ValueError("cannot fit a normalization on zero rows")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    keep = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    if method == "none":
        mean, std = np.zeros_like(mean), np.ones_like(std)
        keep = np.ones_like(keep)
    elif method != "standardize":
        raise ValueError(f"unknown normalization {method!r}")
    t = Standardizer(mean, np.where(keep, std, 1.0), keep)
    return t(train), (t(np.asarray(evaluate, dtype=np.float64)) if evaluate is not None else None), t


@dataclass
class LogisticMeta:
    weights: np.ndarray
    intercept: float
    converged: bool
    iterations: int

    def decision(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights + self.intercept

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.decision(x) > 0.0).astype(np.int64)


def _check_labels(y: np.ndarray) -> None:
    if len(np.unique(y)) < 2:
        raise SingleClassError("meta-model training needs both majority values")


def train_attack_lr(x, y, strength: float = 1.0, max_iter: int = 1000) -> LogisticMeta:
    """Binary logistic regression, ``sum(log-loss) + strength/2 * |w|^2``, via L-BFGS.

    The intercept is not penalized.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    _check_labels(y)
    sign = np.where(y > 0, 1.0, -1.0)

    def objective(theta):
        w, b = theta[:-1], theta[-1]
        margin = sign * (x @ w + b)
        loss = np.sum(np.logaddexp(0.0, -margin)) + 0.5 * strength * w @ w
        coef = -sign * np.exp(-np.logaddexp(0.0, margin))  # d loss / d score
        grad = np.concatenate([x.T @ coef + strength * w, [coef.sum()]])
        return loss, grad

    res = optimize.minimize(objective, np.zeros(x.shape[1] + 1), jac=True, method="L-BFGS-B",
                            options={"maxiter": max_iter, "gtol": 1e-8})
    return LogisticMeta(res.x[:-1], float(res.x[-1]), bool(res.success), int(res.nit))


@dataclass
class MlpMeta:
    net: Mlp
    history: list = field(default_factory=list, repr=False)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self.net, x)[0].argmax(axis=1)


def train_attack_mlp(x, y, groups=None, meta: MetaConfig = MetaConfig(), seed=0) -> MlpMeta:
    """Deep meta-classifier with best-validation early stopping.

    When ``groups`` (dataset ids) are given, the validation split never
    divides one dataset's models.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    _check_labels(y)
    rng = np.random.default_rng(seed)
    if groups is None:
        groups = np.arange(len(y))
    ids = np.unique(groups)
    n_val = int(round(meta.mlp_val_fraction * len(ids)))
    val_ids = rng.choice(ids, n_val, replace=False) if n_val else np.array([], dtype=ids.dtype)
    is_val = np.isin(groups, val_ids)
    if len(np.unique(y[~is_val])) < 2:
        is_val[:] = False
    net = Mlp.init([x.shape[1], *meta.mlp_hidden, 2], seed=int(rng.integers(2 ** 63)))
    cfg = TrainConfig(batch_size=meta.mlp_batch, lr=meta.mlp_lr, l2=meta.mlp_l2,
                      epochs=meta.mlp_epochs, seed=int(rng.integers(2 ** 63)), patience=meta.mlp_patience)
    net, history = train_arrays(net, x[~is_val], y[~is_val], cfg,
                                x[is_val] if is_val.any() else None, y[is_val] if is_val.any() else None)
    return MlpMeta(net, history)


# -- evaluation ------------------------------------------------------------

@dataclass
class AttackRow:
    level: float
    variant: str
    attack_mean: float
    attack_lo: float
    attack_hi: float
    task_mean: float
    task_lo: float
    task_hi: float
    n_attacked: int
    excluded: int
    repetitions: int
    leakage_ok: bool

    @property
    def null_sigma(self) -> float:
        return float(np.sqrt(0.25 / max(self.n_attacked, 1)))


@dataclass
class AttackReport:
    rows: list[AttackRow]
    seed: int

    def row(self, level: float, variant: str) -> AttackRow:
        return next(r for r in self.rows if r.level == level and r.variant == variant)

    @property
    def leakage_ok(self) -> bool:
        return all(r.leakage_ok for r in self.rows)


def split_datasets(rs: RecordSet, cfg: ShadowConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Dataset ids for (attacker, attacked), stratified by majority value."""
    attacker, attacked = [], []
    for maj in (0, 1):
        ids = np.unique(rs.dataset[rs.majority == maj])
        if len(ids) < cfg.attacked_datasets + 1:
            raise InsufficientDatasetsError(
                f"level {rs.level}: majority {maj} has {len(ids)} datasets, "
                f"need more than {cfg.attacked_datasets}")
        picked = rng.permutation(ids)
        attacked += list(picked[:cfg.attacked_datasets])
        attacker += list(picked[cfg.attacked_datasets:])
    return np.array(sorted(attacker)), np.array(sorted(attacked))


def fit_meta(kind: str, x, y, groups, meta: MetaConfig, seed):
    if kind == "lr":
        return train_attack_lr(x, y, meta.lr_strength, meta.lr_max_iter)
    if kind == "mlp":
        return train_attack_mlp(x, y, groups, meta, seed)
    raise ValueError(f"unknown meta-model {kind!r}")


def attack_once(rs: RecordSet, cfg: ShadowConfig, rep: int, fit: Callable | None = None):
    """One repetition: split datasets, fit on attacker side, score attacked side.

    Returns ``(accuracy, n_attacked, leakage_ok)``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2 ** 30, cfg.levels.index(rs.level), rep)))
    attacker, attacked = split_datasets(rs, cfg, rng)
    train_rows = np.isin(rs.dataset, attacker)
    test_rows = np.isin(rs.dataset, attacked)
    leakage_ok = (not set(attacker) & set(attacked)) and not np.any(train_rows & test_rows) \
        and not set(rs.dataset[train_rows]) & set(rs.dataset[test_rows])
    if not leakage_ok:
        raise LeakageError(f"attacked dataset entered meta-model training at repetition {rep}")
    x_tr, x_te, _ = normalize_features(rs.params[train_rows], rs.params[test_rows], cfg.meta.normalization)
    y_tr, y_te = rs.majority[train_rows], rs.majority[test_rows]
    seed = int(rng.integers(2 ** 63))
    if fit is None:
        model = fit_meta(cfg.meta_model(rs.variant), x_tr, y_tr, rs.dataset[train_rows], cfg.meta, seed)
    else:
        model = fit(x_tr, y_tr)
    acc = float(np.mean(model.predict(x_te) == y_te))
    return acc, int(test_rows.sum()), bool(leakage_ok)


def _attack_task(args):
    rs, cfg, rep = args
    return attack_once(rs, cfg, rep)


def evaluate_attack(cfg: ShadowConfig, records: dict, workers: int = 1,
                    fit: Callable | None = None) -> AttackReport:
    """Mean attack accuracy and 5th-95th percentile band per (level, variant)."""
    keys = [(lvl, v) for lvl in cfg.levels for v in cfg.variants if (lvl, v) in records]
    if fit is None:
        tasks = [(records[k], cfg, rep) for k in keys for rep in range(cfg.repetitions)]
        flat = map_tasks(_attack_task, tasks, workers)
    else:
        flat = [attack_once(records[k], cfg, rep, fit) for k in keys for rep in range(cfg.repetitions)]
    rows = []
    for i, (lvl, v) in enumerate(keys):
        chunk = flat[i * cfg.repetitions:(i + 1) * cfg.repetitions]
        accs = np.array([c[0] for c in chunk])
        rs = records[(lvl, v)]
        task = rs.task_acc
        rows.append(AttackRow(
            level=lvl, variant=v, attack_mean=float(accs.mean()),
            attack_lo=float(np.percentile(accs, 5)), attack_hi=float(np.percentile(accs, 95)),
            task_mean=float(task.mean()), task_lo=float(np.percentile(task, 5)),
            task_hi=float(np.percentile(task, 95)), n_attacked=int(chunk[0][1]),
            excluded=rs.excluded, repetitions=cfg.repetitions,
            leakage_ok=all(c[2] for c in chunk)))
    return AttackReport(rows, cfg.seed)
