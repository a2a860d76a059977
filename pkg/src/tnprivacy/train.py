"""Losses, Adam, analytic MPS gradients and the training loops."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import BINARY, Dataset
from .mps import FeatureKind, FeatureMap, MpsModel, forward, left_environments, right_environments, site_vectors
from .neural import Mlp, ToyModel, mlp_backward, mlp_forward, toy_forward, toy_gradients


class EmptyClassError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    lr: float = 3e-4
    l2: float = 0.0
    epochs: int = 10
    val_fraction: float = 0.0
    seed: int = 0
    patience: int | None = None  # stop after this many epochs without a new best

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or not self.lr > 0 or self.l2 < 0:
            raise ValueError("batch_size, lr must be positive; epochs, l2 nonnegative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


# Hyperparameters of the reference experiments.
NN_REFERENCE = TrainConfig(batch_size=8, lr=3e-4, l2=6e-3, epochs=1250, val_fraction=0.2)
MPS_REFERENCE = TrainConfig(batch_size=100, lr=1e-1, l2=0.0, epochs=20, val_fraction=0.0)


# -- loss ------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, label) -> tuple[float, np.ndarray]:
    """``-log softmax(logits)[label]`` and its gradient wrt the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max()
    log_norm = np.log(np.exp(z).sum())
    loss = float(log_norm - z[label])
    grad = np.exp(z - log_norm)
    grad[label] -= 1.0
    return loss, grad


def batch_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss over rows and the gradient of that mean wrt every logit."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(labels))
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / len(labels)


# -- Adam ------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 0.0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected Adam update, in place. ``l2`` adds ``l2 * theta`` to the gradient."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if state.l2:
            g = g + state.l2 * p
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return list(params)


# -- MPS gradients ---------------------------------------------------------

def mps_gradients(m: MpsModel, embedded, labels) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy over a batch and its gradient wrt every site tensor.

    The loss gradient wrt the logits is placed on the output leg; each site's
    gradient is then the outer product of its left environment, its input
    vector and its right environment.
    """
    x = np.asarray(embedded, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 3 or len(x) == 0:
        raise ValueError("mps_gradients needs a nonempty batch of shape (B, N-1, d)")
    loss, g = batch_cross_entropy(forward(m, x), labels)
    n = m.n_sites
    vecs = site_vectors(m, x, g)
    left = left_environments(m, vecs, n - 1)
    right = right_environments(m, vecs, 0)
    grads = []
    for j in range(n):
        v = vecs[j]
        if j == 0:
            grads.append(v.T @ right[0])
        elif j == n - 1:
            grads.append(left[j].T @ v)
        else:
            grads.append(np.einsum("ba,bs,bc->asc", left[j], v, right[j]))
    return loss, grads


# -- encodings -------------------------------------------------------------

def onehot_encode(d: Dataset) -> np.ndarray:
    """Binary inputs become one-hot pairs, continuous inputs are min-max scaled."""
    cols = []
    for f, col in zip(d.input_features, d.inputs().T):
        if f.kind == BINARY:
            hot = col > 0.5
            cols += [(~hot).astype(np.float64), hot.astype(np.float64)]
        else:
            cols.append((col - f.lo) / (f.hi - f.lo))
    return np.column_stack(cols)


def feature_map(d: Dataset, epsilon: float = 5e-2) -> FeatureMap:
    kinds = tuple(FeatureKind("binary") if f.kind == BINARY else FeatureKind("continuous", f.lo, f.hi)
                  for f in d.input_features)
    return FeatureMap(kinds, epsilon)


def embed_dataset(d: Dataset, rng, epsilon: float = 5e-2) -> np.ndarray:
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return feature_map(d, epsilon).embed_batch(d.inputs(), rng)


# -- evaluation ------------------------------------------------------------

def predict(model, d: Dataset, rng=None) -> np.ndarray:
    """Class predictions; MPS noise draws come from ``rng``."""
    if isinstance(model, Mlp):
        return mlp_forward(model, onehot_encode(d))[0].argmax(axis=1)
    if isinstance(model, MpsModel):
        return forward(model, embed_dataset(d, np.random.default_rng(rng))).argmax(axis=1)
    if isinstance(model, ToyModel):
        out, _ = toy_forward(model, d.column("x_rel"), d.column("x_irr"))
        return (out > 0.5).astype(np.int64)
    raise TypeError(f"cannot evaluate {type(model).__name__}")


def accuracy(model, d: Dataset, rng=None) -> float:
    if len(d) == 0:
        return float("nan")
    return float(np.mean(predict(model, d, rng) == d.labels()))


# -- training loops ---------------------------------------------------------

def _split(d: Dataset, fraction: float, rng) -> tuple[Dataset, Dataset | None]:
    if fraction <= 0.0:
        return d, None
    order = rng.permutation(len(d))
    n_val = int(round(fraction * len(d)))
    return d.take(order[n_val:]), d.take(order[:n_val])


class _Adapter:
    """Uniform parameter access and one-batch gradients per model family."""

    def __init__(self, model):
        self.kind = type(model).__name__
        if isinstance(model, Mlp):
            self.model = model.copy()
            self.params = self.model.params
        elif isinstance(model, MpsModel):
            self.params = [s.copy() for s in model.sites]
            self.template = model
        elif isinstance(model, ToyModel):
            self.params = [model.as_vector().copy()]
            self.template = model
        else:
            raise TypeError(f"cannot train {type(model).__name__}")

    def current(self):
        if self.kind == "Mlp":
            return self.model.copy()
        if self.kind == "MpsModel":
            return self.template.replace_sites([p.copy() for p in self.params])
        return self.template.with_vector(self.params[0])

    def prepare(self, d: Dataset, rng):
        """Per-epoch encoded inputs (MPS noise is redrawn every epoch)."""
        if self.kind == "Mlp":
            return onehot_encode(d)
        if self.kind == "MpsModel":
            return embed_dataset(d, rng)
        return np.column_stack([d.column("x_rel"), d.column("x_irr")])

    def loss_and_grads(self, x, y):
        if self.kind == "Mlp":
            logits, cache = mlp_forward(self.model, x)
            loss, g = batch_cross_entropy(logits, y)
            return loss, mlp_backward(self.model, cache, g)
        if self.kind == "MpsModel":
            return mps_gradients(self.current_view(), x, y)
        toy = self.template.with_vector(self.params[0])
        out, _ = toy_forward(toy, x[:, 0], x[:, 1])
        resid = out - y
        loss = float(0.5 * np.mean(resid * resid))
        return loss, [toy_gradients(toy, x[:, 0], x[:, 1], resid / len(y))]

    def current_view(self):
        # MpsModel copies its inputs; the Adam update mutates self.params.
        return self.template.replace_sites(self.params)


def train_model(model, data: Dataset, cfg: TrainConfig):
    """Minibatch Adam on the mean loss.

    MLP and MPS models minimize cross-entropy; the toy model minimizes the
    squared error of its output against the 0/1 label. With a validation
    fraction the best-validation snapshot is returned, otherwise the final
    model. Returns ``(model, history)`` with one dict per epoch.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    train, val = _split(data, cfg.val_fraction, rng)
    y_all = train.labels()
    for c in (0, 1):
        if not np.any(y_all == c):
            raise EmptyClassError(f"class {c} is absent from the training split")
    ad = _Adapter(model)
    state = AdamState(lr=cfg.lr, l2=cfg.l2)
    history: list[dict] = []
    best, best_acc, since_best = None, -1.0, 0
    for epoch in range(1, cfg.epochs + 1):
        x_all = ad.prepare(train, rng)
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            loss, grads = ad.loss_and_grads(x_all[rows], y_all[rows])
            adam_step(state, ad.params, grads)
            losses.append(loss * len(rows))
        snapshot = ad.current()
        eval_seed = rng.integers(2 ** 63)
        row = {"epoch": epoch, "train_loss": float(np.sum(losses) / len(order)),
               "train_acc": accuracy(snapshot, train, eval_seed),
               "val_acc": accuracy(snapshot, val, eval_seed) if val is not None else float("nan")}
        history.append(row)
        if val is not None:
            if row["val_acc"] > best_acc:
                best, best_acc, since_best = snapshot, row["val_acc"], 0
            else:
                since_best += 1
                if cfg.patience is not None and since_best >= cfg.patience:
                    break
    if val is not None and best is not None:
        return best, history
    return ad.current(), history


def write_history(history: Sequence[dict], path_or_fh) -> None:
    fields = ["epoch", "train_loss", "train_acc", "val_acc"]
    close = False
    fh = path_or_fh
    if not hasattr(path_or_fh, "write"):
        fh = open(path_or_fh, "w", newline="")
        close = True
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(fields)
    for row in history:
        w.writerow([row["epoch"]] + [repr(float(row[k])) for k in fields[1:]])
    if close:
        fh.close()


def train_arrays(model: Mlp, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                 x_val: np.ndarray | None = None, y_val: np.ndarray | None = None):
    """Cross-entropy Adam training of an MLP on encoded arrays.

    Keeps the snapshot with the best validation accuracy when a validation
    set is given. Returns ``(model, history)``.
    """
    for c in (0, 1):
        if not np.any(y == c):
            raise EmptyClassError(f"class {c} is absent from the training data")
    rng = np.random.default_rng(cfg.seed)
    net = model.copy()
    params = net.params
    state = AdamState(lr=cfg.lr, l2=cfg.l2)
    history = []
    best, best_acc, since_best = None, -1.0, 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            logits, cache = mlp_forward(net, x[rows])
            loss, g = batch_cross_entropy(logits, y[rows])
            adam_step(state, params, mlp_backward(net, cache, g))
            total += loss * len(rows)
        row = {"epoch": epoch, "train_loss": total / len(order),
               "train_acc": float(np.mean(mlp_forward(net, x)[0].argmax(1) == y)),
               "val_acc": float("nan")}
        if x_val is not None and len(x_val):
            row["val_acc"] = float(np.mean(mlp_forward(net, x_val)[0].argmax(1) == y_val))
            if row["val_acc"] > best_acc:
                best, best_acc, since_best = net.copy(), row["val_acc"], 0
            else:
                since_best += 1
        history.append(row)
        if cfg.patience is not None and since_best >= cfg.patience:
            break
    return (best if best is not None else net), history
