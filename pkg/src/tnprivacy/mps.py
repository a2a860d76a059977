"""Matrix product state classifier.

A chain of ``N`` site tensors. Boundary sites are matrices, interior sites are
rank-3 ``(left bond, physical, right bond)`` tensors. One site is the output
site: its physical leg is the free class leg and it consumes no input. The
remaining ``N - 1`` sites each take one embedded feature vector.

Site indices are 0-based throughout the code.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import SingularMatrixError, ShapeMismatchError, condition_number, invert

MATERIALIZE_CAP = 2 ** 20


class SizeCapError(ValueError):
    pass


@dataclass(frozen=True)
class MpsModel:
    sites: tuple[np.ndarray, ...]
    output_site: int

    def __post_init__(self):
        sites = tuple(np.ascontiguousarray(s, dtype=np.float64) for s in self.sites)
        object.__setattr__(self, "sites", sites)
        n = len(sites)
        if n < 2:
            raise ShapeMismatchError("an MPS needs at least two sites")
        if not 0 <= self.output_site < n:
            raise ShapeMismatchError(f"output_site {self.output_site} outside 0..{n - 1}")
        if sites[0].ndim != 2 or sites[-1].ndim != 2:
            raise ShapeMismatchError("boundary sites must be matrices")
        for j, s in enumerate(sites[1:-1], start=1):
            if s.ndim != 3:
                raise ShapeMismatchError(f"interior site {j} must be rank 3, got {s.shape}")
        for j in range(n - 1):
            if sites[j].shape[-1] != sites[j + 1].shape[0]:
                raise ShapeMismatchError(
                    f"bond between sites {j} and {j + 1}: "
                    f"{sites[j].shape[-1]} != {sites[j + 1].shape[0]}")

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    def leg_dim(self, j: int) -> int:
        return self.sites[j].shape[0] if j == 0 else self.sites[j].shape[1]

    @property
    def leg_dims(self) -> tuple[int, ...]:
        return tuple(self.leg_dim(j) for j in range(self.n_sites))

    @property
    def bond_dims(self) -> tuple[int, ...]:
        return tuple(s.shape[-1] for s in self.sites[:-1])

    @property
    def bond_dim(self) -> int:
        return max(self.bond_dims)

    @property
    def out_dim(self) -> int:
        return self.leg_dim(self.output_site)

    @property
    def input_sites(self) -> list[int]:
        return [j for j in range(self.n_sites) if j != self.output_site]

    @property
    def phys_dim(self) -> int:
        return self.leg_dim(self.input_sites[0])

    @property
    def param_count(self) -> int:
        return sum(s.size for s in self.sites)

    def replace_sites(self, sites: Sequence[np.ndarray]) -> "MpsModel":
        return MpsModel(tuple(sites), self.output_site)


def site_shapes(n_sites: int, phys_dim: int, bond_dim: int, out_dim: int,
                output_site: int | None = None) -> list[tuple[int, ...]]:
    if output_site is None:
        output_site = n_sites - 1
    legs = [out_dim if j == output_site else phys_dim for j in range(n_sites)]
    shapes: list[tuple[int, ...]] = []
    for j, d in enumerate(legs):
        if j == 0:
            shapes.append((d, bond_dim))
        elif j == n_sites - 1:
            shapes.append((bond_dim, d))
        else:
            shapes.append((bond_dim, d, bond_dim))
    return shapes


def param_count(n_sites: int, phys_dim: int, bond_dim: int, out_dim: int) -> int:
    return sum(int(np.prod(s)) for s in site_shapes(n_sites, phys_dim, bond_dim, out_dim))


def random_mps(n_sites: int, phys_dim: int, bond_dim: int, out_dim: int | None = None,
               output_site: int | None = None, seed=0, stddev: float = 1.0) -> MpsModel:
    """Model with i.i.d. gaussian entries (test inputs, property checks)."""
    out_dim = phys_dim if out_dim is None else out_dim
    output_site = n_sites - 1 if output_site is None else output_site
    rng = np.random.default_rng(seed)
    shapes = site_shapes(n_sites, phys_dim, bond_dim, out_dim, output_site)
    return MpsModel(tuple(rng.normal(0.0, stddev, size=s) for s in shapes), output_site)


def init_mps(n_sites: int, phys_dim: int, bond_dim: int, out_dim: int,
             output_site: int | None = None, seed=0, noise: float = 0.5) -> MpsModel:
    """Training initialization: identity on matching bond indices plus noise.

    With the ``(1 - x, x)`` embedding the physical slices of each interior
    site sum to the identity, so untrained contractions stay O(1) along the
    chain.
    """
    output_site = n_sites - 1 if output_site is None else output_site
    rng = np.random.default_rng(seed)
    sites = []
    for j, shape in enumerate(site_shapes(n_sites, phys_dim, bond_dim, out_dim, output_site)):
        core = np.zeros(shape)
        if len(shape) == 3:
            for s in range(shape[1]):
                core[:, s, :] = np.eye(shape[0], shape[2]) / shape[1]
        else:
            core[:] = np.eye(*shape)
        sites.append(core + rng.normal(0.0, noise, size=shape))
    return MpsModel(tuple(sites), output_site)


def _as_chain_tensor(site: np.ndarray, j: int, n: int) -> np.ndarray:
    """View a site as (left, leg, right), adding unit bonds at the ends."""
    if j == 0:
        return site[None, :, :]
    if j == n - 1:
        return site[:, :, None]
    return site


def chain_tensor(m: MpsModel, cap: int = MATERIALIZE_CAP) -> np.ndarray:
    """Full contraction with legs in chain order (site 0 leg first)."""
    size = int(np.prod(m.leg_dims))
    if size > cap:
        raise SizeCapError(f"materialized tensor would hold {size} entries (cap {cap})")
    n = m.n_sites
    acc = m.sites[0]  # (legs..., bond)
    for j in range(1, n):
        acc = np.tensordot(acc, _as_chain_tensor(m.sites[j], j, n), axes=([-1], [0]))
    return acc[..., 0]


def materialize(m: MpsModel, cap: int = MATERIALIZE_CAP) -> np.ndarray:
    """The black-box tensor, shape ``(out_dim, d, ..., d)``.

    The class leg comes first, then the input legs in site order.
    """
    return np.moveaxis(chain_tensor(m, cap), m.output_site, 0)


def _check_inputs(m: MpsModel, embedded) -> tuple[np.ndarray, bool]:
    x = np.asarray(embedded, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != m.n_sites - 1:
        raise ShapeMismatchError(
            f"expected {m.n_sites - 1} embedded vectors, got array of shape {np.shape(embedded)}")
    for k, j in enumerate(m.input_sites):
        if x.shape[2] != m.leg_dim(j):
            raise ShapeMismatchError(f"site {j} expects {m.leg_dim(j)}-vectors")
    return x, single


def site_vectors(m: MpsModel, x: np.ndarray, out_vec: np.ndarray | None = None) -> list:
    """Per-site batch vectors; ``out_vec`` (or None) goes on the output site."""
    vecs = []
    k = 0
    for j in range(m.n_sites):
        if j == m.output_site:
            vecs.append(out_vec)
        else:
            vecs.append(x[:, k, :])
            k += 1
    return vecs


def left_environments(m: MpsModel, vecs: list, stop: int) -> list[np.ndarray]:
    """``envs[j]`` is the (batch, bond) contraction of sites ``0..j-1``."""
    envs = [None]
    env = None
    for j in range(stop):
        a = m.sites[j]
        v = vecs[j]
        if j == 0:
            env = v @ a
        else:
            env = np.einsum("ba,asc,bs->bc", env, a, v)
        envs.append(env)
    return envs


def right_environments(m: MpsModel, vecs: list, stop: int) -> dict[int, np.ndarray]:
    """``envs[j]`` is the (batch, bond) contraction of sites ``j+1..N-1``."""
    n = m.n_sites
    envs: dict[int, np.ndarray] = {n - 1: None}
    env = None
    for j in range(n - 1, stop, -1):
        a = m.sites[j]
        v = vecs[j]
        if j == n - 1:
            env = v @ a.T
        else:
            env = np.einsum("asc,bs,bc->ba", a, v, env)
        envs[j - 1] = env
    return envs


def forward(m: MpsModel, embedded) -> np.ndarray:
    """Logits for one row ``(N-1, d)`` or a batch ``(B, N-1, d)``.

    Boundary vectors are swept in from both ends towards the output site, so
    the cost is linear in ``N`` and the full tensor is never built.
    """
    x, single = _check_inputs(m, embedded)
    o = m.output_site
    vecs = site_vectors(m, x)
    left = left_environments(m, vecs, o)[o]
    right = right_environments(m, vecs, o)[o]
    a = m.sites[o]
    n = m.n_sites
    if o == 0:
        logits = right @ a.T
    elif o == n - 1:
        logits = left @ a
    else:
        logits = np.einsum("ba,asc,bc->bs", left, a, right)
    return logits[0] if single else logits


# -- gauge transformations -------------------------------------------------

@dataclass(frozen=True)
class GaugeTransform:
    """One invertible matrix per internal bond, left to right."""

    bond_matrices: tuple[np.ndarray, ...]

    def inverse(self) -> "GaugeTransform":
        return GaugeTransform(tuple(invert(y) for y in self.bond_matrices))


def identity_gauge(m: MpsModel) -> GaugeTransform:
    return GaugeTransform(tuple(np.eye(b) for b in m.bond_dims))


def apply_gauge(m: MpsModel, g: GaugeTransform) -> MpsModel:
    """Insert ``Y Y^-1`` on every bond and absorb the factors into the sites."""
    ys = g.bond_matrices
    if len(ys) != m.n_sites - 1:
        raise ShapeMismatchError(f"expected {m.n_sites - 1} bond matrices, got {len(ys)}")
    for k, (y, b) in enumerate(zip(ys, m.bond_dims)):
        if y.shape != (b, b):
            raise ShapeMismatchError(f"bond {k}: matrix {y.shape} does not fit bond {b}")
    inv = [invert(y) for y in ys]
    n = m.n_sites
    out = []
    for j, a in enumerate(m.sites):
        if j == 0:
            out.append(a @ ys[0])
        elif j == n - 1:
            out.append(inv[-1] @ a)
        else:
            out.append(np.einsum("ab,bsc,cd->asd", inv[j - 1], a, ys[j]))
    return m.replace_sites(out)


def random_gauge(m: MpsModel, seed=0, cond_cap: float = 1e3,
                 max_tries: int = 1000) -> GaugeTransform:
    if not cond_cap > 1:
        raise ValueError("cond_cap must exceed 1")
    rng = np.random.default_rng(seed)
    ys = []
    for b in m.bond_dims:
        for _ in range(max_tries):
            y = rng.normal(size=(b, b))
            if condition_number(y) < cond_cap:
                ys.append(y)
                break
        else:
            raise SingularMatrixError(
                f"no gauge matrix under condition {cond_cap} in {max_tries} draws", float("inf"))
    return GaugeTransform(tuple(ys))


def sign_gauge(m: MpsModel, seed=0) -> GaugeTransform:
    """Random diagonal {-1, +1} bond matrices (the SVD form's residual gauge)."""
    rng = np.random.default_rng(seed)
    return GaugeTransform(tuple(np.diag(rng.choice([-1.0, 1.0], size=b)) for b in m.bond_dims))


# -- feature embedding -----------------------------------------------------

@dataclass(frozen=True)
class FeatureKind:
    kind: str  # "binary" or "continuous"
    lo: float = 0.0
    hi: float = 1.0


@dataclass(frozen=True)
class FeatureMap:
    """Maps raw rows to ``(1 - x, x)`` vectors.

    Binary class 0 becomes a uniform draw in ``[0, 1/2 - eps]``, class 1 a
    draw in ``[1/2 + eps, 1]``. Continuous features are min-max scaled.
    """

    kinds: tuple[FeatureKind, ...]
    epsilon: float = 5e-2

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 0.5)")
        for k in self.kinds:
            if k.kind == "continuous" and not k.lo < k.hi:
                raise ValueError("continuous bounds need lo < hi")
            if k.kind not in ("binary", "continuous"):
                raise ValueError(f"unknown feature kind {k.kind!r}")

    def scalars(self, rows, rng) -> tuple[np.ndarray, np.ndarray]:
        """Map rows ``(B, F)`` to x in [0, 1]; also returns a clamped mask."""
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.shape[1] != len(self.kinds):
            raise ShapeMismatchError(f"rows have {rows.shape[1]} features, map has {len(self.kinds)}")
        rng = np.random.default_rng(rng)
        x = np.empty_like(rows)
        clamped = np.zeros(rows.shape, dtype=bool)
        half = 0.5 - self.epsilon
        for f, k in enumerate(self.kinds):
            col = rows[:, f]
            if k.kind == "binary":
                u = rng.uniform(0.0, half, size=col.shape)
                x[:, f] = np.where(col > 0.5, 1.0 - u, u)
            else:
                z = (col - k.lo) / (k.hi - k.lo)
                clamped[:, f] = (z < 0.0) | (z > 1.0)
                x[:, f] = np.clip(z, 0.0, 1.0)
        return x, clamped

    def embed_batch(self, rows, rng) -> np.ndarray:
        x, clamped = self.scalars(rows, rng)
        if clamped.any():
            warnings.warn(f"{int(clamped.sum())} continuous values clamped to [0, 1]")
        return np.stack([1.0 - x, x], axis=-1)


@dataclass
class Embedding:
    vectors: np.ndarray
    clamped: bool = False
    scalars: np.ndarray = field(default=None, repr=False)


def embed(fm: FeatureMap, raw_row: Sequence[float], seed=0) -> Embedding:
    """Embed one raw row; out-of-range continuous values are clamped and flagged."""
    x, clamped = fm.scalars(np.asarray(raw_row, dtype=np.float64)[None], seed)
    return Embedding(np.stack([1.0 - x[0], x[0]], axis=-1), bool(clamped.any()), x[0])
