"""Dense real tensors and the numerical kernels the rest of the package uses.

Tensors are plain C-ordered ``float64`` numpy arrays (row-major, last index
fastest). The functions here add shape checking, explicit failure modes and
a stable text serialization on top of numpy.
"""

from __future__ import annotations

from typing import Iterable, Sequence, TextIO

import numpy as np

DEFAULT_COND_CAP = 1e12


class TensorError(ValueError):
    """Base class for tensor-core errors."""


class ShapeMismatchError(TensorError):
    pass


class SingularMatrixError(TensorError):
    """Raised when a matrix is singular or too ill-conditioned to invert."""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


class SvdConvergenceError(TensorError):
    pass


def as_tensor(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Build a float64 C-ordered array, optionally reshaping flat data."""
    arr = np.array(data, dtype=np.float64, order="C")
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ShapeMismatchError(f"extents must be positive, got {shape}")
        if int(np.prod(shape)) != arr.size:
            raise ShapeMismatchError(
                f"{arr.size} values cannot fill shape {shape}")
        arr = arr.reshape(shape)
    return arr


def contract(a: np.ndarray, b: np.ndarray,
             axes: Iterable[tuple[int, int]]) -> np.ndarray:
    """Sum over the paired axes of ``a`` and ``b``.

    The result carries the unpaired axes of ``a`` followed by the unpaired
    axes of ``b``, both in their original order.
    """
    pairs = [(int(i), int(j)) for i, j in axes]
    a_axes = [i for i, _ in pairs]
    b_axes = [j for _, j in pairs]
    if len(set(a_axes)) != len(a_axes) or len(set(b_axes)) != len(b_axes):
        raise ShapeMismatchError(f"axis paired twice in {pairs}")
    for i, j in pairs:
        if not (-a.ndim <= i < a.ndim and -b.ndim <= j < b.ndim):
            raise ShapeMismatchError(f"axis pair {(i, j)} out of range")
        if a.shape[i] != b.shape[j]:
            raise ShapeMismatchError(
                f"axis pair {(i, j)}: extent {a.shape[i]} != {b.shape[j]}")
    return np.tensordot(a, b, axes=(a_axes, b_axes))


def svd(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``m = U @ diag(S) @ Vt`` with nonincreasing ``S``.

    Returns ``(U, S, Vt)``; ``Vt`` is already transposed.
    """
    if m.ndim != 2:
        raise ShapeMismatchError(f"svd needs a rank-2 tensor, got rank {m.ndim}")
    if not np.all(np.isfinite(m)):
        raise TensorError("svd input contains non-finite entries")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(str(exc)) from exc
    return u, s, vt


def condition_number(m: np.ndarray) -> float:
    s = np.linalg.svd(m, compute_uv=False)
    if s[-1] == 0.0:
        return float("inf")
    return float(s[0] / s[-1])


def invert(m: np.ndarray, cond_cap: float = DEFAULT_COND_CAP) -> np.ndarray:
    """Inverse of a square matrix, refusing anything with condition >= cap."""
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeMismatchError(f"invert needs a square matrix, got {m.shape}")
    cond = condition_number(m)
    if not cond < cond_cap:
        raise SingularMatrixError(
            f"matrix condition estimate {cond:.3g} exceeds cap {cond_cap:.3g}",
            cond)
    return np.linalg.inv(m)


def reshape(t: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape)) != t.size:
        raise ShapeMismatchError(f"cannot reshape {t.shape} to {new_shape}")
    return np.ascontiguousarray(t).reshape(new_shape)


def transpose(t: np.ndarray, perm: Sequence[int]) -> np.ndarray:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(t.ndim)):
        raise ShapeMismatchError(f"{perm} is not a permutation of {t.ndim} axes")
    return np.ascontiguousarray(np.transpose(t, perm))


def random_tensor(shape: Sequence[int], distribution: str = "gaussian",
                  params: tuple[float, float] = (0.0, 1.0),
                  seed: int | np.random.Generator | None = 0) -> np.ndarray:
    """I.i.d. random tensor.

    ``distribution`` is ``"gaussian"`` with ``params=(mean, stddev)`` or
    ``"uniform"`` with ``params=(lo, hi)`` (half-open interval).
    """
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeMismatchError(f"extents must be positive, got {shape}")
    rng = np.random.default_rng(seed)
    a, b = params
    if distribution == "gaussian":
        if b <= 0:
            raise ValueError("stddev must be positive")
        return rng.normal(a, b, size=shape)
    if distribution == "uniform":
        if not b > a:
            raise ValueError("uniform interval must have lo < hi")
        return rng.uniform(a, b, size=shape)
    raise ValueError(f"unknown distribution {distribution!r}")


# Serialization: one line per tensor, "rank d1 ... dk v1 v2 ...", values in
# row-major order written with 17 significant digits so they round-trip.

def format_tensor(t: np.ndarray) -> str:
    t = np.asarray(t, dtype=np.float64)
    head = [str(t.ndim), *(str(s) for s in t.shape)]
    body = [repr(float(v)) for v in t.ravel(order="C")]
    return " ".join(head + body)


def parse_tensor(line: str) -> np.ndarray:
    fields = line.split()
    if not fields:
        raise TensorError("empty tensor record")
    rank = int(fields[0])
    shape = tuple(int(s) for s in fields[1:1 + rank])
    values = [float(v) for v in fields[1 + rank:]]
    return as_tensor(values, shape)


def write_tensors(fh: TextIO, tensors: Iterable[np.ndarray]) -> None:
    for t in tensors:
        fh.write(format_tensor(t) + "\n")


def read_tensors(fh: TextIO, count: int) -> list[np.ndarray]:
    out = []
    for _ in range(count):
        line = fh.readline()
        if not line:
            raise TensorError(f"expected {count} tensors, file ended after {len(out)}")
        out.append(parse_tensor(line))
    return out
