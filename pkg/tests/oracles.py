"""Independent slow reference implementations used as test oracles.

Nothing here imports the package's numerical kernels; each routine is a
direct loop over the defining formula.
"""

from __future__ import annotations

import itertools

import numpy as np


def loop_contract(a: np.ndarray, b: np.ndarray, pairs) -> np.ndarray:
    """Explicit index loops; free axes of ``a`` then free axes of ``b``."""
    a_ax = [i % a.ndim for i, _ in pairs]
    b_ax = [j % b.ndim for _, j in pairs]
    a_free = [k for k in range(a.ndim) if k not in a_ax]
    b_free = [k for k in range(b.ndim) if k not in b_ax]
    out_shape = [a.shape[k] for k in a_free] + [b.shape[k] for k in b_free]
    out = np.zeros(out_shape)
    summed = [a.shape[k] for k in a_ax]
    for idx in itertools.product(*[range(s) for s in out_shape]):
        ia = dict(zip(a_free, idx[:len(a_free)]))
        ib = dict(zip(b_free, idx[len(a_free):]))
        total = 0.0
        for s in itertools.product(*[range(n) for n in summed]):
            for k, v in zip(a_ax, s):
                ia[k] = v
            for k, v in zip(b_ax, s):
                ib[k] = v
            total += a[tuple(ia[k] for k in range(a.ndim))] * b[tuple(ib[k] for k in range(b.ndim))]
        out[idx] = total
    return out


def loop_materialize(sites, output_site: int) -> np.ndarray:
    """Sum over bond indices entry by entry; class leg first."""
    n = len(sites)
    legs = [sites[0].shape[0]] + [s.shape[1] for s in sites[1:]]
    full = np.zeros(legs)
    for idx in itertools.product(*[range(d) for d in legs]):
        vec = sites[0][idx[0], :]
        for j in range(1, n - 1):
            vec = vec @ sites[j][:, idx[j], :]
        full[idx] = vec @ sites[-1][:, idx[-1]]
    return np.moveaxis(full, output_site, 0)


def jacobi_singular_values(m: np.ndarray, sweeps: int = 60) -> np.ndarray:
    """One-sided Jacobi rotations on the columns; sorted descending."""
    a = np.array(m, dtype=np.float64)
    if a.shape[0] < a.shape[1]:
        a = a.T.copy()
    cols = a.shape[1]
    for _ in range(sweeps):
        off = 0.0
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                alpha = a[:, p] @ a[:, p]
                beta = a[:, q] @ a[:, q]
                gamma = a[:, p] @ a[:, q]
                if abs(gamma) < 1e-300:
                    continue
                off = max(off, abs(gamma) / np.sqrt(alpha * beta))
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta)) if zeta != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
        if off < 1e-15:
            break
    return np.sort(np.sqrt(np.sum(a * a, axis=0)))[::-1]


def central_difference(f, params: list[np.ndarray], index: tuple[int, tuple], h: float = 1e-5) -> float:
    """``(f(p + h) - f(p - h)) / 2h`` for one entry; ``params`` is restored."""
    k, pos = index
    old = params[k][pos]
    params[k][pos] = old + h
    up = f()
    params[k][pos] = old - h
    down = f()
    params[k][pos] = old
    return (up - down) / (2.0 * h)


def relu_net_forward(weights, biases, x):
    """Hand-rolled relu network with identity output, single input vector."""
    z = np.asarray(x, dtype=np.float64)
    for k, (w, b) in enumerate(zip(weights, biases)):
        y = np.array([sum(w[i, j] * z[j] for j in range(len(z))) + b[i] for i in range(len(b))])
        z = y if k == len(weights) - 1 else np.where(y > 0, y, 0.0)
    return z


def binomial_null_band(n: int, k: float = 2.0) -> tuple[float, float]:
    sigma = np.sqrt(0.25 / n)
    return 0.5 - k * sigma, 0.5 + k * sigma
