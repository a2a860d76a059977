"""Gauge fixing for MPS: the SVD canonical form and the skeleton canonical form.

The SVD form leaves one sign per bond vector undetermined. Here those signs
are chosen relative to the input (each bond's gauge matrix gets a
nonnegative diagonal), so the form is a projection but stays
gauge-dependent, exactly like a plain LAPACK sweep.

The skeleton form is built only from slices of the materialized tensor taken
at pinned leg index 0, so gauge-equivalent models map to the same parameters.
"""

from __future__ import annotations

import numpy as np

from .mps import MpsModel
from .tensor import DEFAULT_COND_CAP, SingularMatrixError, ShapeMismatchError, invert, svd


class SingularIntersectionError(SingularMatrixError):
    def __init__(self, site: int, condition: float):
        super().__init__(
            f"intersection matrix at site {site} is singular "
            f"(condition estimate {condition:.3g})", condition)
        self.site = site


# -- SVD canonical form ----------------------------------------------------

def _lq(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q, r = np.linalg.qr(t.T)
    return r.T, q.T


def _check_full_bonds(m: MpsModel) -> None:
    legs = m.leg_dims
    bonds = m.bond_dims
    for k, b in enumerate(bonds):
        left = legs[0] if k == 0 else bonds[k - 1] * legs[k]
        right = legs[-1] if k == len(bonds) - 1 else bonds[k + 1] * legs[k + 1]
        if b > left or b > right:
            raise ShapeMismatchError(
                f"bond {k} of size {b} exceeds the rank its neighbours can carry")


def svd_gauge(m: MpsModel) -> list[np.ndarray]:
    """Bond matrices ``Y`` taking ``m`` to its left-orthogonal Schmidt form.

    First a right-to-left LQ sweep makes every site right-orthogonal, then a
    left-to-right SVD sweep splits off left-orthogonal sites, pushing the
    singular values to the right. Signs are left as LAPACK returns them.
    """
    _check_full_bonds(m)
    n = m.n_sites
    sites = list(m.sites)
    w = [None] * (n - 1)
    # right-to-left: site j -> W_{j-1}^-1 A_j W_j with orthonormal rows
    carry = None
    for j in range(n - 1, 0, -1):
        a = sites[j] if carry is None else np.tensordot(sites[j], carry, axes=([-1], [0]))
        shape = a.shape
        l, q = _lq(a.reshape(shape[0], -1))
        sites[j] = q.reshape(shape)
        w[j - 1] = l
        carry = l
    sites[0] = sites[0] @ carry
    # left-to-right: split off U, carry S Vt
    p = [None] * (n - 1)
    carry = None
    for j in range(n - 1):
        a = sites[j] if carry is None else np.tensordot(carry, sites[j], axes=([1], [0]))
        shape = a.shape
        u, s, vt = svd(a.reshape(-1, shape[-1]))
        p[j] = s[:, None] * vt
        carry = p[j]
    return [w[k] @ invert(p[k]) for k in range(n - 1)]


def _apply_bond_matrices(m: MpsModel, ys: list[np.ndarray]) -> MpsModel:
    from .mps import GaugeTransform, apply_gauge
    return apply_gauge(m, GaugeTransform(tuple(ys)))


def svd_canonical(m: MpsModel) -> MpsModel:
    """Left-orthogonal form with Schmidt-diagonal bonds, norm on the last site.

    Every site except the last satisfies ``sum_s A_s^T A_s = 1``.
    """
    ys = svd_gauge(m)
    fixed = []
    for y in ys:
        signs = np.where(np.diag(y) < 0.0, -1.0, 1.0)
        fixed.append(y * signs[None, :])
    return _orthonormalize(_apply_bond_matrices(m, fixed))


def _orthonormalize(m: MpsModel) -> MpsModel:
    # The gauge route goes through explicit inverses; one more QR pass per
    # site (with sign-preserving R) removes the accumulated round-off.
    n = m.n_sites
    sites = list(m.sites)
    carry = None
    for j in range(n - 1):
        a = sites[j] if carry is None else np.tensordot(carry, sites[j], axes=([1], [0]))
        shape = a.shape
        q, r = np.linalg.qr(a.reshape(-1, shape[-1]))
        flip = np.where(np.diag(r) < 0.0, -1.0, 1.0)
        q = q * flip[None, :]
        r = flip[:, None] * r
        sites[j] = q.reshape(shape)
        carry = r
    sites[-1] = np.tensordot(carry, sites[-1], axes=([1], [0]))
    return m.replace_sites(sites)


def left_orthogonality_residual(m: MpsModel) -> float:
    """Max over sites (all but the last) of ``|sum_s A_s^T A_s - 1|``."""
    worst = 0.0
    for a in m.sites[:-1]:
        mat = a.reshape(-1, a.shape[-1])
        worst = max(worst, float(np.max(np.abs(mat.T @ mat - np.eye(mat.shape[1])))))
    return worst


# -- skeleton canonical form -----------------------------------------------

def _require_uniform(m: MpsModel) -> int:
    dims = set(m.leg_dims) | set(m.bond_dims)
    if len(dims) != 1:
        raise ShapeMismatchError(
            "skeleton canonical form needs equal leg and bond dimensions, "
            f"got legs {m.leg_dims} and bonds {m.bond_dims}")
    if m.n_sites < 3:
        raise ShapeMismatchError("skeleton canonical form needs at least three sites")
    return dims.pop()


def _pinned_left(m: MpsModel) -> list:
    """``out[j]``: sites ``0..j-1`` contracted with every leg fixed to index 0."""
    out = [None]
    env = None
    for j in range(m.n_sites - 1):
        a = m.sites[j]
        env = a[0] if j == 0 else env @ a[:, 0, :]
        out.append(env)
    return out


def _pinned_right(m: MpsModel) -> dict:
    n = m.n_sites
    out = {n - 1: None}
    env = None
    for j in range(n - 1, 0, -1):
        a = m.sites[j]
        env = a[:, 0] if j == n - 1 else a[:, 0, :] @ env
        out[j - 1] = env
    return out


def build_L(m: MpsModel, j: int, _envs=None) -> np.ndarray:
    """Three-site slice of the black box around interior site ``j``.

    ``L[beta, s, gamma]`` is the chain contracted with site ``j-1`` leg set
    to ``beta``, site ``j`` leg to ``s``, site ``j+1`` leg to ``gamma`` and all
    other legs fixed to index 0.
    """
    n = m.n_sites
    if not 0 < j < n - 1:
        raise IndexError(f"build_L needs an interior site, got {j} of {n}")
    left, right = _envs if _envs is not None else (_pinned_left(m), _pinned_right(m))
    prev, cur, nxt = m.sites[j - 1], m.sites[j], m.sites[j + 1]
    # block[beta, a, s, gamma, c] over the three sites; a, c are outer bonds
    if j - 1 == 0:
        lhs = prev  # (beta, bond)
    else:
        lhs = np.einsum("a,abc->bc", left[j - 1], prev)
    if j + 1 == n - 1:
        rhs = nxt.T  # (gamma, bond)
    else:
        rhs = np.einsum("abc,c->ba", nxt, right[j + 1])
    return np.einsum("pa,asc,gc->psg", lhs, cur, rhs)


def intersection_matrix(L: np.ndarray, pinned_axis: int = 0) -> np.ndarray:
    """Square slice of ``L`` with one axis fixed to index 0.

    The default pins the left leg, giving rows indexed by the centre leg and
    columns by the right leg: the black box restricted to two neighbouring
    free legs. The other axes are exposed for the convention check.
    """
    return np.take(L, 0, axis=pinned_axis)


def skeleton_sites(m: MpsModel, cond_cap: float = DEFAULT_COND_CAP,
                   pinned_axis: int = 0) -> list[np.ndarray]:
    dim = _require_uniform(m)
    n = m.n_sites
    envs = (_pinned_left(m), _pinned_right(m))
    out = [np.eye(dim)]
    for j in range(1, n - 1):
        L = build_L(m, j, envs)
        if j == n - 2:
            # last interior site: the right boundary identity closes the chain
            out.append(L)
            continue
        p = intersection_matrix(L, pinned_axis)
        try:
            c = invert(p, cond_cap)
        except SingularMatrixError as exc:
            raise SingularIntersectionError(j, exc.condition) from None
        out.append(np.tensordot(L, c, axes=([2], [0])))
    out.append(np.eye(dim))
    return out


def skeleton_canonical(m: MpsModel, cond_cap: float = DEFAULT_COND_CAP) -> MpsModel:
    """Univocal canonical form: identity boundaries, cross-interpolated interior.

    Interior site ``j`` is ``L_j`` times the inverse of the intersection
    matrix on its right bond. Raises :class:`SingularIntersectionError`
    naming the site when that matrix cannot be inverted.
    """
    return m.replace_sites(skeleton_sites(m, cond_cap))
