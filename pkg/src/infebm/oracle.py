"""Dense sample-space reference computations.

Everything here is O(n^3) and meant as ground truth for small ``n``: the
structure matrices of individual trees, their Monte-Carlo expectations, the
limiting fitted values of the training loops and the exact influence vectors
whose norms the bin-space cache reproduces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_CAP = 500
PINV_TOL = 1e-10


def _check_cap(n, cap):
    if cap is not None and n > cap:
        raise ValueError(f"dense oracle limited to n <= {cap} samples (got {n})")


def centering(n: int) -> np.ndarray:
    return np.eye(n) - np.full((n, n), 1.0 / n)


def assignment_matrix(binned, k: int) -> np.ndarray:
    """One-hot sample-to-bin matrix Z for feature ``k``, shape (n, m_k)."""
    m = len(binned.counts[k])
    Z = np.zeros((binned.n, m))
    Z[np.arange(binned.n), binned.bin_index[:, k]] = 1.0
    return Z


def sample_leaves(tree, binned) -> np.ndarray:
    return tree.leaf_of_bin[binned.bin_index[:, tree.feature]]


def dense_structure_matrix(tree, binned, cap: int | None = DEFAULT_CAP) -> np.ndarray:
    """``S[i, j] = 1 / N_L`` when samples i and j share leaf L, else 0."""
    _check_cap(binned.n, cap)
    leaf = sample_leaves(tree, binned)
    size = np.bincount(leaf, minlength=tree.n_leaves)
    return (leaf[:, None] == leaf[None, :]) / size[leaf][:, None]


def structure_vector(tree, binned, x_k: float) -> np.ndarray:
    """Leaf co-membership weights of a query value against the training samples."""
    leaf = sample_leaves(tree, binned)
    r = int(np.searchsorted(binned.edges[tree.feature], x_k, side="right"))
    target = tree.leaf_of_bin[min(r, tree.n_bins - 1)]
    hit = leaf == target
    return hit / hit.sum()


def expected_structure_vector(trees, binned, x_k: float) -> np.ndarray:
    """Average of :func:`structure_vector` over sampled structures."""
    if not trees:
        raise ValueError("need at least one tree structure")
    return np.mean([structure_vector(t, binned, x_k) for t in trees], axis=0)


def expected_kernel(trees, binned, cap: int | None = DEFAULT_CAP) -> np.ndarray:
    if not trees:
        raise ValueError("need at least one tree structure")
    return np.mean([dense_structure_matrix(t, binned, cap) for t in trees], axis=0)


def sym_pinv(A, tol: float = PINV_TOL) -> np.ndarray:
    """Pseudo-inverse of a (numerically) symmetric matrix through its eigenbasis."""
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    inv = np.where(np.abs(w) > tol, 1.0 / np.where(w == 0, 1.0, w), 0.0)
    return (V * inv) @ V.T


@dataclass
class FixedPoint:
    """Limit of a training loop on the training set.

    ``per_feature[k]`` holds the unrescaled feature-k fitted values,
    ``fitted`` the intercept plus their sum.
    """

    per_feature: np.ndarray
    fitted: np.ndarray
    intercept: float


def _stack(K_list, y):
    K_list = [np.asarray(K, dtype=float) for K in K_list]
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    for K in K_list:
        if K.shape != (n, n):
            raise ValueError("kernel shape does not match y")
    return K_list, y, n


def fixed_point_A(K_list, y, lam: float = 1.0) -> FixedPoint:
    """Limit of the parallel (and random cyclic) loop.

    Solves ``f_k = lam * J K_k (y - ybar - sum_a f_a)`` exactly, giving
    ``f_k = lam * J K_k (I + lam * J K)^{-1} y`` with ``K = sum_k K_k``.
    """
    K_list, y, n = _stack(K_list, y)
    J = centering(n)
    A = np.eye(n) + lam * J @ sum(K_list)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError(f"singular system (condition number {cond:.3g})")
    u = np.linalg.solve(A, y)
    per = np.array([lam * J @ (K @ u) for K in K_list])
    ybar = float(y.mean())
    return FixedPoint(per, ybar + per.sum(axis=0), ybar)


def _loo_operators(K_list, n):
    J = centering(n)
    pinvs = [sym_pinv(np.eye(n) - K) for K in K_list]
    ops = [P @ J @ K for P, K in zip(pinvs, K_list)]
    return J, pinvs, ops


def fixed_point_B(K_list, y) -> FixedPoint:
    """Limit of the leave-one-out loop.

    ``f_k = (I - K_k)^+ J K_k (I + Kagg)^{-1} y`` with the aggregated kernel
    ``Kagg = sum_k (I - K_k)^+ J K_k``; pseudo-inverses drop the eigenvalue-1
    direction of the constant vector.
    """
    K_list, y, n = _stack(K_list, y)
    _, _, ops = _loo_operators(K_list, n)
    A = np.eye(n) + sum(ops)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError(f"singular system (condition number {cond:.3g})")
    u = np.linalg.solve(A, y)
    per = np.array([op @ u for op in ops])
    ybar = float(y.mean())
    return FixedPoint(per, ybar + per.sum(axis=0), ybar)


def dense_r_vector(variant, K_list, k: int, s_x, lam: float = 1.0):
    """Exact influence vector of the feature-k limit at a query point.

    ``s_x`` is the expected structure vector of the query on feature ``k``.
    Returns ``(r, ||r||_2)`` such that the limiting (unrescaled) effect is
    ``r @ y``.
    """
    K_list = [np.asarray(K, dtype=float) for K in K_list]
    s_x = np.asarray(s_x, dtype=float)
    n = s_x.shape[0]
    J = centering(n)
    if variant in ("parallel", "cyclic", "A"):
        r = lam * np.linalg.solve(np.eye(n) + lam * J @ sum(K_list), J @ s_x)
    elif variant in ("loo", "B"):
        _, pinvs, ops = _loo_operators(K_list, n)
        A = np.eye(n) + sum(ops)
        r = np.linalg.solve(A.T, J @ (pinvs[k] @ s_x))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return r, float(np.linalg.norm(r))


def dense_aligned_r_vector(H, h, Z, lam: float = 1.0):
    """Sample-space evaluation of the shared-grid bin formula.

    ``r = lam * (I + lam * J Z H Z^T)^{-1} J Z h``, solved as a dense n x n
    system without the Woodbury identity.
    """
    n = Z.shape[0]
    J = centering(n)
    r = lam * np.linalg.solve(np.eye(n) + lam * J @ Z @ H @ Z.T, J @ (Z @ h))
    return r, float(np.linalg.norm(r))


def kernel_from_block(H_k, Z) -> np.ndarray:
    """Sample-space kernel ``Z H_k Z^T`` of a bin-space kernel block."""
    return Z @ H_k @ Z.T
