"""Thread-count-independent linear algebra kernels.

Index builds and embeddings must be bitwise reproducible whatever the BLAS
thread pool looks like. Matrix-matrix products are safe (fixed per-element
accumulation order), but LAPACK drivers (svd, eigh) and large BLAS dot
products change results with the thread count. This module provides the two
replacements the engine needs: an einsum-based L2 norm and a cyclic Jacobi
eigensolver for the small symmetric matrices PCA reduces to.
"""

from __future__ import annotations

import numpy as np


def l2_norm(v: np.ndarray) -> float:
    """Euclidean norm accumulated in float64 with a fixed summation order."""
    v = np.asarray(v, dtype=np.float64).ravel()
    return float(np.sqrt(np.einsum("i,i->", v, v)))


def jacobi_eigh(sym: np.ndarray, max_sweeps: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvalues sorted descending
    and eigenvectors in the matching columns. Deterministic: rotation order
    is fixed and every update is an elementwise numpy operation. Intended for
    the small side of a PCA problem (hundreds of rows); cost grows cubically.
    """
    a = np.array(sym, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    v = np.eye(n)
    if n > 1:
        scale = float(np.abs(a).max())
        if scale > 0.0:
            for _ in range(max_sweeps):
                off = a - np.diag(np.diagonal(a))
                off_norm = float(np.sqrt(np.einsum("ij,ij->", off, off)))
                if off_norm <= 1e-14 * n * scale:
                    break
                threshold = 1e-18 * scale
                for p in range(n - 1):
                    for q in range(p + 1, n):
                        apq = a[p, q]
                        if abs(apq) <= threshold:
                            continue
                        tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                        if tau >= 0.0:
                            t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                        else:
                            t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                        c = 1.0 / np.sqrt(1.0 + t * t)
                        s = t * c
                        rp = a[p, :].copy()
                        rq = a[q, :].copy()
                        a[p, :] = c * rp - s * rq
                        a[q, :] = s * rp + c * rq
                        cp = a[:, p].copy()
                        cq = a[:, q].copy()
                        a[:, p] = c * cp - s * cq
                        a[:, q] = s * cp + c * cq
                        a[p, q] = 0.0
                        a[q, p] = 0.0
                        vp = v[:, p].copy()
                        vq = v[:, q].copy()
                        v[:, p] = c * vp - s * vq
                        v[:, q] = s * vp + c * vq
    eigenvalues = np.diagonal(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return eigenvalues[order], v[:, order]


def principal_directions(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and top-k principal directions (rows) of the data matrix.

    Works on whichever of the covariance (d x d) or Gram (n x n) matrix is
    smaller, both assembled with matrix products, so the result does not
    depend on the BLAS thread count. Directions for (near-)zero variance are
    completed deterministically from coordinate vectors.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if k > min(n, d):
        raise ValueError(f"cannot extract {k} directions from a {n}x{d} matrix")
    mean = x.mean(axis=0)
    xc = x - mean
    if d <= n:
        cov = xc.T @ xc
        _, vecs = jacobi_eigh(cov)
        basis = vecs[:, :k].T.copy()
    else:
        gram = xc @ xc.T
        values, vecs = jacobi_eigh(gram)
        rows = []
        tol = max(float(values[0]), 1.0) * 1e-12
        for i in range(k):
            if values[i] > tol:
                direction = xc.T @ vecs[:, i]
                rows.append(direction / l2_norm(direction))
            else:
                rows.append(None)  # completed below
        basis = _complete_basis(rows, d)
    return mean, basis


def _complete_basis(rows: list, d: int) -> np.ndarray:
    """Fill None slots with coordinate vectors orthogonalized against the rest."""
    out_rows = list(rows)
    accumulated = [r for r in rows if r is not None]
    candidate = 0
    for i, row in enumerate(out_rows):
        if row is not None:
            continue
        while True:
            if candidate >= d:
                raise ValueError("cannot complete an orthonormal basis")
            e = np.zeros(d)
            e[candidate] = 1.0
            candidate += 1
            if accumulated:
                stack = np.asarray(accumulated)
                e = e - stack.T @ (stack @ e)
                e = e - stack.T @ (stack @ e)  # second pass tightens orthogonality
            norm = l2_norm(e)
            if norm > 1e-6:
                e = e / norm
                out_rows[i] = e
                accumulated.append(e)
                break
    return np.asarray(out_rows)
