"""Dense linear-algebra primitives shared by the rest of the package.

Every matrix is a 2-D ``numpy.ndarray`` of ``float64``. The helpers here
validate shapes, compute pairwise distances, solve symmetric eigenproblems
and ordinary least squares.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

SYMMETRY_TOL = 1e-10
RIDGE_JITTER = 1e-10
# up to this many columns, distances come from a direct (cancellation-free) loop
LOW_DIM = 8


class NumericsError(ValueError):
    """Raised when a numerical primitive receives unusable input."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a C-contiguous float64 2-D array."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, 0)
    if arr.ndim != 2:
        raise NumericsError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def pairwise_sq_distances(a) -> np.ndarray:
    """Squared Euclidean distances between all rows of ``a``.

    Low-dimensional inputs use a direct difference loop. Wider inputs use
    the Gram-matrix expansion, symmetrised, clipped at zero and given an
    exact zero diagonal; near-coincident pairs are recomputed directly.
    """
    a = as_matrix(a)
    if a.shape[0] == 0:
        raise NumericsError("empty matrix")
    if a.shape[1] <= LOW_DIM:
        d = cdist(a, a, "sqeuclidean")
        np.fill_diagonal(d, 0.0)
        return d
    sq = np.einsum("ij,ij->i", a, a)
    d = sq[:, None] + sq[None, :] - 2.0 * (a @ a.T)
    d = 0.5 * (d + d.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    # Gram expansion loses digits for nearby points; recompute those exactly.
    scale = sq[:, None] + sq[None, :]
    suspect = d < 1e-8 * np.maximum(scale, 1.0)
    np.fill_diagonal(suspect, False)
    if suspect.any():
        ii, jj = np.nonzero(suspect)
        diff = a[ii] - a[jj]
        d[ii, jj] = np.einsum("ij,ij->i", diff, diff)
    return d


def pairwise_distances(a) -> np.ndarray:
    a = as_matrix(a)
    if a.shape[0] and a.shape[1] <= LOW_DIM:
        d = cdist(a, a)
        np.fill_diagonal(d, 0.0)
        return d
    return np.sqrt(pairwise_sq_distances(a))


def _check_symmetric(s: np.ndarray) -> None:
    if s.shape[0] != s.shape[1]:
        raise NumericsError(f"matrix must be square, got shape {s.shape}")
    scale = max(1.0, float(np.max(np.abs(s)))) if s.size else 1.0
    asym = float(np.max(np.abs(s - s.T))) if s.size else 0.0
    if asym > SYMMETRY_TOL * scale:
        raise NumericsError(f"matrix is not symmetric (max asymmetry {asym:.3e})")


def symmetric_eigen(s, method: str = "lapack"):
    """Eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    s : array_like, shape (n, n)
        Symmetric matrix (asymmetry up to 1e-10 relative is tolerated and
        removed by averaging with the transpose).
    method : {"lapack", "jacobi"}
        ``"lapack"`` calls the divide-and-conquer LAPACK driver,
        ``"jacobi"`` runs cyclic Jacobi rotations (slow, small matrices only).

    Returns
    -------
    eigenvalues : ndarray, shape (n,)
        Sorted in descending order.
    eigenvectors : ndarray, shape (n, n)
        Orthonormal columns matching ``eigenvalues``.
    """
    s = as_matrix(s)
    _check_symmetric(s)
    s = 0.5 * (s + s.T)
    if method == "lapack":
        w, v = np.linalg.eigh(s)
    elif method == "jacobi":
        w, v = jacobi_eigen(s)
    else:
        raise NumericsError(f"unknown eigensolver {method!r}")
    order = np.argsort(w, kind="stable")[::-1]
    return w[order], np.ascontiguousarray(v[:, order])


def symmetric_eigenvalues(s) -> np.ndarray:
    """Eigenvalues only, descending. Cheaper than :func:`symmetric_eigen`."""
    s = as_matrix(s)
    _check_symmetric(s)
    w = np.linalg.eigvalsh(0.5 * (s + s.T))
    return w[::-1].copy()


def jacobi_eigen(s, tol: float = 1e-11, max_sweeps: int = 100):
    """Cyclic Jacobi eigenvalue iteration for a symmetric matrix.

    Converges when the off-diagonal Frobenius norm drops below
    ``tol * ||s||_F``. Returns unsorted eigenvalues and eigenvectors.
    """
    a = np.array(as_matrix(s), dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off < tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - sn * aq
                a[:, q] = sn * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - sn * rq
                a[q, :] = sn * rp + c * rq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
    else:
        raise NumericsError("Jacobi iteration did not converge")
    return np.diag(a).copy(), v


def least_squares(design, targets) -> np.ndarray:
    """Minimise ``||design @ beta - targets||^2`` via ridge-jittered normal equations.

    A jitter of ``1e-10 * trace(A^T A) / cols`` is added to the diagonal of
    the Gram matrix before the Cholesky solve.
    """
    a = as_matrix(design, "design")
    y = np.asarray(targets, dtype=np.float64)
    squeeze = y.ndim == 1
    y = y.reshape(-1, 1) if squeeze else as_matrix(y, "targets")
    n, p = a.shape
    if y.shape[0] != n:
        raise NumericsError(f"targets have {y.shape[0]} rows, design has {n}")
    if n < p:
        raise NumericsError(f"design needs at least {p} rows, got {n}")
    gram = a.T @ a
    jitter = RIDGE_JITTER * np.trace(gram) / p
    gram[np.diag_indices_from(gram)] += jitter
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericsError("singular design") from exc
    beta = scipy.linalg.cho_solve(factor, a.T @ y)
    if not np.all(np.isfinite(beta)):
        raise NumericsError("singular design")
    return beta.ravel() if squeeze else beta
