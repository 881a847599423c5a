"""Dense matrix primitives: Frobenius/nuclear norms, a symmetric Jacobi
eigensolver, and PCA.

All numerics are double precision and written directly against numpy
arithmetic (no LAPACK drivers), so every result can be cross-checked by an
independent oracle. Singular values are obtained from the eigenvalues of
the Gram matrix ``m.T @ m`` (or ``m @ m.T``, whichever is smaller), which a
cyclic Jacobi iteration diagonalizes. The Jacobi sweep visits the pivot
pairs in round-robin order; rotations within a round touch disjoint
row/column pairs, so the whole round is applied with vectorized gathers and
scatters, and a stack of matrices can be processed in one pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DataError

# Off-diagonal convergence tolerance, relative to the initial Frobenius
# norm of the symmetric matrix being diagonalized.
JACOBI_OFF_TOL = 1e-12
JACOBI_SWEEP_CAP = 100

# Eigenvalues below this fraction of the largest are clamped to zero
# before taking square roots.
EIG_CLAMP_REL = 1e-12


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate and return ``m`` as a finite 2-D float64 array."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DataError(f"{name} must be 2-D, got ndim={a.ndim}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise DataError(f"{name} must be non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite entries")
    return a


def frobenius_norm_sq(m) -> float:
    """Sum of squared entries."""
    a = as_matrix(m)
    return float(np.sum(a * a))


def frobenius_norm(m) -> float:
    return float(np.sqrt(frobenius_norm_sq(m)))


def _round_robin_rounds(n: int):
    """Pivot schedule for one Jacobi sweep on an n x n matrix.

    Returns a list of (p, q) index-array pairs; within each round the pairs
    are disjoint, and over a full sweep every off-diagonal pair (i < j)
    appears exactly once (circle method; odd n gets a bye slot == n).
    """
    m = n + (n % 2)
    circle = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for k in range(m // 2):
            i, j = circle[k], circle[m - 1 - k]
            if i < n and j < n:
                ps.append(min(i, j))
                qs.append(max(i, j))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        # rotate all but the first element
        circle = [circle[0]] + [circle[-1]] + circle[1:-1]
    return rounds


def _off_diag_sq(s: np.ndarray) -> np.ndarray:
    """Per-matrix sum of squared off-diagonal entries of a stack (B,n,n).

    Summed directly over a diagonal-zeroed copy: computing it as
    total - diagonal cancels catastrophically once the matrix is nearly
    diagonal, flooring around eps * ||S||^2 and masking convergence.
    """
    off = s.copy()
    np.einsum("bii->bi", off)[...] = 0.0
    return np.sum(off * off, axis=(1, 2))


def jacobi_eigh_stack(mats, with_vectors: bool = False):
    """Eigendecomposition of a stack of symmetric matrices by cyclic Jacobi.

    Parameters
    ----------
    mats : array (B, n, n)
        Stack of symmetric matrices (symmetrized defensively on entry).
    with_vectors : bool
        Also accumulate eigenvectors.

    Returns
    -------
    w : array (B, n)
        Eigenvalues, descending per matrix.
    v : array (B, n, n), only if ``with_vectors``
        Orthonormal eigenvectors as columns, aligned with ``w``.

    Raises
    ------
    ConvergenceError
        If the off-diagonal mass has not dropped below
        ``JACOBI_OFF_TOL * ||S_0||_F`` within ``JACOBI_SWEEP_CAP`` sweeps.
    """
    s = np.array(mats, dtype=np.float64, copy=True)
    if s.ndim != 3 or s.shape[1] != s.shape[2]:
        raise DataError(f"expected a (B, n, n) stack, got shape {s.shape}")
    s = 0.5 * (s + s.transpose(0, 2, 1))
    b, n, _ = s.shape

    tol_sq = (JACOBI_OFF_TOL * np.sqrt(np.sum(s * s, axis=(1, 2)))) ** 2
    v = np.tile(np.eye(n), (b, 1, 1)) if with_vectors else None

    rounds = _round_robin_rounds(n)
    converged = False
    for _ in range(JACOBI_SWEEP_CAP):
        if np.all(_off_diag_sq(s) <= tol_sq):
            converged = True
            break
        for p, q in rounds:
            apq = s[:, p, q]
            rotate = apq != 0.0
            if not np.any(rotate):
                continue
            app = s[:, p, p]
            aqq = s[:, q, q]
            with np.errstate(over="ignore", invalid="ignore"):
                theta = (aqq - app) / np.where(rotate, 2.0 * apq, 1.0)
                t = np.where(theta >= 0.0, 1.0, -1.0) / (
                    np.abs(theta) + np.sqrt(theta * theta + 1.0)
                )
            c = 1.0 / np.sqrt(t * t + 1.0)
            sn = t * c
            c = np.where(rotate, c, 1.0)
            sn = np.where(rotate, sn, 0.0)

            cr = c[:, :, None]
            sr = sn[:, :, None]
            rows_p = s[:, p, :]
            rows_q = s[:, q, :]
            s[:, p, :] = cr * rows_p - sr * rows_q
            s[:, q, :] = sr * rows_p + cr * rows_q

            cc = c[:, None, :]
            sc = sn[:, None, :]
            cols_p = s[:, :, p]
            cols_q = s[:, :, q]
            s[:, :, p] = cc * cols_p - sc * cols_q
            s[:, :, q] = sc * cols_p + cc * cols_q

            # the rotation annihilates its own pivot; remove rounding residue
            s[:, p, q] = np.where(rotate, 0.0, s[:, p, q])
            s[:, q, p] = np.where(rotate, 0.0, s[:, q, p])

            if with_vectors:
                vp = v[:, :, p]
                vq = v[:, :, q]
                v[:, :, p] = cc * vp - sc * vq
                v[:, :, q] = sc * vp + cc * vq
    else:
        converged = np.all(_off_diag_sq(s) <= tol_sq)
    if not converged:
        worst = float(np.max(_off_diag_sq(s)))
        raise ConvergenceError(
            f"Jacobi did not converge in {JACOBI_SWEEP_CAP} sweeps "
            f"(worst off-diagonal mass {worst:.3e})"
        )

    w = np.einsum("bii->bi", s).copy()
    order = np.argsort(-w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    if with_vectors:
        v = np.take_along_axis(v, order[:, None, :], axis=2)
        return w, v
    return w


def singular_values_stack(mats) -> np.ndarray:
    """Singular values (descending) for a stack of same-shaped matrices."""
    a = np.asarray(mats, dtype=np.float64)
    if a.ndim != 3:
        raise DataError(f"expected a (B, rows, cols) stack, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError("matrix stack contains non-finite entries")
    rows, cols = a.shape[1], a.shape[2]
    if rows >= cols:
        gram = np.matmul(a.transpose(0, 2, 1), a)
    else:
        gram = np.matmul(a, a.transpose(0, 2, 1))
    w = jacobi_eigh_stack(gram)
    top = w[:, :1]
    w = np.where(w < EIG_CLAMP_REL * np.maximum(top, 0.0), 0.0, w)
    return np.sqrt(np.maximum(w, 0.0))


def singular_values(m) -> np.ndarray:
    """All min(rows, cols) singular values of ``m``, sorted descending."""
    a = as_matrix(m)
    return singular_values_stack(a[None])[0]


def nuclear_norm(m) -> float:
    """Sum of the singular values of ``m``."""
    return float(np.sum(singular_values(m)))


def nuclear_norms(mats) -> np.ndarray:
    """Nuclear norm of each matrix in a stack (one Jacobi pass for all)."""
    return np.sum(singular_values_stack(mats), axis=1)


@dataclass(frozen=True)
class PcaBasis:
    """Mean vector plus the top principal directions (rows of ``components``)."""

    mean: np.ndarray          # (dim,)
    components: np.ndarray    # (out_dim, dim), orthonormal rows
    eigenvalues: np.ndarray   # (out_dim,), descending

    @property
    def out_dim(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.components.shape[1]


def pca_fit(samples, out_dim: int) -> PcaBasis:
    """Fit a PCA basis: sample mean plus top eigenvectors of the sample
    covariance (ddof=1), in descending eigenvalue order.

    When the dimension exceeds the sample count the eigenproblem is solved
    on the N x N Gram matrix instead of the D x D covariance; both paths go
    through the same Jacobi solver.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"samples must form a 2-D array, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise DataError("PCA needs at least 2 samples")
    if not np.all(np.isfinite(x)):
        raise DataError("samples contain non-finite entries")
    if not 1 <= out_dim <= min(n, d):
        raise DataError(f"out_dim {out_dim} outside [1, min(n={n}, d={d})]")

    mean = x.mean(axis=0)
    xc = x - mean
    if not np.any(xc):
        raise DataError("degenerate covariance: all samples identical")

    if d <= n:
        cov = (xc.T @ xc) / (n - 1)
        w, v = jacobi_eigh_stack(cov[None], with_vectors=True)
        eigvals = w[0, :out_dim]
        comps = v[0][:, :out_dim].T
    else:
        gram = xc @ xc.T
        w, u = jacobi_eigh_stack(gram[None], with_vectors=True)
        w = w[0]
        if w[out_dim - 1] <= EIG_CLAMP_REL * max(w[0], 0.0):
            raise DataError(
                f"degenerate covariance: rank below requested out_dim {out_dim}"
            )
        dirs = xc.T @ u[0][:, :out_dim]
        dirs /= np.sqrt(w[:out_dim])
        eigvals = w[:out_dim] / (n - 1)
        comps = dirs.T

    if eigvals[-1] < 0.0:
        eigvals = np.maximum(eigvals, 0.0)
    # deterministic sign: largest-magnitude coordinate of each direction is positive
    comps = comps.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0.0:
            row *= -1.0
    return PcaBasis(mean=mean, components=comps, eigenvalues=eigvals.copy())


def pca_project(basis: PcaBasis, v) -> np.ndarray:
    """Project ``v`` onto the basis: coordinates of (v - mean)."""
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (basis.dim,):
        raise DataError(f"vector shape {a.shape} does not match basis dim {basis.dim}")
    return basis.components @ (a - basis.mean)
