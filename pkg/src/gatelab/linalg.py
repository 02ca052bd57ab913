"""Dense float64 linear algebra kernels and finite-difference oracles.

Everything downstream treats this module as ground truth: the symmetric
eigensolver carries the spectral decompositions, and the central-difference
gradient/Hessian are the independent check against analytic derivatives.
All functions are pure and operate on plain ``numpy.float64`` arrays
(vectors are 1-D, matrices 2-D, row-major).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

EPS = float(np.finfo(np.float64).eps)

#: default central-difference step scale for first derivatives
GRADIENT_STEP_SCALE = EPS ** (1.0 / 3.0)
#: default step scale for second derivatives (balances h^2 truncation
#: against eps/h^2 round-off; h ~ eps^(1/3) is too coarse for Hessians)
HESSIAN_STEP_SCALE = EPS ** 0.25


class LinalgError(ValueError):
    """Invalid input to a linear-algebra kernel."""


class ConvergenceError(RuntimeError):
    """Iteration budget exhausted before reaching the requested tolerance."""


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Validate and return a finite 1-D float64 array of length >= 1."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise LinalgError(f"{name} must be 1-D with at least one entry, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise LinalgError(f"{name} contains non-finite entries")
    return v


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.size < 1:
        raise LinalgError(f"{name} must be 2-D and non-empty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise LinalgError(f"{name} contains non-finite entries")
    return m


@dataclass(frozen=True)
class SymEigen:
    """Eigendecomposition of a symmetric matrix.

    ``eigenvalues`` are sorted descending; column ``i`` of ``eigenvectors``
    is the unit eigenvector paired with ``eigenvalues[i]``.  Signs follow a
    fixed convention (largest-magnitude entry positive, ties broken by the
    lowest index) so repeated runs are bit-identical.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def _round_robin_rounds(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split all index pairs (p, q), p < q into n-1 rounds of disjoint pairs.

    Round-robin tournament scheduling: every pair appears exactly once per
    full cycle, and pairs within a round share no index, so their rotations
    commute and can be applied as one batched update.
    """
    m = n if n % 2 == 0 else n + 1
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.asarray(ps, dtype=np.intp), np.asarray(qs, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def sym_eigen(a, tol: float = 1e-12, max_sweeps: int = 100) -> SymEigen:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    A sweep visits every off-diagonal pair once (round-robin cyclic order);
    convergence is declared when the off-diagonal Frobenius norm drops below
    ``tol`` times the Frobenius norm of the input.

    Raises:
        LinalgError: non-square input or relative asymmetry above 1e-12.
        ConvergenceError: off-diagonal mass still above tolerance after
            ``max_sweeps`` sweeps (the residual is reported).
    """
    a = as_matrix(a, "sym_eigen input")
    n, m = a.shape
    if n != m:
        raise LinalgError(f"sym_eigen needs a square matrix, got {n}x{m}")
    norm_a = float(np.linalg.norm(a))
    asym = float(np.linalg.norm(a - a.T))
    if asym > 1e-12 * max(norm_a, 1e-300):
        raise LinalgError(f"matrix is not symmetric: ||A - A^T||_F = {asym:.3e} vs ||A||_F = {norm_a:.3e}")

    a = (a + a.T) / 2.0
    v = np.eye(n)
    if n == 1 or norm_a == 0.0:
        return _sorted_eigen(np.diag(a).copy(), v)

    rounds = _round_robin_rounds(n)
    sweeps = 0
    while True:
        off = a.copy()
        np.fill_diagonal(off, 0.0)
        off_norm = float(np.linalg.norm(off))
        if off_norm <= tol * norm_a:
            break
        if sweeps >= max_sweeps:
            raise ConvergenceError(
                f"Jacobi sweep budget ({max_sweeps}) exhausted; "
                f"off-diagonal residual {off_norm:.3e} > {tol:.1e} * ||A||_F = {tol * norm_a:.3e}"
            )
        sweeps += 1
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            pa, qa, apq = p[active], q[active], apq[active]
            diff = a[qa, qa] - a[pa, pa]
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                theta = diff / (2.0 * apq)
                t = np.where(
                    np.abs(theta) > 1e150,
                    0.5 / theta,
                    np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0)),
                )
            t = np.where(theta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            cc, ss = c[:, None], s[:, None]
            rp, rq = a[pa], a[qa]
            a[pa] = cc * rp - ss * rq
            a[qa] = ss * rp + cc * rq
            cp, cq = a[:, pa], a[:, qa]
            a[:, pa] = cc.T * cp - ss.T * cq
            a[:, qa] = ss.T * cp + cc.T * cq
            vp, vq = v[:, pa], v[:, qa]
            v[:, pa] = cc.T * vp - ss.T * vq
            v[:, qa] = ss.T * vp + cc.T * vq
            # each rotation annihilates its own pivot exactly
            a[pa, qa] = 0.0
            a[qa, pa] = 0.0
    return _sorted_eigen(np.diag(a).copy(), v)


def _sorted_eigen(lam: np.ndarray, v: np.ndarray) -> SymEigen:
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    v = v[:, order]
    # sign convention: largest-magnitude entry positive, first index on ties
    for i in range(v.shape[1]):
        col = v[:, i]
        k = int(np.argmax(np.abs(col)))
        if col[k] < 0.0:
            v[:, i] = -col
    lam.setflags(write=False)
    v.setflags(write=False)
    return SymEigen(eigenvalues=lam, eigenvectors=v)


def default_gradient_step(x: np.ndarray) -> float:
    return GRADIENT_STEP_SCALE * max(1.0, float(np.max(np.abs(x))))


def default_hessian_step(x: np.ndarray) -> float:
    return HESSIAN_STEP_SCALE * max(1.0, float(np.max(np.abs(x))))


def _probe(f: Callable[[np.ndarray], float], point: np.ndarray, coord: int) -> float:
    val = float(f(point))
    if not np.isfinite(val):
        raise LinalgError(f"objective returned non-finite value {val!r} while probing coordinate {coord}")
    return val


def fd_gradient(f: Callable[[np.ndarray], float], x, h: float | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar field, O(h^2) accurate.

    ``h`` defaults to ``eps^(1/3) * max(1, ||x||_inf)``.  The callback is
    probed at ``x +- h e_i``; a non-finite value raises with the offending
    coordinate.
    """
    x = as_vector(x, "fd_gradient point")
    if h is None:
        h = default_gradient_step(x)
    if not h > 0.0:
        raise LinalgError(f"step size must be positive, got {h}")
    g = np.zeros(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (_probe(f, x + e, i) - _probe(f, x - e, i)) / (2.0 * h)
    return g


def fd_hessian(f: Callable[[np.ndarray], float], x, h: float | None = None) -> np.ndarray:
    """Central 4-point-stencil Hessian of a scalar field, symmetrized.

    ``h`` defaults to ``eps^(1/4) * max(1, ||x||_inf)``, the standard
    truncation/round-off balance for second differences.
    """
    x = as_vector(x, "fd_hessian point")
    if h is None:
        h = default_hessian_step(x)
    if not h > 0.0:
        raise LinalgError(f"step size must be positive, got {h}")
    n = x.size
    hess = np.zeros((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        for j in range(i, n):
            ej = np.zeros(n)
            ej[j] = h
            val = (
                _probe(f, x + ei + ej, i)
                - _probe(f, x + ei - ej, i)
                - _probe(f, x - ei + ej, j)
                + _probe(f, x - ei - ej, j)
            ) / (4.0 * h * h)
            hess[i, j] = val
            hess[j, i] = val
    return (hess + hess.T) / 2.0


def frobenius(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


def check_eigen(decomp: SymEigen, a: np.ndarray, tol_orth: float = 1e-10, tol_recon: float = 1e-9) -> None:
    """Assert the SymEigen contract against the source matrix (test helper)."""
    n = decomp.eigenvectors.shape[0]
    v = decomp.eigenvectors
    orth = np.linalg.norm(v.T @ v - np.eye(n))
    if orth > tol_orth * n:
        raise AssertionError(f"eigenvector columns not orthonormal: {orth:.3e}")
    recon = np.linalg.norm(decomp.reconstruct() - a)
    if recon > tol_recon * max(1.0, np.linalg.norm(a)):
        raise AssertionError(f"reconstruction residual too large: {recon:.3e}")
    lam = decomp.eigenvalues
    if np.any(lam[:-1] < lam[1:]):
        raise AssertionError("eigenvalues not sorted descending")
