"""Dense linear-algebra kernels.

Everything here operates on float64 ``numpy`` arrays. The SVD is a one-sided
(Hestenes) Jacobi iteration and the symmetric eigensolver a two-sided Jacobi
iteration; both use a round-robin pair ordering so that each round applies
``n // 2`` disjoint rotations in one vectorized step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = np.finfo(np.float64).eps


class SVDConvergenceError(RuntimeError):
    """Raised when a Jacobi iteration hits its sweep cap."""


@dataclass(frozen=True)
class SVDResult:
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        k = self.s.shape[0]
        return (self.u[:, :k] * self.s) @ self.vt[:k, :]


@dataclass(frozen=True)
class EigResult:
    values: np.ndarray
    vectors: np.ndarray


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce ``m`` to a finite, nonempty 2-D float64 array."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got {a.ndim}-D")
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError(f"{name} must be nonempty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def frobenius_norm(m) -> float:
    a = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("frobenius_norm requires finite entries")
    return float(np.sqrt(np.sum(a * a)))


def rank_tolerance(shape: tuple[int, int], smax: float) -> float:
    return max(shape) * EPS * smax


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings of a round-robin tournament on ``n`` players.

    Every unordered pair appears in exactly one round; pairs within a round
    are disjoint. An odd ``n`` gets a bye slot that is dropped.
    """
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        p, q = [], []
        for i in range(size // 2):
            a, b = players[i], players[size - 1 - i]
            if a >= 0 and b >= 0:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=int), np.array(q, dtype=int)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _complete_basis(q: np.ndarray, m: int) -> np.ndarray:
    """Extend the orthonormal columns ``q`` (m x r) to an m x m orthogonal matrix."""
    r = q.shape[1]
    basis = [q[:, j] for j in range(r)]
    resid = np.eye(m) - q @ q.T if r else np.eye(m)
    for _ in range(m - r):
        norms = np.sqrt(np.sum(resid * resid, axis=0))
        k = int(np.argmax(norms))
        v = resid[:, k] / norms[k]
        # second Gram-Schmidt pass keeps the completion orthogonal to ~eps
        for b in basis:
            v = v - (b @ v) * b
        v /= np.linalg.norm(v)
        basis.append(v)
        resid = resid - np.outer(v, v @ resid)
    return np.column_stack(basis) if basis else np.zeros((m, 0))


def _largest_component_sign(vectors: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def _jacobi_tall(a: np.ndarray, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    """One-sided Jacobi on a tall matrix; returns (A V, V) with A V column-orthogonal."""
    m, n = a.shape
    g = a.copy()
    v = np.eye(n)
    tol = EPS * m
    # columns this small are rounding noise and cannot be orthogonalized further
    negligible = (EPS * np.sqrt(np.sum(a * a))) ** 2
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            if p.size == 0:
                continue
            gp, gq = g[:, p], g[:, q]
            alpha = np.sum(gp * gp, axis=0)
            beta = np.sum(gq * gq, axis=0)
            gamma = np.sum(gp * gq, axis=0)
            active = (np.abs(gamma) > tol * np.sqrt(alpha * beta)) & (alpha > negligible) & (beta > negligible)
            if not np.any(active):
                continue
            rotated = True
            safe_gamma = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * safe_gamma)
            sgn = np.where(zeta >= 0, 1.0, -1.0)
            t = sgn / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)
            s = np.where(active, c * t, 0.0)
            g[:, p], g[:, q] = c * gp - s * gq, s * gp + c * gq
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            return g, v
    raise SVDConvergenceError(
        f"one-sided Jacobi SVD did not converge for shape {a.shape} "
        f"within {max_sweeps} sweeps"
    )


def svd(m, max_sweeps: int | None = None) -> SVDResult:
    """Full SVD ``m = u @ diag(s) @ vt`` with ``u`` (m x m) and ``vt`` (n x n).

    Singular values are descending; ties keep their original column order.
    Values at or below the numerical-rank tolerance are reported as exactly
    zero. Each column of ``u`` is signed so that its largest-magnitude entry
    is nonnegative.
    """
    a = as_matrix(m)
    rows, cols = a.shape
    if max_sweeps is None:
        max_sweeps = 100 * min(rows, cols)
    transposed = rows < cols
    work = a.T if transposed else a
    mm, nn = work.shape

    g, v = _jacobi_tall(work, max_sweeps)
    sigma = np.sqrt(np.sum(g * g, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma, g, v = sigma[order], g[:, order], v[:, order]

    smax = sigma[0] if sigma.size else 0.0
    keep = sigma > rank_tolerance(a.shape, smax)
    r = int(np.count_nonzero(keep))
    sigma = np.where(keep, sigma, 0.0)
    left = _complete_basis(g[:, :r] / sigma[:r], mm)

    if transposed:
        u, vt = v, left.T
    else:
        u, vt = left, v.T

    signs = _largest_component_sign(u)
    u = u * signs
    k = sigma.shape[0]
    vt = vt.copy()
    vt[:k] *= signs[:k, None]
    return SVDResult(u=u, s=sigma, vt=vt)


def truncated_svd(m, k: int) -> SVDResult:
    a = as_matrix(m)
    if not 1 <= k <= min(a.shape):
        raise ValueError(f"k must be in [1, {min(a.shape)}], got {k}")
    full = svd(a)
    return SVDResult(u=full.u[:, :k], s=full.s[:k], vt=full.vt[:k, :])


def pseudo_inverse(m) -> np.ndarray:
    a = as_matrix(m)
    f = svd(a)
    k = f.s.shape[0]
    inv = np.zeros_like(f.s)
    nz = f.s > 0
    inv[nz] = 1.0 / f.s[nz]
    return (f.vt[:k].T * inv) @ f.u[:, :k].T


def eig_symmetric(m, max_sweeps: int = 100) -> EigResult:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Eigenvalues come back descending, eigenvectors as orthonormal columns
    signed like the left singular vectors of :func:`svd`.
    """
    a = as_matrix(m)
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"eig_symmetric needs a square matrix, got {a.shape}")
    norm = frobenius_norm(a)
    asym = frobenius_norm(a - a.T)
    if asym > 1e-10 * norm:
        raise ValueError(f"matrix is not symmetric: ||M - M^T||_F = {asym:.3e}")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    target = n * EPS * norm
    # rotations below this size cannot move any entry by a representable amount
    floor = EPS * target / n
    rounds = _round_robin(n)
    for sweep in range(max_sweeps + 1):
        off = frobenius_norm(a - np.diag(np.diag(a)))
        if off <= target:
            break
        if sweep == max_sweeps:
            raise SVDConvergenceError(
                f"Jacobi eigensolver did not converge for shape {a.shape} "
                f"within {max_sweeps} sweeps"
            )
        for p, q in rounds:
            if p.size == 0:
                continue
            apq = a[p, q]
            active = np.abs(apq) > floor
            if not np.any(active):
                continue
            safe = np.where(active, apq, 1.0)
            theta = (a[q, q] - a[p, p]) / (2.0 * safe)
            sgn = np.where(theta >= 0, 1.0, -1.0)
            t = sgn / (np.abs(theta) + np.hypot(1.0, theta))
            c = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)
            s = np.where(active, c * t, 0.0)
            cp, cq = a[:, p], a[:, q]
            a[:, p], a[:, q] = c * cp - s * cq, s * cp + c * cq
            rp, rq = a[p, :], a[q, :]
            a[p, :], a[q, :] = c[:, None] * rp - s[:, None] * rq, s[:, None] * rp + c[:, None] * rq
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    values, v = values[order], v[:, order]
    v = v * _largest_component_sign(v)
    return EigResult(values=values, vectors=v)
