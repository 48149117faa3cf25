"""Dense real linear algebra used by every other module.

Matrices are plain 2-D ``float64`` numpy arrays; :func:`as_matrix` is the
single validating constructor. The SVD is a one-sided (Hestenes) Jacobi
iteration with a round-robin pair ordering, so each sweep rotates n/2
disjoint column pairs at once and the result is deterministic for a fixed
input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, NumericalError, ShapeError

JACOBI_TOL = 1e-12
MAX_SWEEPS = 60


def as_matrix(data, *, copy: bool = False) -> np.ndarray:
    """Validate and convert ``data`` to a finite, non-empty 2-D float64 array."""
    arr = np.array(data, dtype=np.float64, copy=copy) if copy else np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got {arr.ndim}-D")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"matrix must have at least one row and column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError("matrix contains NaN or Inf")
    return arr


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    # scaled to avoid overflow for very large entries
    peak = np.max(np.abs(m)) if m.size else 0.0
    if peak == 0.0:
        return 0.0
    return float(peak * np.sqrt(np.sum((m / peak) ** 2)))


@dataclass(frozen=True)
class SvdResult:
    """Full SVD ``m = u @ diag(sigma) @ v.T`` with u (m x m) and v (n x n)."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    sweeps: int = 0

    def reconstruct(self) -> np.ndarray:
        r = self.sigma.size
        return (self.u[:, :r] * self.sigma) @ self.v[:, :r].T


def _zero_tol(a: np.ndarray) -> float:
    # columns below this norm are rounding noise and are treated as exactly zero
    return max(a.shape) * np.finfo(np.float64).eps * float(np.linalg.norm(a))


def _jacobi_tall(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """One-sided Jacobi on a tall matrix (rows >= cols).

    Returns the orthogonalised columns ``a @ v``, the accumulated rotation v,
    and the number of sweeps used.
    """
    m, n = a.shape
    floor = _zero_tol(a) ** 2
    if n == 1:
        return a.copy(), np.eye(1), 0
    size = n + (n % 2)
    half = size // 2
    # rows [0, m) hold the working matrix, rows [m, m+size) the rotation
    work = np.zeros((m + size, size))
    work[:m, :n] = a
    work[m:, :] = np.eye(size)
    # Circle-method tournament. Circle seat k < half lives in storage column k,
    # seat k >= half in column half + (size-1-k), so seats k and size-1-k sit
    # in columns i and half+i. Each round, seat 0 stays and the rest rotate.
    def pos(k):
        return k if k < half else half + (size - 1 - k)

    src = [0, size - 1] + list(range(1, size - 1))
    step = np.empty(size, dtype=np.intp)
    for k in range(size):
        step[pos(k)] = pos(src[k])
    players = np.arange(size)
    tol = max(JACOBI_TOL, m * np.finfo(np.float64).eps)
    for sweep in range(1, MAX_SWEEPS + 1):
        rotated = False
        for _ in range(size - 1):
            top = work[:m]
            ap, aq = top[:, :half], top[:, half:]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            scale = np.sqrt(alpha * beta)
            active = (alpha > floor) & (beta > floor) & (np.abs(gamma) > tol * scale)
            if active.any():
                rotated = True
                safe = np.where(active, gamma, 1.0)
                zeta = (beta - alpha) / (2.0 * safe)
                t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                p = work[:, :half].copy()
                q = work[:, half:]
                work[:, :half] = c * p - s * q
                work[:, half:] = s * p + c * q
            work = work[:, step]
            players = players[step]
        if not rotated:
            order = np.argsort(players)
            work = work[:, order]
            return work[:m, :n], work[m:m + n, :n], sweep
    raise NumericalError(f"Jacobi SVD did not converge within {MAX_SWEEPS} sweeps", iterations=MAX_SWEEPS)


def _complete_basis(cols: np.ndarray, dim: int) -> np.ndarray:
    """Extend orthonormal columns to a full orthogonal dim x dim matrix."""
    r = cols.shape[1]
    if r == dim:
        return cols
    if r == 0:
        return np.eye(dim)
    q, _ = np.linalg.qr(cols, mode="complete")
    return np.hstack([cols, q[:, r:]])


def _svd_tall(a: np.ndarray) -> SvdResult:
    m, n = a.shape
    b, v, sweeps = _jacobi_tall(a)
    sigma = np.sqrt(np.einsum("ij,ij->j", b, b))
    order = np.argsort(-sigma, kind="stable")
    sigma, b, v = sigma[order], b[:, order], v[:, order]
    rank = int(np.count_nonzero(sigma > _zero_tol(a)))
    u_cols = b[:, :rank] / sigma[:rank]
    u = _complete_basis(u_cols, m)
    return SvdResult(u=u, sigma=sigma, v=v, sweeps=sweeps)


def _fix_signs(res: SvdResult) -> SvdResult:
    # largest-magnitude entry of each left singular vector is made positive
    u, v = res.u.copy(), res.v.copy()
    r = res.sigma.size
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[idx, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    u *= signs
    v[:, :r] *= signs[:r]
    return SvdResult(u=u, sigma=res.sigma, v=v, sweeps=res.sweeps)


def svd(m) -> SvdResult:
    """Full singular value decomposition by one-sided Jacobi.

    Parameters
    ----------
    m : array_like
        Finite real matrix of shape (rows, cols).

    Returns
    -------
    SvdResult
        ``u`` (rows x rows) and ``v`` (cols x cols) orthogonal, ``sigma`` of
        length min(rows, cols) sorted non-increasing.

    Raises
    ------
    NumericalError
        If the sweep cap is reached before all column pairs are orthogonal.
    """
    a = as_matrix(m)
    rows, cols = a.shape
    if rows >= cols:
        res = _svd_tall(a)
    else:
        t = _svd_tall(a.T)
        res = SvdResult(u=t.v, sigma=t.sigma, v=t.u, sweeps=t.sweeps)
    return _fix_signs(res)


def truncate(s: SvdResult, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Leading ``k`` singular triplets as (u_k, sigma_k, v_k)."""
    r = s.sigma.size
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= r:
        raise ArgumentError(f"rank k must be in [1, {r}], got {k}")
    k = int(k)
    return s.u[:, :k].copy(), s.sigma[:k].copy(), s.v[:, :k].copy()


def low_rank(s: SvdResult, k: int) -> np.ndarray:
    u_k, sigma_k, v_k = truncate(s, k)
    return (u_k * sigma_k) @ v_k.T
