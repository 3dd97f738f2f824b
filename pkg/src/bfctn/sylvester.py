"""Solvers for the factor-update matrix equations.

The factor M-step produces ``X S1 + B X S2 = E`` with small symmetric
``B`` (``P^T P`` of a degradation operator) and symmetric positive
(semi-)definite Gram matrices ``S1``, ``S2``.  Diagonalising ``B`` decouples
the rows of ``X``: with ``B = U diag(d) U^T`` and ``Y = U^T X`` each row
solves ``y_i (S1 + d_i S2) = (U^T E)_i``.  That costs ``O(p^3 + p q^3)``
instead of the ``O((p q)^3)`` of the vectorised Kronecker system.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as spla

SYMMETRY_TOL = 1e-10
RESIDUAL_FLOOR = 1e-30
FAST_PATH_TOL = 1e-11


class SingularSystemError(np.linalg.LinAlgError):
    """A decoupled row system could not be factorised."""

    def __init__(self, message: str, row: int | None = None, mode: int | None = None):
        super().__init__(message)
        self.row = row
        self.mode = mode


def _symmetric(name: str, a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    scale = max(np.abs(a).max(initial=0.0), 1.0)
    if np.abs(a - a.T).max(initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError(f"{name} is not symmetric within {SYMMETRY_TOL:g} relative")
    return 0.5 * (a + a.T)


def _cho_solve_right(e: np.ndarray, s: np.ndarray, row: int | None = None) -> np.ndarray:
    # X S = E  <=>  S X^T = E^T for symmetric S
    try:
        factor = spla.cho_factor(s, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        where = "" if row is None else f" (row {row})"
        raise SingularSystemError(f"system matrix is not positive definite{where}", row=row) from exc
    return spla.cho_solve(factor, e.T, check_finite=False).T


def sylvester_residual(x, s1, b, s2, e) -> float:
    """Relative residual ``||X S1 + B X S2 - E||_F / max(||E||_F, eps)``."""
    r = x @ s1 + b @ x @ s2 - e
    return float(np.linalg.norm(r) / max(np.linalg.norm(e), RESIDUAL_FLOOR))


def solve_generalized_sylvester(s1: np.ndarray, b: np.ndarray, s2: np.ndarray, e: np.ndarray,
                                method: str = "auto") -> np.ndarray:
    """Solve ``X S1 + B X S2 = E`` for ``X`` (``p x q``).

    Parameters
    ----------
    s1, s2 : (q, q) symmetric arrays
        ``S1 + d S2`` must be positive definite for every eigenvalue ``d``
        of ``B``.
    b : (p, p) symmetric positive semi-definite array
    e : (p, q) array
    method : {"auto", "rowwise"}
        ``"auto"`` first diagonalises the pencil ``(S2, S1)`` once, which
        avoids one factorisation per row, and falls back to the row-wise
        Cholesky solves when its residual exceeds ``FAST_PATH_TOL``.

    Raises
    ------
    SingularSystemError
        If a decoupled row system is not positive definite; ``row`` names the
        eigen-row of ``B`` that failed.
    """
    s1 = _symmetric("S1", s1)
    s2 = _symmetric("S2", s2)
    b = _symmetric("B", b)
    e = np.asarray(e, dtype=float)
    p, q = e.shape
    if b.shape[0] != p or s1.shape[0] != q or s2.shape[0] != q:
        raise ValueError(f"incompatible shapes: E {e.shape}, B {b.shape}, S1 {s1.shape}, S2 {s2.shape}")

    if not b.any() or not s2.any():
        return _cho_solve_right(e, s1)

    d, u = np.linalg.eigh(b)
    d = np.clip(d, 0.0, None)  # B is PSD; rounding can leave tiny negatives
    f = u.T @ e
    if method == "auto":
        x = _solve_pencil(s1, s2, d, u, f)
        if x is not None and sylvester_residual(x, s1, b, s2, e) < FAST_PATH_TOL:
            return x
    elif method != "rowwise":
        raise ValueError(f"unknown method {method!r}")
    y = np.empty_like(f)
    for i in range(p):
        y[i] = _cho_solve_right(f[i:i + 1], s1 + d[i] * s2, row=i)
    return u @ y


def _solve_pencil(s1, s2, d, u, f):
    # V^T S1 V = I, V^T S2 V = diag(theta); then Y V^{-T} solves elementwise
    try:
        theta, v = spla.eigh(s2, s1, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    denom = 1.0 + np.outer(d, theta)
    if np.any(denom <= 0):
        return None
    q = (f @ v) / denom
    return u @ (q @ v.T)


def solve_right_linear(e: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Solve ``X S = E`` for symmetric positive definite ``S``."""
    s = _symmetric("S", s)
    e = np.asarray(e, dtype=float)
    if e.shape[1] != s.shape[0]:
        raise ValueError(f"E has {e.shape[1]} columns, S is {s.shape}")
    return _cho_solve_right(e, s)
