"""Closed-form ridge regression baseline."""

from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

log = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = tuple(10.0**k for k in range(-3, 4))


def add_intercept(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.hstack([X, np.ones((len(X), 1))])


def ridge_fit(X, Y, alpha: float, intercept_col: int | None = -1) -> np.ndarray:
    """Solve (X'X + alpha*P) W = X'Y by Cholesky.

    P is the identity except that the intercept column (if any) is not
    penalized. Pass intercept_col=None when X has no intercept column.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    A = X.T @ X
    pen = np.full(X.shape[1], float(alpha))
    if intercept_col is not None:
        pen[intercept_col] = 0.0
    A[np.diag_indices_from(A)] += pen
    try:
        c = cho_factor(A)
    except LinAlgError:
        raise np.linalg.LinAlgError(
            f"normal equations are singular at alpha={alpha}; use alpha > 0") from None
    return cho_solve(c, X.T @ Y)


def ridge_predict(W, X) -> np.ndarray:
    return np.asarray(X, dtype=float) @ W


def select_ridge_alpha(X_train, Y_train, X_val, Y_val, grid=DEFAULT_ALPHA_GRID) -> float:
    """Grid value with the lowest validation MSE; the smaller alpha wins ties."""
    grid = sorted(float(a) for a in grid)
    if not grid:
        raise ValueError("empty alpha grid")
    best, best_mse = None, np.inf
    for a in grid:
        W = ridge_fit(X_train, Y_train, a)
        mse = float(np.mean((ridge_predict(W, X_val) - Y_val) ** 2))
        if mse < best_mse:
            best, best_mse = a, mse
    if len(set(grid)) > 1 and best in (grid[0], grid[-1]):
        log.warning("selected ridge alpha %g lies on the grid boundary", best)
    return best
