"""Gaussian kernel and least-squares SVM solved in the dual and in the primal.

Conventions
-----------
- kernel: ``K(x, y) = exp(-||x - y||^2 / (2 sigma^2))``
- dual system::

      [ Omega + I/gamma   1 ] [alpha]   [y]
      [ 1^T               0 ] [  b  ] = [0]

  with predictor ``y(x) = sum_i alpha_i K(x, x_i) + b``.
- primal with an explicit map ``Phi``: minimize
  ``1/2 w^T w + gamma/2 sum_i (y_i - w^T phi_i - b)^2``, which shares ``gamma``
  with the dual system above.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LSSVMSolverError(RuntimeError):
    pass


def _check_sigma(sigma):
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")


def gaussian_kernel(x, y, sigma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    _check_sigma(sigma)
    diff = x - y
    return float(np.exp(-np.dot(diff, diff) / (2.0 * sigma**2)))


def sq_distances(X, Z) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if X.shape[1] != Z.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Z.shape[1]}")
    xx = np.einsum("ij,ij->i", X, X)
    zz = np.einsum("ij,ij->i", Z, Z)
    D2 = xx[:, None] + zz[None, :] - 2.0 * (X @ Z.T)
    np.maximum(D2, 0.0, out=D2)
    return D2


def kernel_matrix(X, Z, sigma: float) -> np.ndarray:
    """Gram matrix ``K[i, j] = K(X[i], Z[j])``.

    When ``Z is X`` the result is symmetrized and its diagonal set to exactly 1.
    """
    _check_sigma(sigma)
    K = np.exp(-sq_distances(X, Z) / (2.0 * sigma**2))
    if Z is X:
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, 1.0)
    return K


@dataclass
class DualLSSVM:
    alpha: np.ndarray
    b: float
    support_X: np.ndarray
    sigma: float
    gamma: float

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.support_X.shape[1]:
            raise ValueError(
                f"dimension mismatch: model has d={self.support_X.shape[1]}, input has d={X.shape[1]}"
            )
        return kernel_matrix(X, self.support_X, self.sigma) @ self.alpha + self.b


def dual_system(X, gamma, sigma):
    n = X.shape[0]
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = kernel_matrix(X, X, sigma)
    A[np.arange(n), np.arange(n)] += 1.0 / gamma
    A[:n, n] = 1.0
    A[n, :n] = 1.0
    return A


def lssvm_dual_train(X, y, gamma: float, sigma: float, tol: float = 1e-8) -> DualLSSVM:
    """Solve the LS-SVM dual linear system by dense LU with one refinement step."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 training points")
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    A = dual_system(X, gamma, sigma)
    rhs = np.append(y, 0.0)
    try:
        sol = np.linalg.solve(A, rhs)
        sol += np.linalg.solve(A, rhs - A @ sol)
    except np.linalg.LinAlgError as exc:
        raise LSSVMSolverError(f"dual system is singular: {exc}") from exc
    scale = np.linalg.norm(rhs) or 1.0
    resid = np.linalg.norm(A @ sol - rhs) / scale
    if not np.isfinite(resid) or resid > tol:
        raise LSSVMSolverError(f"dual solve residual {resid:.3e} exceeds {tol:.0e}")
    return DualLSSVM(sol[:n], float(sol[n]), X.copy(), float(sigma), float(gamma))


def lssvm_dual_predict(model: DualLSSVM, x):
    """Score ``sum_i alpha_i K(x, x_i) + b``; a float for a single vector input."""
    x = np.asarray(x, dtype=np.float64)
    scores = model.decision_function(x)
    return float(scores[0]) if x.ndim == 1 else scores


@dataclass
class PrimalModel:
    w_hat: np.ndarray
    b: float
    map_ref: str = ""

    def decision_function(self, Phi) -> np.ndarray:
        return np.atleast_2d(Phi) @ self.w_hat + self.b


def primal_objective(w, b, Phi, y, gamma) -> float:
    e = y - Phi @ w - b
    return 0.5 * float(w @ w) + 0.5 * gamma * float(e @ e)


def primal_gradient(w, b, Phi, y, gamma):
    e = y - Phi @ w - b
    return w - gamma * (Phi.T @ e), -gamma * e.sum()


def lssvm_primal_train(Phi, y, gamma: float, map_ref: str = "", jitter: float = 1e-12) -> PrimalModel:
    """Solve the primal LS-SVM normal equations for ``(w_hat, b)``.

    The system is ``[[Phi^T Phi + I/gamma, Phi^T 1], [1^T Phi, n]]``. A
    ``jitter`` multiple of the identity is added only if the plain solve fails.
    """
    Phi = np.atleast_2d(np.asarray(Phi, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, h = Phi.shape
    if n < 2 or h < 1:
        raise ValueError(f"need n >= 2 and h >= 1, got {Phi.shape}")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    ones = np.ones(n)
    A = np.empty((h + 1, h + 1))
    A[:h, :h] = Phi.T @ Phi
    A[np.arange(h), np.arange(h)] += 1.0 / gamma
    A[:h, h] = A[h, :h] = Phi.T @ ones
    A[h, h] = n
    rhs = np.append(Phi.T @ y, y.sum())
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.solve(A + jitter * np.eye(h + 1), rhs)
    sol += np.linalg.lstsq(A, rhs - A @ sol, rcond=None)[0]
    return PrimalModel(sol[:h], float(sol[h]), map_ref)
