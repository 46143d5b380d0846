"""Explicit kernel feature maps: random Fourier features and Nystrom.

Both maps approximate the Gaussian kernel of :mod:`nkm.kernels`. Inputs may
be a single vector ``(d,)`` or a batch ``(n, d)``; outputs follow suit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import kernel_matrix


def _as_batch(x, d):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"dimension mismatch: map expects d={d}, got input shape {x.shape}")
    return X, single


@dataclass(frozen=True, eq=False)
class RFFMap:
    """Frozen random Fourier feature map.

    ``zeta`` holds ``D`` frequency rows drawn i.i.d. from ``N(0, sigma^-2 I_d)``.
    The output is interleaved ``[cos z_1, sin z_1, ..., cos z_D, sin z_D] / sqrt(D)``
    with ``z_i = zeta_i^T x``.
    """

    zeta: np.ndarray
    sigma: float
    seed: int

    def __post_init__(self):
        self.zeta.setflags(write=False)

    @property
    def D(self) -> int:
        return self.zeta.shape[0]

    @property
    def d(self) -> int:
        return self.zeta.shape[1]

    @property
    def out_dim(self) -> int:
        return 2 * self.D


def rff_new(d: int, D: int, sigma: float, seed: int) -> RFFMap:
    if d < 1 or D < 1:
        raise ValueError(f"d and D must be >= 1, got d={d}, D={D}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    rng = np.random.default_rng(seed)
    zeta = rng.standard_normal((D, d)) / sigma
    return RFFMap(zeta, float(sigma), int(seed))


def rff_project(m: RFFMap, X) -> np.ndarray:
    """Frequency projections ``Z = X zeta^T`` for a batch."""
    return X @ m.zeta.T


def rff_from_projection(Z: np.ndarray) -> np.ndarray:
    n, D = Z.shape
    out = np.empty((n, 2 * D))
    scale = 1.0 / np.sqrt(D)
    out[:, 0::2] = np.cos(Z) * scale
    out[:, 1::2] = np.sin(Z) * scale
    return out


def rff_apply(m: RFFMap, x) -> np.ndarray:
    X, single = _as_batch(x, m.d)
    out = rff_from_projection(rff_project(m, X))
    return out[0] if single else out


def rff_apply_grad(m: RFFMap, x) -> np.ndarray:
    """Jacobian of :func:`rff_apply` at a single point, shape ``(2D, d)``."""
    X, single = _as_batch(x, m.d)
    if not single:
        raise ValueError("rff_apply_grad takes a single vector")
    z = m.zeta @ X[0]
    scale = 1.0 / np.sqrt(m.D)
    J = np.empty((2 * m.D, m.d))
    J[0::2] = (-np.sin(z) * scale)[:, None] * m.zeta
    J[1::2] = (np.cos(z) * scale)[:, None] * m.zeta
    return J


def rff_backward(m: RFFMap, Z: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product: gradient w.r.t. the map input given ``dL/d(out)``.

    ``Z`` is the cached projection from the forward pass.
    """
    scale = 1.0 / np.sqrt(m.D)
    gZ = (np.cos(Z) * grad_out[:, 1::2] - np.sin(Z) * grad_out[:, 0::2]) * scale
    return gZ @ m.zeta


@dataclass(frozen=True, eq=False)
class NystromMap:
    """Nystrom map built from the eigendecomposition of the prototype Gram matrix.

    Only the ``r`` eigenpairs with ``lambda > tol * lambda_1`` are kept,
    sorted by descending eigenvalue; ``U`` is ``(m, r)``.
    """

    prototypes: np.ndarray
    lam: np.ndarray
    U: np.ndarray
    sigma: float
    seed: int = 0

    @property
    def m(self) -> int:
        return self.prototypes.shape[0]

    @property
    def rank(self) -> int:
        return self.lam.shape[0]

    @property
    def d(self) -> int:
        return self.prototypes.shape[1]


def nystrom_new(prototypes, sigma: float, rel_tol: float = 1e-10, seed: int = 0) -> NystromMap:
    P = np.atleast_2d(np.asarray(prototypes, dtype=np.float64))
    if P.shape[0] < 1:
        raise ValueError("need at least one prototype")
    Omega = kernel_matrix(P, P, sigma)
    try:
        lam, U = np.linalg.eigh(Omega)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(lam)[::-1]
    lam, U = lam[order], U[:, order]
    keep = lam > rel_tol * lam[0]
    return NystromMap(P.copy(), lam[keep].copy(), U[:, keep].copy(), float(sigma), int(seed))


def select_prototypes(X, m: int, seed: int) -> np.ndarray:
    """Uniform random subsample of ``m`` rows (without replacement), original order kept."""
    X = np.asarray(X)
    if not 1 <= m <= X.shape[0]:
        raise ValueError(f"m must be in [1, {X.shape[0]}], got {m}")
    idx = np.sort(np.random.default_rng(seed).choice(X.shape[0], size=m, replace=False))
    return X[idx]


def nystrom_apply(m: NystromMap, x) -> np.ndarray:
    """``phi_i(x) = lambda_i^{-1/2} sum_k u_ki K(x_k, x)`` for the kept components."""
    X, single = _as_batch(x, m.d)
    K = kernel_matrix(X, m.prototypes, m.sigma)
    out = (K @ m.U) / np.sqrt(m.lam)
    return out[0] if single else out
