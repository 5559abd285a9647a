"""Proximal operators and a stable-RPCA solver.

``rpca_solve`` minimises

    ||B||_* + lam * ||T||_1 + (mu / 2) * ||N||_F^2   s.t.  D = B + T + N

by inexact augmented-Lagrangian alternation with a geometrically growing
penalty ``alpha``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np


class RPCAError(RuntimeError):
    pass


def svt(M, tau):
    """Singular value thresholding, the prox of ``tau * ||.||_*``."""
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise RPCAError(f"SVD failed: {exc}") from exc
    s = np.maximum(s - tau, 0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep]


def soft_threshold(M, tau):
    """Elementwise shrinkage, the prox of ``tau * ||.||_1``."""
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    return np.sign(M) * np.maximum(np.abs(M) - tau, 0)


@dataclass
class RPCAConfig:
    """Solver weights.  ``None`` means "derive from D":

    * ``lam = 1 / sqrt(max(m, n))``
    * ``mu = 10 * lam``
    * ``alpha = 1.25 / ||D||_2`` (initial penalty, grown by ``rho`` per iteration)
    """

    lam: float = None
    mu: float = None
    alpha: float = None
    rho: float = 1.5
    alpha_max: float = 1e10
    max_iters: int = 500
    tol: float = 1e-7

    def resolve(self, D):
        m, n = D.shape
        lam = self.lam if self.lam is not None else 1.0 / np.sqrt(max(m, n))
        mu = self.mu if self.mu is not None else 10.0 * lam
        if self.alpha is not None:
            alpha = self.alpha
        else:
            spec = np.linalg.norm(D, 2)
            alpha = 1.25 / spec if spec > 0 else 1.0
        for name, v in (("lam", lam), ("mu", mu), ("alpha", alpha), ("tol", self.tol)):
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.rho < 1:
            raise ValueError(f"rho must be >= 1, got {self.rho}")
        return lam, mu, alpha


@dataclass
class RPCAResult:
    B: np.ndarray
    T: np.ndarray
    N: np.ndarray
    iterations: int
    residual_history: list = field(default_factory=list)
    converged: bool = True


def rpca_solve(D, config=None):
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2:
        raise ValueError(f"D must be a matrix, got shape {D.shape}")
    if not np.all(np.isfinite(D)):
        raise ValueError("D contains non-finite values")
    config = config or RPCAConfig()
    lam, mu, alpha = config.resolve(D)

    B = np.zeros_like(D)
    T = np.zeros_like(D)
    N = np.zeros_like(D)
    Y = np.zeros_like(D)
    dnorm = np.linalg.norm(D)
    if dnorm == 0:
        return RPCAResult(B, T, N, 0, [0.0], True)

    history = []
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        Ya = Y / alpha
        B = svt(D - T - N + Ya, 1.0 / alpha)
        T = soft_threshold(D - B - N + Ya, lam / alpha)
        N = (alpha / (mu + alpha)) * (D - B - T + Ya)
        R = D - B - T - N
        Y = Y + alpha * R
        res = np.linalg.norm(R) / dnorm
        history.append(float(res))
        if res <= config.tol:
            converged = True
            break
        alpha = min(alpha * config.rho, config.alpha_max)
    if not converged:
        warnings.warn(f"rpca_solve did not reach tol={config.tol} in {config.max_iters} iterations",
                      RuntimeWarning, stacklevel=2)
    return RPCAResult(B, T, N, it, history, converged)
