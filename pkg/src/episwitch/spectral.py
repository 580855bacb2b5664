"""Perron eigenpairs of Metzler matrices and related small dense kernels."""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError, UnsupportedModelError
from .model import ModelSpec, is_irreducible, is_metzler, linearizations

DEFAULT_TOL = 1e-12
MAX_ITER = 100_000


@dataclass(frozen=True)
class PerronPair:
    value: float
    vector: np.ndarray  # positive, sums to one
    residual: float
    iterations: int


def perron(A, tol=DEFAULT_TOL, max_iter=MAX_ITER) -> PerronPair:
    """Principal eigenvalue and simplex-normalised eigenvector of an irreducible Metzler matrix.

    Power iteration on ``A + s I`` with ``s = 1 + max_i |A_ii|``, which is
    nonnegative with a positive diagonal, hence primitive.  Stops when the
    l1 residual ``|A v - value v|_1`` drops below ``tol``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {A.shape}")
    if not is_metzler(A):
        raise DomainError("matrix is not Metzler")
    if not is_irreducible(A):
        raise DomainError("matrix is reducible")
    n = A.shape[0]
    if n == 1:
        return PerronPair(float(A[0, 0]), np.ones(1), 0.0, 0)
    s = 1.0 + np.abs(np.diag(A)).max()
    M = A + s * np.eye(n)
    v = np.full(n, 1.0 / n)
    res = np.inf
    for it in range(1, max_iter + 1):
        w = M @ v
        growth = w.sum()
        w /= growth
        value = growth - s
        if it % 8 == 0 or it < 8:
            res = np.abs(A @ w - value * w).sum()
            if res < tol:
                return PerronPair(float(value), w, float(res), it)
        v = w
    raise NumericalError(f"power iteration did not converge in {max_iter} iterations (residual {res:.3e})")


def stationary_env(Q, tol=DEFAULT_TOL) -> np.ndarray:
    """Stationary law ``pi Q = 0`` of an irreducible rate matrix."""
    Q = np.asarray(Q, dtype=float)
    E = Q.shape[0]
    if Q.shape != (E, E) or not is_metzler(Q) or np.abs(Q.sum(axis=1)).max() > 1e-9:
        raise DomainError("not a rate matrix")
    if not is_irreducible(Q):
        raise DomainError("rate matrix is reducible")
    if E == 1:
        return np.ones(1)
    M = Q.T.copy()
    M[-1] = 1.0
    rhs = np.zeros(E)
    rhs[-1] = 1.0
    pi = np.linalg.solve(M, rhs)
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    if np.abs(pi @ Q).sum() > max(tol, 1e-12 * np.abs(Q).max()):
        raise NumericalError("stationary law residual above tolerance")
    return pi


def _one_dimensional(spec: ModelSpec):
    if spec.d != 1 or not spec.has_constant_switch:
        raise UnsupportedModelError("exact moment exponent needs d = 1 and constant switch rates")
    return linearizations(spec)[:, 0, 0], spec.switch_matrix(np.zeros(1))


def g_exact_1d(spec: ModelSpec, p, tol=DEFAULT_TOL) -> float:
    """Moment Lyapunov exponent of a one-group model: Perron value of ``Q + p diag(A)``."""
    a, Q = _one_dimensional(spec)
    return perron(Q + p * np.diag(a), tol=tol).value


def lambda_exact_1d(spec: ModelSpec) -> float:
    """Lyapunov exponent of a one-group model, ``sum_env pi_env A_env``."""
    a, Q = _one_dimensional(spec)
    return float(stationary_env(Q) @ a)


def hilbert_distance(x, y) -> float:
    """Hilbert projective distance ``log(max_i(x_i/y_i) / min_i(x_i/y_i))``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DomainError("vectors must have the same shape")
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("Hilbert distance needs strictly positive vectors")
    r = np.log(x) - np.log(y)
    return float(max(r.max() - r.min(), 0.0))
