"""Independent reference computations used by the tests.

Nothing here calls into the package's numerical kernels; every value is
obtained from dense linear algebra or closed forms.
"""

import math

import numpy as np
import scipy.linalg as sla


def quadratic_root(b, c):
    """Largest root of ``z^2 + b z + c``."""
    return (-b + math.sqrt(b * b - 4 * c)) / 2


def g_two_env(a1, a2, q1, q2, p):
    """Largest eigenvalue of ``[[p a1 - q1, q1], [q2, p a2 - q2]]`` in closed form."""
    tr = p * (a1 + a2) - q1 - q2
    det = (p * a1 - q1) * (p * a2 - q2) - q1 * q2
    return quadratic_root(-tr, det)


def lambda_two_env(a1, a2, q1, q2):
    return (q2 * a1 + q1 * a2) / (q1 + q2)


def pstar_two_env(b1, b2, cure, q1, q2):
    """Threshold exponent of a one-group two-environment model with ``b1 > cure > b2``."""
    return q2 / (cure - b2) - q1 / (b1 - cure)


def killed_generator_1d(b_env, cure, Q, K):
    """Dense killed generator of a one-group model with ``b(x, env) = b_env[env] * x``.

    States ordered ``(n, env)`` with ``n = 1..K``, index ``(n - 1) * E + env``.
    """
    E = len(b_env)
    M = K * E
    L = np.zeros((M, M))
    flux = np.zeros(M)
    for n in range(1, K + 1):
        x = n / K
        for e in range(E):
            i = (n - 1) * E + e
            up = K * (1 - x) * b_env[e] * x
            down = n * cure
            if n < K:
                L[i, i + E] += up
            if n > 1:
                L[i, i - E] += down
            else:
                flux[i] += down
            for e2 in range(E):
                if e2 != e:
                    L[i, (n - 1) * E + e2] += Q[e][e2]
            L[i, i] -= up + down + sum(Q[e][e2] for e2 in range(E) if e2 != e)
    return L, flux


def dense_qsd(L):
    """Extinction rate and QSD from a full eigendecomposition of ``L^T``."""
    w, V = sla.eig(L.T)
    k = int(np.argmax(w.real))
    v = np.abs(V[:, k].real)
    return -float(w[k].real), v / v.sum()


def mean_extinction_times(L):
    """``u`` solving ``L u = -1``: expected absorption time from every survival state."""
    return np.linalg.solve(L, -np.ones(L.shape[0]))


def random_metzler(gen, d, density=1.0):
    A = gen.random((d, d)) * (gen.random((d, d)) < density)
    np.fill_diagonal(A, 0.0)
    A[np.arange(d), (np.arange(d) + 1) % d] += 0.1  # cycle keeps it irreducible
    return A - np.diag(gen.random(d) * 3)


def expm(A):
    """Matrix exponential by scaling and squaring with a 13th-order Pade approximant (scipy)."""
    return sla.expm(A)
