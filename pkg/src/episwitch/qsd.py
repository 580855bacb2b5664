"""Quasi-stationary distributions and extinction rates on the enumerated survival set."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit

from .errors import DomainError, SizeError
from .model import ModelSpec
from .pdmp import DEFAULT_H_MAX, simulate_pdmp, uniform_simplex
from .rng import INITIAL, RngStream

DEFAULT_CAP = 5_000_000
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000_000
_BLOCK = 256  # power steps between residual checks
LAZY = 1.05  # iterate with gamma * LAZY so that P has a positive diagonal (aperiodic)


@dataclass(frozen=True)
class StateIndex:
    """Survival states ``(n, env)`` with ``n != 0``, ordered lexicographically in ``(n, env)``.

    ``index = (flat(n) - 1) * E + env`` where ``flat`` is the mixed-radix
    rank of ``n`` with ``n_1`` most significant.
    """

    sizes: np.ndarray
    num_env: int

    @property
    def strides(self) -> np.ndarray:
        radix = self.sizes + 1
        return np.concatenate([np.cumprod(radix[::-1])[::-1][1:], [1]]).astype(np.int64)

    @property
    def num_counts(self) -> int:
        return int(np.prod(self.sizes + 1)) - 1

    @property
    def size(self) -> int:
        return self.num_counts * self.num_env

    def index(self, n, env) -> int:
        n = np.asarray(n, dtype=np.int64)
        if n.shape != self.sizes.shape or np.any(n < 0) or np.any(n > self.sizes) or not n.any():
            raise DomainError(f"{n} is not a surviving count vector")
        if not 0 <= env < self.num_env:
            raise DomainError(f"environment {env} out of range")
        return int((n @ self.strides - 1) * self.num_env + env)

    def state(self, idx):
        if not 0 <= idx < self.size:
            raise DomainError(f"index {idx} out of range")
        flat, env = divmod(int(idx), self.num_env)
        return (flat + 1) // self.strides % (self.sizes + 1), env

    def counts(self) -> np.ndarray:
        """Count vectors of all survival states in index order, one per ``n`` (shape ``(M / E, d)``)."""
        flat = np.arange(1, self.num_counts + 1, dtype=np.int64)
        return flat[:, None] // self.strides % (self.sizes + 1)

    def norms(self) -> np.ndarray:
        """``|x|_1`` of every state in index order, ``x_i = n_i / K_i``."""
        return np.repeat((self.counts() / self.sizes).sum(axis=1), self.num_env)


def enumerate_states(spec: ModelSpec, K, sizes, cap=DEFAULT_CAP) -> StateIndex:
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.shape != (spec.d,) or np.any(sizes <= 0) or sizes.sum() != K:
        raise DomainError(f"group sizes {sizes} must be positive and sum to K={K}")
    M = (math.prod(int(k) + 1 for k in sizes) - 1) * spec.num_env
    if M > cap:
        raise SizeError(f"state space has {M} states, above the cap {cap}", M)
    return StateIndex(sizes, spec.num_env)


@dataclass
class KilledGenerator:
    matrix: sp.csr_matrix  # rates among survival states, diagonal included
    flux: np.ndarray  # rate into {0} x E from each state
    gamma: float  # max |diagonal|


def _rates_by_state(spec, index, x):
    """Infection, cure and switch rates for every count vector and environment."""
    m, d, E = x.shape[0], spec.d, spec.num_env
    b = np.empty((E, m, d))
    dc = np.empty((E, m, d))
    q = np.empty((m, E, E))
    if spec.is_lajmanovich_yorke:
        for e in range(E):
            b[e] = x @ spec.infection[e].T
            dc[e] = spec.cure[e]
    else:
        for e in range(E):
            for j in range(m):
                b[e, j] = spec.infection_rates(x[j], e)
                dc[e, j] = spec.cure_rates(x[j], e)
    if spec.has_constant_switch:
        q[:] = spec.switch_matrix(np.zeros(d))
    elif not callable(spec.switch):
        s = x @ spec.group_fractions
        q[:] = spec.switch.base + s[:, None, None] * spec.switch.slope
    else:
        for j in range(m):
            q[j] = spec.switch_matrix(x[j])
    return b, dc, q


def build_killed_generator(spec: ModelSpec, K, sizes, index: StateIndex | None = None) -> KilledGenerator:
    index = index or enumerate_states(spec, K, sizes)
    sizes = index.sizes
    E, d = index.num_env, spec.d
    n = index.counts()
    x = n / sizes
    flat = np.arange(1, index.num_counts + 1, dtype=np.int64)
    b, dc, q = _rates_by_state(spec, index, x)
    rows, cols, vals = [], [], []
    flux = np.zeros(index.size)
    out = np.zeros(index.size)
    strides = index.strides

    for e in range(E):
        src = (flat - 1) * E + e
        for i in range(d):
            up = sizes[i] * (1.0 - x[:, i]) * b[e, :, i]
            ok = (n[:, i] < sizes[i]) & (up > 0)
            rows.append(src[ok])
            cols.append((flat[ok] + strides[i] - 1) * E + e)
            vals.append(up[ok])
            out[src[ok]] += up[ok]

            down = n[:, i] * dc[e, :, i]
            ok = down > 0
            to_zero = ok & (flat - strides[i] == 0)
            inner = ok & ~to_zero
            rows.append(src[inner])
            cols.append((flat[inner] - strides[i] - 1) * E + e)
            vals.append(down[inner])
            out[src[ok]] += down[ok]
            flux[src[to_zero]] += down[to_zero]
        for e2 in range(E):
            if e2 == e:
                continue
            r = q[:, e, e2]
            ok = r > 0
            rows.append(src[ok])
            cols.append((flat[ok] - 1) * E + e2)
            vals.append(r[ok])
            out[src[ok]] += r[ok]

    diag = np.arange(index.size)
    rows.append(diag)
    cols.append(diag)
    vals.append(-out)
    L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(index.size, index.size))
    L.sum_duplicates()
    L.sort_indices()
    return KilledGenerator(L, flux, float(out.max()))


@njit(cache=True, nogil=True)
def _power_steps(indptr, indices, data, v, w, steps):
    """``steps`` iterations of ``v <- v P / |v P|_1`` with ``P^T`` given in CSR form."""
    m = v.shape[0]
    for _ in range(steps):
        tot = 0.0
        for j in range(m):
            s = 0.0
            for k in range(indptr[j], indptr[j + 1]):
                s += data[k] * v[indices[k]]
            w[j] = s
            tot += s
        for j in range(m):
            v[j] = w[j] / tot


@dataclass
class QsdResult:
    weights: np.ndarray
    rate: float  # extinction rate lambda^K
    residual: float  # |mu L + lambda mu|_1
    iterations: int
    converged: bool
    index: StateIndex

    @property
    def sizes(self):
        return self.index.sizes

    @property
    def mean_extinction_time(self) -> float:
        return 1.0 / self.rate

    def count_marginal(self) -> np.ndarray:
        """Weights summed over environments, in the order of ``index.counts()``."""
        return self.weights.reshape(-1, self.index.num_env).sum(axis=1)

    def to_csv(self, path):
        n = self.index.counts()
        E = self.index.num_env
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"n_{i + 1}" for i in range(n.shape[1])] + ["env", "weight"])
            for k, wt in enumerate(self.weights):
                w.writerow([*n[k // E].tolist(), k % E + 1, repr(float(wt))])


def _residual(L, v, flux):
    lam = float(v @ flux)
    return lam, float(np.abs(L.T @ v + lam * v).sum())


def compute_qsd(spec: ModelSpec, K, sizes, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                generator: KilledGenerator | None = None, init=None) -> QsdResult:
    """Left Perron vector of ``P = I + L / (c gamma)`` by power iteration, ``c = LAZY``.

    ``c > 1`` keeps the diagonal of ``P`` positive, which rules out periodic
    oscillation of the iterates.  The extinction rate is ``c gamma (1 - rho)``
    with ``rho`` the eigenvalue of ``P``; it is evaluated as ``mu . flux``,
    which is the same quantity for a normalised ``mu`` without the
    cancellation in ``1 - rho``.  ``init`` is an optional starting vector
    (see :func:`transfer_weights`).
    """
    index = enumerate_states(spec, K, sizes)
    gen = generator or build_killed_generator(spec, K, sizes, index)
    L = gen.matrix
    PT = (sp.identity(index.size, format="csr") + L / (LAZY * gen.gamma)).T.tocsr()
    PT.sort_indices()
    indptr, indices, data = PT.indptr.astype(np.int64), PT.indices.astype(np.int64), PT.data
    v = np.full(index.size, 1.0 / index.size) if init is None else np.array(init, dtype=float)
    if v.shape != (index.size,) or np.any(v < 0) or v.sum() <= 0:
        raise DomainError("initial vector must be a nonnegative vector on the state space")
    v /= v.sum()
    w = np.empty_like(v)
    it = 0
    lam, res = _residual(L, v, gen.flux)
    while res >= tol and it < max_iter:
        steps = min(_BLOCK, max_iter - it)
        _power_steps(indptr, indices, data, v, w, steps)
        it += steps
        lam, res = _residual(L, v, gen.flux)
    v /= v.sum()
    return QsdResult(v, lam, res, it, res < tol, index)


def transfer_weights(result: QsdResult, index: StateIndex) -> np.ndarray:
    """Starting vector on ``index`` from a QSD on a coarser grid (nearest state at equal ``x``)."""
    old = result.index
    if old.num_env != index.num_env or old.sizes.shape != index.sizes.shape:
        raise DomainError("incompatible state spaces")
    n = index.counts()
    m = np.clip(np.rint(n * old.sizes / index.sizes), 0, old.sizes).astype(np.int64)
    zero = ~m.any(axis=1)
    m[zero, np.argmax(n[zero], axis=1)] = 1
    rows = (m @ old.strides - 1) * old.num_env
    E = index.num_env
    v = result.weights[(rows[:, None] + np.arange(E)).reshape(-1)]
    return v / v.sum()


def qsd_ladder(spec: ModelSpec, Ks, sizes_for, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """QSDs for increasing ``Ks``, each warm-started from the previous one."""
    out, prev = [], None
    for K in Ks:
        sizes = sizes_for(K)
        init = None if prev is None else transfer_weights(prev, enumerate_states(spec, K, sizes))
        prev = compute_qsd(spec, K, sizes, tol, max_iter, init=init)
        out.append(prev)
    return out


def qsd_moment(result: QsdResult, p) -> float:
    """``sum mu(n, env) |x|_1^(-p)``."""
    return float(result.weights @ result.index.norms() ** (-float(p)))


def qsd_mass_below(result: QsdResult, eps) -> float:
    """``mu{|x|_1 < eps}``."""
    if eps <= 0:
        raise DomainError("eps must be positive")
    return float(result.weights[result.index.norms() < eps].sum())


def sample_qsd(result: QsdResult, gen, size):
    """Independent draws ``(counts (size, d), envs (size,))`` from the QSD."""
    cdf = np.cumsum(result.weights)
    k = np.minimum(np.searchsorted(cdf, gen.random(size) * cdf[-1], side="right"), result.weights.size - 1)
    E = result.index.num_env
    return result.index.counts()[k // E], k % E


# -- histograms -------------------------------------------------------------------


@dataclass
class Histogram:
    """Mass per environment on a regular grid of ``[0, 1]^d`` (``weights`` has shape ``(E, bins, ..., bins)``)."""

    weights: np.ndarray
    bins: int

    @property
    def edges(self):
        return np.linspace(0.0, 1.0, self.bins + 1)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def l1_distance(self, other: "Histogram") -> float:
        if self.weights.shape != other.weights.shape:
            raise DomainError("histograms are binned differently")
        return float(np.abs(self.weights - other.weights).sum())


def _histogram(x, env, weights, d, E, bins):
    edges = [np.linspace(0.0, 1.0, bins + 1)] * d
    out = np.zeros((E,) + (bins,) * d)
    for e in range(E):
        sel = env == e
        if sel.any():
            out[e] = np.histogramdd(x[sel], bins=edges, weights=weights[sel])[0]
    return out


def bin_qsd(result: QsdResult, bins=50) -> Histogram:
    idx = result.index
    x = idx.counts() / idx.sizes
    E = idx.num_env
    xs = np.repeat(x, E, axis=0)
    envs = np.tile(np.arange(E), x.shape[0])
    return Histogram(_histogram(xs, envs, result.weights, x.shape[1], E, bins), bins)


def pdmp_stationary_estimate(spec: ModelSpec, T, burn_in, output_dt, rng: RngStream, bins=50,
                             x0=None, env0=None, h_max=DEFAULT_H_MAX) -> Histogram:
    """Occupation measure of one long PDMP path after ``burn_in``, sampled every ``output_dt``."""
    if spec.d > 2:
        raise DomainError("occupation histograms are limited to d <= 2")
    if not T > burn_in >= 0:
        raise DomainError("need T > burn_in >= 0")
    gen = rng.generator(INITIAL)
    if x0 is None:
        x0 = 0.5 * uniform_simplex(gen, spec.d) + 0.25
    if env0 is None:
        env0 = int(gen.integers(0, spec.num_env))
    path = simulate_pdmp(spec, x0, env0, T, output_dt, rng, h_max)
    keep = path.times >= burn_in
    x, env = path.x[keep], path.env[keep]
    w = np.full(x.shape[0], 1.0 / x.shape[0])
    return Histogram(_histogram(x, env, w, spec.d, spec.num_env, bins), bins)
