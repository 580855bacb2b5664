"""Lyapunov and moment Lyapunov exponents of the linearised process, and threshold exponents.

The moment exponent ``g(p)`` is the exponential growth rate of ``E |Y_t|^p``.
For one-group models with constant switching it is the Perron value of
``Q + p diag(A)`` (see :func:`episwitch.spectral.g_exact_1d`); otherwise it is
estimated by Monte Carlo from independent angular paths.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .chain import map_ordered
from .errors import DomainError, UnsupportedModelError
from .model import ModelSpec, linearizations
from .pdmp import DEFAULT_H_MAX, angular_at, step_size, uniform_simplex
from .rng import BOOTSTRAP, ENVIRONMENT, INITIAL, RngStream
from .spectral import g_exact_1d, lambda_exact_1d, perron

DEFAULT_HORIZONS = (25.0, 50.0, 100.0, 200.0)
DEFAULT_P_MAX = 20.0
MIN_ESS = 10.0


@dataclass
class LambdaEstimate:
    value: float
    half_width: float  # 95% batch-means half-width
    T: float
    burn_in: float
    batch_means: np.ndarray

    @property
    def interval(self):
        return self.value - self.half_width, self.value + self.half_width


def estimate_lambda(spec: ModelSpec, T=1e5, burn_in=100.0, n_batches=20, rng: RngStream = RngStream(0),
                    h_max=DEFAULT_H_MAX) -> LambdaEstimate:
    """Time average of ``<1, A theta>`` along one long angular path."""
    if not T > burn_in >= 0:
        raise DomainError("need T > burn_in >= 0")
    if n_batches < 10:
        raise DomainError("n_batches must be at least 10")
    gen0 = rng.generator(INITIAL)
    th0 = uniform_simplex(gen0, spec.d)
    env0 = int(gen0.integers(0, spec.num_env))
    width = (T - burn_in) / n_batches
    times = burn_in + width * np.arange(n_batches + 1)
    times[-1] = T
    A = np.ascontiguousarray(linearizations(spec))
    Q0 = spec.switch_matrix(np.zeros(spec.d))
    _, S, _, _ = angular_at(A, Q0, th0, env0, times, rng.generator(ENVIRONMENT), step_size(spec, h_max))
    means = np.diff(S) / np.diff(times)
    value = (S[-1] - S[0]) / (T - burn_in)
    half = stats.t.ppf(0.975, n_batches - 1) * means.std(ddof=1) / math.sqrt(n_batches)
    return LambdaEstimate(float(value), float(max(half, np.finfo(float).tiny)), float(T), float(burn_in), means)


@dataclass
class GEstimate:
    p: float
    value: float
    se: float
    horizons: np.ndarray
    finite_horizon: np.ndarray  # log-mean-exp estimate at each horizon, divided by t
    ess: float  # effective sample size of the weights at the largest horizon
    heavy_tail: bool


class MomentSampler:
    """Values of ``S(t) = log|Y_t| - log|Y_0|`` at a horizon ladder for independent replicates.

    Replicate ``j`` starts from a uniform direction and a uniform environment
    and uses the stream ``rng.child(j)``.  The sample does not depend on
    ``p``, so one sampler serves a whole ``p`` grid.
    """

    def __init__(self, spec: ModelSpec, horizons=DEFAULT_HORIZONS, n_rep=2000, rng: RngStream = RngStream(0),
                 n_boot=200, h_max=DEFAULT_H_MAX, workers=None):
        horizons = np.sort(np.asarray(horizons, dtype=float))
        if horizons.size < 3:
            raise DomainError("need at least three horizons")
        if n_rep < 100:
            raise DomainError("n_rep must be at least 100")
        self.horizons = horizons
        self.n_rep = int(n_rep)
        A = np.ascontiguousarray(linearizations(spec))
        Q0 = spec.switch_matrix(np.zeros(spec.d))
        h = step_size(spec, h_max)

        def one(j):
            child = rng.child(j)
            g = child.generator(INITIAL)
            th0 = uniform_simplex(g, spec.d)
            env0 = int(g.integers(0, spec.num_env))
            return angular_at(A, Q0, th0, env0, horizons, child.generator(ENVIRONMENT), h)[1]

        self.S = np.array(map_ordered(one, range(self.n_rep), workers))
        self.boot_index = rng.generator(BOOTSTRAP).integers(0, self.n_rep, size=(n_boot, self.n_rep))

    def _finite(self, p, S):
        n = S.shape[-2]
        return (logsumexp(p * S, axis=-2) - math.log(n)) / self.horizons

    def _intercept_weights(self, w):
        # weighted least squares of f(t) on (1, 1/t); the intercept is linear in f
        X = np.column_stack([np.ones_like(self.horizons), 1.0 / self.horizons])
        XtW = X.T * w
        return np.linalg.solve(XtW @ X, XtW)[0]

    def estimate(self, p) -> GEstimate:
        p = float(p)
        if p == 0.0:
            z = np.zeros_like(self.horizons)
            return GEstimate(0.0, 0.0, 0.0, self.horizons, z, float(self.n_rep), False)
        f = self._finite(p, self.S)
        fb = self._finite(p, self.S[self.boot_index])  # (n_boot, n_h)
        var = fb.var(axis=0, ddof=1)
        w = 1.0 / np.maximum(var, 1e-300) if np.all(var > 0) else np.ones_like(var)
        w = w / w.max()
        c = self._intercept_weights(w)
        value = float(f @ c)
        boot = fb @ c
        se = float(np.std(boot, ddof=1))
        lw = p * self.S[:, -1]
        lw = lw - lw.max()
        ess = float(np.exp(2 * logsumexp(lw) - logsumexp(2 * lw)))
        heavy = ess < MIN_ESS
        if heavy:
            warnings.warn(f"effective sample size {ess:.1f} < {MIN_ESS:g} at p={p}", RuntimeWarning, stacklevel=2)
        return GEstimate(p, value, se, self.horizons, f, ess, heavy)


def estimate_g(spec: ModelSpec, p, horizons=DEFAULT_HORIZONS, n_rep=2000, rng: RngStream = RngStream(0),
               **kwargs) -> GEstimate:
    """Monte Carlo moment exponent: log-mean-exp at each horizon, extrapolated in ``1/t``."""
    return MomentSampler(spec, horizons, n_rep, rng, **kwargs).estimate(p)


def exact_available(spec: ModelSpec) -> bool:
    return spec.d == 1 and spec.has_constant_switch


@dataclass
class GCurve:
    p: np.ndarray
    g: np.ndarray
    se: np.ndarray
    method: str  # "exact-1d" or "monte-carlo"
    diagnostics: list = field(default_factory=list)

    def rows(self):
        return [(float(p), float(g), float(s), self.method) for p, g, s in zip(self.p, self.g, self.se)]

    def second_differences(self):
        return self.g[2:] - 2 * self.g[1:-1] + self.g[:-2]


def g_curve(spec: ModelSpec, ps, method="auto", horizons=DEFAULT_HORIZONS, n_rep=2000,
            rng: RngStream = RngStream(0), **kwargs) -> GCurve:
    ps = np.asarray(ps, dtype=float)
    if method == "auto":
        method = "exact-1d" if exact_available(spec) else "monte-carlo"
    if method == "exact-1d":
        if not exact_available(spec):
            raise UnsupportedModelError("exact g needs d = 1 and constant switch rates")
        g = np.array([g_exact_1d(spec, p) for p in ps])
        return GCurve(ps, g, np.zeros_like(ps), method)
    if method != "monte-carlo":
        raise DomainError(f"unknown method {method!r}")
    sampler = MomentSampler(spec, horizons, n_rep, rng, **kwargs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est = [sampler.estimate(p) for p in ps]
    return GCurve(ps, np.array([e.value for e in est]), np.array([e.se for e in est]), method, est)


# -- threshold exponents --------------------------------------------------------


@dataclass
class MonteCarloParams:
    horizons: tuple = DEFAULT_HORIZONS
    n_rep: int = 2000
    n_boot: int = 200
    lambda_T: float = 1e5
    lambda_burn_in: float = 100.0
    n_batches: int = 20
    seed: int = 0
    h_max: float = DEFAULT_H_MAX


@dataclass
class ThresholdResult:
    status: str  # "finite", "not-found-below-p_max", "not-applicable" or "uncertain"
    value: float | None
    bracket: tuple | None
    method: str
    message: str = ""

    def to_json(self):
        return {"status": self.status, "value": self.value,
                "bracket": list(self.bracket) if self.bracket is not None else None,
                "method": self.method, "message": self.message}


def _lyapunov_sign(spec, mc: MonteCarloParams):
    """+1, -1 or 0 (indistinguishable from zero), plus a description."""
    if exact_available(spec):
        lam = lambda_exact_1d(spec)
        if abs(lam) <= 1e-12:
            return 0, f"Lyapunov exponent {lam:.3g} is zero"
        return (1 if lam > 0 else -1), f"Lyapunov exponent {lam:.6g} (exact)"
    est = estimate_lambda(spec, mc.lambda_T, mc.lambda_burn_in, mc.n_batches, RngStream(mc.seed, 1), mc.h_max)
    text = f"Lyapunov exponent {est.value:.4g} +- {est.half_width:.2g}"
    if est.value > 2 * est.half_width:
        return 1, text
    if est.value < -2 * est.half_width:
        return -1, text
    return 0, text


def _threshold(spec, sign, p_max, tol, mc):
    """Smallest p in (0, p_max] with g(sign * p) > 0, by bisection."""
    if exact_available(spec):
        method = "exact-1d"

        def positive(p):
            return g_exact_1d(spec, sign * p) > 0

    else:
        method = "monte-carlo"
        sampler = MomentSampler(spec, mc.horizons, mc.n_rep, RngStream(mc.seed, 2), mc.n_boot, mc.h_max)

        def positive(p):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                e = sampler.estimate(sign * p)
            if e.value > 2 * e.se:
                return True
            if e.value < -2 * e.se:
                return False
            return None

    top = positive(p_max)
    if top is None:
        return ThresholdResult("uncertain", None, (0.0, p_max), method, f"sign of g at {sign * p_max} unresolved")
    if not top:
        return ThresholdResult("not-found-below-p_max", None, None, method, f"g({sign * p_max:g}) <= 0")
    lo, hi = 0.0, float(p_max)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        s = positive(mid)
        if s is None:
            return ThresholdResult("uncertain", mid, (lo, hi), method, "bisection stopped: sign not resolved at 2 SE")
        if s:
            hi = mid
        else:
            lo = mid
    return ThresholdResult("finite", 0.5 * (lo + hi), (lo, hi), method)


def estimate_pstar(spec: ModelSpec, p_max=DEFAULT_P_MAX, tol=1e-6, mc: MonteCarloParams | None = None):
    """``inf{p > 0 : g(-p) > 0}`` for a persistent model (positive Lyapunov exponent)."""
    mc = mc or MonteCarloParams()
    sign, text = _lyapunov_sign(spec, mc)
    if sign <= 0:
        return ThresholdResult("not-applicable", None, None, "exact-1d" if exact_available(spec) else "monte-carlo",
                               text + ("; critical case not covered" if sign == 0 else "; needs a positive exponent"))
    return _threshold(spec, -1, p_max, tol, mc)


def estimate_pstar_lower(spec: ModelSpec, p_max=DEFAULT_P_MAX, tol=1e-6, mc: MonteCarloParams | None = None):
    """``inf{p > 0 : g(p) > 0}`` for a non-persistent model (negative Lyapunov exponent)."""
    mc = mc or MonteCarloParams()
    sign, text = _lyapunov_sign(spec, mc)
    if sign >= 0:
        return ThresholdResult("not-applicable", None, None, "exact-1d" if exact_available(spec) else "monte-carlo",
                               text + ("; critical case not covered" if sign == 0 else "; needs a negative exponent"))
    return _threshold(spec, 1, p_max, tol, mc)


@dataclass
class AccessibilityResult:
    status: str  # "accessible", "inaccessible", "inaccessible-up-to-p_max" or "undetermined"
    method: str
    detail: str = ""


def probe_zero_accessibility(spec: ModelSpec, p_max=DEFAULT_P_MAX, mc: MonteCarloParams | None = None):
    """Can the linearised process get arbitrarily close to 0?

    A stable environment is sufficient; in one dimension the answer is
    exact; otherwise finiteness of the threshold exponent is used, and a
    negative outcome is never a certificate.
    """
    A = linearizations(spec)
    lams = [perron(a).value for a in A]
    if min(lams) < 0:
        return AccessibilityResult("accessible", "sufficient-condition",
                                   f"environment {int(np.argmin(lams)) + 1} is linearly stable ({min(lams):.4g})")
    if spec.d == 1:
        return AccessibilityResult("inaccessible", "exact-1d", f"min A = {A[:, 0, 0].min():.4g} >= 0")
    mc = mc or MonteCarloParams()
    sign, text = _lyapunov_sign(spec, mc)
    if sign < 0:
        return AccessibilityResult("accessible", "lyapunov-sign", text + "; |Y_t| -> 0")
    if sign == 0:
        return AccessibilityResult("undetermined", "lyapunov-sign", text)
    res = _threshold(spec, -1, p_max, max(1e-3, 0.01 * p_max), mc)
    if res.status == "finite":
        return AccessibilityResult("accessible", "g-curve", f"threshold exponent about {res.value:.3g}")
    if res.status == "not-found-below-p_max":
        return AccessibilityResult("inaccessible-up-to-p_max", "g-curve", res.message)
    return AccessibilityResult("undetermined", "g-curve", res.message)
