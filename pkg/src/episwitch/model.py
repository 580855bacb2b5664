"""Multitype SIS model in a switched environment.

A model is a finite family of environments ``0 .. num_env-1``.  In environment
``env`` a susceptible of group ``i`` is infected at rate ``b_i(x, env)`` and an
infective of group ``i`` is cured at rate ``d_i(x, env)``, where ``x`` is the
vector of infected proportions.  The environment jumps from ``env`` to
``env2`` at rate ``Q(x)[env, env2]``.

Rates come either as arrays (Lajmanovich-Yorke form ``b = C x``, constant
cure rates ``D``, constant or affine ``Q``) or as Python callables.  The array
forms run through compiled kernels; callables run the same kernels in
pure-Python mode.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import DomainError, InconsistencyError, ModelError

CUBE_TOL = 1e-9
FD_STEP = 1e-6
METZLER_TOL = 1e-6
DEFAULT_GRID_RESOLUTION = 21
MAX_GRID_SAMPLES = 100_000
LIPSCHITZ_SAFETY = 1.1


@dataclass(frozen=True)
class AffineSwitch:
    """Switch matrix ``Q(x) = base + s(x) * slope`` with ``s(x) = sum_i alpha_i x_i``.

    ``s`` is the infected fraction of the whole population and lies in
    ``[0, 1]``, so the off-diagonal entries of ``base`` and ``base + slope``
    bound the rates.
    """

    base: np.ndarray
    slope: np.ndarray


def is_irreducible(M, nonnegative=False) -> bool:
    """Irreducibility via strong connectivity of the off-diagonal support graph.

    With ``nonnegative=True`` a 1x1 matrix is irreducible only when its entry
    is positive (the convention for nonnegative matrices); otherwise any 1x1
    matrix is irreducible (the Metzler convention).
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n == 1:
        return bool(M[0, 0] > 0) if nonnegative else True
    adj = (M > 0) & ~np.eye(n, dtype=bool)
    ncomp, _ = connected_components(adj.astype(np.int8), directed=True, connection="strong")
    return ncomp == 1


def is_metzler(M, tol=0.0) -> bool:
    M = np.asarray(M, dtype=float)
    off = M[~np.eye(M.shape[0], dtype=bool)]
    return bool(np.all(off >= -tol))


def _as_rate_matrix(Q, num_env):
    Q = np.array(Q, dtype=float)
    if Q.shape != (num_env, num_env):
        raise ModelError(f"switch matrix must be {num_env}x{num_env}, got {Q.shape}")
    off = ~np.eye(num_env, dtype=bool)
    if np.any(Q[off] < 0):
        raise ModelError("switch matrix has negative off-diagonal entries")
    # the diagonal is redundant; recompute it so rows sum to zero exactly
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Full parameterisation of an epidemic in a switched environment.

    Parameters
    ----------
    infection : array (E, d, d) or callable
        Matrices ``C[env]`` of the Lajmanovich-Yorke form ``b(x, env) = C[env] @ x``,
        or a callable ``(x, env) -> (d,)``.
    cure : array (E, d) or callable
        Constant cure rates ``D[env]`` or a callable ``(x, env) -> (d,)``.
    switch : array (E, E), AffineSwitch or callable
        Environment rate matrix.  A callable maps ``x`` to an (E, E) matrix.
    group_fractions : array (d,), optional
        Limiting group proportions ``alpha``; defaults to equal groups.
    d, num_env : int, optional
        Required only when they cannot be inferred from array arguments.
    switch_bound : float, optional
        Upper bound on off-diagonal switch rates.  Computed exactly for array
        forms and estimated on a probe grid for callables.
    """

    infection: object
    cure: object
    switch: object
    group_fractions: object = None
    d: int | None = None
    num_env: int | None = None
    switch_bound: float | None = None

    def __post_init__(self):
        setattr_ = functools.partial(object.__setattr__, self)
        d, num_env = self.d, self.num_env
        if not callable(self.infection):
            C = np.array(self.infection, dtype=float)
            if C.ndim != 3 or C.shape[1] != C.shape[2]:
                raise ModelError(f"infection matrices must have shape (E, d, d), got {C.shape}")
            d = d if d is not None else C.shape[1]
            num_env = num_env if num_env is not None else C.shape[0]
            if C.shape != (num_env, d, d):
                raise ModelError(f"infection matrices shape {C.shape} != {(num_env, d, d)}")
            if np.any(C < 0):
                raise ModelError("infection matrices must be nonnegative")
            setattr_("infection", C)
        if not callable(self.cure):
            D = np.array(self.cure, dtype=float)
            if D.ndim != 2:
                raise ModelError(f"cure rates must have shape (E, d), got {D.shape}")
            d = d if d is not None else D.shape[1]
            num_env = num_env if num_env is not None else D.shape[0]
            if D.shape != (num_env, d):
                raise ModelError(f"cure rates shape {D.shape} != {(num_env, d)}")
            setattr_("cure", D)
        if isinstance(self.switch, AffineSwitch):
            if num_env is None:
                num_env = np.shape(self.switch.base)[0]
            base = _as_rate_matrix(self.switch.base, num_env)
            slope = np.array(self.switch.slope, dtype=float)
            if slope.shape != base.shape:
                raise ModelError("affine switch slope must match base shape")
            np.fill_diagonal(slope, 0.0)
            np.fill_diagonal(slope, -slope.sum(axis=1))
            if np.any((base + slope)[~np.eye(num_env, dtype=bool)] < 0):
                raise ModelError("affine switch has negative rates at full prevalence")
            setattr_("switch", AffineSwitch(base, slope))
        elif not callable(self.switch):
            if num_env is None:
                num_env = np.shape(self.switch)[0]
            setattr_("switch", _as_rate_matrix(self.switch, num_env))
        if d is None or num_env is None:
            raise ModelError("d and num_env must be given when all rate families are callables")
        if d < 1 or num_env < 1:
            raise ModelError("d and num_env must be positive")
        setattr_("d", int(d))
        setattr_("num_env", int(num_env))

        if self.group_fractions is None:
            alpha = np.full(d, 1.0 / d)
        else:
            alpha = np.array(self.group_fractions, dtype=float).reshape(-1)
        if alpha.shape != (d,):
            raise ModelError(f"group_fractions must have length {d}")
        setattr_("group_fractions", alpha)

        if self.switch_bound is None:
            setattr_("switch_bound", self._compute_switch_bound())
        elif self.switch_bound < 0:
            raise ModelError("switch_bound must be nonnegative")
        else:
            setattr_("switch_bound", float(self.switch_bound))

    # -- structure ----------------------------------------------------------

    @classmethod
    def lajmanovich_yorke(cls, C, D, Q, group_fractions=None):
        """Model with ``b(x, env) = C[env] @ x`` and constant cure rates ``D[env]``."""
        return cls(infection=C, cure=D, switch=Q, group_fractions=group_fractions)

    @property
    def is_lajmanovich_yorke(self) -> bool:
        return not callable(self.infection) and not callable(self.cure)

    @property
    def has_constant_switch(self) -> bool:
        if isinstance(self.switch, AffineSwitch):
            return not np.any(self.switch.slope)
        return not callable(self.switch)

    @property
    def compiled(self) -> bool:
        """True when every rate family is in array form (fast kernels apply)."""
        return self.is_lajmanovich_yorke and not callable(self.switch)

    def _compute_switch_bound(self):
        off = ~np.eye(self.num_env, dtype=bool)
        if self.num_env == 1:
            return 0.0
        if isinstance(self.switch, AffineSwitch):
            top = np.maximum(self.switch.base, self.switch.base + self.switch.slope)
            return float(top[off].max())
        if not callable(self.switch):
            return float(self.switch[off].max())
        # estimated on the probe grid; heuristic for arbitrary callables
        return float(max(self.switch_matrix(x)[off].max() for x in probe_grid(self.d)))

    # -- rate evaluation ----------------------------------------------------

    def infection_rates(self, x, env) -> np.ndarray:
        if callable(self.infection):
            return np.asarray(self.infection(x, env), dtype=float).reshape(self.d)
        return self.infection[env] @ x

    def cure_rates(self, x, env) -> np.ndarray:
        if callable(self.cure):
            return np.asarray(self.cure(x, env), dtype=float).reshape(self.d)
        return self.cure[env].copy()

    def switch_matrix(self, x) -> np.ndarray:
        """Environment rate matrix at ``x``; rows sum to zero."""
        if isinstance(self.switch, AffineSwitch):
            s = float(self.group_fractions @ np.asarray(x, dtype=float))
            return self.switch.base + s * self.switch.slope
        if callable(self.switch):
            Q = np.array(self.switch(np.asarray(x, dtype=float)), dtype=float)
            if Q.shape != (self.num_env, self.num_env):
                raise ModelError(f"switch callable returned shape {Q.shape}")
            np.fill_diagonal(Q, 0.0)
            np.fill_diagonal(Q, -Q.sum(axis=1))
            return Q
        return self.switch

    def field(self, x, env) -> np.ndarray:
        """Vector field without domain checks (see :func:`vector_field`)."""
        x = np.asarray(x, dtype=float)
        return (1.0 - x) * self.infection_rates(x, env) - x * self.cure_rates(x, env)

    def kernel_arrays(self):
        """``(C, D, Q0, Q1, alpha)`` for the compiled kernels; placeholders for callables."""
        d, E = self.d, self.num_env
        C = self.infection if not callable(self.infection) else np.zeros((E, d, d))
        D = self.cure if not callable(self.cure) else np.zeros((E, d))
        if isinstance(self.switch, AffineSwitch):
            Q0, Q1 = self.switch.base, self.switch.slope
        elif callable(self.switch):
            Q0, Q1 = np.zeros((E, E)), np.zeros((E, E))
        else:
            Q0, Q1 = self.switch, np.zeros((E, E))
        return (np.ascontiguousarray(C), np.ascontiguousarray(D), np.ascontiguousarray(Q0),
                np.ascontiguousarray(Q1), np.ascontiguousarray(self.group_fractions))

    def python_rates(self) -> Callable:
        """Rate callback with the kernel signature, evaluating this model in Python."""

        def rates(x, env, C, D, Q0, Q1, alpha, b, dc, q):
            b[:] = self.infection_rates(x, env)
            dc[:] = self.cure_rates(x, env)
            q[:] = self.switch_matrix(x)[env]
            q[env] = 0.0

        return rates

    @functools.cached_property
    def constants(self) -> DerivedConstants:
        return derived_constants(self)


# -- probing helpers ----------------------------------------------------------


def probe_grid(d, resolution=DEFAULT_GRID_RESOLUTION, max_samples=MAX_GRID_SAMPLES):
    """Tensor grid on ``[0,1]^d``, replaced by a fixed-seed uniform sample when too large."""
    if resolution ** d <= max_samples:
        axes = [np.linspace(0.0, 1.0, resolution)] * d
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    rng = np.random.default_rng(0)
    pts = rng.random((max_samples, d))
    pts[0] = 0.0
    pts[1] = 1.0
    return pts


def _fd_jacobian(f, x, h=FD_STEP):
    """Central differences, one-sided where ``x +- h`` leaves the unit cube."""
    x = np.asarray(x, dtype=float)
    f0 = f(x)
    J = np.empty((f0.shape[0], x.shape[0]))
    for j in range(x.shape[0]):
        lo, hi = x.copy(), x.copy()
        hi[j] = min(x[j] + h, 1.0)
        lo[j] = max(x[j] - h, 0.0)
        J[:, j] = (f(hi) - f(lo)) / (hi[j] - lo[j])
    return J


def field_jacobian(spec: ModelSpec, x, env) -> np.ndarray:
    """``DF(x, env)``: exact for the Lajmanovich-Yorke form, finite differences otherwise."""
    x = np.asarray(x, dtype=float)
    if spec.is_lajmanovich_yorke:
        C, D = spec.infection[env], spec.cure[env]
        J = (1.0 - x)[:, None] * C
        J[np.diag_indices(spec.d)] -= C @ x + D
        return J
    return _fd_jacobian(lambda y: spec.field(y, env), x)


def _check_point(spec, x):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (spec.d,):
        raise DomainError(f"point must have length {spec.d}")
    if np.any(~np.isfinite(x)) or np.any(x < -CUBE_TOL) or np.any(x > 1 + CUBE_TOL):
        raise DomainError(f"point {x} outside the unit cube")
    return np.clip(x, 0.0, 1.0)


def _check_env(spec, env):
    if not 0 <= int(env) < spec.num_env:
        raise DomainError(f"environment {env} not in 0..{spec.num_env - 1}")
    return int(env)


# -- operations ---------------------------------------------------------------


def vector_field(spec: ModelSpec, x, env) -> np.ndarray:
    """``F_i(x, env) = (1 - x_i) b_i(x, env) - x_i d_i(x, env)``."""
    return spec.field(_check_point(spec, x), _check_env(spec, env))


def linearization_at_zero(spec: ModelSpec, env) -> np.ndarray:
    """Jacobian ``A[env] = DF(0, env)``; equals ``C - diag(D)`` for the LY form."""
    env = _check_env(spec, env)
    if spec.is_lajmanovich_yorke:
        return spec.infection[env] - np.diag(spec.cure[env])
    zero = np.zeros(spec.d)
    h = FD_STEP
    f0 = spec.field(zero, env)
    A = np.empty((spec.d, spec.d))
    for j in range(spec.d):
        e = zero.copy()
        e[j] = h
        A[:, j] = (spec.field(e, env) - f0) / h
    off = ~np.eye(spec.d, dtype=bool)
    if np.any(A[off] < -METZLER_TOL):
        raise InconsistencyError(f"finite-difference Jacobian at 0 is not Metzler in environment {env}: {A}")
    A[off] = np.maximum(A[off], 0.0)
    return A


def linearizations(spec: ModelSpec) -> np.ndarray:
    """Stack of ``A[env]`` for every environment, shape (E, d, d)."""
    return np.stack([linearization_at_zero(spec, e) for e in range(spec.num_env)])


class Event(NamedTuple):
    kind: str  # "infect", "cure" or "switch"
    index: int  # group for infect/cure, target environment for switch


def transition_rates(spec: ModelSpec, K, sizes, n, env) -> list[tuple[Event, float]]:
    """Positive-rate transitions out of state ``(n, env)`` of the finite chain."""
    sizes = np.asarray(sizes, dtype=np.int64)
    n = np.asarray(n, dtype=np.int64)
    if sizes.shape != (spec.d,) or np.any(sizes <= 0) or sizes.sum() != K:
        raise DomainError(f"group sizes {sizes} must be positive and sum to K={K}")
    if n.shape != (spec.d,) or np.any(n < 0) or np.any(n > sizes):
        raise DomainError(f"counts {n} out of range for sizes {sizes}")
    env = _check_env(spec, env)
    x = n / sizes
    b = spec.infection_rates(x, env)
    dc = spec.cure_rates(x, env)
    out = []
    for i in range(spec.d):
        r = sizes[i] * (1.0 - x[i]) * b[i]
        if r > 0:
            out.append((Event("infect", i), float(r)))
    for i in range(spec.d):
        r = n[i] * dc[i]
        if r > 0:
            out.append((Event("cure", i), float(r)))
    Q = spec.switch_matrix(x)
    for e2 in range(spec.num_env):
        if e2 != env and Q[env, e2] > 0:
            out.append((Event("switch", e2), float(Q[env, e2])))
    return out


def group_sizes(K, group_fractions) -> np.ndarray:
    """Integer group sizes summing to ``K`` (largest-remainder rounding of ``K * alpha``)."""
    alpha = np.asarray(group_fractions, dtype=float)
    if K < len(alpha):
        raise DomainError(f"K={K} smaller than the number of groups")
    raw = K * alpha
    sizes = np.maximum(np.floor(raw).astype(np.int64), 1)
    while sizes.sum() > K:
        sizes[np.argmax(sizes - raw)] -= 1
    rem = raw - sizes
    for i in np.argsort(-rem, kind="stable")[: K - sizes.sum()]:
        sizes[i] += 1
    return sizes


# -- derived constants and monotonicity --------------------------------------


@dataclass(frozen=True)
class DerivedConstants:
    lipschitz_bound: float  # C_F, l1 Lipschitz bound of every F[env]
    rate_bound: float  # C_beta, bound on Lipschitz constants and values of the per-group rates
    analytic: bool

    def total_rate_bound(self, K, d, num_env, switch_bound):
        return K * self.rate_bound * d + switch_bound * (num_env - 1)


def derived_constants(spec: ModelSpec, grid_resolution=DEFAULT_GRID_RESOLUTION) -> DerivedConstants:
    if spec.is_lajmanovich_yorke:
        C, D = spec.infection, spec.cure
        rows = C.sum(axis=2)  # (E, d)
        cols = C.sum(axis=1)
        lip = float(np.max(cols + rows + D))
        beta = float(np.max(2.0 * rows + D))
        return DerivedConstants(max(lip, 1e-12), beta, analytic=True)
    lip = 0.0
    beta = 0.0
    for x in probe_grid(spec.d, grid_resolution, max_samples=20_000):
        for env in range(spec.num_env):
            J = field_jacobian(spec, x, env)
            lip = max(lip, np.abs(J).sum(axis=0).max())
            gp = _fd_jacobian(lambda y: (1 - y) * spec.infection_rates(y, env), x)
            gm = _fd_jacobian(lambda y: y * spec.cure_rates(y, env), x)
            beta = max(beta, np.abs(gp).sum(axis=1).max() + np.abs(gm).sum(axis=1).max())
            b, dc = spec.infection_rates(x, env), spec.cure_rates(x, env)
            beta = max(beta, np.max((1 - x) * b + x * dc))
    return DerivedConstants(LIPSCHITZ_SAFETY * max(lip, 1e-12), LIPSCHITZ_SAFETY * beta, analytic=False)


@dataclass(frozen=True)
class MonotoneFlags:
    cooperative: tuple
    irreducible_interior: tuple
    strongly_subhomogeneous: tuple

    @property
    def all(self) -> bool:
        return all(self.cooperative) and all(self.irreducible_interior) and all(self.strongly_subhomogeneous)


def monotone_flags(spec: ModelSpec, grid_resolution=11) -> MonotoneFlags:
    """Cooperativity, interior irreducibility and strong sub-homogeneity per environment.

    True by construction for the Lajmanovich-Yorke form with constant cure
    rates; probed on a grid otherwise.
    """
    E = spec.num_env
    if spec.is_lajmanovich_yorke:
        return MonotoneFlags((True,) * E, (True,) * E, (True,) * E)
    grid = probe_grid(spec.d, grid_resolution, max_samples=5_000)
    interior = grid[np.all((grid > 0) & (grid < 1), axis=1)]
    below_one = grid[np.all(grid < 1, axis=1)]
    coop, irr, sub = [], [], []
    for env in range(E):
        coop.append(all(is_metzler(field_jacobian(spec, x, env), tol=1e-8) for x in grid))
        irr.append(all(is_irreducible(np.where(field_jacobian(spec, x, env) > 1e-12, 1.0, 0.0))
                       for x in below_one))
        ok = True
        for lam in (1.05, 1.25, 1.5):
            for x in interior:
                y = lam * x
                if np.all(y < 1) and not np.all(spec.field(y, env) < lam * spec.field(x, env)):
                    ok = False
                    break
            if not ok:
                break
        sub.append(ok)
    return MonotoneFlags(tuple(coop), tuple(irr), tuple(sub))


# -- validation ---------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    witness: dict | None = None
    required: bool = True


@dataclass
class ValidationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.required)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def get(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def __str__(self):
        lines = []
        for c in self.checks:
            tag = "PASS" if c.passed else ("FAIL" if c.required else "WARN")
            line = f"{tag}  {c.name}"
            if c.detail:
                line += f"  {c.detail}"
            if c.witness:
                line += "  witness=" + ", ".join(f"{k}={v}" for k, v in c.witness.items())
            lines.append(line)
        return "\n".join(lines)


def _fmt(x):
    return np.array2string(np.asarray(x), precision=6, separator=",")


def validate_model(spec: ModelSpec, grid_resolution=DEFAULT_GRID_RESOLUTION) -> ValidationReport:
    """Probe every standing assumption on a grid of ``[0,1]^d``.

    Check names: ``group_fractions``, ``evaluation``, ``nonnegative_rates``,
    ``no_external_infection`` (b(0)=0), ``positive_cure``,
    ``jacobian_at_zero`` (nonnegative, irreducible), ``switch_irreducible``,
    and the optional monotonicity probes.
    """
    checks = []
    alpha = spec.group_fractions
    ok = bool(np.all(alpha > 0) and abs(alpha.sum() - 1.0) <= 1e-12)
    checks.append(Check("group_fractions", ok, "positive, sum to 1",
                        None if ok else {"alpha": _fmt(alpha), "sum": alpha.sum()}))

    grid = probe_grid(spec.d, grid_resolution)
    E = spec.num_env
    try:
        for x in grid[:2]:
            for env in range(E):
                b, dc, Q = spec.infection_rates(x, env), spec.cure_rates(x, env), spec.switch_matrix(x)
                if b.shape != (spec.d,) or dc.shape != (spec.d,) or not np.all(np.isfinite(np.r_[b, dc, Q.ravel()])):
                    raise ModelError("rate callable returned a malformed or non-finite value")
    except Exception as exc:  # structured failure instead of a crash
        checks.append(Check("evaluation", False, str(exc)))
        return ValidationReport(checks)
    checks.append(Check("evaluation", True, f"{len(grid)} probe points"))

    neg = None
    cure_fail = None
    switch_fail = None
    off = ~np.eye(E, dtype=bool)
    for x in grid:
        Q = spec.switch_matrix(x)
        if neg is None and np.any(Q[off] < 0):
            neg = {"x": _fmt(x), "quantity": "switch rate", "value": Q[off].min()}
        if switch_fail is None and not is_irreducible(Q):
            switch_fail = {"x": _fmt(x), "Q": _fmt(Q)}
        for env in range(E):
            b, dc = spec.infection_rates(x, env), spec.cure_rates(x, env)
            if neg is None and np.any(b < 0):
                neg = {"x": _fmt(x), "env": env, "quantity": "infection rate", "value": b.min()}
            if cure_fail is None and np.any(dc <= 0):
                cure_fail = {"x": _fmt(x), "env": env, "group": int(np.argmin(dc)), "value": dc.min()}
    checks.append(Check("nonnegative_rates", neg is None, "", neg))

    zero = np.zeros(spec.d)
    b0 = max(np.abs(spec.infection_rates(zero, env)).max() for env in range(E))
    worst = int(np.argmax([np.abs(spec.infection_rates(zero, env)).max() for env in range(E)]))
    checks.append(Check("no_external_infection", b0 <= 1e-12, "b(0, env) = 0",
                        None if b0 <= 1e-12 else {"env": worst, "value": b0}))
    checks.append(Check("positive_cure", cure_fail is None, "d(x, env) > 0", cure_fail))

    jac_fail = None
    for env in range(E):
        if callable(spec.infection):
            Jb = _fd_jacobian(lambda y: spec.infection_rates(y, env), zero)
        else:
            Jb = spec.infection[env]
        if np.any(Jb < -METZLER_TOL) or not is_irreducible(np.where(Jb > METZLER_TOL, Jb, 0.0), nonnegative=True):
            jac_fail = {"env": env, "db(0)": _fmt(Jb)}
            break
    checks.append(Check("jacobian_at_zero", jac_fail is None, "db(0) nonnegative and irreducible", jac_fail))
    checks.append(Check("switch_irreducible", switch_fail is None, "Q(x) irreducible", switch_fail))

    flags = monotone_flags(spec)
    for name in ("cooperative", "irreducible_interior", "strongly_subhomogeneous"):
        vals = getattr(flags, name)
        bad = [e for e, v in enumerate(vals) if not v]
        checks.append(Check(name, not bad, "monotone flow property", {"env": bad} if bad else None, required=False))
    return ValidationReport(checks)
