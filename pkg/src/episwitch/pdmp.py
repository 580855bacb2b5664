"""The limiting switched ODE, its polar decomposition and the linearised process at 0."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, IntegrationError
from .model import ModelSpec, linearizations
from .rng import ENVIRONMENT, INITIAL, RngStream

DEFAULT_H_MAX = 0.05
SIMPLEX_TOL = 1e-10
NEGATIVE_TOL = 1e-12


def step_size(spec: ModelSpec, h_max=DEFAULT_H_MAX) -> float:
    return min(h_max, 0.1 / spec.constants.lipschitz_bound)


def output_grid(T, dt) -> np.ndarray:
    if T < 0 or dt <= 0:
        raise DomainError("need T >= 0 and output_dt > 0")
    n = int(math.floor(T / dt + 1e-9))
    times = dt * np.arange(n + 1)
    if times[-1] < T - 1e-12:
        times = np.append(times, T)
    return times


def _check_x0(spec, x0):
    x0 = np.array(x0, dtype=float).reshape(-1)
    if x0.shape != (spec.d,) or np.any(x0 < -1e-9) or np.any(x0 > 1 + 1e-9):
        raise DomainError(f"initial point {x0} not in [0,1]^{spec.d}")
    return np.clip(x0, 0.0, 1.0)


def _check_simplex(spec, theta0):
    th = np.array(theta0, dtype=float).reshape(-1)
    if th.shape != (spec.d,) or np.any(th < 0) or abs(th.sum() - 1.0) > 1e-9:
        raise DomainError(f"initial direction {th} not on the simplex")
    return th / th.sum()


def uniform_simplex(gen, d) -> np.ndarray:
    e = -np.log1p(-gen.random(d))
    return e / e.sum()


# -- environment randomness ---------------------------------------------------


def environment_path(Q, env0, T, gen):
    """Exact jump times and post-jump states of the chain with constant rates ``Q`` on ``(0, T]``."""
    Q = np.ascontiguousarray(Q, dtype=float)
    rate = float(max(-np.diag(Q).min(), 0.0))
    expected = T * rate
    chunk = int(2 * (expected + 10 * math.sqrt(expected) + 32))
    times, envs = [], []
    env, t = int(env0), 0.0
    u = gen.random(chunk)
    while True:
        out_t = np.empty(chunk)
        out_e = np.empty(chunk, dtype=np.int64)
        n, env, t, upos, done = _kernels.JIT.ctmc_path(Q, env, t, float(T), u, out_t, out_e)
        times.append(out_t[:n])
        envs.append(out_e[:n])
        if done:
            break
        u = np.concatenate([u[upos:], gen.random(chunk)])
    return np.concatenate(times), np.concatenate(envs)


@dataclass
class SwitchCandidates:
    """Candidate environment jumps on ``[0, T]``: Poisson times at rate ``bound * E``,
    uniform targets and uniform marks in ``[0, bound)``.  A candidate fires when
    its target differs from the current environment and its mark is below the
    current rate to that target.
    """

    times: np.ndarray
    targets: np.ndarray
    marks: np.ndarray

    @classmethod
    def draw(cls, spec: ModelSpec, T, gen):
        bound = spec.switch_bound
        E = spec.num_env
        if bound <= 0 or E == 1:
            return cls(np.empty(0), np.empty(0, dtype=np.int64), np.empty(0))
        n = int(gen.poisson(bound * E * T))
        times = np.sort(gen.random(n) * T)
        targets = gen.integers(0, E, size=n).astype(np.int64)
        marks = gen.random(n) * bound
        return cls(times, targets, marks)


# -- flows ----------------------------------------------------------------------


def integrate_flow(spec: ModelSpec, env, x0, t, h_max=DEFAULT_H_MAX) -> np.ndarray:
    """Semi-flow ``psi_t(x0)`` of environment ``env`` by fixed-step RK4."""
    if t < 0:
        raise DomainError("t must be nonnegative")
    x = _check_x0(spec, x0)
    kern, rates, m = _kernels.for_model(spec)
    d = spec.d
    work = [np.empty(d) for _ in range(5)]
    st, _ = kern.flow_segment(rates, m, x, int(env), float(t), step_size(spec, h_max),
                              np.empty(d), np.empty(d), np.empty(spec.num_env), *work)
    if st != _kernels.OK:
        raise IntegrationError(f"flow left the unit cube or produced NaN (env={env}, t={t})")
    return x


@dataclass
class PdmpPath:
    times: np.ndarray
    x: np.ndarray  # (n, d)
    env: np.ndarray
    jump_times: np.ndarray
    jump_envs: np.ndarray
    log_norm_integral: np.ndarray  # running integral of <1, F(X)> / |X|_1

    def to_csv(self, path):
        """Write ``t,x_1..x_d,env`` rows to a path or an open text file."""
        if hasattr(path, "write"):
            self._write(path)
        else:
            with open(path, "w", newline="") as fh:
                self._write(fh)

    def _write(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(self.x.shape[1])] + ["env"])
        for t, x, e in zip(self.times, self.x, self.env):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [int(e) + 1])


def _run_pdmp(spec, x0, env0, out_times, cand, thinned, h_max):
    kern, rates, m = _kernels.for_model(spec)
    x = _check_x0(spec, x0)
    n = out_times.shape[0]
    out_x = np.empty((n, spec.d))
    out_env = np.empty(n, dtype=np.int64)
    out_int = np.empty(n)
    jt = np.empty(cand.times.shape[0])
    je = np.empty(cand.times.shape[0], dtype=np.int64)
    st, nj = kern.pdmp_run(rates, m, spec.num_env, x, int(env0), step_size(spec, h_max), out_times,
                           cand.times, cand.targets, cand.marks, thinned, out_x, out_env, out_int, jt, je)
    if st != _kernels.OK:
        raise IntegrationError("PDMP flow left the unit cube or produced NaN")
    return PdmpPath(out_times, out_x, out_env, jt[:nj], je[:nj], out_int)


def simulate_pdmp(spec: ModelSpec, x0, env0, T, output_dt, rng: RngStream, h_max=DEFAULT_H_MAX,
                  candidates: SwitchCandidates | None = None) -> PdmpPath:
    """Switched flow from ``(x0, env0)`` on ``[0, T]``.

    Constant switch rates use exact exponential clocks; state-dependent ones
    use thinning against ``spec.switch_bound``.  Passing ``candidates``
    forces thinning with that candidate stream (used for coupling).
    """
    times = output_grid(T, output_dt)
    if candidates is not None:
        return _run_pdmp(spec, x0, env0, times, candidates, True, h_max)
    gen = rng.generator(ENVIRONMENT)
    if spec.has_constant_switch:
        jt, je = environment_path(spec.switch_matrix(np.zeros(spec.d)), env0, T, gen)
        cand = SwitchCandidates(jt, je, np.zeros_like(jt))
        return _run_pdmp(spec, x0, env0, times, cand, False, h_max)
    return _run_pdmp(spec, x0, env0, times, SwitchCandidates.draw(spec, T, gen), True, h_max)


@dataclass
class PolarPath:
    times: np.ndarray
    radius: np.ndarray
    theta: np.ndarray
    integral: np.ndarray  # running integral of G along the path
    env: np.ndarray

    @property
    def x(self):
        return self.radius[:, None] * self.theta


def simulate_polar(spec: ModelSpec, x0, env0, T, output_dt, rng: RngStream, h_max=DEFAULT_H_MAX,
                   candidates: SwitchCandidates | None = None) -> PolarPath:
    """Radius and direction of the PDMP integrated directly, from ``x0 != 0``.

    Consumes the environment randomness exactly as :func:`simulate_pdmp` does
    with the same arguments, so both see the same environment path.
    """
    x0 = _check_x0(spec, x0)
    r0 = x0.sum()
    if r0 <= 0:
        raise DomainError("polar decomposition needs x0 != 0")
    times = output_grid(T, output_dt)
    if candidates is not None:
        cand, thinned = candidates, True
    else:
        gen = rng.generator(ENVIRONMENT)
        if spec.has_constant_switch:
            jt, je = environment_path(spec.switch_matrix(np.zeros(spec.d)), env0, T, gen)
            cand, thinned = SwitchCandidates(jt, je, np.zeros_like(jt)), False
        else:
            cand, thinned = SwitchCandidates.draw(spec, T, gen), True
    kern, rates, m = _kernels.for_model(spec)
    n = times.shape[0]
    out_r, out_th = np.empty(n), np.empty((n, spec.d))
    out_s, out_env = np.empty(n), np.empty(n, dtype=np.int64)
    st = kern.polar_run(rates, m, spec.num_env, float(r0), x0 / r0, int(env0), step_size(spec, h_max), times,
                        cand.times, cand.targets, cand.marks, thinned, out_r, out_th, out_s, out_env)
    if st != _kernels.OK:
        raise IntegrationError("polar integration produced NaN")
    return PolarPath(times, out_r, out_th, out_s, out_env)


# -- angular and linearised processes -----------------------------------------


@dataclass
class AngularPath:
    times: np.ndarray
    theta: np.ndarray  # (n, d), on the simplex
    S: np.ndarray  # running integral of <1, A theta>
    env: np.ndarray
    min_component: float  # most negative component seen before clamping
    max_norm_error: float  # largest | |theta|_1 - 1 | seen before renormalising

    def to_csv(self, path):
        if hasattr(path, "write"):
            self._write(path)
        else:
            with open(path, "w", newline="") as fh:
                self._write(fh)

    def _write(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"theta_{i + 1}" for i in range(self.theta.shape[1])] + ["S", "env"])
        for t, th, s, e in zip(self.times, self.theta, self.S, self.env):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in th] + [repr(float(s)), int(e) + 1])


def angular_at(A, Q0, theta0, env0, out_times, gen, h):
    """Angular process sampled at arbitrary increasing ``out_times`` (environment from ``gen``)."""
    T = float(out_times[-1]) if len(out_times) else 0.0
    jt, je = environment_path(Q0, env0, T, gen)
    n = len(out_times)
    d = A.shape[1]
    out_th, out_s, out_env = np.empty((n, d)), np.empty(n), np.empty(n, dtype=np.int64)
    diag = np.array([0.0, 0.0])
    _kernels.JIT.angular_run(A, np.array(theta0, dtype=float), int(env0), h,
                             np.ascontiguousarray(out_times, dtype=float), jt, je, out_th, out_s, out_env, diag)
    return out_th, out_s, out_env, diag


def simulate_angular(spec: ModelSpec, theta0, env0, T, output_dt, rng: RngStream,
                     h_max=DEFAULT_H_MAX) -> AngularPath:
    """Direction of the linearised process on the simplex, environment switching with ``Q(0)``."""
    th = _check_simplex(spec, theta0)
    A = np.ascontiguousarray(linearizations(spec))
    Q0 = spec.switch_matrix(np.zeros(spec.d))
    times = output_grid(T, output_dt)
    out_th, out_s, out_env, diag = angular_at(A, Q0, th, env0, times, rng.generator(ENVIRONMENT),
                                              step_size(spec, h_max))
    return AngularPath(times, out_th, out_s, out_env, float(diag[0]), float(diag[1]))


@dataclass
class LinearPath:
    theta0: np.ndarray
    lognorm0: float
    times: np.ndarray
    theta: np.ndarray
    lognorm: np.ndarray
    env: np.ndarray


def simulate_linear(spec: ModelSpec, theta0, logr0, env0, T, output_dt, rng: RngStream,
                    h_max=DEFAULT_H_MAX) -> LinearPath:
    """Linearised process ``Y' = A[env] Y`` in log-polar form; never under- or overflows."""
    ang = simulate_angular(spec, theta0, env0, T, output_dt, rng, h_max)
    return LinearPath(np.asarray(theta0, dtype=float), float(logr0), ang.times, ang.theta,
                      float(logr0) + ang.S, ang.env)


def random_direction(spec: ModelSpec, rng: RngStream):
    """Uniform direction on the simplex and uniform environment."""
    gen = rng.generator(INITIAL)
    th = uniform_simplex(gen, spec.d)
    return th, int(gen.integers(0, spec.num_env))
