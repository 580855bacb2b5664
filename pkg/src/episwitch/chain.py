"""Exact simulation of the finite-population chain and its coupling with the PDMP."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DomainError, NumericalError
from .model import ModelSpec
from .pdmp import DEFAULT_H_MAX, PdmpPath, SwitchCandidates, simulate_pdmp
from .rng import ENVIRONMENT, EPIDEMIC, RngStream

DEFAULT_MAX_EVENTS = 10**9
_RANDOM_CHUNK = 1 << 16
_RANDOM_FIRST = 1 << 8
_LOG_CHUNK = 1 << 14


def worker_count(workers=None) -> int:
    """Worker threads: explicit argument, else ``EPISWITCH_THREADS`` (0 = all cores)."""
    if workers is None:
        workers = int(os.environ.get("EPISWITCH_THREADS", "0") or 0)
    if workers <= 0:
        workers = os.cpu_count() or 1
    return workers


def map_ordered(fn, items, workers=None):
    """``[fn(i) for i in items]``, possibly threaded; order of results is the order of ``items``."""
    items = list(items)
    n = worker_count(workers)
    if n == 1 or len(items) < 2:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


@dataclass
class ChainState:
    counts: np.ndarray
    env: int
    time: float = 0.0

    def __post_init__(self):
        self.counts = np.array(self.counts, dtype=np.int64).reshape(-1)
        self.env = int(self.env)


@dataclass
class ChainPath:
    sizes: np.ndarray
    initial: ChainState
    final: ChainState
    times: np.ndarray
    kinds: np.ndarray  # 0..d-1 infect, d..2d-1 cure, 2d+e switch to e
    counts: np.ndarray  # counts after each event, (n, d)
    envs: np.ndarray
    terminal: str  # "absorbed", "horizon" or "truncated"
    extinction_time: float | None
    thresholds: np.ndarray = field(default_factory=lambda: np.empty(0))
    hit_below: np.ndarray = field(default_factory=lambda: np.empty(0))  # first |x| <= rho, nan if never
    hit_above: np.ndarray = field(default_factory=lambda: np.empty(0))  # first |x| >= rho
    n_events: int = 0

    @property
    def truncated(self) -> bool:
        return self.terminal == "truncated"

    def state_at(self, t):
        """Counts and environment at times ``t`` (right-continuous)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        counts = np.where(idx[..., None] >= 0, self.counts[np.maximum(idx, 0)], self.initial.counts)
        envs = np.where(idx >= 0, self.envs[np.maximum(idx, 0)], self.initial.env)
        return counts, envs

    def event_name(self, kind) -> str:
        d = len(self.sizes)
        if kind < d:
            return f"infect_{kind + 1}"
        if kind < 2 * d:
            return f"cure_{kind - d + 1}"
        return f"switch_{kind - 2 * d + 1}"

    def to_csv(self, path):
        d = len(self.sizes)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "event"] + [f"n_{i + 1}" for i in range(d)] + ["env"])
            w.writerow([repr(float(self.initial.time)), "init", *self.initial.counts.tolist(), self.initial.env + 1])
            for t, k, c, e in zip(self.times, self.kinds, self.counts, self.envs):
                w.writerow([repr(float(t)), self.event_name(k), *c.tolist(), int(e) + 1])


def _check_chain_args(spec, K, sizes, init):
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.shape != (spec.d,) or np.any(sizes <= 0) or sizes.sum() != K:
        raise DomainError(f"group sizes {sizes} must be positive and sum to K={K}")
    if init.counts.shape != (spec.d,) or np.any(init.counts < 0) or np.any(init.counts > sizes):
        raise DomainError(f"initial counts {init.counts} out of range")
    if not 0 <= init.env < spec.num_env:
        raise DomainError(f"initial environment {init.env} out of range")
    return sizes


def _run_chain(spec, sizes, init, horizon, thresholds, gen, cand, max_events, record):
    kern, rates, m = _kernels.for_model(spec)
    d = spec.d
    counts = init.counts.copy()
    thresholds = np.asarray(thresholds, dtype=float).reshape(-1)
    hit_lo = np.full(thresholds.shape, -1.0)
    hit_hi = np.full(thresholds.shape, -1.0)
    norm0 = float(np.sum(counts / sizes))
    hit_lo[norm0 <= thresholds] = init.time
    hit_hi[norm0 >= thresholds] = init.time
    istate = np.array([init.env, 0, 0, 0, 0], dtype=np.int64)
    fstate = np.array([init.time, init.time if counts.sum() == 0 else -1.0])
    hz = math.inf if horizon is None else float(horizon)
    if cand is None:
        cand = SwitchCandidates(np.empty(0), np.empty(0, dtype=np.int64), np.empty(0))
        thinned = False
    else:
        thinned = True
    nlog = _LOG_CHUNK if record else 0
    ev_t, ev_k = np.empty(nlog), np.empty(nlog, dtype=np.int64)
    ev_c, ev_e = np.empty((nlog, d), dtype=np.int64), np.empty(nlog, dtype=np.int64)
    logs = []
    # small first draw keeps short replicates cheap; the uniform sequence is the same either way
    chunk = _RANDOM_FIRST
    u = gen.random(chunk)

    if counts.sum() == 0 and horizon is None:
        status = _kernels.ABSORBED
    else:
        while True:
            status = kern.chain_run(rates, m, spec.num_env, sizes, counts, istate, fstate, hz, u,
                                    cand.times, cand.targets, cand.marks, thinned, max_events,
                                    thresholds, hit_lo, hit_hi, record, ev_t, ev_k, ev_c, ev_e)
            if status == _kernels.NEED_RANDOM:
                chunk = min(2 * chunk, _RANDOM_CHUNK)
                u = np.concatenate([u[istate[1]:], gen.random(chunk)])
                istate[1] = 0
                continue
            if status == _kernels.LOG_FULL:
                logs.append((ev_t.copy(), ev_k.copy(), ev_c.copy(), ev_e.copy()))
                istate[3] = 0
                continue
            break
    n = int(istate[3])
    logs.append((ev_t[:n], ev_k[:n], ev_c[:n], ev_e[:n]))
    ext = float(fstate[1]) if fstate[1] >= 0 else None
    if status == _kernels.EVENT_CAP:
        terminal = "truncated"
    elif ext is not None:
        terminal = "absorbed"
    else:
        terminal = "horizon"
    nan = lambda a: np.where(a < 0, np.nan, a)  # noqa: E731
    return ChainPath(
        sizes=sizes,
        initial=ChainState(init.counts.copy(), init.env, init.time),
        final=ChainState(counts, int(istate[0]), float(fstate[0])),
        times=np.concatenate([g[0] for g in logs]),
        kinds=np.concatenate([g[1] for g in logs]),
        counts=np.concatenate([g[2] for g in logs]).reshape(-1, d),
        envs=np.concatenate([g[3] for g in logs]),
        terminal=terminal,
        extinction_time=ext,
        thresholds=thresholds,
        hit_below=nan(hit_lo),
        hit_above=nan(hit_hi),
        n_events=int(istate[2]),
    )


def simulate_chain(spec: ModelSpec, K, sizes, init: ChainState, horizon=None, thresholds=(),
                   rng: RngStream = RngStream(0), max_events=DEFAULT_MAX_EVENTS, record=True) -> ChainPath:
    """Direct Gillespie simulation of the chain from ``init``.

    Stops at extinction when ``horizon`` is None.  With a finite horizon the
    environment keeps switching after extinction until the horizon.  After
    ``max_events`` events the path is returned with terminal cause
    ``"truncated"``.
    """
    sizes = _check_chain_args(spec, K, sizes, init)
    return _run_chain(spec, sizes, init, horizon, thresholds, rng.generator(EPIDEMIC), None, max_events, record)


@dataclass
class ExtinctionSummary:
    K: int
    n_rep: int
    mean: float
    se: float
    q05: float
    q50: float
    q95: float
    truncated: int
    times: np.ndarray

    def row(self):
        return [self.K, self.n_rep, self.mean, self.se, self.q05, self.q50, self.q95, self.truncated]

    HEADER = ["K", "n_rep", "mean_tau", "se_tau", "q05", "q50", "q95", "truncated"]


def extinction_times(spec, K, sizes, init, n_rep, base_seed, max_events=DEFAULT_MAX_EVENTS, workers=None):
    """Extinction time of replicate ``r`` on stream ``(base_seed, r)``; ``nan`` when truncated."""
    sizes = _check_chain_args(spec, K, sizes, init)

    def one(r):
        path = _run_chain(spec, sizes, init, None, (), RngStream(base_seed, r).generator(EPIDEMIC),
                          None, max_events, False)
        return math.nan if path.truncated else path.extinction_time

    return np.array(map_ordered(one, range(n_rep), workers))


def monte_carlo_extinction(spec: ModelSpec, K, sizes, init: ChainState, n_rep, base_seed,
                           max_events=DEFAULT_MAX_EVENTS, workers=None) -> ExtinctionSummary:
    if n_rep < 2:
        raise DomainError("n_rep must be at least 2")
    taus = extinction_times(spec, K, sizes, init, n_rep, base_seed, max_events, workers)
    ok = taus[~np.isnan(taus)]
    truncated = int(n_rep - ok.size)
    if ok.size == 0:
        raise NumericalError("every replicate hit the event cap; raise max_events or use the QSD route")
    se = float(ok.std(ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else math.nan
    q05, q50, q95 = np.quantile(ok, [0.05, 0.5, 0.95])
    return ExtinctionSummary(int(K), int(n_rep), float(ok.mean()), se, float(q05), float(q50), float(q95),
                             truncated, taus)


@dataclass
class CoupledPaths:
    chain: ChainPath
    pdmp: PdmpPath
    sup_distance: float
    distance: np.ndarray  # |X^K - X|_1 + 1{env differ} on the PDMP output grid


def floor_state(x, sizes) -> np.ndarray:
    """Componentwise ``floor(K_i x_i)``: the chain state closest below ``x``."""
    return np.floor(np.asarray(x, dtype=float) * sizes + 1e-12).astype(np.int64)


def coupled_paths(spec: ModelSpec, K, sizes, init_x, init_env, T, rng: RngStream, output_dt=0.01,
                  h_max=DEFAULT_H_MAX, max_events=DEFAULT_MAX_EVENTS) -> CoupledPaths:
    """Chain and PDMP driven by one shared stream of environment-switch candidates.

    The supremum distance is evaluated on the PDMP output grid of step
    ``output_dt``.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    init = ChainState(np.minimum(floor_state(init_x, sizes), sizes), init_env)
    sizes = _check_chain_args(spec, K, sizes, init)
    cand = SwitchCandidates.draw(spec, T, rng.generator(ENVIRONMENT))
    chain = _run_chain(spec, sizes, init, T, (), rng.generator(EPIDEMIC), cand, max_events, True)
    pdmp = simulate_pdmp(spec, init_x, init_env, T, output_dt, rng, h_max, candidates=cand)
    counts, envs = chain.state_at(pdmp.times)
    dist = np.abs(counts / sizes - pdmp.x).sum(axis=1) + (envs != pdmp.env)
    return CoupledPaths(chain, pdmp, float(dist.max()), dist)
