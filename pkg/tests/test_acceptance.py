"""Acceptance criteria, each checked at its stated tolerance and runtime budget.

Every test records a one-line PASS/FAIL verdict (shown in the pytest summary
and printed when this file is run as a script).
"""

import math
import time
import warnings

import numpy as np
import pytest
from scipy import stats

from episwitch import (
    ChainState,
    ModelSpec,
    RngStream,
    compute_qsd,
    estimate_g,
    estimate_lambda,
    estimate_pstar,
    g_exact_1d,
    monte_carlo_extinction,
    qsd_ladder,
    qsd_mass_below,
    reference_model,
    sample_qsd,
    simulate_angular,
    simulate_chain,
    simulate_pdmp,
    simulate_polar,
)
from episwitch.chain import coupled_paths
from episwitch.pdmp import random_direction

from oracles import quadratic_root

pytestmark = pytest.mark.slow

B = reference_model("B")
N = reference_model("N")
S = reference_model("S")
CONST1 = reference_model("const1")
CONST2 = reference_model("const2")
THREE_GROUP = ModelSpec.lajmanovich_yorke(
    C=[[[0.2, 1.0, 0.0], [0.0, 0.3, 2.0], [1.5, 0.0, 0.1]], [[0.1, 0.2, 0.0], [0.0, 0.1, 0.3], [0.4, 0.0, 0.2]]],
    D=[[1.0, 0.5, 2.0], [1.0, 1.0, 1.0]], Q=[[-0.5, 0.5], [2.0, -2.0]])


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def ladder_b():
    Ks = [25, 50, 100, 200, 400, 800, 1600, 3200]
    results, seconds = timed(qsd_ladder, B, Ks, lambda K: [K])
    return dict(zip(Ks, results)), seconds


@pytest.fixture(scope="module")
def ladder_n():
    Ks = [100, 200, 400, 800, 1600]
    results, seconds = timed(qsd_ladder, N, Ks, lambda K: [K])
    return dict(zip(Ks, results)), seconds


def test_criterion_01_closed_form_pstar(acceptance_line):
    res, sec = timed(estimate_pstar, B, tol=1e-6)
    ok = res.status == "finite" and abs(res.value - 1.5) <= 1e-6 and res.method == "exact-1d" and sec < 1.0
    acceptance_line(1, "closed-form p*", ok, f"status={res.status} value={res.value!r} method={res.method} "
                                            f"runtime={sec:.3f}s")
    assert ok


def test_criterion_02_exact_g(acceptance_line):
    t0 = time.perf_counter()
    g_sing = g_exact_1d(B, -1.5)
    g_one = g_exact_1d(B, 1.0)
    sec = time.perf_counter() - t0
    root = quadratic_root(0.5, -2.5)  # characteristic polynomial of Q_1 = [[1,1],[1,-1.5]]
    ok = abs(g_sing) <= 1e-10 and abs(g_one - root) <= 1e-6 and sec < 1.0
    acceptance_line(2, "exact 1D g(p)", ok, f"g(-1.5)={g_sing:.3e}, g(1)={g_one:.9f} (root {root:.9f}), "
                                           f"runtime={sec:.3f}s")
    assert ok


@pytest.mark.parametrize("name,target", [("B", 0.75), ("N", -0.2), ("const2", 1.0)])
def test_criterion_03_lambda(acceptance_line, name, target):
    spec = reference_model(name)
    est, sec = timed(estimate_lambda, spec, 1e5, rng=RngStream(0))
    lo, hi = est.interval
    ok = abs(est.value - target) <= 0.02 and sec < 30
    if name == "B":
        ok = ok and lo <= target <= hi
    acceptance_line(3, f"Lyapunov exponent, model {name}", ok,
                    f"estimate={est.value:.5f} CI=[{lo:.5f}, {hi:.5f}] target={target} runtime={sec:.1f}s")
    assert ok


def test_criterion_04_monte_carlo_g(acceptance_line):
    t0 = time.perf_counter()
    rows, ok = [], True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # low effective sample size is reported below
        for p in (-2.0, -1.0, 1.0, 2.0):
            est = estimate_g(B, p, (25, 50, 100, 200), 2000, RngStream(0))
            exact = g_exact_1d(B, p)
            ok &= abs(est.value - exact) <= 3 * est.se
            rows.append(f"p={p:+g}: {est.value:.3f}+-{est.se:.3f} vs {exact:.3f} (ESS {est.ess:.1f})")
    sec = time.perf_counter() - t0
    ok = ok and sec < 120
    acceptance_line(4, "Monte Carlo g cross-validation", ok, "; ".join(rows) + f"; runtime={sec:.1f}s")
    assert ok


def test_criterion_05_g_structure(acceptance_line):
    ps = np.round(np.arange(-30, 31) * 0.1, 10)
    g = np.array([g_exact_1d(B, p) for p in ps])
    second = g[2:] - 2 * g[1:-1] + g[:-2]
    i0 = int(np.flatnonzero(ps == 0.0)[0])
    slope = (g[i0 + 1] - g[i0 - 1]) / (ps[i0 + 1] - ps[i0 - 1])
    ok = second.min() >= -1e-9 and abs(slope - 0.75) <= 1e-3
    acceptance_line(5, "g convexity and g'(0)", ok, f"min second difference={second.min():.3e}, "
                                                    f"central slope at 0={slope:.6f}")
    assert ok


def test_criterion_06_qsd_exactness(acceptance_line, ladder_b):
    res = compute_qsd(CONST1, 2, [2])
    lam_err = abs(res.rate - (2 - math.sqrt(2)))
    mu_err = float(np.abs(res.weights - [2 - math.sqrt(2), math.sqrt(2) - 1]).max())
    lam_ok, mu_ok = lam_err <= 1e-10, mu_err <= 1e-10
    results, sec = ladder_b
    worst = max(r.residual for r in results.values())
    ok = lam_ok and mu_ok and worst < 1e-10 and all(r.converged for r in results.values()) and sec < 60
    acceptance_line(6, "QSD exactness", ok, f"K=2 lambda err={lam_err:.1e}, mu err={mu_err:.1e}; "
                                            f"model B K<=3200 max residual={worst:.2e}, ladder runtime={sec:.1f}s")
    assert ok


def test_criterion_07_extinction_rate_scaling(acceptance_line, ladder_b):
    results, sec = ladder_b
    Ks = [200, 400, 800, 1600, 3200]
    slope = np.polyfit(np.log(Ks), -np.log([results[K].rate for K in Ks]), 1)[0]
    ok = 1.3 <= slope <= 1.7 and sec < 120
    acceptance_line(7, "extinction-rate scaling", ok, f"slope={slope:.4f} over K={Ks}, runtime={sec:.1f}s")
    assert ok


def test_criterion_08_qsd_persistence_and_degeneracy(acceptance_line, ladder_b, ladder_n):
    Ks = [100, 200, 400, 800, 1600]
    mb = [qsd_mass_below(ladder_b[0][K], 0.1) for K in Ks]
    mn = [qsd_mass_below(ladder_n[0][K], 0.05) for K in Ks]
    b_ok = all(a > b for a, b in zip(mb, mb[1:]))
    n_ok = all(a < b for a, b in zip(mn, mn[1:])) and mn[-1] >= 0.9
    ok = b_ok and n_ok
    acceptance_line(8, "QSD persistence vs degeneracy", ok,
                    "B mass<0.1 " + ", ".join(f"{v:.5f}" for v in mb) + (" (decreasing)" if b_ok else " (NOT decreasing)")
                    + "; N mass<0.05 " + ", ".join(f"{v:.4f}" for v in mn))
    assert ok


def test_criterion_09_extinction_time_laws(acceptance_line):
    t0 = time.perf_counter()
    n_taus = []
    for K in (100, 400, 1600):
        s = monte_carlo_extinction(N, K, [K], ChainState([K // 2], 0), 500, base_seed=K)
        n_taus.append(s.mean / math.log(K))
    spread = max(n_taus) / min(n_taus)
    b_Ks = [25, 50, 100, 200]
    b_taus = [monte_carlo_extinction(B, K, [K], ChainState([K // 2], 0), 500, base_seed=K).mean for K in b_Ks]
    exponent = np.polyfit(np.log(b_Ks), np.log(b_taus), 1)[0]
    sec = time.perf_counter() - t0
    ok = spread < 1.5 and exponent >= 1.2 and sec < 600
    acceptance_line(9, "extinction-time laws", ok,
                    "N mean tau/log K " + ", ".join(f"{v:.3f}" for v in n_taus) + f" (max/min {spread:.3f}); "
                    "B mean tau " + ", ".join(f"{v:.1f}" for v in b_taus) + f" (exponent {exponent:.3f}); "
                    f"runtime={sec:.1f}s")
    assert ok


def test_criterion_10_coupling_lln(acceptance_line):
    t0 = time.perf_counter()
    probs = []
    for K in (100, 1000, 10000):
        sup = [coupled_paths(B, K, [K], [0.5], 0, 5.0, RngStream(K, r)).sup_distance for r in range(200)]
        probs.append(float(np.mean(np.array(sup) > 0.1)))
    sec = time.perf_counter() - t0
    monotone = all(a >= b for a, b in zip(probs, probs[1:])) and probs[0] > probs[-1]
    ok = monotone and sec < 300
    acceptance_line(10, "coupling / law of large numbers", ok,
                    "P(sup > 0.1) at K=1e2,1e3,1e4: " + ", ".join(f"{p:.3f}" for p in probs) + f"; runtime={sec:.1f}s")
    assert ok


def test_criterion_11_pathwise_invariants(acceptance_line):
    details, ok = [], True

    # norm envelope at every output sample
    worst = math.inf
    for spec, x0 in ((B, [0.5]), (CONST2, [0.3, 0.05]), (S, [0.02])):
        cf = spec.constants.lipschitz_bound
        for r in range(5):
            path = simulate_pdmp(spec, x0, 0, 20.0, 0.01, RngStream(11, r))
            n0 = float(np.sum(x0))
            norm = path.x.sum(axis=1)
            slack = np.minimum(norm - n0 * np.exp(-cf * path.times), n0 * np.exp(cf * path.times) - norm)
            worst = min(worst, float(slack.min()))
    env_ok = worst >= 0
    details.append(f"envelope min slack={worst:.3e}")

    # simplex preservation
    min_comp, max_err = 0.0, 0.0
    for spec in (B, CONST2, THREE_GROUP):
        for r in range(5):
            th, e = random_direction(spec, RngStream(12, r))
            ang = simulate_angular(spec, th, e, 200.0, 0.1, RngStream(12, r))
            min_comp = min(min_comp, ang.min_component)
            max_err = max(max_err, ang.max_norm_error)
    simplex_ok = min_comp >= -1e-12 and max_err <= 1e-10
    details.append(f"simplex min component={min_comp:.1e}, max norm error={max_err:.1e}")

    # R_t = rho exp(int G) and X_t = R_t Theta_t on [0, 10]
    r_err, x_err = 0.0, 0.0
    for spec, x0 in ((B, [0.3]), (CONST2, [0.2, 0.1])):
        for r in range(5):
            pol = simulate_polar(spec, x0, 0, 10.0, 0.01, RngStream(13, r))
            pd = simulate_pdmp(spec, x0, 0, 10.0, 0.01, RngStream(13, r))
            r_err = max(r_err, float(np.abs(pol.radius - np.sum(x0) * np.exp(pol.integral)).max()))
            x_err = max(x_err, float(np.abs(pol.x - pd.x).max()))
    polar_ok = r_err <= 1e-6 and x_err <= 1e-6
    details.append(f"|R - rho exp(int G)|={r_err:.1e}, |X - R Theta|={x_err:.1e}")

    # QSD-initialised extinction times are exponential
    K = 50
    qsd = compute_qsd(B, K, [K])
    counts, envs = sample_qsd(qsd, RngStream(14).generator(), 10_000)
    taus = np.array([simulate_chain(B, K, [K], ChainState(c, e), rng=RngStream(14, j + 1), record=False)
                     .extinction_time for j, (c, e) in enumerate(zip(counts, envs))])
    ks = stats.kstest(taus, "expon", args=(0, 1.0 / qsd.rate))
    ks_ok = ks.pvalue > 0.001
    details.append(f"KS p-value={ks.pvalue:.3f} (mean {taus.mean():.2f} vs 1/lambda {1 / qsd.rate:.2f})")

    ok = env_ok and simplex_ok and polar_ok and ks_ok
    acceptance_line(11, "pathwise invariants", ok, "; ".join(details))
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
