import math

import numpy as np
import pytest

from episwitch import (
    DomainError,
    ModelSpec,
    RngStream,
    SizeError,
    bin_qsd,
    build_killed_generator,
    compute_qsd,
    enumerate_states,
    load_model,
    pdmp_stationary_estimate,
    qsd_ladder,
    qsd_mass_below,
    qsd_moment,
    reference_model,
    sample_qsd,
)
from episwitch.qsd import transfer_weights
from oracles import dense_qsd, killed_generator_1d, mean_extinction_times

CONST1 = reference_model("const1")
B = reference_model("B")
TWO_GROUP = load_model("configs/two_group.json")


@pytest.fixture(scope="module")
def ladder_b():
    return qsd_ladder(B, [100, 200, 400, 800, 1600], lambda K: [K])


# -- state space --------------------------------------------------------------------


@pytest.mark.parametrize(
    "spec, K, sizes, M",
    [(B, 3, [3], 6), (TWO_GROUP, 2, [1, 1], 6), (B, 3200, [3200], 6400)],
)
def test_state_counts(spec, K, sizes, M):
    assert enumerate_states(spec, K, sizes).size == M


def test_index_round_trip_and_order():
    index = enumerate_states(TWO_GROUP, 5, [2, 3])
    seen = []
    for k in range(index.size):
        n, env = index.state(k)
        assert index.index(n, env) == k
        seen.append((tuple(n), env))
    assert seen == sorted(seen)
    assert len(set(seen)) == index.size == (3 * 4 - 1) * 2
    np.testing.assert_array_equal(index.counts()[0], [0, 1])
    np.testing.assert_array_equal(index.counts()[-1], [2, 3])


def test_index_rejects_bad_states():
    index = enumerate_states(TWO_GROUP, 5, [2, 3])
    with pytest.raises(DomainError):
        index.index([0, 0], 0)
    with pytest.raises(DomainError):
        index.index([3, 0], 0)
    with pytest.raises(DomainError):
        index.index([1, 0], 2)


def test_state_cap():
    with pytest.raises(SizeError) as err:
        enumerate_states(TWO_GROUP, 2000, [1000, 1000], cap=10_000)
    assert "2004000" in str(err.value)
    with pytest.raises(DomainError):
        enumerate_states(B, 10, [9])


# -- killed generator ---------------------------------------------------------------


def test_generator_two_state_example():
    gen = build_killed_generator(CONST1, 2, [2])
    np.testing.assert_array_equal(gen.matrix.toarray(), [[-2.0, 1.0], [2.0, -2.0]])
    np.testing.assert_array_equal(gen.flux, [1.0, 0.0])
    assert gen.gamma == 2.0


@pytest.mark.parametrize("spec, K, sizes", [(B, 20, [20]), (TWO_GROUP, 9, [4, 5]), (CONST1, 7, [7])])
def test_generator_conserves_rate(spec, K, sizes):
    gen = build_killed_generator(spec, K, sizes)
    np.testing.assert_allclose(np.asarray(gen.matrix.sum(axis=1)).ravel() + gen.flux, 0.0, atol=1e-12)
    off = gen.matrix - np.diag(gen.matrix.diagonal())
    assert off.min() >= 0


def test_generator_full_state_has_no_infection():
    index = enumerate_states(TWO_GROUP, 9, [4, 5])
    gen = build_killed_generator(TWO_GROUP, 9, [4, 5], index)
    for env in range(2):
        row = gen.matrix.getrow(index.index([4, 5], env))
        for col in row.indices:
            n, _ = index.state(col)
            assert np.all(n <= [4, 5]) and n.sum() <= 9


def test_generator_matches_dense_oracle():
    L, flux = killed_generator_1d([3.0, 0.5], 1.0, [[-1, 1], [1, -1]], 25)
    gen = build_killed_generator(B, 25, [25])
    np.testing.assert_allclose(gen.matrix.toarray(), L, atol=1e-12)
    np.testing.assert_allclose(gen.flux, flux, atol=1e-12)


# -- QSD ----------------------------------------------------------------------------


def test_qsd_two_state_example():
    res = compute_qsd(CONST1, 2, [2])
    assert res.converged
    assert res.rate == pytest.approx(2 - math.sqrt(2), abs=1e-10)
    np.testing.assert_allclose(res.weights, [2 - math.sqrt(2), math.sqrt(2) - 1], atol=1e-10)


def test_qsd_matches_dense_oracle_single_environment():
    L, _ = killed_generator_1d([2.0], 1.0, [[0.0]], 3)
    lam, mu = dense_qsd(L)
    res = compute_qsd(CONST1, 3, [3], tol=1e-13)
    assert abs(res.rate - lam) <= 1e-10
    np.testing.assert_allclose(res.weights, mu, atol=1e-10)


def test_qsd_matches_dense_oracle_two_environments():
    L, _ = killed_generator_1d([3.0, 0.5], 1.0, [[-1, 1], [1, -1]], 40)
    lam, mu = dense_qsd(L)
    res = compute_qsd(B, 40, [40], tol=1e-13)
    assert res.rate == pytest.approx(lam, rel=1e-9)
    np.testing.assert_allclose(res.weights, mu, atol=1e-10)
    # mean extinction time from the QSD is 1 / rate
    assert mu @ mean_extinction_times(L) == pytest.approx(res.mean_extinction_time, rel=1e-8)


def test_qsd_two_groups_matches_dense():
    spec = ModelSpec.lajmanovich_yorke(C=[[[0, 2], [2, 0]], [[0, 0.5], [1, 0]]], D=[[1, 1], [1, 1]],
                                       Q=[[-1, 1], [2, -2]])
    gen = build_killed_generator(spec, 10, [4, 6])
    lam, mu = dense_qsd(gen.matrix.toarray())
    res = compute_qsd(spec, 10, [4, 6], tol=1e-13)
    assert res.rate == pytest.approx(lam, rel=1e-9)
    np.testing.assert_allclose(res.weights, mu, atol=1e-10)


def test_qsd_contract_model_b():
    res = compute_qsd(B, 100, [100])
    assert res.converged and res.residual < 1e-10 and res.rate > 0
    assert res.weights.min() >= 0 and res.weights.sum() == pytest.approx(1.0, abs=1e-14)


def test_qsd_unconverged_is_flagged():
    res = compute_qsd(B, 400, [400], max_iter=300)
    assert not res.converged
    assert res.iterations == 300
    assert res.residual >= 1e-10


def test_warm_start_agrees_with_cold_start():
    coarse = compute_qsd(B, 50, [50])
    index = enumerate_states(B, 100, [100])
    init = transfer_weights(coarse, index)
    assert init.shape == (index.size,) and init.sum() == pytest.approx(1.0)
    warm = compute_qsd(B, 100, [100], init=init)
    cold = compute_qsd(B, 100, [100])
    assert warm.iterations < cold.iterations
    np.testing.assert_allclose(warm.weights, cold.weights, atol=1e-9)


def test_bad_initial_vector():
    with pytest.raises(DomainError):
        compute_qsd(B, 10, [10], init=np.zeros(20))


def test_ladder_rates_decrease(ladder_b):
    rates = [r.rate for r in ladder_b]
    assert all(r.converged for r in ladder_b)
    assert all(r > 0 for r in rates)
    assert np.all(np.diff(rates) < 0)


# -- functionals ----------------------------------------------------------------------


def test_moment_examples():
    res = compute_qsd(CONST1, 2, [2])
    assert qsd_moment(res, 0.0) == pytest.approx(1.0, abs=1e-14)
    assert qsd_moment(res, 1.0) == pytest.approx(1.585786, abs=1e-6)


def test_moment_bounded_below_threshold(ladder_b):
    m = [qsd_moment(r, 1.0) for r in ladder_b]
    assert max(m) / min(m) < 3


def test_mass_below():
    res = compute_qsd(TWO_GROUP, 9, [4, 5])
    assert qsd_mass_below(res, 2.5) == pytest.approx(1.0, abs=1e-14)
    assert qsd_mass_below(res, 1e-3) == 0.0
    with pytest.raises(DomainError):
        qsd_mass_below(res, 0.0)


def test_sample_qsd_frequencies():
    res = compute_qsd(B, 5, [5])
    counts, envs = sample_qsd(res, np.random.default_rng(0), 200_000)
    k = (counts[:, 0] - 1) * 2 + envs
    freq = np.bincount(k, minlength=res.weights.size) / 200_000
    np.testing.assert_allclose(freq, res.weights, atol=4e-3)


def test_qsd_csv(tmp_path):
    res = compute_qsd(TWO_GROUP, 3, [1, 2])
    out = tmp_path / "q.csv"
    res.to_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "n_1,n_2,env,weight"
    assert lines[1].startswith("0,1,1,")
    assert len(lines) == res.weights.size + 1
    assert sum(float(ln.split(",")[-1]) for ln in lines[1:]) == pytest.approx(1.0)


# -- comparison with the switched ODE --------------------------------------------------


def test_occupation_concentrates_at_endemic_point():
    h = pdmp_stationary_estimate(CONST1, T=200.0, burn_in=50.0, output_dt=0.05, rng=RngStream(0))
    assert h.total == pytest.approx(1.0)
    centre = h.weights[0, 24:26].sum()  # [0.48, 0.52)
    assert centre >= 0.99


def test_occupation_model_b_is_normalised():
    h = pdmp_stationary_estimate(B, T=500.0, burn_in=50.0, output_dt=0.1, rng=RngStream(1))
    assert h.total == pytest.approx(1.0, abs=1e-12)
    assert h.weights.shape == (2, 50)


def test_occupation_two_groups_shape():
    h = pdmp_stationary_estimate(TWO_GROUP, T=100.0, burn_in=10.0, output_dt=0.1, rng=RngStream(1), bins=20)
    assert h.weights.shape == (2, 20, 20)
    assert h.total == pytest.approx(1.0)


def test_qsd_approaches_occupation_measure(ladder_b):
    occ = pdmp_stationary_estimate(B, T=20_000.0, burn_in=100.0, output_dt=0.05, rng=RngStream(2))
    d_small = bin_qsd(ladder_b[0]).l1_distance(occ)
    d_large = bin_qsd(ladder_b[-1]).l1_distance(occ)
    assert d_large < d_small


def test_histogram_binning_mismatch():
    a = bin_qsd(compute_qsd(B, 10, [10]), bins=10)
    b = bin_qsd(compute_qsd(B, 10, [10]), bins=20)
    with pytest.raises(DomainError):
        a.l1_distance(b)
