import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcchan import channel, detection, oracles
from mcchan.detection import (
    CsiMode,
    DegenerateModelError,
    PoissonSignalModel,
    ThresholdVariant,
    conditional_error_prob,
    decide,
    optimal_threshold,
    poisson_cdf_below,
    poisson_tail,
)
from mcchan.model import derive_effective, reference_config
from mcchan.sim import ObservationSeries, RelativeTrajectory, sample_relative_trajectory


def mp_cdf_below(xi, lam):
    mpmath.mp.dps = 50
    lam = mpmath.mpf(repr(lam))
    return float(mpmath.exp(-lam) * mpmath.fsum(lam**w / mpmath.factorial(w) for w in range(xi)))


def h0(cfg):
    return channel.cir_conditional(cfg.r_0, cfg.tau_s, derive_effective(cfg))


# ---------------------------------------------------------------- Poisson CDF


def test_cdf_edge_cases():
    assert poisson_cdf_below(0, 7.0) == 0.0
    assert poisson_cdf_below(1, 7.0) == pytest.approx(math.exp(-7.0), rel=1e-14)


@pytest.mark.parametrize("xi, lam", [(23, 10.0), (23, 41.16669), (5, 0.3), (150, 100.0), (9000, 10_000.0)])
def test_cdf_matches_high_precision(xi, lam):
    assert abs(poisson_cdf_below(xi, lam) - mp_cdf_below(xi, lam)) <= 1e-12


def test_cdf_matches_log_space_sum():
    for xi in (1, 10, 40, 300):
        for lam in (0.1, 15.0, 250.0):
            assert abs(poisson_cdf_below(xi, lam) - oracles.poisson_cdf_below_sum(xi, lam)) <= 1e-12


@settings(max_examples=300, deadline=None)
@given(xi=st.integers(0, 20_000), lam=st.floats(0.0, 1e4))
def test_cdf_complement_exact(xi, lam):
    assert poisson_cdf_below(xi, lam) + poisson_tail(xi, lam) == 1.0


def test_cdf_vectorized():
    xi = np.array([0, 1, 23])
    np.testing.assert_allclose(poisson_cdf_below(xi, 10.0), [poisson_cdf_below(int(x), 10.0) for x in xi])


# ---------------------------------------------------------------- decisions and errors


def test_decide_boundary():
    assert decide(5, 5) == 1
    assert decide(4, 5) == 0
    assert decide(0, 0) == 1


def test_conditional_error_edges():
    assert conditional_error_prob(1, 41.0, 0) == 0.0
    assert conditional_error_prob(0, 41.0, 0) == 1.0


def test_conditional_error_at_reference_point():
    lam1 = 10.0 + 30000 * h0(reference_config())
    err = conditional_error_prob(1, lam1, 23)
    assert 0.0 < err < 0.01
    assert abs(err - mp_cdf_below(23, lam1)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(mean=st.floats(0.0, 500.0), xi=st.integers(0, 600))
def test_conditional_error_monotone_in_threshold(mean, xi):
    assert conditional_error_prob(1, mean, xi + 1) >= conditional_error_prob(1, mean, xi)
    assert conditional_error_prob(0, mean, xi + 1) <= conditional_error_prob(0, mean, xi)


# ---------------------------------------------------------------- threshold


def test_threshold_reference_example():
    lam1 = 10.0 + 30000 * h0(reference_config())
    xi = optimal_threshold(PoissonSignalModel(lam1, 10.0), 0.5, 0.5)
    assert xi == 23
    grid = np.arange(0, 201)
    err = oracles.threshold_error(grid, 10.0, lam1, 0.5, 0.5)
    assert int(grid[np.argmin(err)]) == 23


def test_threshold_arithmetic_identity():
    lam0 = 1.0 / (math.e - 1.0)
    assert optimal_threshold(PoissonSignalModel(lam0 + 1.0, lam0), 0.5, 0.5) == 1


def test_threshold_floored_at_zero():
    # ln(P0/P1) + (lambda1 - lambda0) < 0
    assert optimal_threshold(PoissonSignalModel(2.0, 1.0), 1e-3, 1 - 1e-3) == 0
    assert oracles.brute_force_threshold(1.0, 2.0, 1e-3, 1 - 1e-3) == 0


def test_threshold_monotone_in_prior():
    model = PoissonSignalModel(41.0, 10.0)
    xis = [optimal_threshold(model, p0, 1 - p0) for p0 in np.linspace(0.05, 0.95, 19)]
    assert all(a <= b for a, b in zip(xis, xis[1:]))


def test_threshold_errors():
    with pytest.raises(DegenerateModelError):
        optimal_threshold(PoissonSignalModel(5.0, 5.0), 0.5, 0.5)
    with pytest.raises(ValueError):
        optimal_threshold(PoissonSignalModel(5.0, 0.0), 0.5, 0.5)
    with pytest.raises(ValueError):
        optimal_threshold(PoissonSignalModel(5.0, 1.0), 1.0, 0.0)
    with pytest.raises(ValueError):
        optimal_threshold(PoissonSignalModel(1.0, 5.0), 0.5, 0.5)


def test_threshold_matches_exhaustive_search_in_range():
    rng = np.random.default_rng(101)
    checked = 0
    for _ in range(500):
        lam0, lam1 = np.sort(rng.uniform(0.1, 100.0, 2))
        p0 = float(rng.uniform(0.05, 0.95))
        xi = optimal_threshold(PoissonSignalModel(lam1, lam0), p0, 1 - p0)
        assert xi == oracles.brute_force_threshold(lam0, lam1, p0, 1 - p0)
        top = math.ceil(lam1) + math.ceil(10 * math.sqrt(lam1))
        if xi <= top:
            err = oracles.threshold_error(np.arange(top + 1), lam0, lam1, p0, 1 - p0)
            # the closed form attains the minimum of the stated search range
            assert err[xi] <= err.min() * (1 + 1e-12)
            checked += 1
    assert checked > 400


def test_threshold_array_fallback():
    xi, ok = detection.threshold_array([10.0, 10.0, 0.0], [41.16669, 10.0, 5.0], 0.5, 0.5)
    assert ok.tolist() == [True, False, False]
    assert xi[0] == 23
    assert xi[1] == 10.0
    assert xi[2] == 2.5


# ---------------------------------------------------------------- signal means


def test_mean_received_noise_only():
    cfg = reference_config(D_tx=20e-13)
    traj = sample_relative_trajectory(cfg, 1)
    assert detection.mean_received_perfect(np.zeros(cfg.L), traj, 30, cfg) == cfg.n_A_bar
    assert detection.mean_received_outdated(np.zeros(cfg.L), 30, cfg) == cfg.n_A_bar


def test_mean_received_single_bit():
    cfg = reference_config()
    traj = sample_relative_trajectory(cfg, 1)
    expected = cfg.n_A_bar + cfg.N_A * h0(cfg)
    assert detection.mean_received_perfect([1], traj, 1, cfg) == pytest.approx(expected, rel=1e-14)
    assert detection.mean_received_outdated([1], 1, cfg) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(41.1667, abs=1e-4)


def test_static_perfect_equals_outdated():
    cfg = reference_config(D_rx=0.0)
    traj = sample_relative_trajectory(cfg, 2)
    bits = np.random.default_rng(3).integers(0, 2, cfg.L)
    for j in range(1, cfg.L + 1):
        assert detection.mean_received_perfect(bits, traj, j, cfg) == detection.mean_received_outdated(bits, j, cfg)


def test_isi_terms_smaller_than_current_bit():
    cfg = reference_config(D_rx=0.0)
    H = detection.response_matrix(np.full(cfg.L, cfg.r_0), cfg)
    for j in range(cfg.L):
        assert np.all(H[:j, j] < H[j, j])
        assert np.all(H[j + 1:, j] == 0.0)


def test_mean_received_rejects_bad_index():
    with pytest.raises(ValueError):
        detection.mean_received_outdated([1], 0, reference_config())


# ---------------------------------------------------------------- sequential detector


def test_detects_single_one_reliably():
    cfg = reference_config(L=1)
    rng = np.random.default_rng(8)
    lam1 = cfg.n_A_bar + cfg.N_A * h0(cfg)
    counts = rng.poisson(lam1, size=(10_000, 1))
    H = detection.response_matrix(np.full((10_000, 1), cfg.r_0), cfg)
    res = detection.detect_batch(counts, H, cfg)
    assert np.all(res.thresholds == 23)
    assert np.mean(res.bits == 0) < 0.01


def test_all_zero_static_error_rate():
    cfg = reference_config(D_rx=0.0)
    rng = np.random.default_rng(9)
    n = 10_000
    counts = rng.poisson(cfg.n_A_bar, size=(n, cfg.L))
    H = np.broadcast_to(detection.response_matrix(np.full(cfg.L, cfg.r_0), cfg), (n, cfg.L, cfg.L))
    res = detection.detect_batch(counts, H, cfg)
    err = res.bits[:, 0].astype(float)
    expected = 1.0 - poisson_cdf_below(23, cfg.n_A_bar)
    assert abs(err.mean() - expected) <= 3 * math.sqrt(expected * (1 - expected) / n)


def test_detect_sequence_static_modes_agree():
    cfg = reference_config(D_rx=0.0)
    rng = np.random.default_rng(10)
    traj = RelativeTrajectory(np.tile(cfg.x0_vec, (cfg.L, 1)), cfg.T)
    bits = rng.integers(0, 2, cfg.L)
    means = [detection.mean_received_perfect(bits, traj, j, cfg) for j in range(1, cfg.L + 1)]
    obs = ObservationSeries(np.arange(cfg.L) * cfg.T + cfg.tau_s, rng.poisson(means))
    a = detection.detect_sequence(obs, CsiMode.PERFECT, traj, cfg)
    b = detection.detect_sequence(obs, CsiMode.OUTDATED, None, cfg)
    np.testing.assert_array_equal(a.bits, b.bits)
    np.testing.assert_array_equal(a.thresholds, b.thresholds)


def test_detect_sequence_argument_checks():
    cfg = reference_config(L=2)
    obs = ObservationSeries(np.zeros(2), np.array([30, 5]))
    with pytest.raises(ValueError):
        detection.detect_sequence(obs, CsiMode.PERFECT, None, cfg)
    with pytest.raises(ValueError):
        detection.detect_sequence(obs, CsiMode.OUTDATED, None, cfg, ThresholdVariant.GENIE)


def test_degenerate_thresholds_flagged():
    cfg = reference_config(L=2, N_A=0)
    obs = ObservationSeries(np.zeros(2), np.array([12, 7]))
    res = detection.detect_sequence(obs, CsiMode.OUTDATED, None, cfg)
    assert res.degenerate.all()
    np.testing.assert_array_equal(res.bits, [1, 0])
