import math

import numpy as np
import pytest
from scipy import stats

from mcchan import ber, channel
from mcchan.detection import CsiMode, ThresholdVariant, poisson_cdf_below
from mcchan.model import derive_effective, reference_config

STATIC = dict(D_tx=0.0, D_rx=0.0)


def smoothed(x, width=5):
    return np.convolve(x, np.ones(width) / width, mode="valid")


def trend(x):
    x = smoothed(np.asarray(x))
    return stats.spearmanr(np.arange(len(x)), x)[0]


def reference_error():
    cfg = reference_config(**STATIC)
    lam1 = cfg.n_A_bar + cfg.N_A * channel.cir_conditional(cfg.r_0, cfg.tau_s, derive_effective(cfg))
    return 0.5 * (1 - poisson_cdf_below(23, cfg.n_A_bar)) + 0.5 * poisson_cdf_below(23, lam1)


def test_static_first_bit_semianalytic_is_closed_form():
    cfg = reference_config(**STATIC)
    for csi in CsiMode:
        mean, se = ber.expected_error_semianalytic(1, cfg, csi, trials=2000, seed=4)
        assert mean == pytest.approx(reference_error(), rel=1e-12)
        assert se == 0.0


def test_static_modes_identical():
    cfg = reference_config(**STATIC)
    for method in ("empirical", "semianalytic"):
        curve = ber.ber_curve(cfg, trials=2000, seed=5, method=method)
        for r in curve.records:
            assert r.pe_perfect == r.pe_outdated
            assert r.gap == 0.0
            assert r.stderr_perfect == r.stderr_outdated


def test_forced_zero_bits_error_rate():
    cfg = reference_config(**STATIC)
    mean, se = ber.expected_error_empirical(1, cfg, CsiMode.PERFECT, trials=20_000, seed=6, bit_prob=0.0)
    expected = 1 - poisson_cdf_below(23, cfg.n_A_bar)
    assert abs(mean - expected) <= 3 * se


@pytest.mark.parametrize("d_tx", [5e-13, 20e-13])
def test_error_grows_with_bit_index(d_tx):
    cfg = reference_config(D_tx=d_tx)
    semi = ber.ber_curve(cfg, trials=4000, seed=7, method="semianalytic", variant=ThresholdVariant.GENIE)
    for attr in ("pe_perfect", "pe_outdated"):
        pe = np.array([getattr(r, attr) for r in semi.records])
        assert np.all(np.diff(pe) >= 0)


@pytest.mark.parametrize("j", [5, 25, 45])
def test_semianalytic_and_empirical_agree_with_genie(j):
    cfg = reference_config(D_tx=20e-13)
    for csi in CsiMode:
        a, sa = ber.expected_error_semianalytic(j, cfg, csi, trials=10_000, seed=8)
        b, sb = ber.expected_error_empirical(j, cfg, csi, trials=10_000, seed=9, variant=ThresholdVariant.GENIE)
        assert abs(a - b) <= 3 * math.hypot(sa, sb)


def test_gap_trend_over_bit_index():
    curve = ber.ber_curve(reference_config(D_tx=20e-13), trials=10_000, seed=1)
    assert trend([r.gap for r in curve.records]) > 0.9


def test_single_interval_average():
    curve = ber.ber_curve(reference_config(L=1, D_tx=20e-13), trials=1000, seed=10)
    assert len(curve.records) == 1
    assert curve.pe_perfect == curve.records[0].pe_perfect
    assert curve.pe_outdated == curve.records[0].pe_outdated


def test_record_invariants():
    curve = ber.ber_curve(reference_config(D_tx=100e-13), trials=2000, seed=11)
    for r in curve.records:
        assert 0 <= r.pe_perfect <= 1 and 0 <= r.pe_outdated <= 1
        assert r.stderr_perfect >= 0 and r.stderr_outdated >= 0
        assert r.gap == abs(r.pe_outdated - r.pe_perfect)
        assert r.trials == 2000
    assert curve.record(7).j == 7


def test_stderr_scaling():
    cfg = reference_config(D_tx=20e-13)
    a = ber.ber_curve(cfg, trials=5000, seed=12)
    b = ber.ber_curve(cfg, trials=10_000, seed=12)
    ratio = [x.stderr_outdated / y.stderr_outdated for x, y in zip(a.records[9:], b.records[9:])]
    assert abs(np.median(ratio) / math.sqrt(2) - 1) <= 0.15


def test_reproducible_and_thread_independent():
    cfg = reference_config(D_tx=20e-13)
    a = ber.ber_curve(cfg, trials=1500, seed=13, threads=1)
    b = ber.ber_curve(cfg, trials=1500, seed=13, threads=4)
    assert a == b


def test_bad_arguments():
    cfg = reference_config()
    with pytest.raises(ValueError):
        ber.ber_curve(cfg, trials=10, method="analytic")
    with pytest.raises(ValueError):
        ber.expected_error_semianalytic(0, cfg, CsiMode.PERFECT, 10, 1)
