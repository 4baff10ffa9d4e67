import math

import numpy as np
import pytest

from delayed_choice import qrng
from delayed_choice.qrng import (
    BitSequence,
    NoiseState,
    QrngParams,
    StatisticsError,
    autocorrelation,
    bit_correlation,
    bits_for_range,
    count_variance_factor,
    estimate_corr_time,
    generate_bits,
    generate_noise,
    sample_bit,
    sparse_bits,
    stationary_state,
)

N = 420_000
DEFAULT = QrngParams()
ARTIFACT = QrngParams(osc_amplitude=0.3)


def test_arcsin_prediction():
    rho = math.exp(-238 / 60)
    assert rho == pytest.approx(0.019, abs=5e-4)
    assert bit_correlation(DEFAULT, 1) == pytest.approx(2 / math.pi * math.asin(rho), rel=1e-12)
    assert bit_correlation(DEFAULT, 1) == pytest.approx(0.012, abs=5e-4)


def test_white_noise_limit_gives_iid_bits():
    p = QrngParams(corr_time=1e-3)
    bits, _ = generate_bits(N, p, np.random.default_rng(0))
    r = autocorrelation(bits, 100)
    assert np.max(np.abs(r[1:])) < 4 / math.sqrt(N)


class _ZeroRng:
    """Generator stub whose Gaussian draws are exactly zero."""

    def __init__(self, tie_bit):
        self.tie_bit = tie_bit
        self.coin_calls = 0

    def standard_normal(self, size=None):
        return 0.0 if size is None else np.zeros(size)

    def integers(self, lo, hi, size=None):
        self.coin_calls += 1
        return self.tie_bit


@pytest.mark.parametrize("tie_bit", [0, 1])
def test_zero_noise_tie_uses_fresh_coin(tie_bit):
    rng = _ZeroRng(tie_bit)
    bit, state = sample_bit(NoiseState(0.0), DEFAULT, rng)
    assert state.value(DEFAULT) == 0.0
    assert bit == tie_bit and rng.coin_calls == 1


def test_sample_bit_lag1_within_sampling_error_of_arcsin_law():
    rng = np.random.default_rng(1)
    state = stationary_state(DEFAULT, rng)
    bits = np.empty(N, dtype=np.uint8)
    for i in range(N):
        bits[i], state = sample_bit(state, DEFAULT, rng)
    r1 = autocorrelation(bits, 1)[1]
    assert abs(r1 - bit_correlation(DEFAULT, 1)) < 3 / math.sqrt(N)


def test_alternating_sequence():
    bits = np.tile([0, 1], 500)
    r = autocorrelation(BitSequence(bits), 3)
    assert r[0] == 1.0
    assert r[1] == pytest.approx(-1.0)
    assert r[2] == pytest.approx(1.0)


def test_zero_variance_is_an_error():
    with pytest.raises(StatisticsError):
        autocorrelation(np.ones(1000, dtype=np.uint8), 10)
    with pytest.raises(StatisticsError):
        BitSequence(np.empty(0))
    with pytest.raises(StatisticsError):
        autocorrelation(np.array([0, 1, 0]), 5)


def test_iid_fair_bits_bound():
    bits = np.random.default_rng(2).integers(0, 2, N)
    r = autocorrelation(bits, 100)
    assert np.max(np.abs(r[1:])) < 4 / math.sqrt(N)


def test_oscillation_artifact_short_lag_anticorrelation():
    bits = bits_for_range(3, 0, 4 * N, ARTIFACT)
    r = autocorrelation(bits, 30)
    assert r[1] == pytest.approx(-0.04, abs=0.005)
    assert bit_correlation(ARTIFACT, 1) == pytest.approx(-0.04, abs=0.001)
    # beyond 1 us (lag >= 5 at 238 ns) the correlation is gone
    assert np.max(np.abs(r[5:])) < 4 / math.sqrt(bits.size)


@pytest.mark.parametrize("tau,tol", [(60.0, 5.0), (30.0, 3.0)])
def test_corr_time_estimator(tau, tol):
    x, _ = generate_noise(200_000, 10.0, QrngParams(corr_time=tau), np.random.default_rng(4))
    assert abs(estimate_corr_time(x, 10.0) - tau) < tol


def test_corr_time_errors():
    with pytest.raises(StatisticsError):
        estimate_corr_time(np.full(20_000, 0.3))
    with pytest.raises(StatisticsError):
        estimate_corr_time(np.zeros(100) + np.arange(100))


def test_marginal_fairness():
    n = 10**6
    bits = bits_for_range(5, 0, n, DEFAULT)
    assert abs(bits.mean() - 0.5) <= 4 / (2 * math.sqrt(n))


def test_stationarity_over_disjoint_windows():
    x, _ = generate_noise(300_000, 10.0, DEFAULT, np.random.default_rng(6))
    lags = [1, 3, 6, 12]
    covs = []
    for w in np.split(x, 3):
        w = w - w.mean()
        covs.append([float(w[:-k] @ w[k:]) / (w.size - k) for k in lags])
    covs = np.array(covs)
    expected = DEFAULT.autocovariance(np.array(lags) * 10.0)
    # effective sample count ~ window / (2 tau / dt); generous 4-sigma band
    sigma = math.sqrt(2 * 6 / 100_000)
    assert np.all(np.abs(covs - expected) < 4 * sigma)


def test_reproducibility_and_partition_independence():
    a = bits_for_range(9, 0, 300_000, DEFAULT)
    assert np.array_equal(a, bits_for_range(9, 0, 300_000, DEFAULT))
    parts = [bits_for_range(9, lo, hi, DEFAULT) for lo, hi in [(0, 70_001), (70_001, 131_072), (131_072, 300_000)]]
    assert np.array_equal(a, np.concatenate(parts))
    assert not np.array_equal(a, bits_for_range(10, 0, 300_000, DEFAULT))


def test_chunked_bits_follow_arcsin_law():
    bits = bits_for_range(11, 0, 4_000_000, DEFAULT)
    r = autocorrelation(bits, 2)
    assert abs(r[1] - bit_correlation(DEFAULT, 1)) < 3 / math.sqrt(bits.size)


def test_sparse_bits_have_exact_pair_correlation():
    # pairs of triggers one clock apart, far from each other
    starts = np.arange(0, 10**9, 2000, dtype=np.int64)
    idx = np.sort(np.concatenate([starts, starts + 1]))
    b = sparse_bits(idx, DEFAULT, np.random.default_rng(12)).reshape(-1, 2).astype(float)
    r = np.corrcoef(b[:, 0], b[:, 1])[0, 1]
    assert abs(r - bit_correlation(DEFAULT, 1)) < 3 / math.sqrt(b.shape[0])
    assert abs(b.mean() - 0.5) < 3 * 0.5 / math.sqrt(b.size)


def test_count_variance_factor_matches_simulation():
    p = QrngParams(corr_time=300.0)
    f = count_variance_factor(p)
    assert f > 1.5
    bits = bits_for_range(13, 0, 2_000_000, p).reshape(-1, 1000).sum(axis=1)
    ratio = bits.var() / (1000 / 4)
    # var estimate from 2000 blocks has ~3% relative error
    assert ratio == pytest.approx(f, rel=0.15)


def test_vectorized_matches_stepwise_statistics():
    rng = np.random.default_rng(14)
    bits, _ = generate_bits(N, ARTIFACT, rng)
    r = autocorrelation(bits, 2)
    assert abs(r[1] - bit_correlation(ARTIFACT, 1)) < 3 / math.sqrt(N)
    assert abs(r[2] - bit_correlation(ARTIFACT, 2)) < 3 / math.sqrt(N)


@pytest.mark.parametrize("kw", [{"corr_time": 0}, {"sample_period": -1}, {"osc_amplitude": 1.0}, {"corr_time": 1e7}])
def test_invalid_params(kw):
    with pytest.raises(ValueError):
        QrngParams(**kw)


def test_module_exports_chunk():
    assert qrng.QRNG_CHUNK == 1 << 16
