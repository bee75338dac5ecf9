import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from progs.entropy import (P_MIN, SIGMA_MIN, EntropyParams, GaussianCoder, MlpWeights,
                           build_tables, coding_table, dequantize, deserialize_weights,
                           entropy_bits, fit_static_prior, load_weights, normalized_rate,
                           predict_params, quantize, save_weights, serialize_weights,
                           symbol_probability, symbol_window)
from progs.errors import FormatError, SymbolRangeError
from progs.rangecoder import RangeDecoder, RangeEncoder
from progs.scene import OctreeConfig

CFG = OctreeConfig()


def _phi(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def test_zero_network():
    w = MlpWeights.zeros()
    p = predict_params(w, np.zeros(64), np.zeros(64), CFG)
    assert not p.mu.any()
    np.testing.assert_allclose(p.sigma, math.log(2) + 1e-4, rtol=1e-12)
    np.testing.assert_array_equal(p.q, CFG.q0_vector())


def _straight_line(w, x, cfg):
    """Per-unit loops over the weights, no matrix products."""
    def mlp(w1, b1, w2, b2):
        hidden = []
        for j in range(w1.shape[1]):
            acc = float(b1[j])
            for i, xi in enumerate(x):
                acc += xi * float(w1[i, j])
            hidden.append(max(acc, 0.0))
        out = []
        for k in range(w2.shape[1]):
            acc = float(b2[k])
            for j, hj in enumerate(hidden):
                acc += hj * float(w2[j, k])
            out.append(acc)
        return out

    C = cfg.num_channels
    d = mlp(w.d_w1, w.d_b1, w.d_w2, w.d_b2)
    r = mlp(w.q_w1, w.q_b1, w.q_w2, w.q_b2)
    q0 = [cfg.q0_f] * cfg.dim_f + [cfg.q0_s] * cfg.dim_s + [cfg.q0_o] * 3 * cfg.dim_o
    mu = d[:C]
    sigma = [math.log1p(math.exp(v)) + 1e-4 for v in d[C:]]
    q = [q0[c] * (1 + math.tanh(r[c])) for c in range(C)]
    return mu, sigma, q


def test_forward_pass_matches_reference(rng):
    w = MlpWeights.random(seed=4)
    h, hp = rng.uniform(-1, 1, 64), rng.uniform(-1, 1, 64)
    p = predict_params(w, h, hp, CFG)
    mu, sigma, q = _straight_line(w, np.concatenate([h, hp]).tolist(), CFG)
    np.testing.assert_allclose(p.mu, mu, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(p.sigma, sigma, rtol=1e-6)
    np.testing.assert_allclose(p.q, q, rtol=1e-6)


def test_step_range_for_random_weights(rng):
    for seed in range(5):
        w = MlpWeights.random(seed=seed)
        p = predict_params(w, rng.uniform(-1, 1, (30, 64)), rng.uniform(-1, 1, (30, 64)), CFG)
        q0 = CFG.q0_vector()
        assert np.all(p.q > 0) and np.all(p.q < 2 * q0)
        assert np.all(p.sigma >= SIGMA_MIN)


def test_seeded_weights_start_near_base_step(rng):
    w = MlpWeights.seeded(CFG, seed=2)
    p = predict_params(w, rng.uniform(-1, 1, (10, 64)), np.zeros((10, 64)), CFG)
    np.testing.assert_allclose(p.q / CFG.q0_vector(), 1.0, atol=0.05)
    np.testing.assert_allclose(p.sigma / CFG.q0_vector(), 4.0, rtol=0.1)


def test_quantize_examples():
    assert quantize(0.0, 0.2) == 0 and dequantize(0, 0.2) == 0.0
    assert quantize(0.3, 0.2) == 2
    assert dequantize(2, 0.2) == pytest.approx(0.4)
    assert quantize(-0.3, 0.2) == -1  # ties go toward +inf
    with pytest.raises(SymbolRangeError):
        quantize(1e6, 1.0)


@given(st.lists(st.floats(-1000, 1000), min_size=1, max_size=50), st.floats(0.05, 5.0))
def test_quantize_error_bound(values, q):
    a = np.array(values)
    assert np.all(np.abs(a - dequantize(quantize(a, q), q)) <= q / 2 + 1e-9)


def test_symbol_probability_examples():
    assert symbol_probability(0, 0.0, 1.0, 1.0) == pytest.approx(_phi(0.5) - _phi(-0.5), abs=1e-12)
    assert symbol_probability(0, 0.0, 1.0, 1.0) == pytest.approx(0.3829249, abs=1e-7)
    ks = np.arange(-30, 31)
    p = symbol_probability(ks, 0.0, 2.5, 0.7)
    np.testing.assert_allclose(p, p[::-1], rtol=1e-12)
    assert symbol_probability(10**4, 0.0, 1.0, 1.0) == P_MIN


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50), st.floats(0.01, 20), st.floats(0.05, 5))
def test_probabilities_sum_to_one(mu, sigma, q):
    ks = np.arange(-32768, 32768)
    total = symbol_probability(ks, mu, sigma, q, floor=False).sum()
    assert 1 - 1e-3 <= total <= 1 + 1e-12


def test_entropy_bits_simple_cases():
    params = EntropyParams(np.array([0.0]), np.array([1e-3]), np.array([1.0]))
    assert entropy_bits(np.array([0]), params) == pytest.approx(0.0, abs=1e-9)
    half = EntropyParams(np.array([0.5]), np.array([1e-4]), np.array([1.0]))
    assert entropy_bits(np.array([0]), half) == pytest.approx(1.0, abs=1e-9)
    far = EntropyParams(np.zeros(3), np.ones(3), np.ones(3))
    assert entropy_bits(np.array([100, -100, 50]), far) == pytest.approx(48.0)


def test_entropy_bits_matches_monte_carlo(rng):
    mu, sigma, q = 0.3, 2.0, 0.5
    n = 10**5
    ks = quantize(rng.normal(mu, sigma, n), q)
    params = EntropyParams(np.full(n, mu), np.full(n, sigma), np.full(n, q))
    model = entropy_bits(ks, params) / n
    values, counts = np.unique(ks, return_counts=True)
    freq = dict(zip(values.tolist(), (counts / n).tolist()))
    empirical = float(np.mean([-math.log2(freq[k]) for k in ks.tolist()]))
    assert model == pytest.approx(empirical, rel=0.05)


def test_fit_static_prior(rng):
    cfg = OctreeConfig(dim_f=2, dim_s=1, dim_o=1)
    data = rng.normal(0, 1, (10**4, cfg.num_channels))
    data[:, 1] = 3.0
    prior = fit_static_prior(data, cfg)
    assert abs(prior.mu[0]) < 0.05 and abs(prior.sigma[0] - 1) < 0.05
    assert prior.sigma[1] == SIGMA_MIN
    np.testing.assert_array_equal(prior.q, cfg.q0_vector())
    k = quantize(data[:, 0], 1.0)
    fitted = EntropyParams(prior.mu[0], prior.sigma[0], 1.0)
    wide = EntropyParams(0.0, 20.0, 1.0)
    assert entropy_bits(k, fitted) < entropy_bits(k, wide)


def test_normalized_rate():
    assert normalized_rate(680.0, 10, CFG) == 1.0
    with pytest.raises(ValueError):
        normalized_rate(1.0, 0, CFG)


def test_window_limits():
    lo, hi = symbol_window(np.array([0.0, 1e9, 0.0]), np.array([1.0, 1.0, 1e9]),
                           np.array([1.0, 1.0, 1.0]))
    assert lo[0] < 0 < hi[0]
    assert hi[1] == 32767
    assert hi[2] - lo[2] == 2 * 4095


def test_vectorised_tables_match_reference(rng):
    n = 400
    mu = rng.normal(0, 5, n)
    sigma = np.exp(rng.uniform(-8, 4, n))
    q = np.exp(rng.uniform(-6, 1, n))
    mu[:20] = 0.0
    sigma[:20] = 1.0
    q[:20] = 1.0
    los, tables = build_tables(mu, sigma, q)
    for i in range(n):
        lo, table = coding_table(mu[i], sigma[i], q[i])
        assert los[i] == lo and tables[i].cdf == table.cdf


def test_gaussian_coder_roundtrip_with_escapes(rng):
    n = 3000
    mu = rng.normal(0, 2, n)
    sigma = np.exp(rng.uniform(-3, 2, n))
    q = np.exp(rng.uniform(-2, 1, n))
    params = EntropyParams(mu, sigma, q)
    ks = quantize(rng.normal(mu, sigma), q)
    ks[::100] = rng.integers(-32768, 32768, len(ks[::100]))  # far outliers use the escape
    enc = RangeEncoder()
    GaussianCoder().encode(enc, ks, params)
    out = GaussianCoder().decode(RangeDecoder(enc.finish()), params)
    np.testing.assert_array_equal(out, ks)


def test_weights_serialization(tmp_path):
    w = MlpWeights.random(in_dim=16, hidden=8, channels=5, seed=1)
    data = serialize_weights(w)
    back, end = deserialize_weights(b"ab" + data, 2)
    assert end == len(data) + 2
    for name in ("d_w1", "d_b1", "d_w2", "d_b2", "q_w1", "q_b1", "q_w2", "q_b2"):
        np.testing.assert_array_equal(getattr(back, name), getattr(w, name))
    save_weights(w, tmp_path / "w.bin")
    assert serialize_weights(load_weights(tmp_path / "w.bin")) == data
    with pytest.raises(FormatError):
        deserialize_weights(data[:-3])
