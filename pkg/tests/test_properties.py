"""Property tests for invariants that hold for every parameter choice."""

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from uniseq.batch import simulate
from uniseq.decentralized import FusionNoise, NetworkConfig, NodeSpec, run_network
from uniseq.dist_models import (Bernoulli, Binomial, FinitePmf, Gaussian, Lognormal,
                                kl_divergence)
from uniseq.quantization import QuantizerSpec, quantize, quantized_pmf
from uniseq.sequential import Status, TestConfig, make_test

probs = st.floats(0.01, 0.99)
means = st.floats(-5, 5)
variances = st.floats(0.05, 20)


def _pmf(draw_list):
    p = np.asarray(draw_list, dtype=float) + 1e-3
    return tuple(p / p.sum())


pmfs = st.lists(st.floats(0, 1), min_size=2, max_size=6)


@given(means, variances, means, variances)
def test_gaussian_kl_nonnegative(m1, v1, m2, v2):
    d = kl_divergence(Gaussian(m1, v1), Gaussian(m2, v2)).nats
    assert d >= 0
    if (m1, v1) == (m2, v2):
        assert d == 0


@given(means, variances)
def test_kl_zero_at_equal_parameters(m, v):
    assert kl_divergence(Gaussian(m, v), Gaussian(m, v)).nats == 0
    assert kl_divergence(Lognormal(m, v), Lognormal(m, v)).nats == 0


@given(st.integers(1, 12), probs, probs)
def test_binomial_kl_nonnegative_zero_iff_equal(n, a, b):
    d = kl_divergence(Binomial(n, a), Binomial(n, b)).nats
    assert d >= -1e-15
    if a != b:
        assert d > 0


@given(pmfs, pmfs)
def test_finite_kl_matches_brute_force(a, b):
    assume(len(a) == len(b))
    p, q = _pmf(a), _pmf(b)
    brute = sum(pi * math.log(pi / qi) for pi, qi in zip(p, q))
    assert kl_divergence(FinitePmf(p), FinitePmf(q)).nats == pytest.approx(brute, abs=1e-12)


@given(means, variances, means, variances, st.floats(-10, 0), st.floats(0.5, 10),
       st.integers(1, 8))
@settings(max_examples=150, deadline=None)
def test_quantization_never_increases_divergence(m1, v1, m0, v0, lo, width, bits):
    q = QuantizerSpec.from_bits(lo, lo + width, bits)
    f1, f0 = Gaussian(m1, v1), Gaussian(m0, v0)
    p1, p0 = quantized_pmf(f1, q), quantized_pmf(f0, q)
    d_q = kl_divergence(FinitePmf(tuple(p1 / p1.sum())), FinitePmf(tuple(p0 / p0.sum()))).nats \
        if np.all(p0[p1 > 0] > 0) else math.inf
    assume(math.isfinite(d_q))
    assert d_q <= kl_divergence(f1, f0).nats + 1e-9


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-10, 0), st.floats(0.01, 5))
def test_quantize_monotone(x, y, lo, step):
    q = QuantizerSpec(lo, lo + 64 * step, step)
    a, b = sorted((x, y))
    assert quantize(q, a) <= quantize(q, b)
    assert 0 <= quantize(q, a) < q.alphabet_size


@given(st.sampled_from(["sprt", "univ_finite", "univ_finite_modified"]),
       st.lists(st.integers(0, 8), min_size=1, max_size=80), st.floats(1, 10))
@settings(max_examples=100, deadline=None)
def test_decided_state_is_never_mutated(variant, xs, t):
    cfg = TestConfig(variant, -t, t, lam=1.2, tolerance=1)
    test = make_test(cfg, Binomial(8, 0.2), Binomial(8, 0.5))
    for x in xs:
        test.step(x)
        if test.done:
            snap = (test.status, test.n, test.statistic)
            for y in xs:
                test.step(y)
            assert (test.status, test.n, test.statistic) == snap
            break


@given(st.integers(0, 50))
@settings(max_examples=20, deadline=None)
def test_mac_identity_noiseless(seed):
    q = QuantizerSpec.from_bits(-8, 8, 6)
    node = NodeSpec(Gaussian(0, 1), Gaussian(0, 5), TestConfig("ktslrt", -3, 3, lam=1.0), q)
    cfg = NetworkConfig([node] * 3, b1=1.5, b0=-0.5, I=1, noise=FusionNoise(None),
                        beta1=8, beta0=8, max_slots=500)
    run = run_network(cfg, seed % 2, seed)
    for k, y in enumerate(run.Y, 1):
        sent = sum(cfg.level(int(d)) for d, t in zip(run.node_decisions, run.node_times) if t <= k)
        assert y == pytest.approx(sent, abs=1e-12)


def test_standard_error_halves_with_four_times_trials():
    cfg = TestConfig("univ_finite", -20, 10, lam=1.2078)
    p0, p1 = Binomial(8, 0.2), Binomial(8, 0.5)
    se = []
    for trials in (4000, 16000):
        n = simulate(cfg, p0, p1, 1, 3, trials).n
        se.append(n.std(ddof=1) / math.sqrt(n.size))
    assert se[0] / se[1] == pytest.approx(2.0, rel=0.3)


def test_bernoulli_p_fa_bounded_by_alpha_small_sample():
    # Kraft-valid KT code: P_FA <= 2^-upper
    cfg = TestConfig("univ_finite", -30, 4, lam=0.32193)
    r = simulate(cfg, Bernoulli(0.2), Bernoulli(0.2), 0, 1, 20000)
    assert np.mean(r.decision == 1) <= 2 ** -4
