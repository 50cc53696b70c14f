import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uniseq.decentralized import FusionNoise, NetworkConfig, NodeSpec
from uniseq.dist_models import LOG2E, Binomial, Gaussian, kl_divergence
from uniseq.sequential import TestConfig
from uniseq.theory import (NormalLaw, expected_order_stats, fusion_drifts, min_survival,
                           predict_delay, predict_network, predict_pmd, single_node_slopes,
                           stopping_time_law)


def test_e0_slope_trivial():
    a = single_node_slopes(Gaussian(0, 1), Gaussian(0, 5), 2.0)
    assert a.e0_slope == 1.0


def test_binomial_delta():
    p0, p1 = Binomial(8, 0.2), Binomial(8, 0.5)
    a = single_node_slopes(p0, p1, 1.2078)
    assert a.delta == pytest.approx(kl_divergence(p1, p0).bits - 1.2078 / 2)
    assert a.divergence == pytest.approx(2.5754, abs=1e-4)
    assert a.in_class_c
    assert a.e1_slope == pytest.approx(1 / a.delta)


def test_nonpositive_drift_rejected():
    with pytest.raises(ValueError):
        single_node_slopes(Binomial(8, 0.2), Binomial(8, 0.5), 6.0)


def test_stopping_time_law_examples():
    law = stopping_time_law(40, 1, 1)
    assert (law.mean, law.variance) == (40, 40)
    deg = stopping_time_law(10, 2, 0)
    assert deg.variance == 0 and deg.mean == 5
    assert float(deg.cdf(5)) == 1.0 and float(deg.cdf(4.9)) == 0.0
    with pytest.raises(ValueError):
        stopping_time_law(0, 1, 1)


def test_order_stats_single_law():
    np.testing.assert_allclose(expected_order_stats([NormalLaw(3.0, 2.0)]).means, [3.0], rtol=1e-9)


def test_order_stats_two_standard_normals():
    m = expected_order_stats([NormalLaw(0, 1)] * 2).means
    np.testing.assert_allclose(m, [-1 / math.sqrt(math.pi), 1 / math.sqrt(math.pi)], atol=1e-6)


def test_order_stats_floor_truncates():
    m = expected_order_stats([NormalLaw(0, 1)] * 2, floor=0.0).means
    # min(max(X,0), max(Y,0)) = max(min(X,Y), 0); E[max(Z,0)] by quadrature of the min law
    from scipy import integrate, stats
    e_min = integrate.quad(lambda x: x * 2 * stats.norm.pdf(x) * stats.norm.sf(x), 0, 12)[0]
    e_max = integrate.quad(lambda x: x * 2 * stats.norm.pdf(x) * stats.norm.cdf(x), 0, 12)[0]
    np.testing.assert_allclose(m, [e_min, e_max], atol=1e-7)


def test_order_stats_floor_irrelevant_far_from_zero():
    laws = [NormalLaw(40, 40), NormalLaw(30, 20)]
    np.testing.assert_allclose(expected_order_stats(laws, floor=0.0).means,
                               expected_order_stats(laws).means, rtol=1e-9)


@pytest.mark.parametrize("L", [2, 3, 5])
def test_order_stats_against_monte_carlo(L):
    rng = np.random.default_rng(L)
    laws = [NormalLaw(float(rng.uniform(10, 30)), float(rng.uniform(1, 30))) for _ in range(L)]
    q = expected_order_stats(laws).means
    draws = 10 ** 6
    x = np.sort(np.stack([rng.normal(l.mean, l.sd, draws) for l in laws], axis=1), axis=1)
    se = x.std(axis=0) / math.sqrt(draws)
    assert np.all(np.abs(q - x.mean(axis=0)) <= 3 * se)
    assert np.all(np.diff(q) > 0)


def test_order_stats_degenerate_falls_back():
    out = expected_order_stats([NormalLaw(2.0, 0.0), NormalLaw(2.0, 0.0)])
    assert out.method == "monte_carlo"
    np.testing.assert_allclose(out.means, [2.0, 2.0])


def test_order_stats_needs_matching_L():
    with pytest.raises(ValueError):
        expected_order_stats([NormalLaw(0, 1)], L=2)


@given(st.lists(st.floats(0.1, 50), min_size=1, max_size=5),
       st.lists(st.floats(-3, 5), min_size=6, max_size=6), st.floats(1, 100))
@settings(max_examples=100, deadline=None)
def test_fbar_recursion_telescopes(gaps, drifts, beta):
    t = np.cumsum(gaps)
    L = t.size
    d = np.array(drifts[:L + 1])
    pred = predict_delay(t, d, beta)
    full = np.concatenate([[0.0], t])
    for j in range(L + 1):
        assert pred.F_bar[j] == pytest.approx(sum(d[i - 1] * (full[i] - full[i - 1])
                                                  for i in range(1, j + 1)), abs=1e-9)
    assert pred.F_bar[0] == 0
    if pred.defined:
        j = pred.l_star
        nxt = full[j + 1] if j < L else math.inf
        assert d[j] > 0 and (beta - pred.F_bar[j]) / d[j] < nxt - full[j]
        assert pred.e1_nd == pytest.approx(full[j] + (beta - pred.F_bar[j]) / d[j])


def test_current_rule_uses_current_drift():
    pred = predict_delay([10.0, 20.0], [0.0, 1.0, 2.0], 100.0, rule="current")
    np.testing.assert_allclose(pred.F_bar, [0.0, 10.0, 30.0])
    with pytest.raises(ValueError):
        predict_delay([10.0], [0.0, 1.0], 5.0, rule="other")
    with pytest.raises(ValueError):
        predict_delay([10.0], [0.0], 5.0)


def test_huge_drifts_give_first_order_stat():
    pred = predict_delay([12.0, 15.0, 30.0], [-1.0, 1e9, 1e9, 1e9], 10.0)
    assert pred.l_star == 1
    assert pred.e1_nd == pytest.approx(12.0)


def test_no_switch_reported_undefined():
    pred = predict_delay([5.0], [-1.0, -0.5], 10.0)
    assert not pred.defined and pred.e1_nd is None and pred.note


def _single_node(noise, b1=1.0, b0=-1.0, gamma=20.0, beta=15.0):
    node = NodeSpec(Binomial(8, 0.2), Binomial(8, 0.5),
                    TestConfig("univ_finite", -gamma, gamma, lam=1.2078))
    return NetworkConfig([node], b1=b1, b0=b0, I=1, noise=noise, beta1=beta, beta0=beta)


def test_single_node_noiseless_collapse():
    cfg = _single_node(FusionNoise(None))
    pred = predict_network(cfg, with_pmd=False)
    a = single_node_slopes(Binomial(8, 0.2), Binomial(8, 0.5), 1.2078)
    d1 = (2.0 ** 2 - 0.0) / 2.0 * LOG2E  # xi at y = b1 with mu1 = mu0 = 1, unit variance
    assert pred.delay.drifts[0] == pytest.approx(0.0)
    assert pred.delay.drifts[1] == pytest.approx(d1)
    # node time taken as max(t, 0): E = mu Phi(mu/sd) + sd phi(mu/sd)
    from scipy import stats
    law = stopping_time_law(20.0, a.delta, a.rho2)
    z = law.mean / law.sd
    t1 = law.mean * stats.norm.cdf(z) + law.sd * stats.norm.pdf(z)
    assert t1 == pytest.approx(20.0 / a.delta, rel=5e-3)
    assert pred.delay.e1_nd == pytest.approx(t1 + 15.0 / d1, rel=1e-6)


def test_fusion_drifts_gaussian():
    d = fusion_drifts(FusionNoise(Gaussian(0, 2)), 1.0, 2.0, 2.0, 3)
    expect = [((j + 2) ** 2 - (j - 2) ** 2) / 4 * LOG2E for j in range(4)]
    np.testing.assert_allclose(d, expect)


def test_min_survival():
    laws = [NormalLaw(10, 4), NormalLaw(12, 9)]
    k = np.array([8.0, 11.0])
    np.testing.assert_allclose(min_survival(laws, k), laws[0].sf(k) * laws[1].sf(k))


def test_pmd_zero_for_unreachable_barrier():
    laws = [NormalLaw(20, 10)]
    assert predict_pmd(laws, math.inf, FusionNoise(), 2.0, 2.0).p_md == 0.0


def test_pmd_deterministic_walk():
    # noiseless, mu1 > mu0: the silent walk steps by (mu0^2 - mu1^2)/2 every slot
    laws = [NormalLaw(6.0, 4.0), NormalLaw(7.0, 9.0)]
    noise = FusionNoise(None)
    mu1, mu0, beta0 = 2.0, 1.0, 10.0
    drift = (mu0 ** 2 - mu1 ** 2) / 2 * LOG2E
    k = math.ceil(beta0 / abs(drift))
    p = predict_pmd(laws, beta0, noise, mu1, mu0, walks=1000).p_md
    assert p == pytest.approx(float(min_survival(laws, np.array([float(k)]))[0]), rel=1e-12)


def test_pmd_absorb_upper_reduces_estimate():
    laws = [NormalLaw(15, 30)] * 3
    a = predict_pmd(laws, 6.0, FusionNoise(), 2.0, 2.0, walks=50_000, seed=1).p_md
    b = predict_pmd(laws, 6.0, FusionNoise(), 2.0, 2.0, beta1=6.0, absorb_upper=True,
                    walks=50_000, seed=1).p_md
    assert 0 < b < a
    with pytest.raises(ValueError):
        predict_pmd(laws, 6.0, FusionNoise(), 2.0, 2.0, absorb_upper=True)


def test_stopping_time_law_matches_llr_walk():
    # oracle: first passage of the drift-(D - lam/2) LLR walk itself, no coder redundancy
    from uniseq.dist_models import Bernoulli
    p0, p1, lam = Bernoulli(0.2), Bernoulli(0.5), 0.32193
    a = single_node_slopes(p0, p1, lam)
    law = stopping_time_law(80.0, a.delta, a.rho2)
    rng = np.random.default_rng(0)
    step = (p1.log_pmf() - p0.log_pmf()) * LOG2E - lam / 2
    walk = np.cumsum(step[rng.binomial(1, 0.5, size=(20_000, 2000))], axis=1)
    n = np.argmax(walk >= 80.0, axis=1) + 1
    assert n.mean() == pytest.approx(law.mean, rel=0.02)
    assert n.var() == pytest.approx(law.variance, rel=0.1)
