import math

import numpy as np
import pytest

from uniseq.batch import CAPPED, H0, H1
from uniseq.decentralized import (FusionNoise, FusionState, NetworkConfig, NodeSpec, dualsprt_node,
                                  fusion_step, mac_output, network_rows, node_transmit,
                                  run_network, scaled_network, simulate_network)
from uniseq.dist_models import LOG2E, Bernoulli, Gaussian
from uniseq.quantization import QuantizerSpec
from uniseq.sequential import Status, TestConfig

G0, G1 = Gaussian(0, 1), Gaussian(0, 5)
Q = QuantizerSpec.from_bits(-8, 8, 6)


def kt_network(L=3, gamma=4.0, beta=6.0, noise=None, persistent=True):
    node = NodeSpec(G0, G1, TestConfig("ktslrt", -gamma, gamma, lam=1.0), Q)
    return NetworkConfig([node] * L, b1=1, b0=-1, I=2,
                         noise=FusionNoise() if noise is None else noise,
                         beta1=beta, beta0=beta, max_slots=5000, persistent=persistent)


def test_transmit_levels():
    assert node_transmit(Status.H1, 1.0, -1.0) == 1.0
    assert node_transmit(Status.H0, 1.0, -1.0) == -1.0
    assert node_transmit(Status.RUNNING, 1.0, -1.0) == 0.0
    assert mac_output([1.0, -1.0, 1.0], 0.25) == 1.25


def test_gaussian_fusion_llr():
    noise = FusionNoise(Gaussian(0, 1))
    mu1, mu0 = 2.0, 2.0
    y = 0.7
    expect = (-(y - mu1) ** 2 / 2 + (y + mu0) ** 2 / 2) * LOG2E
    assert float(noise.llr(y, mu1, mu0)) == pytest.approx(expect)
    # no node transmitting: drift -(mu1^2 - mu0^2)/2... zero for symmetric levels
    assert noise.drift(0.0, mu1, mu0) == pytest.approx(0.0)
    assert noise.drift(3.0, mu1, mu0) == pytest.approx(((5) ** 2 - 1) / 2 * LOG2E)


def test_non_gaussian_noise_drift_closed_form():
    noise = FusionNoise(Gaussian(0.5, 2.0))  # not zero-mean: generic quadrature path
    assert noise.gaussian_variance is None
    # xi = ((y + 1.5)^2 - (y - 2.5)^2) / 4 nats = 2y - 1 with E[y] = 1 + 0.5
    assert noise.drift(1.0, 2.0, 2.0) == pytest.approx(2.0 * LOG2E, rel=1e-6)


def test_noiseless_channel_uses_reference_variance():
    n = FusionNoise(None, reference_variance=2.0)
    assert n.gaussian_variance == 2.0
    assert n.drift(0.0, 1.0, 3.0) == pytest.approx(float(n.llr(0.0, 1.0, 3.0)))


def test_fusion_step_thresholds():
    s = FusionState(beta1=1.0, beta0=1.0)
    noise = FusionNoise(None)
    fusion_step(s, 2.0, noise, 2.0, 2.0)
    assert s.status is Status.H1
    k = s.k
    fusion_step(s, -100.0, noise, 2.0, 2.0)
    assert s.k == k and s.status is Status.H1


def test_config_validation():
    node = dualsprt_node(G0, G1, 2, 2)
    with pytest.raises(ValueError):
        NetworkConfig([])
    with pytest.raises(ValueError):
        NetworkConfig([node], I=0)
    with pytest.raises(ValueError):
        NetworkConfig([node], beta1=0)
    with pytest.raises(ValueError):
        NetworkConfig([node], b0=0.0)


def test_max_slots_propagates_to_nodes():
    cfg = kt_network()
    assert all(n.test.max_samples == 5000 for n in cfg.nodes)
    assert cfg.mu1 == 2 and cfg.mu0 == 2


@pytest.mark.parametrize("hyp", [0, 1])
@pytest.mark.parametrize("noise", [None, FusionNoise(None)])
def test_scalar_reference_equals_batch(hyp, noise):
    cfg = kt_network(noise=noise)
    batch = simulate_network(cfg, hyp, seed=5, trials=12, block_size=1)
    for i in range(12):
        run = run_network(cfg, hyp, seed=5, trial=i)
        assert run.decision == batch.decision[i]
        assert run.n_d == batch.n_d[i]
        seen = batch.node_times[i] <= run.n_d
        np.testing.assert_array_equal(run.node_times[seen], batch.node_times[i][seen])
        np.testing.assert_array_equal(run.node_decisions[seen], batch.node_decisions[i][seen])
        assert np.all(run.node_decisions[~seen] == CAPPED)


def test_dualsprt_batch_equals_scalar():
    cfg = NetworkConfig([dualsprt_node(Bernoulli(0.2), Bernoulli(0.5), 3, 3)] * 2, I=1,
                        beta1=4, beta0=4, max_slots=1000)
    batch = simulate_network(cfg, 1, seed=2, trials=8, block_size=1)
    for i in range(8):
        assert run_network(cfg, 1, 2, i).n_d == batch.n_d[i]


def test_recorded_fusion_path():
    cfg = kt_network(noise=FusionNoise(None))
    run = run_network(cfg, 1, seed=1)
    assert len(run.F) == run.n_d == len(run.Y)
    xi = np.diff(np.concatenate([[0.0], run.F]))
    np.testing.assert_allclose(xi, FusionNoise(None).llr(np.array(run.Y), 2.0, 2.0))


def test_noiseless_fusion_waits_for_nodes():
    # with no noise the fusion statistic moves only once a node has decided
    cfg = kt_network(noise=FusionNoise(None))
    run = run_network(cfg, 1, seed=3)
    first = run.order_times[0]
    assert all(f == 0.0 for f in run.F[:first - 1])
    assert run.n_d >= first


def test_non_persistent_mode_runs():
    cfg = kt_network(persistent=False, L=2)
    b = simulate_network(cfg, 1, seed=1, trials=5)
    assert b.decision.shape == (5,)
    assert set(b.decision.tolist()) <= {H0, H1, CAPPED}


def test_h1_mostly_correct():
    # beta well above the per-slot spread of the silent fusion walk
    b = simulate_network(kt_network(gamma=8, beta=40), 1, seed=1, trials=400)
    assert np.mean(b.decision == H1) > 0.95


def test_scaled_network():
    cfg = scaled_network(kt_network(L=4), 2.0 ** -12)
    assert cfg.beta1 == cfg.beta0 == 12
    for n in cfg.nodes:
        assert (n.test.lower, n.test.upper) == (-3.0, 3.0)
    cfg = scaled_network(kt_network(L=2), 2.0 ** -8, r=[0.5, 1.0], rho=[1.0, 0.25])
    assert [(n.test.lower, n.test.upper) for n in cfg.nodes] == [(-4.0, 8.0), (-8.0, 2.0)]


def test_network_rows_layout():
    b = simulate_network(kt_network(L=2), 1, seed=1, trials=3)
    rows = network_rows(b, 1, start_id=10)
    assert rows[0][:2] == [10, 1]
    assert len(rows[0]) == 4 + 2 + 2
    assert rows[0][4] <= rows[0][5]
    assert rows[0][2] in ("H0", "H1", "capped")
