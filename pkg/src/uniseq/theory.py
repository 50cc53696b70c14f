"""Analytical predictions: single-node slopes, the Gaussian stopping-time law,
order statistics of node decision times, the fusion delay recursion and a
semi-analytical miss-detection estimate.

All drifts, thresholds and divergences are in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .dist_models import DistributionModel, llr_moments

MC_DRAWS = 10 ** 6


@dataclass(frozen=True)
class NodeAsymptotics:
    divergence: float  # D(P1||P0), bits
    lam: float
    delta: float  # D - lam/2
    rho2: float  # LLR variance under P1, bits^2

    @property
    def e0_slope(self) -> float:
        """Samples per bit of |lower threshold| under H0."""
        return 2.0 / self.lam

    @property
    def e1_slope(self) -> float:
        """Samples per bit of upper threshold under H1."""
        return 1.0 / self.delta

    @property
    def in_class_c(self) -> bool:
        return self.divergence >= self.lam


def single_node_slopes(p0: DistributionModel, p1: DistributionModel, lam: float) -> NodeAsymptotics:
    d, var = llr_moments(p1, p0)
    delta = d - lam / 2.0
    if not delta > 0:
        raise ValueError(f"drift D - lam/2 = {delta:.4g} bits is not positive")
    return NodeAsymptotics(d, float(lam), delta, var)


@dataclass(frozen=True)
class NormalLaw:
    mean: float
    variance: float

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    def cdf(self, x):
        if self.variance == 0:
            return np.where(np.asarray(x) >= self.mean, 1.0, 0.0)
        return stats.norm.cdf(x, self.mean, self.sd)

    def sf(self, x):
        if self.variance == 0:
            return np.where(np.asarray(x) >= self.mean, 0.0, 1.0)
        return stats.norm.sf(x, self.mean, self.sd)


def stopping_time_law(gamma: float, delta: float, rho2: float) -> NormalLaw:
    """``N(gamma/delta, rho2 * gamma / delta^3)`` for the upper-crossing time."""
    if not (gamma > 0 and delta > 0):
        raise ValueError("need gamma > 0 and delta > 0")
    return NormalLaw(gamma / delta, rho2 * gamma / delta ** 3)


def _order_cdfs(laws: list[NormalLaw], x: float) -> np.ndarray:
    """P(at least j of the variables are <= x) for j = 0..L (Poisson-binomial)."""
    probs = [float(law.cdf(x)) for law in laws]
    dist = np.zeros(len(laws) + 1)
    dist[0] = 1.0
    for p in probs:
        dist[1:] = dist[1:] * (1.0 - p) + dist[:-1] * p
        dist[0] *= 1.0 - p
    return np.cumsum(dist[::-1])[::-1]


@dataclass
class OrderStats:
    means: np.ndarray
    method: str


def expected_order_stats(laws: list[NormalLaw], L: int | None = None, *, floor: float | None = None,
                         rng=None, draws: int = MC_DRAWS) -> OrderStats:
    """``E[t_1] <= ... <= E[t_L]`` for independent normal laws.

    Integrates ``E[X] = a + int_a^b (1 - F_(j)(x)) dx`` over a range ``[a, b]``
    holding all but a negligible tail of every law; degenerate laws or a
    failed integral fall back to Monte Carlo with ``draws`` samples.

    Args:
        floor: if given, the order statistics are taken of ``max(t_l, floor)``,
            so ``a = floor``; stopping times use ``floor=0``.
    """
    L = len(laws) if L is None else L
    if L != len(laws) or L < 1:
        raise ValueError("need one law per node")
    if any(law.variance <= 0 for law in laws):
        return _order_stats_mc(laws, rng, draws, floor)
    a = min(law.mean - 12 * law.sd for law in laws)
    b = max(law.mean + 12 * law.sd for law in laws)
    if floor is not None:
        a = float(floor)
        b = max(b, a + 1.0)
    pts = sorted(m for m in {law.mean for law in laws} if a < m < b)
    out = np.empty(L)
    try:
        for j in range(1, L + 1):
            val, err = integrate.quad(lambda x: 1.0 - _order_cdfs(laws, x)[j], a, b, points=pts,
                                      limit=400, epsabs=1e-10, epsrel=1e-9)
            if not math.isfinite(val) or err > 1e-4 * max(1.0, abs(a + val)):
                raise ArithmeticError
            out[j - 1] = a + val
    except ArithmeticError:
        return _order_stats_mc(laws, rng, draws, floor)
    return OrderStats(out, "quadrature")


def _order_stats_mc(laws, rng, draws, floor=None) -> OrderStats:
    rng = np.random.default_rng(0) if rng is None else rng
    x = np.stack([rng.normal(law.mean, law.sd, size=draws) for law in laws], axis=1)
    if floor is not None:
        x = np.maximum(x, floor)
    x.sort(axis=1)
    return OrderStats(x.mean(axis=0), "monte_carlo")


@dataclass
class DelayPrediction:
    order_stats: np.ndarray  # E[t_1..t_L]
    drifts: np.ndarray  # drift with j = 0..L nodes transmitting
    F_bar: np.ndarray  # F_bar_0..F_bar_L
    l_star: int | None
    e1_nd: float | None
    rule: str
    note: str = ""

    @property
    def defined(self) -> bool:
        return self.l_star is not None


def predict_delay(order_stats, drifts, beta: float, rule: str = "preceding") -> DelayPrediction:
    """Fusion delay under H1 from piecewise-constant drifts.

    ``drifts[j]`` is the fusion drift while ``j`` nodes transmit.  Between the
    expected epochs ``E[t_{j-1}]`` and ``E[t_j]`` exactly ``j-1`` nodes are
    transmitting, so ``rule="preceding"`` accumulates
    ``F_bar_j = F_bar_{j-1} + drifts[j-1] * (E[t_j] - E[t_{j-1}])``;
    ``rule="current"`` uses ``drifts[j]`` on that interval instead.  Then
    ``l* = min{j : drifts[j] > 0, (beta - F_bar_j)/drifts[j] < E[t_{j+1}] - E[t_j]}``
    with ``E[t_0] = 0``, ``E[t_{L+1}] = inf``, and the delay is
    ``E[t_l*] + (beta - F_bar_l*) / drifts[l*]``.
    """
    t = np.concatenate([[0.0], np.asarray(order_stats, dtype=float)])
    d = np.asarray(drifts, dtype=float)
    L = t.size - 1
    if d.size != L + 1:
        raise ValueError(f"need {L + 1} drifts (j = 0..L), got {d.size}")
    if rule not in ("preceding", "current"):
        raise ValueError(f"unknown rule {rule!r}")
    F = np.zeros(L + 1)
    for j in range(1, L + 1):
        slope = d[j - 1] if rule == "preceding" else d[j]
        F[j] = F[j - 1] + slope * (t[j] - t[j - 1])
    nxt = np.concatenate([t[1:], [math.inf]])
    for j in range(L + 1):
        if d[j] > 0 and (beta - F[j]) / d[j] < nxt[j] - t[j]:
            return DelayPrediction(t[1:], d, F, j, float(t[j] + (beta - F[j]) / d[j]), rule)
    return DelayPrediction(t[1:], d, F, None, None, rule, "no j satisfies the switch condition")


def fusion_drifts(noise, b1: float, mu1: float, mu0: float, L: int) -> np.ndarray:
    """Fusion drift with ``j = 0..L`` nodes transmitting ``b1``."""
    return np.array([noise.drift(j * b1, mu1, mu0) for j in range(L + 1)])


def min_survival(laws: list[NormalLaw], k) -> np.ndarray:
    """``P(t_1 > k)`` with ``t_1`` the minimum of independent normal laws."""
    k = np.asarray(k, dtype=float)
    out = np.ones_like(k)
    for law in laws:
        out = out * law.sf(k)
    return out


@dataclass
class PmdPrediction:
    p_md: float
    walks: int
    horizon: int
    absorb_upper: bool


def predict_pmd(laws: list[NormalLaw], beta0: float, noise, mu1: float, mu0: float, *,
                beta1: float | None = None, absorb_upper: bool = False, walks: int = MC_DRAWS,
                seed: int = 0, batch: int = 100_000) -> PmdPrediction:
    """``P(N_d^0 < t_1)``: the silent fusion walk (no node transmitting) reaches
    ``-beta0`` before the first node decision.

    The walk's first-passage law is estimated from ``walks`` Monte Carlo
    paths and combined with ``P(t_1 > k)``.  With ``absorb_upper`` paths that
    reach ``beta1`` first are discarded.
    """
    if absorb_upper and beta1 is None:
        raise ValueError("absorb_upper needs beta1")
    top = max(law.mean + 9 * law.sd for law in laws)
    horizon = max(1, int(math.ceil(top)))
    if not math.isfinite(beta0):
        return PmdPrediction(0.0, 0, horizon, absorb_upper)
    rng = np.random.default_rng(seed)
    batch = max(1000, min(batch, 20_000_000 // horizon))  # bound path memory
    hits = np.zeros(horizon + 1)
    done = 0
    while done < walks:
        m = min(batch, walks - done)
        z = np.zeros((m, horizon)) if noise.model is None else np.asarray(
            noise.model.sample(rng, size=(m, horizon)))
        path = np.cumsum(noise.llr(z, mu1, mu0), axis=1)
        low = path <= -beta0
        first_low = np.where(low.any(axis=1), np.argmax(low, axis=1), horizon)
        if absorb_upper:
            up = path >= beta1
            first_up = np.where(up.any(axis=1), np.argmax(up, axis=1), horizon)
            first_low = np.where(first_up < first_low, horizon, first_low)
        hits += np.bincount(first_low, minlength=horizon + 1)[:horizon + 1]
        done += m
    k = np.arange(1, horizon + 1)
    p = float(np.sum(hits[:horizon] / walks * min_survival(laws, k)))
    return PmdPrediction(p, walks, horizon, absorb_upper)


@dataclass
class NetworkPrediction:
    laws: list[NormalLaw]
    delay: DelayPrediction
    pmd: PmdPrediction | None = None
    nodes: list[NodeAsymptotics] = field(default_factory=list)


def predict_network(config, *, rule: str = "preceding", walks: int = MC_DRAWS, seed: int = 0,
                    with_pmd: bool = True, absorb_upper: bool = False) -> NetworkPrediction:
    """Node laws, delay and miss-detection predictions for a ``NetworkConfig``."""
    nodes = [single_node_slopes(n.f0, n.f1, n.test.lam) for n in config.nodes]
    laws = [stopping_time_law(n.test.upper, a.delta, a.rho2) for n, a in zip(config.nodes, nodes)]
    stats_ = expected_order_stats(laws, floor=0.0)
    drifts = fusion_drifts(config.noise, config.b1, config.mu1, config.mu0, config.L)
    delay = predict_delay(stats_.means, drifts, config.beta1, rule)
    pmd = None
    if with_pmd:
        pmd = predict_pmd(laws, config.beta0, config.noise, config.mu1, config.mu0,
                          beta1=config.beta1, absorb_upper=absorb_upper, walks=walks, seed=seed)
    return NetworkPrediction(laws, delay, pmd, nodes)
