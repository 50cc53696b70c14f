"""Comparison baselines: the fixed-sample Hoeffding test and two plug-in
sequential tests that estimate the alternative's log-likelihood from data.

The sequential baselines keep the full observation buffer; per-step cost is
O(n) for the 1-NN entropy test and O(n^2) for the KDE test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .dist_models import LOG2E, DiscreteModel, DistributionModel, kl_divergence, llr_moments
from .sequential import DEFAULT_CAP, SequentialTest

EULER_GAMMA = float(np.euler_gamma)
MACHINE_EPS = float(np.finfo(float).eps)


class UnreachableTargets(ValueError):
    pass


# -- Hoeffding ---------------------------------------------------------------

def empirical_type(samples, alphabet_size: int) -> np.ndarray:
    counts = np.bincount(np.asarray(samples, dtype=np.int64), minlength=alphabet_size)
    if counts.size > alphabet_size:
        raise ValueError("sample outside the alphabet")
    return counts / counts.sum()


def type_divergence_bits(gamma: np.ndarray, p0: np.ndarray) -> float:
    mask = gamma > 0
    if np.any(p0[mask] == 0):
        return math.inf
    return float(np.sum(gamma[mask] * np.log2(gamma[mask] / p0[mask])))


def hoeffding_decide(samples, p0: DiscreteModel, eta: float) -> int:
    """1 (H1) iff ``D(type || P0) >= eta``; ``eta`` in bits."""
    g = empirical_type(samples, p0.alphabet_size)
    return int(type_divergence_bits(g, p0.pmf()) >= eta)


def hoeffding_eta(n: int, p_fa: float, alphabet_size: int) -> float:
    """Threshold in bits from the chi-square law of ``2 n D(type||P0)`` (nats)."""
    c = stats.chi2.ppf(1.0 - p_fa, alphabet_size - 1)
    return c / (2.0 * n) * LOG2E


def _hoeffding_terms(p0: DiscreteModel, p1: DiscreteModel, p_fa: float, p_md: float):
    if not (0 < p_fa < 1 and 0 < p_md < 1):
        raise ValueError("error targets must lie in (0, 1)")
    d = kl_divergence(p1, p0).nats
    if not (d > 0 and math.isfinite(d)):
        raise UnreachableTargets(f"error targets unreachable: D(P1||P0) = {d}")
    _, var_bits = llr_moments(p1, p0)
    sigma = math.sqrt(var_bits) / LOG2E
    z = stats.norm.ppf(p_md, scale=sigma)
    c = stats.chi2.ppf(1.0 - p_fa, p0.alphabet_size - 1)
    return d, z, c


def hoeffding_sample_size(p0: DiscreteModel, p1: DiscreteModel, p_fa: float, p_md: float) -> int:
    """Smallest integer ``n`` with ``2nD + 2 sqrt(n) z - c >= 0``.

    ``D = D(P1||P0)`` in nats, ``z`` the ``p_md`` quantile of ``N(0, sigma1^2)``
    with ``sigma1^2`` the LLR variance under P1, and ``c`` the ``1 - p_fa``
    quantile of chi-square with ``|A| - 1`` degrees of freedom.  The equation
    is quadratic in ``sqrt(n)``; its positive root is taken in closed form.
    """
    d, z, c = _hoeffding_terms(p0, p1, p_fa, p_md)
    u = (-z + math.sqrt(z * z + 2.0 * d * c)) / (2.0 * d)
    return max(1, math.ceil(u * u - 1e-9))


def hoeffding_root(p0, p1, p_fa, p_md) -> float:
    d, z, c = _hoeffding_terms(p0, p1, p_fa, p_md)
    u = (-z + math.sqrt(z * z + 2.0 * d * c)) / (2.0 * d)
    return u * u


@dataclass
class HoeffdingPoint:
    n: int
    eta_bits: float
    p_fa: float
    p_md: float
    method: str

    @property
    def p_e(self) -> float:
        return 0.5 * (self.p_fa + self.p_md)


def hoeffding_operating_point(p0: DiscreteModel, p1: DiscreteModel, n: int, eta: float,
                              rng=None, trials: int = 100_000) -> HoeffdingPoint:
    """Error probabilities of the fixed-``n`` Hoeffding test at threshold ``eta`` (bits).

    Exact for binary alphabets (the type is a binomial count); Monte Carlo
    over ``trials`` draws otherwise.
    """
    a0, a1 = p0.pmf(), p1.pmf()
    if p0.alphabet_size == 2 and p1.alphabet_size == 2:
        k = np.arange(n + 1)
        decide_h1 = np.array([type_divergence_bits(np.array([1 - i / n, i / n]), a0) >= eta
                              for i in k])
        pfa = float(stats.binom.pmf(k, n, a0[1])[decide_h1].sum())
        pmd = float(stats.binom.pmf(k, n, a1[1])[~decide_h1].sum())
        return HoeffdingPoint(n, eta, pfa, pmd, "exact")
    if rng is None:
        rng = np.random.default_rng(0)
    out = []
    for model in (p0, p1):
        x = model.sample(rng, size=(trials, n))
        counts = np.stack([np.bincount(r, minlength=p0.alphabet_size) for r in x]) / n
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(counts > 0, counts * np.log2(counts / a0), 0.0)
        out.append(np.mean(terms.sum(axis=1) >= eta))
    return HoeffdingPoint(n, eta, float(out[0]), 1.0 - float(out[1]), "monte_carlo")


# -- plug-in sequential baselines -------------------------------------------

class _PluginTest(SequentialTest):
    min_samples = 2

    def __init__(self, f0: DistributionModel, lam, lower, upper, max_samples=DEFAULT_CAP):
        super().__init__(lower, upper, max_samples)
        if not lam > 0:
            raise ValueError("lam must be > 0")
        if f0.discrete:
            raise ValueError(f"{type(self).__name__} needs a continuous null density")
        self.f0 = f0
        self.lam = float(lam)
        self.null_sum = 0.0  # sum of ln f0(X_k), nats
        self._buf = np.empty(64)

    def _append(self, x: float) -> np.ndarray:
        n = self.n
        if n > self._buf.size:
            self._buf = np.concatenate([self._buf, np.empty(self._buf.size)])
        self._buf[n - 1] = x
        return self._buf[:n]

    def _decide(self):
        if self.n < self.min_samples:
            if self.n >= self.max_samples:
                super()._decide()
            return
        super()._decide()


class Nn1EntropyTest(_PluginTest):
    """Alternative log-likelihood replaced by ``-n h_n`` from the 1-NN entropy estimate.

    ``h_n = (1/n) sum ln rho(i) + ln(n-1) + gamma_E + 1`` (nats), ``rho(i)``
    the distance from ``X_i`` to its nearest other sample.
    """

    variant = "nn1_entropy"

    def __init__(self, f0, lam, lower, upper, max_samples=DEFAULT_CAP):
        super().__init__(f0, lam, lower, upper, max_samples)
        self._nn = np.empty(64)

    def _advance(self, x):
        x = float(x)
        lf = self.f0.log_density(x)
        if lf == -math.inf:
            self.flags.append("null_zero_mass")
            return math.inf
        self.null_sum += lf
        buf = self._append(x)
        n = self.n
        if self._nn.size < n:
            self._nn = np.concatenate([self._nn, np.empty(self._nn.size)])
        if n == 1:
            self._nn[0] = math.inf
            return 0.0
        d = np.abs(buf[:-1] - x)
        np.minimum(self._nn[:n - 1], d, out=self._nn[:n - 1])
        self._nn[n - 1] = d.min()
        rho = self._nn[:n]
        if np.any(rho <= 0):
            if "duplicate_points" not in self.flags:
                self.flags.append("duplicate_points")
            rho = np.maximum(rho, MACHINE_EPS)
        h = nn1_entropy(rho)
        return (-n * h - self.null_sum) * LOG2E - n * self.lam * 0.5


def nn1_entropy(rho: np.ndarray) -> float:
    """1-NN differential entropy estimate (nats) from nearest-neighbour distances."""
    n = rho.size
    return float(np.mean(np.log(rho))) + math.log(n - 1) + EULER_GAMMA + 1.0


def kde_bandwidth(sigma: float, n: int) -> float:
    return (4.0 * sigma ** 5 / (3.0 * n)) ** 0.2


class KdeTest(_PluginTest):
    """Alternative density replaced by a Gaussian-kernel estimate over all samples so far."""

    variant = "kde"

    def __init__(self, f0, lam, lower, upper, max_samples=DEFAULT_CAP):
        super().__init__(f0, lam, lower, upper, max_samples)
        self._d2 = np.empty((64, 64))

    def _advance(self, x):
        x = float(x)
        lf = self.f0.log_density(x)
        if lf == -math.inf:
            self.flags.append("null_zero_mass")
            return math.inf
        self.null_sum += lf
        buf = self._append(x)
        n = self.n
        if self._d2.shape[0] < n:
            m = 2 * self._d2.shape[0]
            grown = np.empty((m, m))
            k = self._d2.shape[0]
            grown[:k, :k] = self._d2
            self._d2 = grown
        row = (buf - x) ** 2
        self._d2[n - 1, :n] = row
        self._d2[:n, n - 1] = row
        if n < 2:
            return 0.0
        sigma = float(np.std(buf, ddof=1))
        if sigma <= 0:
            if "zero_spread" not in self.flags:
                self.flags.append("zero_spread")
            sigma = MACHINE_EPS
        h = kde_bandwidth(sigma, n)
        log_fhat = kde_log_density(self._d2[:n, :n], h)
        return (float(log_fhat.sum()) - self.null_sum) * LOG2E - n * self.lam * 0.5


def kde_log_density(d2: np.ndarray, h: float) -> np.ndarray:
    """ln f_hat at each sample from its squared distances to all samples (itself included)."""
    n = d2.shape[0]
    z = -0.5 * d2 / (h * h)
    top = z.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(z - top).sum(axis=1))
    return lse - math.log(n * h) - 0.5 * math.log(2.0 * math.pi)
