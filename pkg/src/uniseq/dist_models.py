"""Known probability models used as null/alternative distributions.

Every model is immutable; sampling takes an explicit ``numpy.random.Generator``
so trial workers never share random state.  Log densities are natural logs
(nats); convert with :data:`LOG2E` where bits are needed.

The Gaussian and lognormal second parameter is a VARIANCE, not a standard
deviation: ``Gaussian(3, 5)`` has standard deviation ``sqrt(5)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, stats

LOG2E = 1.0 / math.log(2.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class ModelError(ValueError):
    """Invalid distribution parameters or incompatible model pair."""


class DistributionModel:
    """Base class; concrete families below."""

    discrete: bool = False
    family: str = ""

    def log_density(self, x):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def cdf(self, x):
        return self._frozen().cdf(x)

    def ppf(self, q):
        return self._frozen().ppf(q)

    @property
    def support(self) -> tuple[float, float]:
        return (-math.inf, math.inf)

    @property
    def params(self) -> tuple:
        raise NotImplementedError

    def _frozen(self):
        raise NotImplementedError

    def __str__(self) -> str:
        args = ", ".join(f"{p:g}" for p in self.params)
        return f"{self.family}({args})"


class DiscreteModel(DistributionModel):
    """Finite-alphabet model over symbol indices ``0..alphabet_size-1``."""

    discrete = True

    @property
    def alphabet_size(self) -> int:
        return len(self.pmf())

    def pmf(self) -> np.ndarray:
        raise NotImplementedError

    def log_pmf(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.pmf())

    def log_density(self, x):
        table = self._log_table()
        if np.ndim(x) == 0:
            if x != int(x) or not 0 <= x < len(table):
                return -math.inf
            return table[int(x)]
        x = np.asarray(x)
        out = np.full(x.shape, -np.inf)
        ok = (x == np.floor(x)) & (x >= 0) & (x < len(table))
        out[ok] = np.asarray(table)[x[ok].astype(np.int64)]
        return out

    def sample(self, rng, size=None):
        p = self.pmf()
        return rng.choice(len(p), size=size, p=p)

    def cdf(self, x):
        return np.interp(np.floor(x), np.arange(self.alphabet_size),
                         np.cumsum(self.pmf()), left=0.0, right=1.0)

    def ppf(self, q):
        c = np.cumsum(self.pmf())
        return np.searchsorted(c, q - 1e-15).astype(float)

    @property
    def support(self):
        return (0.0, float(self.alphabet_size - 1))

    def _log_table(self) -> list[float]:
        # cached on first use; instances are frozen so bypass __setattr__
        table = self.__dict__.get("_table")
        if table is None:
            table = [float(v) for v in self.log_pmf()]
            object.__setattr__(self, "_table", table)
        return table


@dataclass(frozen=True)
class Gaussian(DistributionModel):
    mean: float
    variance: float
    family = "gaussian"

    def __post_init__(self):
        if not self.variance > 0:
            raise ModelError(f"variance must be > 0, got {self.variance}")

    @property
    def params(self):
        return (self.mean, self.variance)

    def log_density(self, x):
        if np.ndim(x) == 0:
            d = x - self.mean
            return -0.5 * d * d / self.variance - 0.5 * math.log(self.variance) - _HALF_LOG_2PI
        d = np.asarray(x, dtype=float) - self.mean
        return -0.5 * d * d / self.variance - 0.5 * math.log(self.variance) - _HALF_LOG_2PI

    def sample(self, rng, size=None):
        return rng.normal(self.mean, math.sqrt(self.variance), size=size)

    def _frozen(self):
        return stats.norm(self.mean, math.sqrt(self.variance))


@dataclass(frozen=True)
class Lognormal(DistributionModel):
    """exp(Y) with Y ~ N(mean, variance)."""

    mean: float
    variance: float
    family = "lognormal"

    def __post_init__(self):
        if not self.variance > 0:
            raise ModelError(f"variance must be > 0, got {self.variance}")

    @property
    def params(self):
        return (self.mean, self.variance)

    @property
    def support(self):
        return (0.0, math.inf)

    def log_density(self, x):
        c = -0.5 * math.log(self.variance) - _HALF_LOG_2PI
        if np.ndim(x) == 0:
            if x <= 0:
                return -math.inf
            ly = math.log(x)
            d = ly - self.mean
            return -0.5 * d * d / self.variance - ly + c
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, -np.inf)
        pos = x > 0
        ly = np.log(x[pos])
        d = ly - self.mean
        out[pos] = -0.5 * d * d / self.variance - ly + c
        return out

    def sample(self, rng, size=None):
        return rng.lognormal(self.mean, math.sqrt(self.variance), size=size)

    def _frozen(self):
        return stats.lognorm(s=math.sqrt(self.variance), scale=math.exp(self.mean))


@dataclass(frozen=True)
class Pareto(DistributionModel):
    """Density K A^K / x^(K+1) on x >= A (shape K, scale A)."""

    shape: float
    scale: float
    family = "pareto"

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ModelError(f"Pareto needs shape > 0 and scale > 0, got {self.params}")

    @property
    def params(self):
        return (self.shape, self.scale)

    @property
    def support(self):
        return (self.scale, math.inf)

    def log_density(self, x):
        k, a = self.shape, self.scale
        c = math.log(k) + k * math.log(a)
        if np.ndim(x) == 0:
            if x < a:
                return -math.inf
            return c - (k + 1.0) * math.log(x)
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, -np.inf)
        ok = x >= a
        out[ok] = c - (k + 1.0) * np.log(x[ok])
        return out

    def sample(self, rng, size=None):
        # inverse CDF: A * U^(-1/K)
        u = 1.0 - rng.random(size)
        return self.scale * u ** (-1.0 / self.shape)

    def _frozen(self):
        return stats.pareto(b=self.shape, scale=self.scale)


@dataclass(frozen=True)
class Bernoulli(DiscreteModel):
    p: float
    family = "bernoulli"

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ModelError(f"Bernoulli p must be in (0, 1), got {self.p}")

    @property
    def params(self):
        return (self.p,)

    def pmf(self):
        return np.array([1.0 - self.p, self.p])

    def sample(self, rng, size=None):
        return (rng.random(size) < self.p).astype(np.int64)


@dataclass(frozen=True)
class Binomial(DiscreteModel):
    trials: int
    p: float
    family = "binomial"

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ModelError(f"Binomial p must be in (0, 1), got {self.p}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ModelError(f"Binomial trials must be a positive integer, got {self.trials}")

    @property
    def params(self):
        return (self.trials, self.p)

    def pmf(self):
        return stats.binom.pmf(np.arange(int(self.trials) + 1), int(self.trials), self.p)

    def sample(self, rng, size=None):
        return rng.binomial(int(self.trials), self.p, size=size)


@dataclass(frozen=True)
class FinitePmf(DiscreteModel):
    probs: tuple[float, ...] = field()
    family = "finite"

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise ModelError("FinitePmf needs a non-empty probability vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ModelError(f"FinitePmf entries must be >= 0 and sum to 1, got sum {p.sum()!r}")
        object.__setattr__(self, "probs", tuple(float(v) for v in p))

    @property
    def params(self):
        return self.probs

    def pmf(self):
        return np.asarray(self.probs)


FAMILIES = {
    "gaussian": Gaussian,
    "normal": Gaussian,
    "lognormal": Lognormal,
    "pareto": Pareto,
    "bernoulli": Bernoulli,
    "binomial": Binomial,
    "finite": FinitePmf,
}


def make_model(family: str, params: Sequence) -> DistributionModel:
    """Build a model from a config-style family name and parameter list."""
    try:
        cls = FAMILIES[family.lower()]
    except KeyError:
        raise ModelError(f"unknown distribution family {family!r}; "
                         f"expected one of {sorted(FAMILIES)}") from None
    if cls is FinitePmf:
        return FinitePmf(tuple(params))
    return cls(*params)


def log_density(model: DistributionModel, x):
    """Natural-log density (or mass) at ``x``; ``-inf`` off the support."""
    return model.log_density(x)


def sample(model: DistributionModel, rng: np.random.Generator, size=None):
    return model.sample(rng, size)


@dataclass(frozen=True)
class KlResult:
    nats: float
    method: str = "closed_form"

    @property
    def bits(self) -> float:
        return self.nats * LOG2E

    def __float__(self):
        return self.nats


def _pmf_pair(p: DiscreteModel, q: DiscreteModel):
    a, b = p.pmf(), q.pmf()
    n = max(a.size, b.size)
    return np.pad(a, (0, n - a.size)), np.pad(b, (0, n - b.size))


def _discrete_kl(pp: np.ndarray, qq: np.ndarray) -> float:
    mask = pp > 0
    if np.any(qq[mask] == 0):
        return math.inf
    return float(np.sum(pp[mask] * np.log(pp[mask] / qq[mask])))


def _gaussian_kl(m1, v1, m2, v2) -> float:
    return 0.5 * (math.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / v2 - 1.0)


def expect(model: DistributionModel, fn) -> float:
    """E[fn(X)] under ``model``: a sum for discrete, adaptive quadrature otherwise."""
    if model.discrete:
        x = np.arange(model.alphabet_size)
        p = model.pmf()
        keep = p > 0
        return float(np.sum(p[keep] * fn(x[keep])))
    lo, hi = model.support
    # split at quantiles so quad sees the bulk of the mass
    qs = [lo] + [float(model.ppf(q)) for q in (1e-3, 0.25, 0.5, 0.75, 0.999)] + [hi]
    total = 0.0
    for a, b in zip(qs[:-1], qs[1:]):
        if b <= a:
            continue
        val, _ = integrate.quad(lambda t: math.exp(model.log_density(t)) * fn(t), a, b,
                                limit=200, epsabs=1e-13, epsrel=1e-11)
        total += val
    return total


def kl_divergence(p: DistributionModel, q: DistributionModel) -> KlResult:
    """D(p || q) in nats (``.bits`` for base 2); ``+inf`` without absolute continuity."""
    if p.discrete != q.discrete:
        raise ModelError("KL between a discrete and a continuous model is undefined here")
    if p.discrete:
        return KlResult(_discrete_kl(*_pmf_pair(p, q)))
    if isinstance(p, Gaussian) and isinstance(q, Gaussian):
        return KlResult(_gaussian_kl(p.mean, p.variance, q.mean, q.variance))
    if isinstance(p, Lognormal) and isinstance(q, Lognormal):
        # invariant under the common bijection log(x)
        return KlResult(_gaussian_kl(p.mean, p.variance, q.mean, q.variance))
    if isinstance(p, Pareto) and isinstance(q, Pareto):
        k1, a1, k2, a2 = p.shape, p.scale, q.shape, q.scale
        if a1 < a2:
            return KlResult(math.inf)
        return KlResult(math.log(k1 / k2) + k2 * math.log(a1 / a2) + (k2 - k1) / k1)
    # generic pair: quadrature, flagged in the result
    if p.support[0] < q.support[0] or p.support[1] > q.support[1]:
        return KlResult(math.inf, "support")
    val = expect(p, lambda t: p.log_density(t) - q.log_density(t))
    return KlResult(max(val, 0.0), "quadrature")


def llr_moments(p1: DistributionModel, p0: DistributionModel) -> tuple[float, float]:
    """Mean and variance, under ``p1``, of log2(p1(X)/p0(X)) in bits and bits^2."""
    mean = kl_divergence(p1, p0).bits
    if math.isinf(mean):
        return math.inf, math.inf

    def _sq(t):
        d = (np.asarray(p1.log_density(t)) - np.asarray(p0.log_density(t))) * LOG2E - mean
        return d * d

    return mean, expect(p1, _sq)
