"""Single-node sequential tests with a step-at-a-time interface.

All statistics, thresholds and the drift parameter ``lam`` are in bits.  A
test stops the first time its statistic leaves ``(lower, upper)``; once a
test has decided, further ``step`` calls leave it untouched.

Universal tests never see the alternative distribution: they replace the
alternative log-likelihood by the negative codelength of a universal code.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .dist_models import LOG2E, DistributionModel
from .quantization import QuantizerSpec, quantize
from .universal_codes import KtState, Lz78State, kt_redundancy_bits, lz_redundancy

DEFAULT_CAP = 10 ** 6


class Status(enum.Enum):
    RUNNING = "running"
    H0 = "H0"
    H1 = "H1"
    CAPPED = "capped"


class ObservationError(ValueError):
    """An observation has zero likelihood under both hypotheses."""


def thresholds_from_errors(alpha: float, beta: float) -> tuple[float, float]:
    """``(log2 beta, -log2 alpha)`` for target error levels in (0, 1)."""
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise ValueError("alpha and beta must lie in (0, 1)")
    return math.log2(beta), -math.log2(alpha)


@dataclass
class TrialOutcome:
    decision: Status
    n: int
    flags: tuple[str, ...] = ()

    @property
    def capped(self) -> bool:
        return self.decision is Status.CAPPED


class SequentialTest:
    """Running statistic with two-sided stopping thresholds."""

    variant = "base"

    def __init__(self, lower: float, upper: float, max_samples: int = DEFAULT_CAP):
        if not (lower < 0 < upper):
            raise ValueError(f"thresholds must satisfy lower < 0 < upper, got ({lower}, {upper})")
        if max_samples < 1:
            raise ValueError("max_samples must be >= 1")
        self.lower = float(lower)
        self.upper = float(upper)
        self.max_samples = int(max_samples)
        self.statistic = 0.0
        self.n = 0
        self.status = Status.RUNNING
        self.flags: list[str] = []

    @property
    def done(self) -> bool:
        return self.status is not Status.RUNNING

    def step(self, x) -> Status:
        if self.status is not Status.RUNNING:
            return self.status
        self.n += 1
        self.statistic = self._advance(x)
        self._decide()
        return self.status

    def _advance(self, x) -> float:
        raise NotImplementedError

    def _decide(self) -> None:
        w = self.statistic
        if w >= self.upper:
            self.status = Status.H1
        elif w <= self.lower:
            self.status = Status.H0
        elif self.n >= self.max_samples:
            self.status = Status.CAPPED

    def outcome(self) -> TrialOutcome:
        return TrialOutcome(self.status, self.n, tuple(self.flags))


class Sprt(SequentialTest):
    """Wald's test; needs both hypotheses."""

    variant = "sprt"

    def __init__(self, p0: DistributionModel, p1: DistributionModel, lower, upper,
                 max_samples=DEFAULT_CAP):
        super().__init__(lower, upper, max_samples)
        self.p0, self.p1 = p0, p1

    def llr(self, x) -> float:
        a, b = self.p1.log_density(x), self.p0.log_density(x)
        if a == -math.inf and b == -math.inf:
            raise ObservationError(f"observation {x!r} lies outside both supports")
        if b == -math.inf:
            return math.inf
        if a == -math.inf:
            return -math.inf
        return (a - b) * LOG2E

    def _advance(self, x):
        return self.statistic + self.llr(x)


def sprt_step(test: Sprt, x) -> Sprt:
    test.step(x)
    return test


def _make_coder(kind: str, alphabet_size: int, S: float):
    if kind == "kt":
        return KtState(alphabet_size, S)
    if kind == "lz78":
        return Lz78State(alphabet_size)
    raise ValueError(f"unknown coder {kind!r}; expected 'kt' or 'lz78'")


class _CodeTest(SequentialTest):
    """``-L_n - sum(null log2 terms) - n*lam/2 - correction(n)``."""

    def __init__(self, coder, lam: float, lower, upper, max_samples):
        super().__init__(lower, upper, max_samples)
        if not lam > 0:
            raise ValueError(f"lam must be > 0, got {lam}")
        self.lam = float(lam)
        self.coder = coder
        self.null_sum = 0.0
        self.statistic = -float(coder.codelength)

    def _encode(self, x) -> tuple[int, float]:
        """Symbol for the coder and the null's log2 mass attributed to it."""
        raise NotImplementedError

    def correction(self, n: int) -> float:
        return 0.0

    def _advance(self, x):
        sym, null = self._encode(x)
        if null == -math.inf:
            self.flags.append("null_zero_mass")
            return math.inf
        self.coder.push(sym)
        self.null_sum += null
        return (-float(self.coder.codelength) - self.null_sum
                - self.n * self.lam * 0.5 - self.correction(self.n))


class UniversalFinite(_CodeTest):
    """Finite-alphabet universal test; ``p0`` is the only model it knows."""

    variant = "univ_finite"

    def __init__(self, p0: DistributionModel, lam, lower, upper, *, coder="kt", S=0.0,
                 max_samples=DEFAULT_CAP):
        if not p0.discrete:
            raise ValueError("UniversalFinite needs a finite-alphabet null model")
        self.p0 = p0
        self._log2p0 = [v * LOG2E for v in p0._log_table()]
        super().__init__(_make_coder(coder, p0.alphabet_size, S), lam, lower, upper, max_samples)

    def _encode(self, x):
        s = int(x)
        if not 0 <= s < len(self._log2p0):
            raise ObservationError(f"symbol {x!r} outside the alphabet of {self.p0}")
        return s, self._log2p0[s]


def univ_finite_step(test: UniversalFinite, symbol) -> UniversalFinite:
    test.step(symbol)
    return test


class _QuantizedTest(_CodeTest):
    def __init__(self, f0, quantizer: QuantizerSpec, coder, lam, lower, upper, max_samples):
        self.f0 = f0
        self.quantizer = quantizer
        self._log2_step = quantizer.log2_step
        super().__init__(coder, lam, lower, upper, max_samples)

    def _encode(self, x):
        lf = self.f0.log_density(x)
        if lf == -math.inf:
            return 0, -math.inf
        return quantize(self.quantizer, x), lf * LOG2E + self._log2_step


class Ktslrt(_QuantizedTest):
    """Quantized observations coded with KT-AE; ``S`` defaults to 1."""

    variant = "ktslrt"

    def __init__(self, f0, quantizer, lam, lower, upper, *, S=1.0, max_samples=DEFAULT_CAP):
        super().__init__(f0, quantizer, KtState(quantizer.alphabet_size, S), lam, lower, upper,
                         max_samples)


class Lzslrt(_QuantizedTest):
    """Quantized observations coded with LZ78 plus a redundancy term.

    The term subtracted at sample ``n`` is ``lz_redundancy(n, C)``, or
    ``n * lz_redundancy(n, C)`` with ``scale_by_n``.  ``C`` defaults to
    ``log2 |A|``.
    """

    variant = "lzslrt"

    def __init__(self, f0, quantizer, lam, lower, upper, *, C=None, scale_by_n=False,
                 max_samples=DEFAULT_CAP):
        self.C = math.log2(quantizer.alphabet_size) if C is None else float(C)
        self.scale_by_n = bool(scale_by_n)
        super().__init__(f0, quantizer, Lz78State(quantizer.alphabet_size), lam, lower, upper,
                         max_samples)

    def correction(self, n):
        if n < 1 or self.C == 0:
            return 0.0
        eps = lz_redundancy(n, self.C)
        return n * eps if self.scale_by_n else eps


def ktslrt_step(test: Ktslrt, x) -> Ktslrt:
    test.step(x)
    return test


def lzslrt_step(test: Lzslrt, x) -> Lzslrt:
    test.step(x)
    return test


def make_tolerance(spec, *, alphabet_size: int, C: float | None = None
                   ) -> Callable[[int], float]:
    """Sample-count tolerance ``eps_n`` for the modified test.

    ``spec`` is a callable ``n -> eps_n``, a constant, ``"none"``, or a named
    redundancy envelope used directly as a sample count: ``"kt"`` is
    ``0.5 |A| log2 n + 2`` and ``"lz78"`` is ``n * lz_redundancy(n, C)``.
    """
    if callable(spec):
        return spec
    if spec is None or spec == "none":
        return lambda n: 0.0
    if isinstance(spec, (int, float)):
        value = float(spec)
        return lambda n: value
    if spec == "kt":
        return lambda n: kt_redundancy_bits(n, alphabet_size)
    if spec == "lz78":
        c = math.log2(alphabet_size) if C is None else C
        return lambda n: n * lz_redundancy(n, c)
    raise ValueError(f"unknown tolerance schedule {spec!r}")


class ModifiedUniversalFinite(UniversalFinite):
    """Universal finite test with sample-count rules around ``N0 = |lower| / (lam/2)``.

    * ``n > N0 + eps_n``: decide H0.
    * lower threshold reached while ``n < N0 - eps_n``: treated as a miss,
      the test keeps going (counted in ``vetoes``).
    * otherwise threshold crossings decide as usual.
    """

    variant = "univ_finite_modified"

    def __init__(self, p0, lam, lower, upper, *, coder="kt", S=0.0, tolerance="kt",
                 max_samples=DEFAULT_CAP):
        super().__init__(p0, lam, lower, upper, coder=coder, S=S, max_samples=max_samples)
        self.n0 = abs(self.lower) / (self.lam / 2.0)
        self.tolerance = make_tolerance(tolerance, alphabet_size=p0.alphabet_size)
        self.vetoes = 0

    def _decide(self):
        w, n = self.statistic, self.n
        eps = self.tolerance(n)
        if w >= self.upper:
            self.status = Status.H1
        elif n > self.n0 + eps:
            self.status = Status.H0
            self.flags.append("sample_rule")
        elif w <= self.lower:
            if n < self.n0 - eps:
                self.vetoes += 1
            else:
                self.status = Status.H0
        if self.status is Status.RUNNING and n >= self.max_samples:
            self.status = Status.CAPPED


def univ_finite_modified_step(test: ModifiedUniversalFinite, symbol) -> ModifiedUniversalFinite:
    test.step(symbol)
    return test


def run_to_decision(test: SequentialTest, data: Iterable) -> TrialOutcome:
    """Feed samples until the test stops; running out of data counts as capped."""
    for x in data:
        if test.step(x) is not Status.RUNNING:
            return test.outcome()
    if test.status is Status.RUNNING:
        test.status = Status.CAPPED
        test.flags.append("data_exhausted")
    return test.outcome()


@dataclass
class TestConfig:
    """Everything needed to build one test instance, config-file shaped."""

    variant: str
    lower: float
    upper: float
    lam: float = 1.0
    max_samples: int = DEFAULT_CAP
    coder: str = "kt"
    S: float | None = None
    C: float | None = None
    scale_by_n: bool = False
    tolerance: object = "kt"
    extras: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    VARIANTS = ("sprt", "univ_finite", "lzslrt", "ktslrt", "univ_finite_modified",
                "hoeffding", "nn1_entropy", "kde")

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in self.VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {self.VARIANTS}")
        if not (self.lower < 0 < self.upper):
            raise ValueError("thresholds must satisfy lower < 0 < upper")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")

    @property
    def universal(self) -> bool:
        return self.variant not in ("sprt", "hoeffding")

    def with_thresholds(self, lower: float, upper: float) -> "TestConfig":
        from dataclasses import replace
        return replace(self, lower=lower, upper=upper)


def make_test(config: TestConfig, p0: DistributionModel, p1: DistributionModel | None = None,
              quantizer: QuantizerSpec | None = None) -> SequentialTest:
    """Instantiate the test named by ``config``.

    ``p1`` is consumed by SPRT only; universal variants are never handed it.
    """
    from . import baselines

    v, lo, up, cap = config.variant, config.lower, config.upper, config.max_samples
    if v == "sprt":
        if p1 is None:
            raise ValueError("SPRT needs the alternative model")
        return Sprt(p0, p1, lo, up, cap)
    if v == "univ_finite":
        return UniversalFinite(p0, config.lam, lo, up, coder=config.coder,
                               S=config.S or 0.0, max_samples=cap)
    if v == "univ_finite_modified":
        return ModifiedUniversalFinite(p0, config.lam, lo, up, coder=config.coder,
                                       S=config.S or 0.0, tolerance=config.tolerance,
                                       max_samples=cap)
    if v in ("ktslrt", "lzslrt"):
        if quantizer is None:
            raise ValueError(f"{v} needs a quantizer")
        if v == "ktslrt":
            S = 1.0 if config.S is None else config.S
            return Ktslrt(p0, quantizer, config.lam, lo, up, S=S, max_samples=cap)
        return Lzslrt(p0, quantizer, config.lam, lo, up, C=config.C,
                      scale_by_n=config.scale_by_n, max_samples=cap)
    if v == "nn1_entropy":
        return baselines.Nn1EntropyTest(p0, config.lam, lo, up, max_samples=cap)
    if v == "kde":
        return baselines.KdeTest(p0, config.lam, lo, up, max_samples=cap)
    raise ValueError(f"variant {v!r} is not sequential")
