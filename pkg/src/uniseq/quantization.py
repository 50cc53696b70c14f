"""Uniform scalar quantizer mapping real observations to a finite alphabet."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dist_models import DistributionModel

DEFAULT_BITS = 8
DEFAULT_TAIL_MASS = 1e-4


class QuantizerError(ValueError):
    pass


@dataclass(frozen=True)
class QuantizerSpec:
    """Cells ``[lo + i*step, lo + (i+1)*step)`` for ``i < alphabet_size``.

    Values outside ``[lo, hi]`` saturate into the edge cells.
    """

    lo: float
    hi: float
    step: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise QuantizerError(f"need hi > lo, got lo={self.lo}, hi={self.hi}")
        if not self.step > 0:
            raise QuantizerError(f"step must be > 0, got {self.step}")
        if self.alphabet_size < 2:
            raise QuantizerError("quantizer must have at least two cells")

    @property
    def alphabet_size(self) -> int:
        # guard against (hi-lo)/step landing a hair above an integer
        return int(math.ceil((self.hi - self.lo) / self.step - 1e-9))

    @property
    def log2_step(self) -> float:
        return math.log2(self.step)

    @classmethod
    def from_bits(cls, lo: float, hi: float, bits: int = DEFAULT_BITS) -> "QuantizerSpec":
        return cls(lo, hi, (hi - lo) / 2 ** bits)

    @classmethod
    def for_null(cls, f0: DistributionModel, *, delta=None, bits=None, lo=None, hi=None,
                 tail_mass=DEFAULT_TAIL_MASS) -> "QuantizerSpec":
        """Build from config keys: ``delta`` or ``bits``; ``lo``/``hi`` or ``tail_mass``."""
        if lo is None or hi is None:
            auto_lo, auto_hi = auto_range(f0, tail_mass)
            lo = auto_lo if lo is None else lo
            hi = auto_hi if hi is None else hi
        if delta is not None:
            return cls(lo, hi, float(delta))
        return cls.from_bits(lo, hi, DEFAULT_BITS if bits is None else int(bits))

    def quantize(self, x):
        return quantize(self, x)


def quantize(spec: QuantizerSpec, x):
    """Cell index ``clamp(floor((x - lo)/step), 0, |A|-1)``; arrays map elementwise."""
    top = spec.alphabet_size - 1
    if np.ndim(x) == 0:
        i = math.floor((x - spec.lo) / spec.step)
        return 0 if i < 0 else (top if i > top else i)
    i = np.floor((np.asarray(x, dtype=float) - spec.lo) / spec.step)
    return np.clip(i, 0, top).astype(np.int64)


def cell_center(spec: QuantizerSpec, index: int) -> float:
    if not 0 <= index < spec.alphabet_size:
        raise IndexError(f"cell index {index} outside [0, {spec.alphabet_size})")
    return spec.lo + (index + 0.5) * spec.step


def auto_range(f0: DistributionModel, tail_mass: float = DEFAULT_TAIL_MASS) -> tuple[float, float]:
    """The ``tail_mass`` and ``1 - tail_mass`` quantiles of the null model."""
    if not 0 < tail_mass < 0.5:
        raise QuantizerError(f"tail_mass must be in (0, 0.5), got {tail_mass}")
    try:
        lo, hi = float(f0.ppf(tail_mass)), float(f0.ppf(1.0 - tail_mass))
    except NotImplementedError:
        lo, hi = _bisect_quantile(f0, tail_mass), _bisect_quantile(f0, 1.0 - tail_mass)
    if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
        raise QuantizerError(f"could not derive a quantizer range from {f0} at tail mass {tail_mass}")
    return lo, hi


def _bisect_quantile(model: DistributionModel, q: float, max_iter: int = 200) -> float:
    lo, hi = -1.0, 1.0
    for _ in range(max_iter):
        if model.cdf(lo) <= q:
            break
        lo *= 2.0
    for _ in range(max_iter):
        if model.cdf(hi) >= q:
            break
        hi *= 2.0
    if not (model.cdf(lo) <= q <= model.cdf(hi)):
        raise QuantizerError(f"quantile {q} not bracketed for {model}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if model.cdf(mid) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def quantized_pmf(model: DistributionModel, spec: QuantizerSpec) -> np.ndarray:
    """Cell probabilities of ``quantize(model)``, edge cells absorbing the tails."""
    edges = spec.lo + spec.step * np.arange(1, spec.alphabet_size)
    c = np.concatenate([[0.0], model.cdf(edges), [1.0]])
    return np.maximum(np.diff(c), 0.0)
