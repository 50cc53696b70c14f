"""Incremental universal codelength models over a finite alphabet.

Two coders, both reporting cumulative codelength in bits:

* ``Lz78State``: tree-structured Lempel-Ziv parsing, phrase ``i`` costs
  ``ceil(log2(i * |A|))`` bits.  While a phrase is still open the codelength
  also charges what closing it would cost, so ``codelength`` is defined and
  non-decreasing at every sample count.
* ``KtState``: Krichevsky-Trofimov sequential probabilities, with the
  arithmetic-coder bound ``-log2 P_c + 2`` standing in for an actual encoder.
  ``S`` is added to the numerator only; any ``S > 0`` makes the assignment
  unnormalized on purpose.
"""

from __future__ import annotations

import math
from typing import Iterable


def ceil_log2(m: int) -> int:
    """Exact ``ceil(log2(m))`` for a positive integer."""
    return (m - 1).bit_length()


class Lz78State:
    """LZ78 phrase trie with a walking cursor.

    Nodes are integers (root is 0); children live in one flat dict keyed by
    ``(node, symbol)``.
    """

    __slots__ = ("alphabet_size", "children", "phrases", "cursor", "completed_bits", "n")

    def __init__(self, alphabet_size: int):
        if alphabet_size < 1:
            raise ValueError("alphabet_size must be >= 1")
        self.alphabet_size = alphabet_size
        self.children: dict[tuple[int, int], int] = {}
        self.phrases = 0
        self.cursor = 0
        self.completed_bits = 0
        self.n = 0

    def push(self, symbol: int) -> int:
        """Consume one symbol; returns the completed-phrase bits added (0 mid-phrase)."""
        self.n += 1
        key = (self.cursor, symbol)
        child = self.children.get(key)
        if child is not None:
            self.cursor = child
            return 0
        self.phrases += 1
        self.children[key] = len(self.children) + 1
        self.cursor = 0
        bits = ceil_log2(self.phrases * self.alphabet_size)
        self.completed_bits += bits
        return bits

    @property
    def pending(self) -> bool:
        return self.cursor != 0

    @property
    def codelength(self) -> int:
        if self.cursor:
            return self.completed_bits + ceil_log2((self.phrases + 1) * self.alphabet_size)
        return self.completed_bits


class KtState:
    """Symbol counts and cumulative log2 coding probability."""

    __slots__ = ("alphabet_size", "S", "counts", "n", "log2_prob", "_half")

    def __init__(self, alphabet_size: int, S: float = 0.0):
        if alphabet_size < 1:
            raise ValueError("alphabet_size must be >= 1")
        if S < 0:
            raise ValueError("S must be >= 0")
        self.alphabet_size = alphabet_size
        self.S = float(S)
        self.counts = [0] * alphabet_size
        self.n = 0
        self.log2_prob = 0.0
        self._half = alphabet_size / 2.0

    def push(self, symbol: int) -> float:
        """Consume one symbol; returns the log2-probability increment."""
        inc = math.log2((self.counts[symbol] + 0.5 + self.S) / (self.n + self._half))
        self.counts[symbol] += 1
        self.n += 1
        self.log2_prob += inc
        return inc

    @property
    def codelength(self) -> float:
        return 2.0 - self.log2_prob


def lz78_push(state: Lz78State, symbol: int) -> int:
    return state.push(symbol)


def lz78_codelength(state: Lz78State) -> int:
    return state.codelength


def kt_push(state: KtState, symbol: int) -> float:
    return state.push(symbol)


def kt_codelength(state: KtState) -> float:
    return state.codelength


def lz78_completed_bits(symbols: Iterable[int], alphabet_size: int) -> int:
    state = Lz78State(alphabet_size)
    for s in symbols:
        state.push(s)
    return state.completed_bits


def kt_log2_prob(symbols: Iterable[int], alphabet_size: int, S: float = 0.0) -> float:
    state = KtState(alphabet_size, S)
    for s in symbols:
        state.push(s)
    return state.log2_prob


def lz_redundancy(n: float, C: float) -> float:
    """Per-symbol LZ78 redundancy envelope ``C (1/log n + loglog n / n + loglog n / log n)``.

    Logs are base 2.  Below ``n = 2`` the value at ``n = 2`` is returned.
    """
    n = max(float(n), 2.0)
    ln = math.log2(n)
    lln = math.log2(ln)
    return C * (1.0 / ln + lln / n + lln / ln)


def kt_redundancy_bits(n: int, alphabet_size: int) -> float:
    """Total-codelength redundancy envelope of KT plus the coder bound."""
    if n < 1:
        return 2.0
    return 0.5 * alphabet_size * math.log2(n) + 2.0
