"""Block-structured Monte Carlo execution of single-node tests.

Trials are grouped in fixed-size blocks.  Each block draws its observations
from counter-based Philox streams keyed by ``(seed, hypothesis, block, tag,
chunk)``, drawing only for the rows still running, in chunks whose width
doubles from ``FIRST_CHUNK``.  The keys never depend on how blocks are
distributed over workers, so results are worker-count independent.

SPRT and the KT-based tests run in vectorized numpy engines; every other
variant runs the scalar step classes from :mod:`uniseq.sequential` on the
same sample matrix, so both engines consume identical observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dist_models import LOG2E, DistributionModel
from .quantization import QuantizerSpec, quantize
from .sequential import (ObservationError, SequentialTest, Status, TestConfig, make_test,
                         make_tolerance)

BLOCK_SIZE = 4096
FIRST_CHUNK = 32

H0, H1, CAPPED = 0, 1, 2
_STATUS_CODE = {Status.H0: H0, Status.H1: H1, Status.CAPPED: CAPPED}


def stream(seed: int, hypothesis: int, block: int, tag: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence([int(seed), int(hypothesis), int(block), int(tag), int(chunk)])))


class ChunkSource:
    """Successive sample chunks for one (seed, hypothesis, block, tag) key."""

    def __init__(self, model: DistributionModel, seed: int, hypothesis: int, block: int,
                 tag: int = 0):
        self.model = model
        self.key = (seed, hypothesis, block, tag)
        self.chunk = 0

    def draw(self, rows: int, cols: int) -> np.ndarray:
        rng = stream(*self.key, self.chunk)
        self.chunk += 1
        return np.asarray(self.model.sample(rng, size=(rows, cols)))


@dataclass
class BlockResult:
    decision: np.ndarray  # int8 codes H0/H1/CAPPED
    n: np.ndarray  # stopping times; the cap for capped rows
    flags: dict = field(default_factory=dict)

    @staticmethod
    def concat(parts: list["BlockResult"]) -> "BlockResult":
        flags: dict = {}
        for p in parts:
            for k, v in p.flags.items():
                flags[k] = flags.get(k, 0) + v
        return BlockResult(np.concatenate([p.decision for p in parts]),
                           np.concatenate([p.n for p in parts]), flags)


# -- vectorized engines ------------------------------------------------------

class VecEngine:
    """Per-row statistic arrays; ``step`` advances the rows in ``idx`` by one sample."""

    def __init__(self, rows: int, lower: float, upper: float):
        self.W = np.zeros(rows)
        self.lower, self.upper = lower, upper
        self.flags: dict = {}

    def _flag(self, name: str, count: int):
        if count:
            self.flags[name] = self.flags.get(name, 0) + int(count)

    def step(self, idx: np.ndarray, x: np.ndarray, n: int) -> np.ndarray:
        raise NotImplementedError

    def decide(self, idx: np.ndarray, w: np.ndarray, n: int) -> np.ndarray:
        code = np.full(idx.size, -1, dtype=np.int8)
        code[w <= self.lower] = H0
        code[w >= self.upper] = H1
        return code


class SprtVec(VecEngine):
    def __init__(self, rows, p0, p1, lower, upper):
        super().__init__(rows, lower, upper)
        self.p0, self.p1 = p0, p1
        self.table = None
        if p0.discrete and p1.discrete:
            k = max(p0.alphabet_size, p1.alphabet_size)
            a = np.asarray(p1.log_density(np.arange(k)))
            b = np.asarray(p0.log_density(np.arange(k)))
            # symbols impossible under both hypotheses map to nan and abort in step
            with np.errstate(invalid="ignore"):
                self.table = (a - b) * LOG2E

    def step(self, idx, x, n):
        if self.table is not None:
            inc = self.table[x]
        else:
            a = np.asarray(self.p1.log_density(x))
            b = np.asarray(self.p0.log_density(x))
            with np.errstate(invalid="ignore"):
                inc = (a - b) * LOG2E
        if np.isnan(inc).any():
            raise ObservationError("observation outside both supports")
        w = self.W[idx] + inc
        self.W[idx] = w
        return w


class KtVec(VecEngine):
    """KT-coded universal statistic for finite (``p0``) or quantized (``f0``) data."""

    def __init__(self, rows, lam, lower, upper, *, S=0.0, p0=None, f0=None,
                 quantizer: QuantizerSpec | None = None):
        super().__init__(rows, lower, upper)
        if (p0 is None) == (f0 is None):
            raise ValueError("give exactly one of p0 (finite) or f0 with a quantizer")
        self.lam, self.S = float(lam), float(S)
        if p0 is not None:
            self.A = p0.alphabet_size
            self.null_table = np.asarray(p0.log_density(np.arange(self.A))) * LOG2E
        else:
            if quantizer is None:
                raise ValueError("continuous KT engine needs a quantizer")
            self.A = quantizer.alphabet_size
            self.f0, self.quantizer = f0, quantizer
            self.null_table = None
        self.half = self.A / 2.0
        self.counts = np.zeros((rows, self.A), dtype=np.int64)
        self.log2_prob = np.zeros(rows)
        self.null_sum = np.zeros(rows)
        self.W[:] = -2.0

    def step(self, idx, x, n):
        if self.null_table is not None:
            sym = np.asarray(x, dtype=np.int64)
            null = self.null_table[sym]
        else:
            sym = quantize(self.quantizer, x)
            null = np.asarray(self.f0.log_density(x)) * LOG2E + self.quantizer.log2_step
        v = self.counts[idx, sym]
        inc = np.log2((v + 0.5 + self.S) / ((n - 1) + self.half))
        self.counts[idx, sym] = v + 1
        lp = self.log2_prob[idx] + inc
        self.log2_prob[idx] = lp
        ns = self.null_sum[idx] + null
        self.null_sum[idx] = ns
        w = -(2.0 - lp) - ns - n * self.lam * 0.5
        zero = null == -np.inf
        if zero.any():
            w[zero] = np.inf
            self._flag("null_zero_mass", zero.sum())
        self.W[idx] = w
        return w


class ModifiedKtVec(KtVec):
    def __init__(self, rows, lam, lower, upper, *, p0, S=0.0, tolerance="kt"):
        super().__init__(rows, lam, lower, upper, S=S, p0=p0)
        self.n0 = abs(lower) / (lam / 2.0)
        self.tolerance = make_tolerance(tolerance, alphabet_size=self.A)
        self.vetoes = 0

    def decide(self, idx, w, n):
        eps = self.tolerance(n)
        code = np.full(idx.size, -1, dtype=np.int8)
        if n > self.n0 + eps:
            code[:] = H0
            self._flag("sample_rule", int(np.sum(w < self.upper)))
        elif n >= self.n0 - eps:
            code[w <= self.lower] = H0
        else:
            self.vetoes += int(np.sum(w <= self.lower))
        code[w >= self.upper] = H1
        return code


def vector_engine(config: TestConfig, rows: int, p0, p1=None, quantizer=None) -> VecEngine | None:
    """The vectorized engine for ``config``, or None if only the scalar path exists."""
    v = config.variant
    if v == "sprt":
        return SprtVec(rows, p0, p1, config.lower, config.upper)
    if v == "univ_finite" and config.coder == "kt":
        return KtVec(rows, config.lam, config.lower, config.upper, S=config.S or 0.0, p0=p0)
    if v == "ktslrt":
        S = 1.0 if config.S is None else config.S
        return KtVec(rows, config.lam, config.lower, config.upper, S=S, f0=p0,
                     quantizer=quantizer)
    if v == "univ_finite_modified" and config.coder == "kt":
        return ModifiedKtVec(rows, config.lam, config.lower, config.upper, p0=p0,
                             S=config.S or 0.0, tolerance=config.tolerance)
    return None


# -- block drivers -----------------------------------------------------------

def run_vector_block(engine: VecEngine, source: ChunkSource, rows: int, cap: int) -> BlockResult:
    decision = np.full(rows, CAPPED, dtype=np.int8)
    stop = np.full(rows, cap, dtype=np.int64)
    alive = np.arange(rows)
    n, width = 0, FIRST_CHUNK
    while alive.size and n < cap:
        k = min(width, cap - n)
        X = source.draw(alive.size, k)
        pos = np.arange(alive.size)
        for j in range(k):
            n += 1
            w = engine.step(alive, X[pos, j], n)
            code = engine.decide(alive, w, n)
            done = code >= 0
            if done.any():
                decision[alive[done]] = code[done]
                stop[alive[done]] = n
                keep = ~done
                alive, pos = alive[keep], pos[keep]
                if not alive.size:
                    break
        width *= 2
    return BlockResult(decision, stop, dict(engine.flags))


def run_scalar_block(factory: Callable[[], SequentialTest], source: ChunkSource, rows: int,
                     cap: int) -> BlockResult:
    tests = [factory() for _ in range(rows)]
    decision = np.full(rows, CAPPED, dtype=np.int8)
    stop = np.full(rows, cap, dtype=np.int64)
    alive = np.arange(rows)
    n, width = 0, FIRST_CHUNK
    while alive.size and n < cap:
        k = min(width, cap - n)
        X = source.draw(alive.size, k)
        keep = np.ones(alive.size, dtype=bool)
        for i, r in enumerate(alive):
            t = tests[r]
            for x in X[i]:
                if t.step(x) is not Status.RUNNING:
                    break
            if t.done:
                decision[r] = _STATUS_CODE[t.status]
                stop[r] = t.n
                keep[i] = False
        alive = alive[keep]
        n += k
        width *= 2
    flags: dict = {}
    for t in tests:
        for f in set(t.flags):
            flags[f] = flags.get(f, 0) + 1
    return BlockResult(decision, stop, flags)


def simulate_block(config: TestConfig, p0: DistributionModel, truth: DistributionModel,
                   hypothesis: int, seed: int, block: int, rows: int, *,
                   p1: DistributionModel | None = None, quantizer: QuantizerSpec | None = None,
                   tag: int = 0, engine: str = "auto") -> BlockResult:
    """Run ``rows`` trials of one block with observations drawn from ``truth``.

    ``p1`` reaches SPRT only; universal variants never see it.
    """
    source = ChunkSource(truth, seed, hypothesis, block, tag)
    cap = config.max_samples
    if engine in ("auto", "vector"):
        vec = vector_engine(config, rows, p0, p1, quantizer)
        if vec is not None:
            return run_vector_block(vec, source, rows, cap)
        if engine == "vector":
            raise ValueError(f"no vectorized engine for variant {config.variant!r}")
    return run_scalar_block(lambda: make_test(config, p0, p1, quantizer), source, rows, cap)


def block_layout(trials: int, block_size: int = BLOCK_SIZE) -> list[tuple[int, int]]:
    """``(block_id, rows)`` pairs covering ``trials`` rows."""
    out, b = [], 0
    while trials > 0:
        r = min(block_size, trials)
        out.append((b, r))
        trials -= r
        b += 1
    return out


def simulate(config: TestConfig, p0, truth, hypothesis: int, seed: int, trials: int, *,
             p1=None, quantizer=None, engine="auto", block_size: int = BLOCK_SIZE,
             mapper=map) -> BlockResult:
    """All trials for one hypothesis; ``mapper`` may be a pool's ``map``."""
    jobs = [(config, p0, truth, hypothesis, seed, b, r, p1, quantizer, engine)
            for b, r in block_layout(trials, block_size)]
    return BlockResult.concat(list(mapper(_block_job, jobs)))


def _block_job(args) -> BlockResult:
    config, p0, truth, hyp, seed, b, r, p1, q, engine = args
    return simulate_block(config, p0, truth, hyp, seed, b, r, p1=p1, quantizer=q, engine=engine)


def error_rate(result: BlockResult, hypothesis: int) -> float:
    """Wrong-decision fraction among decided rows (capped rows excluded)."""
    decided = result.decision != CAPPED
    if not decided.any():
        return math.nan
    wrong = result.decision[decided] != hypothesis
    return float(wrong.mean())
