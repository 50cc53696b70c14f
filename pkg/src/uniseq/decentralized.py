"""L-node decentralized detection over a coherent multiple-access channel.

Slots are synchronous: in slot ``k`` every undecided node takes one
observation and steps its local test; every node transmits ``Y_{k,l}``; the
fusion center receives ``Y_k = sum_l Y_{k,l} + Z_k`` and adds
``xi_k = log2(g_{mu1}(Y_k) / g_{-mu0}(Y_k))`` to its statistic ``F``, where
``g_m`` is the density of ``m + Z``.  ``F`` stops outside ``(-beta0, beta1)``.

By default a node freezes at its first threshold crossing and then
transmits ``b1`` (upper) or ``b0`` (lower) in every later slot.  With
``persistent=False`` nodes never freeze and transmit only while their
statistic is beyond a threshold.

There is no feedback from the fusion center, so with persistent
transmission the batch path runs each node as an independent single-node
trial on its own stream and then replays the fusion walk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .batch import (CAPPED, FIRST_CHUNK, H0, H1, BLOCK_SIZE, BlockResult, ChunkSource,
                    block_layout, simulate_block)
from .dist_models import LOG2E, DistributionModel, Gaussian, expect
from .quantization import QuantizerSpec
from .sequential import Status, TestConfig, make_test

FUSION_TAG = 0


def node_tag(l: int) -> int:
    return l + 1


@dataclass(frozen=True)
class FusionNoise:
    """Law of the additive MAC noise ``Z_k``.

    ``model=None`` is a noiseless channel; its log-ratio is then the
    Gaussian one with ``reference_variance``.
    """

    model: DistributionModel | None = Gaussian(0.0, 1.0)
    reference_variance: float = 1.0

    @property
    def gaussian_variance(self) -> float | None:
        if self.model is None:
            return self.reference_variance
        if isinstance(self.model, Gaussian) and self.model.mean == 0:
            return self.model.variance
        return None

    def llr(self, y, mu1: float, mu0: float):
        """``log2(g_mu1(y) / g_-mu0(y))``, elementwise."""
        var = self.gaussian_variance
        y = np.asarray(y, dtype=float)
        if var is not None:
            return ((y + mu0) ** 2 - (y - mu1) ** 2) / (2.0 * var) * LOG2E
        a = np.asarray(self.model.log_density(y - mu1))
        b = np.asarray(self.model.log_density(y + mu0))
        if np.any((a == -np.inf) & (b == -np.inf)):
            raise ValueError("fusion observation has zero density under both hypotheses")
        with np.errstate(invalid="ignore"):
            return (a - b) * LOG2E

    def draw(self, source: ChunkSource | None, rows: int, cols: int) -> np.ndarray:
        if self.model is None:
            return np.zeros((rows, cols))
        return source.draw(rows, cols)

    def drift(self, level: float, mu1: float, mu0: float) -> float:
        """Mean of ``xi`` in bits when the noiseless MAC output is ``level``."""
        var = self.gaussian_variance
        if self.model is None:
            return float(self.llr(level, mu1, mu0))
        if var is not None:
            return ((level + mu0) ** 2 - (level - mu1) ** 2) / (2.0 * var) * LOG2E
        return expect(self.model, lambda z: self.llr(level + np.asarray(z), mu1, mu0))


@dataclass
class NodeSpec:
    f0: DistributionModel
    f1: DistributionModel
    test: TestConfig
    quantizer: QuantizerSpec | None = None

    def model(self, hypothesis: int) -> DistributionModel:
        return self.f1 if hypothesis == 1 else self.f0

    def make(self):
        p1 = self.f1 if self.test.variant == "sprt" else None
        return make_test(self.test, self.f0, p1, self.quantizer)


@dataclass
class NetworkConfig:
    nodes: list[NodeSpec]
    b1: float = 1.0
    b0: float = -1.0
    I: int = 1
    noise: FusionNoise = field(default_factory=FusionNoise)
    beta1: float = 10.0
    beta0: float = 10.0
    max_slots: int = 10 ** 6
    persistent: bool = True

    def __post_init__(self):
        if not self.nodes:
            raise ValueError("a network needs at least one node")
        if self.I < 1:
            raise ValueError("I must be >= 1")
        if not (self.mu1 > 0 and self.mu0 > 0):
            raise ValueError("need b1*I > 0 and |b0|*I > 0")
        if not (self.beta1 > 0 and self.beta0 > 0):
            raise ValueError("fusion thresholds beta1, beta0 must be > 0")
        capped = [replace(n, test=replace(n.test, max_samples=self.max_slots)) for n in self.nodes]
        self.nodes = capped

    @property
    def L(self) -> int:
        return len(self.nodes)

    @property
    def mu1(self) -> float:
        return self.b1 * self.I

    @property
    def mu0(self) -> float:
        return abs(self.b0) * self.I

    def level(self, decision: int) -> float:
        return self.b1 if decision == H1 else (self.b0 if decision == H0 else 0.0)


def node_transmit(status: Status, b1: float, b0: float) -> float:
    """Persistent rule: ``b1`` after an H1 decision, ``b0`` after H0, else 0."""
    if status is Status.H1:
        return b1
    if status is Status.H0:
        return b0
    return 0.0


def mac_output(levels, z: float) -> float:
    s = 0.0
    for v in levels:
        s += v
    return s + z


@dataclass
class FusionState:
    beta1: float
    beta0: float
    F: float = 0.0
    k: int = 0
    status: Status = Status.RUNNING


def fusion_step(state: FusionState, y: float, noise: FusionNoise, mu1: float, mu0: float
                ) -> FusionState:
    if state.status is not Status.RUNNING:
        return state
    state.k += 1
    state.F = state.F + float(noise.llr(np.array([y]), mu1, mu0)[0])
    if state.F >= state.beta1:
        state.status = Status.H1
    elif state.F <= -state.beta0:
        state.status = Status.H0
    return state


@dataclass
class NetworkRun:
    decision: int
    n_d: int
    node_times: np.ndarray  # slot of each node's local decision; max_slots + 1 if none
    node_decisions: np.ndarray  # H0/H1/CAPPED per node
    Y: list = field(default_factory=list)
    F: list = field(default_factory=list)

    @property
    def order_times(self) -> np.ndarray:
        return np.sort(self.node_times)


class _NodeFeed:
    """One node's observation stream, chunked exactly like a one-row block."""

    def __init__(self, model, seed, hypothesis, trial, tag):
        self.source = ChunkSource(model, seed, hypothesis, trial, tag)
        self.buf = np.empty(0)
        self.pos = 0
        self.width = FIRST_CHUNK

    def next(self):
        if self.pos == self.buf.size:
            self.buf = self.source.draw(1, self.width)[0]
            self.pos = 0
            self.width *= 2
        x = self.buf[self.pos]
        self.pos += 1
        return x


def run_network(config: NetworkConfig, hypothesis: int, seed: int, trial: int = 0,
                record: bool = True) -> NetworkRun:
    """Scalar slot-by-slot reference simulation of one trial.

    With persistent transmission the decision and ``N_d`` equal the batch
    path run with one trial per block (block id ``trial``).  Nodes stop at
    ``N_d`` here, so node times agree with the batch path only up to ``N_d``;
    the batch path runs every node to its own decision.
    """
    L, cap = config.L, config.max_slots
    tests = [n.make() for n in config.nodes]
    feeds = [_NodeFeed(n.model(hypothesis), seed, hypothesis, trial, node_tag(l))
             for l, n in enumerate(config.nodes)]
    noise_feed = None if config.noise.model is None else _NodeFeed(
        config.noise.model, seed, hypothesis, trial, FUSION_TAG)
    times = np.full(L, cap + 1, dtype=np.int64)
    decisions = np.full(L, CAPPED, dtype=np.int8)
    fusion = FusionState(config.beta1, config.beta0)
    ys, fs = [], []
    for k in range(1, cap + 1):
        levels = []
        for l, t in enumerate(tests):
            if config.persistent:
                if not t.done:
                    st = t.step(feeds[l].next())
                    if st in (Status.H0, Status.H1):
                        times[l] = k
                        decisions[l] = H1 if st is Status.H1 else H0
                levels.append(node_transmit(t.status, config.b1, config.b0))
            else:
                t.n += 1
                t.statistic = t._advance(feeds[l].next())
                w = t.statistic
                level = config.b1 if w >= t.upper else (config.b0 if w <= t.lower else 0.0)
                if level and times[l] > cap:
                    times[l] = k
                    decisions[l] = H1 if level == config.b1 else H0
                levels.append(level)
        z = 0.0 if noise_feed is None else noise_feed.next()
        y = mac_output(levels, z)
        fusion_step(fusion, y, config.noise, config.mu1, config.mu0)
        if record:
            ys.append(y)
            fs.append(fusion.F)
        if fusion.status is not Status.RUNNING:
            break
    code = {Status.H0: H0, Status.H1: H1}.get(fusion.status, CAPPED)
    return NetworkRun(code, fusion.k, times, decisions, ys, fs)


def dualsprt_node(f0, f1, gamma0: float, gamma1: float, max_slots: int = 10 ** 6) -> NodeSpec:
    return NodeSpec(f0, f1, TestConfig("sprt", -gamma0, gamma1, max_samples=max_slots))


# -- batch path --------------------------------------------------------------

@dataclass
class NetworkBatch:
    decision: np.ndarray
    n_d: np.ndarray
    node_times: np.ndarray  # (rows, L)
    node_decisions: np.ndarray  # (rows, L)

    @staticmethod
    def concat(parts):
        return NetworkBatch(*(np.concatenate([getattr(p, f) for p in parts])
                              for f in ("decision", "n_d", "node_times", "node_decisions")))


def fusion_walk(config: NetworkConfig, times: np.ndarray, levels: np.ndarray,
                source: ChunkSource | None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized fusion statistic over rows given node decision times and levels."""
    rows = times.shape[0]
    cap = config.max_slots
    decision = np.full(rows, CAPPED, dtype=np.int8)
    stop = np.full(rows, cap, dtype=np.int64)
    F = np.zeros(rows)
    alive = np.arange(rows)
    n, width = 0, FIRST_CHUNK
    while alive.size and n < cap:
        k = min(width, cap - n)
        Z = config.noise.draw(source, alive.size, k)
        cols = np.arange(n + 1, n + k + 1)
        M = np.zeros((alive.size, k))
        for l in range(config.L):
            M += levels[alive, l, None] * (times[alive, l, None] <= cols[None, :])
        xi = config.noise.llr(M + Z, config.mu1, config.mu0)
        path = np.cumsum(np.concatenate([F[alive, None], xi], axis=1), axis=1)[:, 1:]
        up, down = path >= config.beta1, path <= -config.beta0
        hit = up | down
        any_hit = hit.any(axis=1)
        first = np.argmax(hit, axis=1)
        r = np.nonzero(any_hit)[0]
        decision[alive[r]] = np.where(up[r, first[r]], H1, H0)
        stop[alive[r]] = n + 1 + first[r]
        keep = ~any_hit
        F[alive[keep]] = path[keep, -1]
        alive = alive[keep]
        n += k
        width *= 2
    return decision, stop


def simulate_network_block(config: NetworkConfig, hypothesis: int, seed: int, block: int,
                           rows: int, block_size: int = BLOCK_SIZE) -> NetworkBatch:
    if not config.persistent:
        # free-running nodes need the slot loop; each trial is its own one-row block
        runs = [run_network(config, hypothesis, seed, block * block_size + i, record=False)
                for i in range(rows)]
        return NetworkBatch(np.array([r.decision for r in runs], dtype=np.int8),
                            np.array([r.n_d for r in runs], dtype=np.int64),
                            np.stack([r.node_times for r in runs]),
                            np.stack([r.node_decisions for r in runs]))
    L = config.L
    times = np.empty((rows, L), dtype=np.int64)
    decisions = np.empty((rows, L), dtype=np.int8)
    for l, node in enumerate(config.nodes):
        p1 = node.f1 if node.test.variant == "sprt" else None
        res: BlockResult = simulate_block(node.test, node.f0, node.model(hypothesis), hypothesis,
                                          seed, block, rows, p1=p1, quantizer=node.quantizer,
                                          tag=node_tag(l))
        decisions[:, l] = res.decision
        times[:, l] = np.where(res.decision == CAPPED, config.max_slots + 1, res.n)
    levels = np.where(decisions == H1, config.b1, np.where(decisions == H0, config.b0, 0.0))
    source = None
    if config.noise.model is not None:
        source = ChunkSource(config.noise.model, seed, hypothesis, block, FUSION_TAG)
    d, n_d = fusion_walk(config, times, levels, source)
    return NetworkBatch(d, n_d, times, decisions)


def simulate_network(config: NetworkConfig, hypothesis: int, seed: int, trials: int,
                     block_size: int = BLOCK_SIZE, mapper=map) -> NetworkBatch:
    jobs = [(config, hypothesis, seed, b, r, block_size)
            for b, r in block_layout(trials, block_size)]
    return NetworkBatch.concat(list(mapper(_network_job, jobs)))


def _network_job(args):
    return simulate_network_block(*args)


def scaled_network(config: NetworkConfig, c: float, r=None, rho=None) -> NetworkConfig:
    """Thresholds scaled with ``|log2 c|``: local ``r_l|log c|`` (lower) and
    ``rho_l|log c|`` (upper), fusion ``+-|log c|``.  ``r`` and ``rho`` default
    to ``1/L`` per node.
    """
    a = abs(math.log2(c))
    L = config.L
    r = [1.0 / L] * L if r is None else list(r)
    rho = [1.0 / L] * L if rho is None else list(rho)
    nodes = [replace(n, test=replace(n.test, lower=-r[l] * a, upper=rho[l] * a))
             for l, n in enumerate(config.nodes)]
    return replace(config, nodes=nodes, beta1=a, beta0=a)


def network_rows(batch: NetworkBatch, hypothesis: int, start_id: int = 0) -> list[list]:
    """CSV rows: run_id, hypothesis, decision, N_d, sorted node times, node decisions."""
    names = {H0: "H0", H1: "H1", CAPPED: "capped"}
    out = []
    order = np.sort(batch.node_times, axis=1)
    for i in range(batch.decision.size):
        out.append([start_id + i, hypothesis, names[int(batch.decision[i])], int(batch.n_d[i])]
                   + [int(v) for v in order[i]]
                   + [names[int(v)] for v in batch.node_decisions[i]])
    return out
