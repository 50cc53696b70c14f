"""Monte Carlo experiment driver: estimation, calibration, sweeps and CSV output."""

from __future__ import annotations

import contextlib
import csv
import io
import math
import multiprocessing
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .baselines import hoeffding_operating_point
from .batch import CAPPED, H0, H1, BlockResult, simulate
from .config import ExperimentSpec
from .decentralized import network_rows, simulate_network
from .theory import predict_network, single_node_slopes

CSV_VERSION = 1
CAP_FLAG_FRACTION = 0.01
_Z95 = float(stats.norm.ppf(0.975))
_NAMES = {H0: "H0", H1: "H1", CAPPED: "capped"}


def wilson(k: int, n: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for ``k`` successes in ``n`` trials."""
    if n <= 0:
        return 0.0, 1.0
    p = k / n
    den = 1.0 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


@dataclass
class HypothesisStats:
    """Outcome counts and stopping-time moments under one hypothesis."""

    trials: int
    decided: int
    errors: int
    capped: int
    mean_n: float
    se_n: float

    @classmethod
    def from_arrays(cls, decision: np.ndarray, n: np.ndarray, hypothesis: int):
        done = decision != CAPPED
        k = int(done.sum())
        errs = int(np.sum(decision[done] != hypothesis))
        if k:
            nn = n[done].astype(float)
            mean = float(nn.mean())
            se = float(nn.std(ddof=1) / math.sqrt(k)) if k > 1 else math.nan
        else:
            mean = se = math.nan
        return cls(int(decision.size), k, errs, int(decision.size - k), mean, se)

    @property
    def error(self) -> float:
        return self.errors / self.decided if self.decided else math.nan

    @property
    def error_ci(self) -> tuple[float, float]:
        return wilson(self.errors, self.decided)


@dataclass
class McSummary:
    h0: HypothesisStats
    h1: HypothesisStats
    flags: dict = field(default_factory=dict)

    @property
    def p_fa(self) -> float:
        return self.h0.error

    @property
    def p_md(self) -> float:
        return self.h1.error

    @property
    def p_fa_ci(self):
        return self.h0.error_ci

    @property
    def p_md_ci(self):
        return self.h1.error_ci

    @property
    def e0(self) -> float:
        return self.h0.mean_n

    @property
    def e1(self) -> float:
        return self.h1.mean_n

    @property
    def e_dd(self) -> float:
        return 0.5 * self.e1 + 0.5 * self.e0

    @property
    def p_e(self) -> float:
        return 0.5 * self.p_fa + 0.5 * self.p_md

    @property
    def capped(self) -> int:
        return self.h0.capped + self.h1.capped

    @property
    def unreliable(self) -> bool:
        total = self.h0.trials + self.h1.trials
        return total > 0 and self.capped > CAP_FLAG_FRACTION * total

    def row(self) -> dict:
        return {
            "p_fa": self.p_fa, "p_fa_lo": self.p_fa_ci[0], "p_fa_hi": self.p_fa_ci[1],
            "p_md": self.p_md, "p_md_lo": self.p_md_ci[0], "p_md_hi": self.p_md_ci[1],
            "e0": self.e0, "e0_se": self.h0.se_n, "e1": self.e1, "e1_se": self.h1.se_n,
            "e_dd": self.e_dd, "p_e": self.p_e, "capped": self.capped,
            "unreliable": int(self.unreliable),
        }


# -- execution ---------------------------------------------------------------

@contextlib.contextmanager
def worker_map(workers: int):
    """``map`` for ``workers <= 1``, else an order-preserving process pool map."""
    if workers is None or workers <= 1:
        yield map
        return
    with multiprocessing.get_context("spawn").Pool(workers) as pool:
        yield lambda fn, jobs: pool.map(fn, jobs, chunksize=1)


@dataclass
class SingleRun:
    summary: McSummary
    results: tuple  # per-hypothesis BlockResult


def run_single(spec: ExperimentSpec, workers: int = 1, test=None) -> SingleRun:
    test = spec.test if test is None else test
    if test.variant == "hoeffding":
        return _run_hoeffding(spec)
    p1 = spec.alt if test.variant == "sprt" else None
    out = []
    with worker_map(workers) as mapper:
        for hyp, truth in ((0, spec.null), (1, spec.alt)):
            out.append(simulate(test, spec.null, truth, hyp, spec.seed, spec.trials, p1=p1,
                                quantizer=spec.quantizer, mapper=mapper))
    flags = {}
    for r in out:
        for k, v in r.flags.items():
            flags[k] = flags.get(k, 0) + v
    s = McSummary(HypothesisStats.from_arrays(out[0].decision, out[0].n, 0),
                  HypothesisStats.from_arrays(out[1].decision, out[1].n, 1), flags)
    return SingleRun(s, tuple(out))


def _run_hoeffding(spec: ExperimentSpec) -> SingleRun:
    n, eta = spec.hoeffding["n"], spec.hoeffding["eta"]
    rng = np.random.default_rng(spec.seed)
    pt = hoeffding_operating_point(spec.null, spec.alt, n, eta, rng=rng, trials=spec.trials)
    big = 10 ** 12  # exact points: counts on an effectively infinite trial base
    t = big if pt.method == "exact" else spec.trials
    h0 = HypothesisStats(t, t, int(round(pt.p_fa * t)), 0, float(n), 0.0)
    h1 = HypothesisStats(t, t, int(round(pt.p_md * t)), 0, float(n), 0.0)
    return SingleRun(McSummary(h0, h1, {"method": pt.method}), ())


@dataclass
class NetworkExperiment:
    summary: McSummary
    batches: tuple  # per-hypothesis NetworkBatch


def run_decentralized(spec: ExperimentSpec, workers: int = 1, network=None) -> NetworkExperiment:
    cfg = spec.network if network is None else network
    out = []
    with worker_map(workers) as mapper:
        for hyp in (0, 1):
            out.append(simulate_network(cfg, hyp, spec.seed, spec.trials, mapper=mapper))
    s = McSummary(HypothesisStats.from_arrays(out[0].decision, out[0].n_d, 0),
                  HypothesisStats.from_arrays(out[1].decision, out[1].n_d, 1))
    return NetworkExperiment(s, tuple(out))


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> McSummary:
    if spec.is_network:
        return run_decentralized(spec, workers).summary
    return run_single(spec, workers).summary


# -- calibration -------------------------------------------------------------

class CalibrationError(RuntimeError):
    pass


@dataclass
class Calibration:
    threshold: float
    achieved: float
    ci: tuple[float, float]
    trials: int
    iterations: int
    converged: bool
    mean_n: float


def _with_threshold(test, t: float, side: str):
    if side == "symmetric":
        return test.with_thresholds(-t, t)
    if side == "upper":
        return test.with_thresholds(test.lower, t)
    if side == "lower":
        return test.with_thresholds(-t, test.upper)
    raise ValueError(f"unknown side {side!r}")


def evaluate_error(spec: ExperimentSpec, test, hypothesis: int, trials: int) -> HypothesisStats:
    truth = spec.alt if hypothesis == 1 else spec.null
    p1 = spec.alt if test.variant == "sprt" else None
    res: BlockResult = simulate(test, spec.null, truth, hypothesis, spec.seed, trials, p1=p1,
                                quantizer=spec.quantizer)
    return HypothesisStats.from_arrays(res.decision, res.n, hypothesis)


def calibrate_thresholds(spec: ExperimentSpec, target: float, hypothesis: int = 0, *,
                         side: str = "symmetric", lo: float = 0.5, hi: float | None = None,
                         min_trials: int | None = None, max_trials: int = 2_000_000,
                         max_iter: int = 40, tol: float = 1e-3) -> Calibration:
    """Bisect a threshold magnitude until ``target`` lies in the error's Wilson interval.

    If the error at ``lo`` is already below ``target`` the start is doubled up
    to six times to find the falling branch.

    The error is P_FA for ``hypothesis=0`` and P_MD for ``hypothesis=1``.
    Every evaluation reuses ``spec.seed`` (common random numbers), and the
    batch grows as the bracket narrows.
    """
    if not 0 < target < 0.5:
        raise ValueError("target must lie in (0, 0.5)")
    base = spec.test
    trials = min_trials or max(2000, int(50 / target))
    trials = min(trials, max_trials)

    def err(t, n):
        s = evaluate_error(spec, _with_threshold(base, t, side), hypothesis, n)
        return s

    s_lo = err(lo, trials)
    # universal statistics start at -2 bits, so small thresholds can stop at H0 at
    # once; the error then rises with the threshold before it falls
    for _ in range(6):
        if s_lo.error >= target:
            break
        lo *= 2.0
        s_lo = err(lo, trials)
    if s_lo.error < target:
        raise CalibrationError(f"error {s_lo.error:.3g} at threshold {lo} already below target")
    hi = 2.0 * lo if hi is None else hi
    s_hi = err(hi, trials)
    it = 0
    while s_hi.error > target:
        lo, s_lo = hi, s_hi
        hi *= 2.0
        s_hi = err(hi, trials)
        it += 1
        if it > max_iter:
            raise CalibrationError(f"target {target} not bracketed up to threshold {hi}")
    best = (hi, s_hi)
    for it in range(it, max_iter):
        mid = 0.5 * (lo + hi)
        s = err(mid, trials)
        ci = s.error_ci
        best = (mid, s)
        if ci[0] <= target <= ci[1] and (trials >= max_trials or hi - lo < tol * hi
                                         or ci[1] - ci[0] < 0.5 * target):
            return Calibration(mid, s.error, ci, trials, it + 1, True, s.mean_n)
        if s.error > target:
            lo = mid
        else:
            hi = mid
        if ci[0] <= target <= ci[1]:
            trials = min(max_trials, int(trials * 2))
        if hi - lo < tol * hi:
            break
    mid, s = best
    return Calibration(mid, s.error, s.error_ci, trials, max_iter, s.error_ci[0] <= target <= s.error_ci[1], s.mean_n)


# -- sweeps ------------------------------------------------------------------

def sweep(spec: ExperimentSpec, workers: int = 1) -> list[dict]:
    """One summary row per grid point, sorted by P_E; failures are kept as rows."""
    rows = []
    for lower, upper in spec.grid:
        row = {"lower": lower, "upper": upper, "error": ""}
        try:
            if spec.is_network:
                gamma, beta = lower, upper
                cfg = spec.network
                nodes = [replace(n, test=n.test.with_thresholds(-gamma, gamma)) for n in cfg.nodes]
                net = replace(cfg, nodes=nodes, beta1=beta, beta0=beta)
                s = run_decentralized(spec, workers, net).summary
            else:
                s = run_single(spec, workers, spec.test.with_thresholds(lower, upper)).summary
            row.update(s.row())
        except Exception as exc:  # noqa: BLE001 - a failed point must not stop the sweep
            row["error"] = f"{type(exc).__name__}: {exc}"
            row["p_e"] = math.nan
        rows.append(row)
    rows.sort(key=lambda r: (math.isnan(r["p_e"]), r["p_e"]))
    return rows


# -- operating-curve comparison ----------------------------------------------

def _log_pe(p: float, floor: float) -> float:
    return math.log(max(p, floor))


def _curve(points, floor):
    pts = sorted((_log_pe(p, floor), e) for p, e in points)
    return np.array([x for x, _ in pts]), np.array([e for _, e in pts])


def e_dd_at(points, p_e: float, floor: float) -> float:
    """E_DD of a (P_E, E_DD) curve at ``p_e``, linear in log P_E; nan off the curve."""
    x, y = _curve(points, floor)
    lp = _log_pe(p_e, floor)
    if lp < x[0] or lp > x[-1]:
        return math.nan
    return float(np.interp(lp, x, y))


def curve_below(a, b, floor: float, strict: bool = True) -> bool:
    """True iff curve ``a`` needs fewer samples than ``b`` at every common P_E.

    Both curves are lists of ``(P_E, E_DD)``.  P_E values under ``floor``
    (for instance zero error counts) are clamped to it.  Points of either
    curve inside the common P_E range are compared against the other curve
    interpolated in ``log P_E``.  An empty common range compares nothing;
    callers combine this with :func:`reaches_lower`.
    """
    xa, _ = _curve(a, floor)
    xb, _ = _curve(b, floor)
    lo, hi = max(xa[0], xb[0]), min(xa[-1], xb[-1])
    better = (lambda u, v: u < v) if strict else (lambda u, v: u <= v)
    for p, e in b:
        if lo <= _log_pe(p, floor) <= hi and not better(e_dd_at(a, p, floor), e):
            return False
    for p, e in a:
        if lo <= _log_pe(p, floor) <= hi and not better(e, e_dd_at(b, p, floor)):
            return False
    return True


def pareto_covered(a, b) -> bool:
    """True iff every point of ``b`` is matched by a point of ``a`` no worse in both axes."""
    return all(any(pa <= pb and ea <= eb for pa, ea in a) for pb, eb in b)


def reaches_lower(a, b) -> bool:
    """True iff the lowest P_E on ``a`` is below the lowest on ``b``."""
    return min(p for p, _ in a) < min(p for p, _ in b)


# -- theory alongside simulation ----------------------------------------------

def analyze(spec: ExperimentSpec, workers: int = 1, walks: int = 10 ** 6) -> dict:
    if spec.is_network:
        pred = predict_network(spec.network, walks=walks, seed=spec.seed)
        sim = run_decentralized(spec, workers).summary
        return {"theory_e1_nd": pred.delay.e1_nd, "sim_e1_nd": sim.e1,
                "theory_p_md": pred.pmd.p_md, "sim_p_md": sim.p_md,
                "l_star": pred.delay.l_star, "sim_p_fa": sim.p_fa, "sim_e0_nd": sim.e0}
    a = single_node_slopes(spec.null, spec.alt, spec.test.lam)
    sim = run_single(spec, workers).summary
    return {"delta": a.delta, "rho2": a.rho2,
            "theory_e0": a.e0_slope * abs(spec.test.lower), "sim_e0": sim.e0,
            "theory_e1": a.e1_slope * spec.test.upper, "sim_e1": sim.e1,
            "sim_p_fa": sim.p_fa, "sim_p_md": sim.p_md}


# -- CSV ---------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(columns: list[str], rows: list, spec: ExperimentSpec, kind: str) -> str:
    buf = io.StringIO()
    buf.write(f"# uniseq csv v{CSV_VERSION} kind={kind} spec_sha256={spec.sha256} "
              f"seed={spec.seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        vals = [r.get(c, "") for c in columns] if isinstance(r, dict) else r
        w.writerow([_fmt(v) for v in vals])
    return buf.getvalue()


SUMMARY_COLUMNS = ["p_fa", "p_fa_lo", "p_fa_hi", "p_md", "p_md_lo", "p_md_hi", "e0", "e0_se",
                   "e1", "e1_se", "e_dd", "p_e", "capped", "unreliable"]
TRIAL_COLUMNS = ["trial_id", "hypothesis", "variant", "decision", "N", "capped"]


def trial_rows(run: SingleRun, variant: str) -> list[list]:
    rows = []
    for hyp, res in enumerate(run.results):
        for i in range(res.decision.size):
            d = int(res.decision[i])
            rows.append([i, hyp, variant, _NAMES[d], int(res.n[i]), int(d == CAPPED)])
    return rows


def network_csv_rows(exp: NetworkExperiment) -> list[list]:
    rows = []
    for hyp, b in enumerate(exp.batches):
        rows.extend(network_rows(b, hyp))
    return rows


def network_columns(L: int) -> list[str]:
    return (["run_id", "hypothesis", "decision", "N_d"] + [f"t_{j}" for j in range(1, L + 1)]
            + [f"node_{l}" for l in range(1, L + 1)])
