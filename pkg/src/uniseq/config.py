"""YAML experiment configuration.

Schema (all thresholds in bits)::

    mode: single | decentralized | analyze | sweep | calibrate
    seed: 1
    trials: 10000              # per hypothesis
    out: results.csv
    null: {family: binomial, params: [8, 0.2]}
    alt:  {family: binomial, params: [8, 0.5]}   # simulator only
    test:
      variant: univ_finite     # sprt, univ_finite, univ_finite_modified, ktslrt,
                               # lzslrt, nn1_entropy, kde, hoeffding
      lower: -20               # or beta: 1e-6, or threshold: 20 (symmetric)
      upper: 20                # or alpha: 1e-6
      lam: 1.2078
      coder: kt                # kt | lz78 (finite-alphabet variants)
      S: 0.0
      C: null
      scale_by_n: false
      tolerance: kt
      max_samples: 1000000
      n: 50                    # hoeffding only: sample size
      eta: 0.1                 # hoeffding only: threshold in bits
    quantizer: {bits: 8, tail_mass: 1.0e-4}      # or delta / lo / hi
    grid: [10, 20, [-30, 25]]  # symmetric t or [lower, upper]; network: [gamma, beta]
    calibrate: {target: 1.0e-3, hypothesis: 0, side: symmetric}
    network:
      L: 5
      b1: 1
      b0: -1
      I: 2
      noise: {family: gaussian, params: [0, 1]}  # or none
      beta1: 20
      beta0: 20
      max_slots: 100000
      persistent: true
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .decentralized import FusionNoise, NetworkConfig, NodeSpec
from .dist_models import DistributionModel, ModelError, make_model
from .quantization import QuantizerError, QuantizerSpec
from .sequential import TestConfig, thresholds_from_errors

MODES = ("single", "decentralized", "analyze", "sweep", "calibrate")
_TEST_KEYS = {"variant", "lower", "upper", "alpha", "beta", "threshold", "lam", "coder", "S", "C",
              "scale_by_n", "tolerance", "max_samples", "n", "eta"}


class ConfigError(ValueError):
    pass


def _line_index(node, prefix="", out=None) -> dict:
    """Dotted key path -> 1-based source line, from a composed YAML node tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _line_index(v, path, out)
    return out


@dataclass
class ExperimentSpec:
    mode: str
    seed: int
    trials: int
    null: DistributionModel
    alt: DistributionModel
    test: TestConfig | None = None
    quantizer: QuantizerSpec | None = None
    network: NetworkConfig | None = None
    grid: list = field(default_factory=list)
    calibrate: dict = field(default_factory=dict)
    out: str | None = None
    hoeffding: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    sha256: str = ""

    @property
    def is_network(self) -> bool:
        return self.network is not None


class _Ctx:
    def __init__(self, lines, source):
        self.lines, self.source = lines, source

    def err(self, path: str, msg: str) -> ConfigError:
        line = self.lines.get(path)
        where = f"{self.source}:{line}" if line else self.source
        return ConfigError(f"{where}: field '{path}': {msg}")


def _model(ctx, raw, key) -> DistributionModel:
    spec = raw.get(key)
    if not isinstance(spec, dict) or "family" not in spec:
        raise ctx.err(key, "expected a mapping with 'family' and 'params'")
    try:
        return make_model(spec["family"], spec.get("params", []))
    except (ModelError, TypeError) as exc:
        raise ctx.err(key, str(exc)) from None


def _thresholds(ctx, t: dict, prefix="test") -> tuple[float, float]:
    if "threshold" in t:
        v = float(t["threshold"])
        return -v, v
    lower = t.get("lower")
    upper = t.get("upper")
    if lower is None and "beta" in t:
        lower = thresholds_from_errors(0.5, float(t["beta"]))[0]
    if upper is None and "alpha" in t:
        upper = thresholds_from_errors(float(t["alpha"]), 0.5)[1]
    if lower is None or upper is None:
        raise ctx.err(prefix, "need lower/upper, alpha/beta or threshold")
    return float(lower), float(upper)


def _has_thresholds(t: dict) -> bool:
    return bool({"threshold", "lower", "upper", "alpha", "beta"} & set(t))


def _test(ctx, t: dict, prefix="test") -> TestConfig:
    if not isinstance(t, dict):
        raise ctx.err(prefix, "expected a mapping")
    unknown = set(t) - _TEST_KEYS
    if unknown:
        raise ctx.err(f"{prefix}.{sorted(unknown)[0]}", "unknown key")
    if "variant" not in t:
        raise ctx.err(prefix, "missing 'variant'")
    try:
        if str(t["variant"]).lower() == "hoeffding" and not _has_thresholds(t):
            lower, upper = -1.0, 1.0  # unused by the fixed-sample test
        else:
            lower, upper = _thresholds(ctx, t, prefix)
        kw = {k: t[k] for k in ("coder", "S", "C", "scale_by_n", "tolerance") if k in t}
        if "lam" in t:
            kw["lam"] = float(t["lam"])
        if "max_samples" in t:
            kw["max_samples"] = int(t["max_samples"])
        return TestConfig(str(t["variant"]), lower, upper, **kw)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ctx.err(prefix, str(exc)) from None


def _quantizer(ctx, raw, null) -> QuantizerSpec | None:
    q = raw.get("quantizer")
    if null.discrete:
        return None
    q = {} if q is None else q
    try:
        return QuantizerSpec.for_null(null, delta=q.get("delta"), bits=q.get("bits"),
                                      lo=q.get("lo"), hi=q.get("hi"),
                                      tail_mass=float(q.get("tail_mass", 1e-4)))
    except QuantizerError as exc:
        raise ctx.err("quantizer", str(exc)) from None


def _network(ctx, raw, null, alt, test, quantizer) -> NetworkConfig:
    n = raw["network"]
    if not isinstance(n, dict):
        raise ctx.err("network", "expected a mapping")
    noise_raw = n.get("noise", {"family": "gaussian", "params": [0, 1]})
    if noise_raw in (None, "none"):
        noise = FusionNoise(None)
    else:
        noise = FusionNoise(_model(ctx, {"network.noise": noise_raw}, "network.noise"))
    L = int(n.get("L", 1))
    try:
        return NetworkConfig([NodeSpec(null, alt, test, quantizer) for _ in range(L)],
                             b1=float(n.get("b1", 1.0)), b0=float(n.get("b0", -1.0)),
                             I=int(n.get("I", 1)), noise=noise,
                             beta1=float(n.get("beta1", 10.0)), beta0=float(n.get("beta0", 10.0)),
                             max_slots=int(n.get("max_slots", 10 ** 6)),
                             persistent=bool(n.get("persistent", True)))
    except ValueError as exc:
        raise ctx.err("network", str(exc)) from None


def _string_keys(obj):
    # a bare `null:` key loads as None
    if isinstance(obj, dict):
        return {("null" if k is None else k): _string_keys(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_string_keys(v) for v in obj]
    return obj


def parse_spec(text: str, source: str = "<config>") -> ExperimentSpec:
    try:
        node = yaml.compose(text)
        raw = _string_keys(yaml.safe_load(text))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    ctx = _Ctx(_line_index(node), source)
    mode = raw.get("mode", "single")
    if mode not in MODES:
        raise ctx.err("mode", f"expected one of {MODES}, got {mode!r}")
    trials = raw.get("trials", 10_000)
    if not isinstance(trials, int) or trials < 1:
        raise ctx.err("trials", "must be an integer >= 1")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ctx.err("seed", "must be a non-negative integer")
    null, alt = _model(ctx, raw, "null"), _model(ctx, raw, "alt")
    if "test" not in raw:
        raise ctx.err("test", "missing 'test' section")
    test = _test(ctx, raw["test"])
    quantizer = _quantizer(ctx, raw, null)
    network = None
    if "network" in raw or mode == "decentralized":
        if "network" not in raw:
            raise ctx.err("network", "decentralized mode needs a 'network' section")
        network = _network(ctx, raw, null, alt, test, quantizer)
    grid = raw.get("grid", [])
    if not isinstance(grid, list):
        raise ctx.err("grid", "expected a list")
    if mode == "sweep" and not grid:
        raise ctx.err("grid", "sweep mode needs a nonempty grid")
    parsed_grid = []
    for i, g in enumerate(grid):
        if isinstance(g, (int, float)):
            parsed_grid.append((-float(g), float(g)) if network is None else (float(g), float(g)))
        elif isinstance(g, list) and len(g) == 2:
            parsed_grid.append((float(g[0]), float(g[1])))
        else:
            raise ctx.err("grid", f"entry {i} must be a number or a pair")
    cal = raw.get("calibrate", {}) or {}
    if mode == "calibrate":
        tgt = cal.get("target")
        if not isinstance(tgt, (int, float)) or not 0 < tgt < 0.5:
            raise ctx.err("calibrate.target", "need a target error in (0, 0.5)")
        if cal.get("hypothesis", 0) not in (0, 1):
            raise ctx.err("calibrate.hypothesis", "must be 0 or 1")
    hoeff = {}
    if test.variant == "hoeffding":
        t = raw["test"]
        if "n" not in t or "eta" not in t:
            raise ctx.err("test", "hoeffding needs 'n' and 'eta'")
        hoeff = {"n": int(t["n"]), "eta": float(t["eta"])}
    digest = hashlib.sha256(text.encode()).hexdigest()
    return ExperimentSpec(mode, seed, trials, null, alt, test, quantizer, network, parsed_grid,
                          cal, raw.get("out"), hoeff, raw, digest)


def load_spec(path) -> ExperimentSpec:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_spec(text, str(p))
