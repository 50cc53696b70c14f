import math
from pathlib import Path

import pytest

from uniseq.config import ConfigError, load_spec, parse_spec
from uniseq.dist_models import Binomial, Gaussian

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

BASE = """\
mode: single
seed: 1
trials: 100
null: {family: binomial, params: [8, 0.2]}
alt:  {family: binomial, params: [8, 0.5]}
test:
  variant: univ_finite
  lam: 1.2078
  lower: -20
  upper: 10
"""


def test_parse_base():
    s = parse_spec(BASE)
    assert s.mode == "single" and s.seed == 1 and s.trials == 100
    assert s.null == Binomial(8, 0.2)
    assert (s.test.lower, s.test.upper, s.test.lam) == (-20, 10, 1.2078)
    assert s.quantizer is None and not s.is_network
    assert len(s.sha256) == 64


def test_error_thresholds():
    s = parse_spec(BASE.replace("  lower: -20\n  upper: 10\n", "  alpha: 1.0e-3\n  beta: 0.25\n"))
    assert s.test.lower == -2.0
    assert s.test.upper == pytest.approx(math.log2(1000))


def test_symmetric_threshold():
    s = parse_spec(BASE.replace("  lower: -20\n  upper: 10\n", "  threshold: 7\n"))
    assert (s.test.lower, s.test.upper) == (-7, 7)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.name)
def test_shipped_configs_parse(path):
    s = load_spec(path)
    assert s.mode in ("single", "decentralized", "analyze", "sweep", "calibrate")


def test_continuous_null_builds_quantizer():
    s = load_spec(CONFIGS / "gaussian_sweep.yaml")
    assert s.null == Gaussian(0, 1)
    assert s.quantizer.alphabet_size == 256
    assert s.grid[0] == (-0.5, 0.5)


def test_network_section():
    s = load_spec(CONFIGS / "network.yaml")
    assert s.network.L == 5 and s.network.mu1 == 2 and s.network.beta0 == 20


def _err(text):
    with pytest.raises(ConfigError) as exc:
        parse_spec(text, "cfg.yaml")
    return str(exc.value)


def test_unknown_test_key_reports_line():
    msg = _err(BASE + "  bogus: 3\n")
    assert msg.startswith("cfg.yaml:11:") and "test.bogus" in msg


def test_bad_trials_reports_line():
    msg = _err(BASE.replace("trials: 100", "trials: -4"))
    assert msg.startswith("cfg.yaml:3:") and "trials" in msg


def test_bad_family_reports_line():
    msg = _err(BASE.replace("family: binomial, params: [8, 0.5]", "family: cauchy, params: [0]"))
    assert msg.startswith("cfg.yaml:5:")


def test_bad_mode():
    assert "mode" in _err(BASE.replace("mode: single", "mode: fly"))


def test_missing_thresholds():
    assert "lower/upper" in _err(BASE.replace("  lower: -20\n  upper: 10\n", ""))


def test_threshold_signs_checked():
    assert "lower < 0 < upper" in _err(BASE.replace("lower: -20", "lower: 5"))


def test_decentralized_needs_network():
    assert "network" in _err(BASE.replace("mode: single", "mode: decentralized"))


def test_sweep_needs_grid():
    assert "grid" in _err(BASE.replace("mode: single", "mode: sweep"))


def test_calibrate_target_checked():
    assert "calibrate.target" in _err(BASE.replace("mode: single", "mode: calibrate"))


def test_hoeffding_needs_n_and_eta():
    text = BASE.replace("  variant: univ_finite\n", "  variant: hoeffding\n")
    assert "hoeffding" in _err(text)


def test_not_a_mapping():
    assert "mapping" in _err("- 1\n- 2\n")


def test_yaml_syntax_error():
    assert _err("a: [1, 2\n").startswith("cfg.yaml")


def test_missing_file():
    with pytest.raises(ConfigError):
        load_spec("/nonexistent/x.yaml")
