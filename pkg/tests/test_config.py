import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from entswap.config import PRESETS, config_from_mapping, config_to_mapping, emit_config, parse_config
from entswap.errors import ConfigurationError, ValidationError
from entswap.experiments import ExperimentConfig


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    cfg = parse_config(path)
    assert cfg == ExperimentConfig()
    s, d = cfg.sources[0], cfg.detectors[0]
    assert (s.mu, s.purity, d.eta_max, cfg.rep_rate, d.dead_time_pulses) == (0.1, 0.82, 0.79, 76e6, 3)
    assert d.dark_prob == pytest.approx(2.63e-5, abs=1e-7)
    assert (cfg.fwhm_nm, cfg.center_nm) == (1.2, 1584.0)


def test_negative_mu_message():
    with pytest.raises(ValidationError) as err:
        config_from_mapping({"sources": {"I": {"mu": -0.1}}})
    assert "mu" in str(err.value) and "≥ 0" in str(err.value)


def test_negative_mu_shorthand():
    with pytest.raises(ValidationError, match="mu.*≥ 0"):
        config_from_mapping({"mu": -0.1})


def test_unknown_key():
    with pytest.raises(ConfigurationError, match="bogus"):
        config_from_mapping({"bogus": 1})


def test_type_mismatch():
    with pytest.raises(ValidationError, match="rep_rate"):
        config_from_mapping({"rep_rate": "fast"})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(tmp_path / "none.yaml")


def test_preset_fig5b():
    cfg = config_from_mapping({}, "fig5b")
    assert cfg.setup == "swap"
    assert [s.mu for s in cfg.sources] == [0.05, 0.053]


def test_preset_override():
    cfg = config_from_mapping({"preset": "fig5a", "sources": {"II": {"mu": 0.2}}})
    assert [s.mu for s in cfg.sources] == [0.1, 0.2]
    assert cfg.sources[1].filter is not None


def test_dark_rate_conversion():
    cfg = config_from_mapping({"detectors": {"dark_rate_cps": 760}})
    assert cfg.detectors[0].dark_prob == pytest.approx(1e-5)


@pytest.mark.parametrize("preset", sorted(PRESETS))
def test_round_trip_presets(preset):
    cfg = config_from_mapping({}, preset)
    assert config_from_mapping(yaml.safe_load(emit_config(cfg))) == cfg


@settings(max_examples=30, deadline=None)
@given(
    mu=st.floats(0, 1),
    purity=st.floats(0.05, 1),
    seed=st.integers(0, 2**31),
    eta=st.floats(0, 1),
    setup=st.sampled_from(["hom", "swap", "teleport", "source_test"]),
)
def test_round_trip(mu, purity, seed, eta, setup):
    cfg = config_from_mapping(
        {"setup": setup, "mu": mu, "seed": seed, "sources": {"I": {"purity": purity}}, "detectors": {"eta_max": eta, "eta_min": eta / 2}}
    )
    assert config_from_mapping(config_to_mapping(cfg)) == cfg
    assert config_from_mapping(yaml.safe_load(emit_config(cfg))) == cfg


def test_mu_shorthand_yields_to_explicit_source():
    cfg = config_from_mapping({"preset": "fig5a", "mu": 0.2, "sources": {"II": {"mu": 0.106}}})
    assert [s.mu for s in cfg.sources] == [0.2, 0.106]
