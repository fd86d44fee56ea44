import pytest

from uaix.config import RunConfig, load_config, parse_overrides
from uaix.errors import ConfigError
from uaix.pipeline import scale_config


def write(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text, encoding="utf-8")
    return p


def test_defaults_without_file():
    cfg = load_config()
    assert cfg == RunConfig()
    assert cfg.uai.alphas == (5.0, 95.0) and cfg.attribution.method == "lrp-eps" and cfg.spray.k_nn == 10


def test_file_and_overrides(tmp_path):
    p = write(tmp_path, """
# comment line
[run]
seed = 4   # inline comment
[uai]
alphas = 5, 50, 95
enumerate = yes
[posterior]
variant = ensemble
""")
    cfg = load_config(p, ["uai.n=7", "run.seed=9"])
    assert cfg.run.seed == 9 and cfg.uai.n == 7 and cfg.uai.alphas == (5.0, 50.0, 95.0)
    assert cfg.uai.enumerate is True and cfg.posterior.variant == "ensemble"
    assert cfg.trainer == RunConfig().trainer


def test_unknown_keys_and_sections_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(write(tmp_path, "[uai]\nnn = 3\n"))
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(write(tmp_path, "[model]\nx = 1\n"))
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(None, ["nope.x=1"])
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(None, ["run.sed=1"])


def test_bad_values_rejected(tmp_path):
    for item in ("uai.n=many", "uai.n=0", "uai.enumerate=maybe", "posterior.variant=mcmc", "uai.alphas=5,120", "eval.size=0"):
        with pytest.raises(ConfigError):
            load_config(None, [item])
    with pytest.raises(ConfigError):
        parse_overrides(["uai.n"])
    with pytest.raises(ConfigError):
        parse_overrides(["n=3"])
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[uai\nn=3\n"))


def test_ini_round_trip(tmp_path):
    cfg = load_config(None, ["uai.alphas=2.5,97.5", "attribution.lrp_eps=1e-9", "run.out=some dir"])
    again = load_config(write(tmp_path, cfg.to_ini()))
    assert again == cfg


def test_scales():
    tiny, small = scale_config("tiny"), scale_config("small")
    assert tiny.data.train_size < small.data.train_size
    assert small.data.train_size == 5000 and small.eval.size == 500 and small.uai.n == 50
    assert small.posterior.members == 10
    with pytest.raises(ConfigError):
        scale_config("huge")
