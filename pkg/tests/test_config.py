import math

import pytest

from cosmix.config import build_config, dump_config, load_config, parse_config_text
from cosmix.errors import ConfigError
from cosmix.experiment import BENCH_PRESET, bench_config


def test_defaults():
    cfg = build_config({})
    a = cfg.adaptation
    assert a.epochs_warmup == 10
    assert (a.alpha, a.zeta, a.beta, a.gamma, a.lr) == (0.5, 0.85, 0.99, 1, 0.001)
    assert a.global_cfg.rot_bounds[2] == (-math.pi, math.pi)
    assert a.local_cfg.rot_z_bounds == (-math.pi / 2, math.pi / 2)
    assert cfg.scene_radius == 50.0
    assert cfg.workers == 1


def test_parse_comments_and_values(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nalpha = 0.25\n\nlocal_rot_z = -pi/4, pi/4  # tight\nema = off\n")
    cfg = load_config(path)
    assert cfg.adaptation.alpha == 0.25
    assert cfg.adaptation.local_cfg.rot_z_bounds == (-math.pi / 4, math.pi / 4)
    assert cfg.adaptation.ema is False


def test_overrides_beat_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 3\nlr = 0.1\n")
    cfg = load_config(path, {"seed": "9"})
    assert cfg.seed == 9
    assert cfg.adaptation.lr == 0.1


def test_unknown_key_fails_fast():
    with pytest.raises(ConfigError, match="bogus"):
        build_config({"bogus": "1"})


@pytest.mark.parametrize(
    "text",
    ["alpha 0.5", "= 3", "alpha = 1.5", "gamma = 0", "ema = maybe", "local_scale = 1", "zeta_target_fraction = 1"],
)
def test_bad_values(text):
    with pytest.raises(ConfigError):
        build_config(parse_config_text(text))


def test_dump_round_trip():
    cfg = build_config(parse_config_text("alpha = 0.3\nglobal_rot_x = -pi, pi\nzeta_target_fraction = 0.8\nbranch_s2t = false\n"))
    again = build_config(parse_config_text(dump_config(cfg)))
    assert again == cfg


def test_bench_preset_parses():
    cfg = bench_config(seed=2)
    assert cfg.seed == 2
    assert cfg.zeta_target_fraction == 0.8
    assert cfg.adaptation.epochs_warmup == 30
    assert build_config(parse_config_text(BENCH_PRESET)).adaptation.lr == 5.0
