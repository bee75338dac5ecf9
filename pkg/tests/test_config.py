import pytest

from progs.config import Config, dump_config, load_config, parse_config


def test_defaults():
    cfg = Config()
    assert cfg.adjust_params().tau_g == 5e-5 and cfg.adjust_params().beta == 0.01
    assert cfg.loss_weights().lambda_nce == 0.005
    assert cfg.hash_config().output_dim == 64
    assert cfg.octree().num_channels == 68


def test_parse_values_and_comments():
    cfg = parse_config("# comment\n\ntau_g = 1e-4\nnum_lods=3  # trailing\nprior_mode = mlp\n")
    assert cfg.tau_g == 1e-4 and cfg.num_lods == 3 and cfg.prior_mode == "mlp"


@pytest.mark.parametrize("text", [
    "unknown_key = 1",
    "tau_g",
    "num_lods = three",
    "prior_mode = learned",
    "lambda_e = 0.5",
    "base_depth = 20",
    "tau_g = -1",
])
def test_rejects_bad_input(text):
    with pytest.raises(ValueError):
        parse_config(text)


def test_dump_roundtrip(tmp_path):
    cfg = parse_config("seed = 7\nq0_s = 0.002\nhash_levels_2d = 2")
    (tmp_path / "c.txt").write_text(dump_config(cfg))
    assert load_config(tmp_path / "c.txt") == cfg
