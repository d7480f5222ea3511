import numpy as np
import pytest

from keat.config import KEYS, ModelConfig, load_config, parse_kv_lines, substream
from keat.errors import ConfigError


def test_defaults_round_trip_through_flat_form():
    cfg = ModelConfig()
    assert ModelConfig.from_flat(cfg.to_flat()) == cfg
    assert set(cfg.to_flat()) <= set(KEYS)


def test_file_parsing_with_comments(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nkernel.family = rbf\n\nmodel.num_neighbors=5  # trailing\neval.ks=1,5\n")
    cfg = load_config(p)
    assert cfg.kernel_family == "rbf" and cfg.num_neighbors == 5 and cfg.ks == (1, 5)


def test_overrides_win(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed=3\ntrain.lr=0.01\n")
    cfg = load_config(p, ["seed=9"])
    assert cfg.seed == 9 and cfg.lr == 0.01


def test_unknown_key_fails_fast():
    with pytest.raises(ConfigError) as info:
        load_config(None, ["kernel.famly=rbf"])
    assert info.value.key == "kernel.famly"


@pytest.mark.parametrize("line,key", [("train.epochs=x", "train.epochs"), ("model.modulation=nodes", "model.modulation"),
                                      ("time_encoding.d_t=3", "time_encoding.d_t"), ("train.lr=0", "train.lr"),
                                      ("kernel.sigma_pooling=mean", "kernel.sigma_pooling")])
def test_bad_values_name_the_key(line, key):
    with pytest.raises(ConfigError) as info:
        load_config(None, [line])
    assert info.value.key == key


def test_line_without_equals():
    with pytest.raises(ConfigError):
        parse_kv_lines(["just words"])


def test_optional_values_accept_none():
    cfg = load_config(None, ["kernel.lambda=none", "time_encoding.base=2.5"])
    assert cfg.kernel_lambda is None and cfg.time_base == 2.5


def test_substreams_reproducible_and_independent():
    a = substream(1, "train").random(5)
    np.testing.assert_array_equal(a, substream(1, "train").random(5))
    assert not np.array_equal(a, substream(1, "negatives").random(5))
    assert not np.array_equal(a, substream(2, "train").random(5))
