"""Run configuration: defaults, file/override precedence, key validation."""

import numpy as np
import pytest

from pagedet.config import (
    ConfigError,
    describe_keys,
    load_config,
    stage_rng,
    stage_seed,
)
from pagedet.synth import TABLE1_TRAIN_COUNTS


def test_defaults_without_file():
    cfg = load_config()
    assert cfg.seed == 0
    assert cfg.grid.R == 15
    assert cfg.binarize.mode == "fixed"
    assert cfg.binarize.threshold == 128
    assert cfg.features.warp_size == 64
    assert cfg.features.conv_channels == (8, 16)
    assert cfg.model.n_heads == 3
    assert cfg.model.head_dim == 64
    assert cfg.model.dropout == 0.5
    assert cfg.model.delta_neighbor == 20
    assert cfg.model.use_context is True
    assert cfg.pretrain.epochs == 10
    assert cfg.pretrain.k_neg == 5
    assert cfg.train.lr == 3e-4
    assert cfg.train.weight_decay == 1e-5
    assert cfg.train.batch_size == 6
    assert cfg.synth.columns == "mixed"
    assert cfg.synth.class_weights == TABLE1_TRAIN_COUNTS
    assert cfg.eval.iou_thresh == 0.8
    assert cfg.run.train_pages == 30


def test_file_overrides_defaults(tmp_path):
    toml = tmp_path / "run.toml"
    toml.write_text('seed = 5\n[grid]\nR = 20\n[train]\nlr = 1e-3\n')
    cfg = load_config(toml)
    assert cfg.seed == 5
    assert cfg.grid.R == 20
    assert cfg.train.lr == 1e-3
    assert cfg.train.epochs == 20  # untouched default


def test_cli_overrides_beat_file(tmp_path):
    toml = tmp_path / "run.toml"
    toml.write_text('[grid]\nR = 20\n')
    cfg = load_config(toml, overrides={"grid.R": 25, "seed": 9})
    assert cfg.grid.R == 25
    assert cfg.seed == 9


def test_unknown_keys_rejected_by_full_path(tmp_path):
    toml = tmp_path / "run.toml"
    toml.write_text('[grid]\nQ = 3\n')
    with pytest.raises(ConfigError, match="grid.Q"):
        load_config(toml)
    toml.write_text('foo = 1\n')
    with pytest.raises(ConfigError, match="foo"):
        load_config(toml)
    with pytest.raises(ConfigError, match="grid.nope"):
        load_config(overrides={"grid.nope": 1})
    with pytest.raises(ConfigError, match="grid.R.deeper"):
        load_config(overrides={"grid.R.deeper": 1})


def test_type_mismatches_name_the_expected_type(tmp_path):
    toml = tmp_path / "run.toml"
    toml.write_text('[grid]\nR = "tall"\n')
    with pytest.raises(ConfigError, match="expects a number"):
        load_config(toml)
    toml.write_text('[grid]\nR = true\n')
    with pytest.raises(ConfigError, match="expects a number"):
        load_config(toml)
    toml.write_text('[binarize]\nmode = 3\n')
    with pytest.raises(ConfigError, match="expects a string"):
        load_config(toml)
    toml.write_text('[model]\nuse_context = 1\n')
    with pytest.raises(ConfigError, match="expects a boolean"):
        load_config(toml)
    toml.write_text('[model]\nhead_hidden = 7\n')
    with pytest.raises(ConfigError, match="expects a list"):
        load_config(toml)
    toml.write_text('[synth]\nclass_weights = 3\n')
    with pytest.raises(ConfigError, match="must be a table"):
        load_config(toml)


def test_columns_key_accepts_count_or_mixed(tmp_path):
    toml = tmp_path / "run.toml"
    toml.write_text('[synth]\ncolumns = 2\n')
    assert load_config(toml).synth.columns == 2
    toml.write_text('[synth]\ncolumns = "mixed"\n')
    assert load_config(toml).synth.columns == "mixed"


def test_class_weights_table_is_replaced_wholesale(tmp_path):
    toml = tmp_path / "run.toml"
    toml.write_text('[synth.class_weights]\nFigure = 1.0\n"Body Text" = 2.0\n')
    cfg = load_config(toml)
    assert cfg.synth.class_weights == {"Figure": 1.0, "Body Text": 2.0}


def test_domain_errors_surface_as_config_errors(tmp_path):
    toml = tmp_path / "run.toml"
    toml.write_text('[grid]\nR = -1\n')
    with pytest.raises(ConfigError):
        load_config(toml)
    toml.write_text('[binarize]\nmode = "inverse"\n')
    with pytest.raises(ConfigError):
        load_config(toml)
    toml.write_text('[synth]\nmode = "freeform"\n')
    with pytest.raises(ConfigError):
        load_config(toml)


def test_missing_file_and_bad_toml(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid\nR = 3")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(bad)


def test_stage_seeds_are_distinct_per_stage():
    seeds = {stage: stage_seed(7, stage)
             for stage in ("synth", "pretrain", "train", "detect", "render")}
    assert len(set(seeds.values())) == 5
    assert all(s[0] == 7 for s in seeds.values())
    with pytest.raises(ValueError):
        stage_seed(7, "deploy")


def test_stage_rng_is_deterministic():
    a = stage_rng(3, "train").normal(size=4)
    b = stage_rng(3, "train").normal(size=4)
    assert np.array_equal(a, b)
    c = stage_rng(3, "pretrain").normal(size=4)
    assert not np.array_equal(a, c)


def test_describe_keys_lists_every_dotted_key():
    text = describe_keys()
    for dotted in ("seed", "grid.R", "binarize.mode", "features.warp_size",
                   "model.n_heads", "model.use_context", "pretrain.k_neg",
                   "train.batch_size", "synth.class_weights", "eval.strict_fp",
                   "run.test_pages"):
        assert dotted in text
