"""Tests for YAML run configuration."""

import pytest

from hierfc.config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    config_from_mapping,
    load_run_config,
    model_config,
    require_data_fields,
    split_spec,
    train_config,
)


def test_documented_defaults():
    cfg = RunConfig()
    assert cfg.history == 28 and cfg.horizon == 7
    assert cfg.k_basis == 8 and cfg.nmf_rank == 12
    assert cfg.enc_hidden == 42 and cfg.dec_hidden == 24
    assert cfg.lambda_e == pytest.approx(3.4e-6)
    assert cfg.rolling == 5
    assert cfg.lr == pytest.approx(0.004)
    assert cfg.decay_rate == 0.5 and cfg.decay_interval == 6
    assert cfg.epochs == 40 and cfg.batch_size == 512 and cfg.patience == 10
    assert cfg.mode == "full" and cfg.metric_scale == "rescaled"
    assert cfg.values is None and cfg.splits is None


def test_yaml_round_trip(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        "values: v.csv\nhierarchy: h.csv\nsplits: '10:11-20:21-30'\n"
        "epochs: 3\nlambda_e: 0.25\nshared_encoder: true\n"
    )
    cfg = load_run_config(path)
    assert cfg.values == "v.csv"
    assert cfg.epochs == 3
    assert cfg.lambda_e == 0.25
    assert cfg.shared_encoder is True
    assert cfg.history == 28  # untouched default


def test_unknown_key_named(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("values: v.csv\nlerning_rate: 0.1\n")
    with pytest.raises(ConfigError, match="lerning_rate"):
        load_run_config(path)


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("")
    assert load_run_config(path) == RunConfig()


def test_non_mapping_rejected(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("- a\n- b\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_run_config(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_run_config(tmp_path / "nope.yaml")


@pytest.mark.parametrize("mapping,needle", [
    ({"epochs": "ten"}, "epochs"),
    ({"epochs": True}, "epochs"),
    ({"lr": "fast"}, "lr"),
    ({"shared_encoder": 1}, "shared_encoder"),
    ({"mode": "extra_full"}, "mode"),
    ({"missing": "interpolate"}, "missing"),
    ({"metric_scale": "log"}, "metric_scale"),
    ({"values": 7}, "values"),
])
def test_type_and_value_validation(mapping, needle):
    with pytest.raises(ConfigError, match=needle):
        config_from_mapping(mapping)


def test_apply_overrides_skips_none():
    cfg = RunConfig(values="a.csv")
    same = apply_overrides(cfg, values=None, epochs=None)
    assert same == cfg
    changed = apply_overrides(cfg, epochs=2, nmf_rank=3)
    assert changed.epochs == 2 and changed.nmf_rank == 3
    assert changed.values == "a.csv"
    with pytest.raises(ConfigError, match="warp"):
        apply_overrides(cfg, warp=1)


def test_require_data_fields_lists_missing():
    with pytest.raises(ConfigError) as err:
        require_data_fields(RunConfig(values="v.csv"))
    assert "hierarchy" in str(err.value) and "splits" in str(err.value)
    require_data_fields(
        RunConfig(values="v", hierarchy="h", splits="1:2-3:4-5")
    )
    require_data_fields(RunConfig(values="v", hierarchy="h"), need_splits=False)


def test_conversions():
    cfg = RunConfig(values="v", hierarchy="h", splits="80:81-100:101-120",
                    rolling=2, history=10, horizon=5, k_basis=3, nmf_rank=4,
                    enc_hidden=8, dec_hidden=6, lambda_e=0.5, epochs=7,
                    patience=5, seed=9)
    split = split_spec(cfg)
    assert split.train_end == 80
    assert split.val_range == (81, 100)
    assert split.test_range == (101, 120)
    assert split.rolling_windows == 2

    mconf = model_config(cfg, D=8, n_series=9)
    assert (mconf.H, mconf.F, mconf.K, mconf.R) == (10, 5, 3, 4)
    assert mconf.D == 8 and mconf.n_series == 9
    assert mconf.lambda_e == 0.5

    tconf = train_config(cfg)
    assert tconf.initial_lr == cfg.lr
    assert tconf.epochs == 7 and tconf.seed == 9

    with pytest.raises(ConfigError, match="splits"):
        split_spec(RunConfig())
