import dataclasses

import pytest
import yaml

from vgs.config import (
    CONFIG_VERSION,
    EvalConfig,
    RunConfig,
    desk_run_config,
    from_dict,
    load_config,
    paper_run_config,
)
from vgs.encoders import make_encoder_config
from vgs.errors import ConfigError
from vgs.frontends import MelConfig


def test_presets_carry_their_documented_settings():
    desk = desk_run_config(seed=7)
    assert desk.synthetic.n_items == 2200 and desk.synthetic.n_val == 200
    assert desk.synthetic.seed == 7
    assert desk.mel.target_frames == 160
    assert desk.image.resize_short_side == 64 and desk.image.crop == 64
    assert desk.encoder.preset == "desk" and desk.encoder.embed_dim == 64
    assert desk.train.batch_size == 16 and desk.train.epochs == 30
    assert desk.train.grad_clip == 500.0
    desk.validate()

    paper = paper_run_config()
    assert paper.synthetic is None
    assert paper.mel.target_frames == 1024
    assert paper.image.crop == 224
    assert paper.encoder.embed_dim == 2048
    assert paper.train.batch_size == 128
    assert paper.train.grad_clip is None
    paper.validate()


def test_dict_round_trip_preserves_the_hash():
    cfg = desk_run_config(seed=7)
    back = from_dict(cfg.to_dict())
    assert back.config_hash() == cfg.config_hash()
    assert back.encoder == cfg.encoder
    assert back.train == cfg.train
    assert back.synthetic == cfg.synthetic


def test_yaml_round_trip_preserves_the_hash(tmp_path):
    cfg = desk_run_config(seed=3)
    path = tmp_path / "run.yaml"
    cfg.save(path)
    data = yaml.safe_load(path.read_text())
    assert data["version"] == CONFIG_VERSION
    loaded = load_config(path)
    assert loaded.config_hash() == cfg.config_hash()


def test_hash_skips_execution_details_only():
    cfg = desk_run_config(seed=0)
    base = cfg.config_hash()
    retargeted = dataclasses.replace(
        cfg,
        train=dataclasses.replace(cfg.train, threads=4, checkpoint_dir="/elsewhere", eval_every=5),
    )
    assert retargeted.config_hash() == base
    heavier = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, batch_size=32))
    assert heavier.config_hash() != base
    reseeded = dataclasses.replace(cfg, seed=1)
    assert reseeded.config_hash() != base
    assert dataclasses.replace(cfg, mel=MelConfig(target_frames=161)).config_hash() != base


def test_minimal_config_fills_defaults():
    cfg = from_dict({"version": CONFIG_VERSION})
    assert cfg.seed == 0
    assert cfg.synthetic is None
    assert cfg.encoder.preset == "desk"
    assert cfg.train.scenario == "h-e-i-h"
    assert cfg.eval.recall_ks == (1, 5, 10)


def test_from_dict_is_strict():
    with pytest.raises(ConfigError, match="missing required 'version'"):
        from_dict({})
    with pytest.raises(ConfigError, match="version 2"):
        from_dict({"version": 2})
    with pytest.raises(ConfigError, match="unknown top-level"):
        from_dict({"version": 1, "optimizer": {}})
    with pytest.raises(ConfigError, match="mel: unknown keys"):
        from_dict({"version": 1, "mel": {"hop": 0.01}})
    with pytest.raises(ConfigError, match="root must be a mapping"):
        from_dict(["version"])
    with pytest.raises(ConfigError, match="seed must be an integer"):
        from_dict({"version": 1, "seed": True})


def test_encoder_section_accepts_preset_or_structure():
    preset_form = from_dict({"version": 1, "encoder": {"preset": "desk", "embed_dim": 32}})
    assert preset_form.encoder == make_encoder_config("desk", embed_dim=32)
    structural = desk_run_config().to_dict()["encoder"]
    rebuilt = from_dict({"version": 1, "encoder": structural})
    assert rebuilt.encoder == make_encoder_config("desk")

    with pytest.raises(ConfigError, match="needs either a preset"):
        from_dict({"version": 1, "encoder": {"embed_dim": 16}})
    with pytest.raises(ConfigError, match="structural encoder config needs"):
        from_dict({"version": 1, "encoder": {"embed_dim": 16, "audio_trunk": []}})
    bad_layer = dict(structural)
    bad_layer["audio_trunk"] = [{"dense": {}}] + structural["audio_trunk"][1:]
    with pytest.raises(ConfigError, match="unknown layer kind"):
        from_dict({"version": 1, "encoder": bad_layer})
    with pytest.raises(ConfigError, match="encoder: unknown keys"):
        from_dict({"version": 1, "encoder": {"preset": "desk", "dropout": 0.5}})


def test_cross_section_consistency_is_enforced():
    data = desk_run_config().to_dict()
    data["mel"]["n_mels"] = 39
    with pytest.raises(ConfigError, match="n_mels"):
        from_dict(data)


def test_eval_config_validation():
    with pytest.raises(ConfigError, match="batch_size"):
        EvalConfig(batch_size=0).validate()
    for ks in ((), (0, 5), (5, 1), (1, 1, 5)):
        with pytest.raises(ConfigError, match="recall_ks"):
            EvalConfig(recall_ks=ks).validate()
    EvalConfig(recall_ks=(1, 5, 10)).validate()


def test_load_config_reports_path_and_parse_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("version: [unclosed\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(bad)
    wrong = tmp_path / "wrong.yaml"
    wrong.write_text("version: 1\nmel:\n  n_mels: -3\n")
    with pytest.raises(ConfigError, match="wrong.yaml"):
        load_config(wrong)


def test_validate_requires_an_encoder():
    with pytest.raises(ConfigError, match="no encoder"):
        RunConfig().validate()
