import dataclasses
import io
import json

import numpy as np
import pytest

from vgs.config import EvalConfig, RunConfig
from vgs.corpus import SyntheticSpec, generate_synthetic
from vgs.encoders import load_checkpoint, make_encoder_config, restore_model, save_checkpoint
from vgs.errors import CheckpointError, ConfigError, DivergenceError
from vgs.frontends import ImageNormConfig, MelConfig
from vgs.trainer import (
    TrainConfig,
    checkpoint_name,
    lr_at_epoch,
    resolved_base_lr,
    resume,
    total_epochs,
    train,
)


def _cfg(mini_run_config, **train_overrides):
    return dataclasses.replace(
        mini_run_config, train=dataclasses.replace(mini_run_config.train, **train_overrides)
    )


def _run(run_cfg, corpus, out_dir):
    return train(run_cfg, corpus, out_dir, log_stream=io.StringIO())


# ---------------------------------------------------------------------------
# schedule


def test_lr_schedule_hits_the_documented_values():
    cfg = TrainConfig()  # 2 rounds of 90, 10x drop every 30
    assert lr_at_epoch(cfg, 1) == 0.001
    assert lr_at_epoch(cfg, 30) == 0.001
    assert lr_at_epoch(cfg, 31) == pytest.approx(1e-4, rel=1e-12)
    assert lr_at_epoch(cfg, 61) == pytest.approx(1e-5, rel=1e-12)
    assert lr_at_epoch(cfg, 90) == pytest.approx(1e-5, rel=1e-12)
    assert lr_at_epoch(cfg, 91) == 0.001  # new round resets to base
    assert lr_at_epoch(cfg, 121) == pytest.approx(1e-4, rel=1e-12)
    assert lr_at_epoch(cfg, 180) == pytest.approx(1e-5, rel=1e-12)
    audio_only = TrainConfig(scenario="e-h")
    assert lr_at_epoch(audio_only, 1) == 0.01


def test_lr_takes_exactly_three_plateau_values():
    cfg = TrainConfig()
    base = resolved_base_lr(cfg)
    plateaus = {base: 0, base / 10: 0, base / 100: 0}
    for epoch in range(1, total_epochs(cfg) + 1):
        lr = lr_at_epoch(cfg, epoch)
        matches = [p for p in plateaus if abs(lr - p) <= 1e-12 * p]
        assert len(matches) == 1
        plateaus[matches[0]] += 1
    assert all(count == 60 for count in plateaus.values())


def test_lr_respects_the_epoch_override():
    cfg = TrainConfig(epochs=10)
    assert total_epochs(cfg) == 10
    assert lr_at_epoch(cfg, 10) == 0.001  # shape unchanged, still inside plateau one
    with pytest.raises(ConfigError, match="outside"):
        lr_at_epoch(cfg, 11)
    with pytest.raises(ConfigError, match="outside"):
        lr_at_epoch(TrainConfig(), 0)
    longer = TrainConfig(epochs=100)
    assert lr_at_epoch(longer, 91) == 0.001  # reset still lands at 91


def test_resolved_base_lr():
    assert resolved_base_lr(TrainConfig()) == 0.001
    assert resolved_base_lr(TrainConfig(scenario="e-h")) == 0.01
    assert resolved_base_lr(TrainConfig(scenario="e-h", base_lr=0.05)) == 0.05


def test_train_config_validation():
    TrainConfig().validate()
    cases = [
        (dict(scenario="i-e"), "unknown scenario"),
        (dict(batch_size=1), "batch_size"),
        (dict(base_lr=-0.1), "base_lr"),
        (dict(decay_factor=0.0), "decay_factor"),
        (dict(decay_every=0), "must be >= 1"),
        (dict(decay_every=31, epochs_per_round=30), "exceeds epochs_per_round"),
        (dict(rounds=0), "must be >= 1"),
        (dict(epochs=-1), "epochs override"),
        (dict(momentum=-0.5), "momentum"),
        (dict(weight_decay=-0.01), "weight_decay"),
        (dict(grad_clip=0.0), "grad_clip"),
        (dict(margin=0.0), "margin"),
        (dict(eval_every=-1), "eval_every"),
        (dict(threads=0), "threads"),
    ]
    for overrides, message in cases:
        with pytest.raises(ConfigError, match=message):
            TrainConfig(**overrides).validate()


def test_checkpoint_names_are_zero_padded():
    assert checkpoint_name(0) == "epoch_0000.ckpt"
    assert checkpoint_name(12) == "epoch_0012.ckpt"
    assert checkpoint_name(1234) == "epoch_1234.ckpt"


# ---------------------------------------------------------------------------
# training runs


def test_training_writes_the_documented_artifacts(mini_corpus, mini_run_config, tmp_path):
    from vgs.config import load_config

    stream = io.StringIO()
    result = train(mini_run_config, mini_corpus, tmp_path, log_stream=stream)

    assert (tmp_path / "config.yaml").is_file()
    assert load_config(tmp_path / "config.yaml").config_hash() == mini_run_config.config_hash()
    for epoch in (0, 1, 2):
        assert (tmp_path / checkpoint_name(epoch)).is_file()
    assert result.final_checkpoint == tmp_path / checkpoint_name(2)
    assert len(result.logs) == 2

    file_lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
    stream_lines = stream.getvalue().splitlines()
    assert file_lines == stream_lines
    for epoch, line in enumerate(file_lines, start=1):
        entry = json.loads(line)
        assert entry["epoch"] == epoch
        assert entry["lr"] == lr_at_epoch(mini_run_config.train, epoch)
        assert entry["scenario"] == "h-e-i-h"
        assert entry["n_batches"] == 2  # 8 train items, batches of 4
        assert entry["mean_batch_loss"] > 0
        assert entry["wall_time_s"] >= 0
        assert "val_recalls" not in entry  # eval_every defaults to off

    _, meta = load_checkpoint(result.final_checkpoint)
    assert meta["epoch"] == 2
    assert meta["scenario"] == "h-e-i-h"
    assert meta["seed"] == mini_run_config.seed
    assert meta["config_hash"] == mini_run_config.config_hash()
    assert meta["config"]["version"] == 1


def test_loss_decreases_on_a_short_documented_recipe(tmp_path):
    # 200 triples, batches of 16, two 10-epoch rounds
    spec = SyntheticSpec(n_items=200, n_val=0, seed=11)
    corpus = generate_synthetic(spec, tmp_path / "data")
    run_cfg = RunConfig(
        seed=11,
        synthetic=spec,
        mel=MelConfig(target_frames=160),
        image=ImageNormConfig(resize_short_side=64, crop=64),
        encoder=make_encoder_config("desk"),
        train=TrainConfig(
            batch_size=16, epochs_per_round=10, decay_every=10, rounds=2, grad_clip=500.0
        ),
        eval=EvalConfig(),
    )
    result = _run(run_cfg, corpus, tmp_path / "run")
    losses = [l.mean_batch_loss for l in result.logs]
    assert len(losses) == 20
    assert losses[-1] < losses[0]


def test_zero_lr_leaves_parameters_bitwise_unchanged(mini_corpus, mini_run_config, tmp_path):
    run_cfg = _cfg(mini_run_config, base_lr=0.0, epochs=1)
    _run(run_cfg, mini_corpus, tmp_path)
    init, _ = load_checkpoint(tmp_path / checkpoint_name(0))
    after, _ = load_checkpoint(tmp_path / checkpoint_name(1))
    for name in init:
        if "running_" not in name:
            assert np.array_equal(init[name], after[name]), name
    # batchnorm still tracked batch statistics: training did happen
    assert any("running_" in n and not np.array_equal(init[n], after[n]) for n in init)


def test_same_seed_runs_are_bit_identical(mini_corpus, mini_run_config, tmp_path):
    a = _run(mini_run_config, mini_corpus, tmp_path / "a")
    b = _run(mini_run_config, mini_corpus, tmp_path / "b")
    assert [l.mean_batch_loss for l in a.logs] == [l.mean_batch_loss for l in b.logs]
    for epoch in (0, 1, 2):
        name = checkpoint_name(epoch)
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_resume_replays_the_tail_exactly(mini_corpus, mini_run_config, tmp_path):
    run_cfg = _cfg(mini_run_config, epochs=4)
    _run(run_cfg, mini_corpus, tmp_path / "full")
    resumed = resume(
        tmp_path / "full" / checkpoint_name(2),
        run_cfg,
        mini_corpus,
        tmp_path / "tail",
        log_stream=io.StringIO(),
    )
    assert [l.epoch for l in resumed.logs] == [3, 4]
    assert resumed.final_checkpoint == tmp_path / "tail" / checkpoint_name(4)
    for epoch in (3, 4):
        name = checkpoint_name(epoch)
        assert (tmp_path / "tail" / name).read_bytes() == (tmp_path / "full" / name).read_bytes()
    assert not (tmp_path / "tail" / checkpoint_name(0)).exists()


def test_resume_rejects_a_changed_config(mini_corpus, mini_run_config, tmp_path):
    _run(mini_run_config, mini_corpus, tmp_path / "run")
    altered = dataclasses.replace(mini_run_config, seed=99)
    with pytest.raises(CheckpointError, match="config"):
        resume(
            tmp_path / "run" / checkpoint_name(1),
            altered,
            mini_corpus,
            tmp_path / "other",
            log_stream=io.StringIO(),
        )


def test_resume_at_the_final_epoch_is_a_noop(mini_corpus, mini_run_config, tmp_path):
    _run(mini_run_config, mini_corpus, tmp_path / "run")
    last = tmp_path / "run" / checkpoint_name(2)
    result = resume(last, mini_run_config, mini_corpus, tmp_path / "noop", log_stream=io.StringIO())
    assert result.logs == []
    assert result.final_checkpoint == last
    assert not list((tmp_path / "noop").glob("*.ckpt"))


def test_resume_beyond_the_total_is_rejected(mini_corpus, mini_run_config, tmp_path):
    _run(mini_run_config, mini_corpus, tmp_path / "run")
    arrays, meta = load_checkpoint(tmp_path / "run" / checkpoint_name(2))
    meta["epoch"] = 99
    fake = tmp_path / "late.ckpt"
    save_checkpoint(restore_model(mini_run_config.encoder, arrays), meta, fake)
    with pytest.raises(CheckpointError, match="beyond total"):
        resume(fake, mini_run_config, mini_corpus, tmp_path / "other", log_stream=io.StringIO())


def test_absent_modalities_are_never_touched(mini_corpus, mini_run_config, tmp_path):
    run_cfg = _cfg(mini_run_config, scenario="e-i")
    _run(run_cfg, mini_corpus, tmp_path)
    init, _ = load_checkpoint(tmp_path / checkpoint_name(0))
    after, _ = load_checkpoint(tmp_path / checkpoint_name(2))
    for name in init:
        if name.startswith("audio_h."):
            assert np.array_equal(init[name], after[name]), name
    assert any(
        name.startswith("audio_e.") and not np.array_equal(init[name], after[name])
        for name in init
    )

    eh_dir = tmp_path / "eh"
    _run(_cfg(mini_run_config, scenario="e-h"), mini_corpus, eh_dir)
    init, _ = load_checkpoint(eh_dir / checkpoint_name(0))
    after, _ = load_checkpoint(eh_dir / checkpoint_name(2))
    for name in init:
        if name.startswith("image."):
            assert np.array_equal(init[name], after[name]), name


def test_eval_every_attaches_val_recalls(mini_corpus, mini_run_config, tmp_path):
    run_cfg = _cfg(mini_run_config, eval_every=2)
    result = _run(run_cfg, mini_corpus, tmp_path)
    assert result.logs[0].val_recalls is None  # epoch 1 skipped
    recalls = result.logs[1].val_recalls
    assert set(recalls) == {"e2i", "i2e", "h2i", "i2h", "e2h", "h2e"}
    for entry in recalls.values():
        assert entry["M"] == 4
        assert 0.0 <= entry["r1"] <= entry["r5"] <= entry["r10"] <= 1.0
    logged = json.loads((tmp_path / "train_log.jsonl").read_text().splitlines()[1])
    assert logged["val_recalls"] == recalls


def test_eval_every_needs_a_val_split(mini_run_config, tmp_path):
    spec = SyntheticSpec(n_items=6, n_val=0, vocab_size=6, tone_duration_s=0.12, seed=1)
    corpus = generate_synthetic(spec, tmp_path / "data")
    run_cfg = dataclasses.replace(_cfg(mini_run_config, eval_every=1), synthetic=spec)
    with pytest.raises(ConfigError, match="no val split"):
        _run(run_cfg, corpus, tmp_path / "run")


def test_train_split_must_cover_one_batch(mini_corpus, mini_run_config, tmp_path):
    run_cfg = _cfg(mini_run_config, batch_size=16)  # only 8 train items
    with pytest.raises(ConfigError, match="fewer than one batch"):
        _run(run_cfg, mini_corpus, tmp_path)


def test_divergence_is_reported_not_logged(mini_corpus, mini_run_config, tmp_path):
    run_cfg = _cfg(mini_run_config, base_lr=1e4)
    with pytest.raises(DivergenceError, match="non-finite loss"):
        _run(run_cfg, mini_corpus, tmp_path)


def test_momentum_resume_warns_about_velocity(mini_corpus, mini_run_config, tmp_path, capsys):
    run_cfg = _cfg(mini_run_config, momentum=0.5)
    _run(run_cfg, mini_corpus, tmp_path / "run")
    capsys.readouterr()
    resume(
        tmp_path / "run" / checkpoint_name(1),
        run_cfg,
        mini_corpus,
        tmp_path / "resumed",
        log_stream=io.StringIO(),
    )
    assert "momentum" in capsys.readouterr().err
