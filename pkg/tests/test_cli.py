"""End-to-end checks of the vgs command line, driven in-process via main()."""

import json
import subprocess
import sys

import numpy as np
import pytest

from vgs.cli import main
from vgs.corpus import load_manifest
from vgs.frontends import read_imf1, read_lmf1


@pytest.fixture(scope="session")
def cli_run(tmp_path_factory, mini_run_config):
    """One synth + train pass shared by the eval/align tests."""
    root = tmp_path_factory.mktemp("cli")
    config_path = root / "config.yaml"
    mini_run_config.save(config_path)
    data = root / "data"
    assert main(["synth", "--spec", str(config_path), "--out", str(data)]) == 0
    run = root / "run"
    assert (
        main(
            [
                "train",
                "--config", str(config_path),
                "--data", str(data / "manifest.jsonl"),
                "--out", str(run),
            ]
        )
        == 0
    )
    return {
        "config": config_path,
        "manifest": data / "manifest.jsonl",
        "data": data,
        "ckpt": run / "epoch_0002.ckpt",
    }


def test_synth_is_deterministic_across_invocations(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / name), "--n", "6", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "wrote 6 triples (6 train, 0 val)" in out
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and files_a
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_synth_spec_flags_override_the_config(cli_run, tmp_path, capsys):
    rc = main(
        ["synth", "--spec", str(cli_run["config"]), "--out", str(tmp_path / "d"), "--n", "6", "--seed", "9"]
    )
    assert rc == 0
    assert "wrote 6 triples (2 train, 4 val)" in capsys.readouterr().out  # n_val=4 kept from the spec
    assert len(load_manifest(tmp_path / "d" / "manifest.jsonl").triples) == 6


def test_synth_without_a_size_is_an_error(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "d")]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error:") and "--n" in err


def test_features_wav_writes_a_readable_dump(cli_run, tmp_path, capsys):
    triple = load_manifest(cli_run["manifest"]).triples[0]
    out = tmp_path / "mels.lmf1"
    rc = main(
        ["features", "--wav", str(triple.audio_e), "--config", str(cli_run["config"]), "--out", str(out)]
    )
    assert rc == 0
    assert "wrote log-mels 40x40" in capsys.readouterr().out
    spec = read_lmf1(out)
    assert spec.values.shape == (40, 40)
    assert 0 < spec.valid_frames <= 40


def test_features_image_writes_a_readable_dump(cli_run, tmp_path, capsys):
    triple = load_manifest(cli_run["manifest"]).triples[0]
    out = tmp_path / "img.imf1"
    rc = main(
        ["features", "--image", str(triple.image), "--config", str(cli_run["config"]), "--out", str(out)]
    )
    assert rc == 0
    assert "wrote image tensor 64x64x3" in capsys.readouterr().out
    tensor = read_imf1(out)
    assert tensor.shape == (64, 64, 3)
    assert tensor.dtype == np.float32


def test_features_input_flags_are_mutually_exclusive(tmp_path):
    with pytest.raises(SystemExit):
        main(
            [
                "features",
                "--wav", "a.wav",
                "--image", "b.png",
                "--config", "c.yaml",
                "--out", str(tmp_path / "f"),
            ]
        )


def test_eval_reports_every_direction(cli_run, capsys):
    rc = main(["eval", "--ckpt", str(cli_run["ckpt"]), "--data", str(cli_run["manifest"])])
    assert rc == 0
    out = capsys.readouterr().out
    assert "direction" in out
    reports = json.loads(out[out.index("{"):])
    assert set(reports) == {"e2i", "i2e", "h2i", "i2h", "e2h", "h2e"}
    for entry in reports.values():
        assert entry["M"] == 4  # val split of the mini corpus
        assert 0.0 <= entry["r1"] <= entry["r5"] <= entry["r10"] <= 1.0


def test_eval_direction_subset(cli_run, capsys):
    rc = main(
        [
            "eval",
            "--ckpt", str(cli_run["ckpt"]),
            "--data", str(cli_run["manifest"]),
            "--directions", "e2h,i2e",
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out
    reports = json.loads(out[out.index("{"):])
    assert set(reports) == {"e2h", "i2e"}


def test_eval_rejects_unknown_directions(cli_run, capsys):
    rc = main(
        [
            "eval",
            "--ckpt", str(cli_run["ckpt"]),
            "--data", str(cli_run["manifest"]),
            "--directions", "e2i,sideways",
        ]
    )
    assert rc == 2
    assert "unknown directions" in capsys.readouterr().err


def test_train_scenario_override_is_validated(cli_run, tmp_path, capsys):
    rc = main(
        [
            "train",
            "--config", str(cli_run["config"]),
            "--scenario", "h-i-e",
            "--data", str(cli_run["manifest"]),
            "--out", str(tmp_path / "run"),
        ]
    )
    assert rc == 2
    assert "unknown scenario" in capsys.readouterr().err


def test_align_writes_heatmap_and_matrix(cli_run, tmp_path, capsys):
    triple_id = load_manifest(cli_run["manifest"]).triples[0].id
    out = tmp_path / "pair.png"
    rc = main(
        [
            "align",
            "--ckpt", str(cli_run["ckpt"]),
            "--data", str(cli_run["manifest"]),
            "--id", triple_id,
            "--out", str(out),
        ]
    )
    assert rc == 0
    assert "wrote heatmap" in capsys.readouterr().out
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    sidecar = json.loads((tmp_path / "pair.png.json").read_text())
    assert sidecar["id"] == triple_id
    assert sidecar["row_step_s"] == sidecar["col_step_s"] == pytest.approx(0.27)
    assert len(sidecar["values"]) == sidecar["rows"]
    assert all(len(row) == sidecar["cols"] for row in sidecar["values"])


def test_align_rejects_unknown_ids(cli_run, tmp_path, capsys):
    rc = main(
        [
            "align",
            "--ckpt", str(cli_run["ckpt"]),
            "--data", str(cli_run["manifest"]),
            "--id", "t999999",
            "--out", str(tmp_path / "pair.png"),
        ]
    )
    assert rc == 2
    assert capsys.readouterr().err.startswith("error:")


def test_failures_use_exit_code_two(cli_run, tmp_path, capsys):
    rc = main(["eval", "--ckpt", str(tmp_path / "no.ckpt"), "--data", str(cli_run["manifest"])])
    assert rc == 2
    assert capsys.readouterr().err.startswith("error:")


def test_module_entry_point_prints_help():
    proc = subprocess.run(
        [sys.executable, "-m", "vgs.cli", "--help"], capture_output=True, text=True, timeout=120
    )
    assert proc.returncode == 0
    for command in ("synth", "features", "train", "eval", "align"):
        assert command in proc.stdout
