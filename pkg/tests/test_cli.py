import io
import os

import numpy as np
import pytest

from emisr.cli import SCHEMAS, config_hash, main, read_config_file, resolve_settings
from emisr.dataset import read_manifest
from emisr.errors import ConfigError
from emisr.grid import read_grid
from emisr.nn import load_checkpoint
from emisr.transforms import read_qtx


def run(*argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out=out)
    return code, out.getvalue()


def pipeline(root, seed=3):
    """synth -> prepare -> fit-transform -> train -> evaluate -> report under ``root``."""
    root = str(root)
    c = lambda *p: os.path.join(root, *p)
    steps = [
        ("synth", "--out-dir", c("corpus"), "--n-maps", 6, "--height", 64, "--width", 256, "--seed", seed),
        ("prepare", "--corpus", c("corpus", "maps.csv"), "--out-dir", c("ds")),
        ("fit-transform", "--manifest", c("ds", "manifest.csv"), "--out", c("ds", "q.qtx")),
        ("train", "--manifest", c("ds", "manifest.csv"), "--transform", c("ds", "q.qtx"), "--out-dir",
         c("run"), "--iterations", 12, "--base-width", 4, "--n-residual-blocks", 1, "--batch-size", 4,
         "--validation-interval", 6),
        ("evaluate", "--manifest", c("ds", "manifest.csv"), "--checkpoint", c("run", "model.emw"),
         "--transform", c("ds", "q.qtx"), "--out-dir", c("ev")),
        ("report", "--tables", c("ev", "table.csv"), "--out-dir", c("rep")),
    ]
    for step in steps:
        code, _ = run(*step)
        assert code == 0, step[0]
    return c


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    return pipeline(tmp_path_factory.mktemp("cli"))


def test_pipeline_outputs(built):
    m = read_manifest(built("ds", "manifest.csv"))
    assert {e.split for e in m.entries} <= {"train", "validation", "test"}
    assert read_qtx(built("ds", "q.qtx")).n_quantiles == 1000
    model = load_checkpoint(built("run", "model.emw"))
    assert model.config.base_width == 4
    lines = open(built("run", "train.log")).read().splitlines()
    assert [int(l.split(",")[0]) for l in lines] == [6, 12]
    table = open(built("ev", "table.csv")).read().splitlines()
    assert table[0] == "label,model,n_pairs,mean_ssim,mean_nmse_db"
    assert [r.split(",")[1] for r in table[1:]] == ["resnet_t", "bicubic"]
    assert open(built("rep", "report.csv")).read() == open(built("ev", "table.csv")).read()
    assert os.path.getsize(built("rep", "ssim.png")) > 0


def test_pipeline_is_bit_identical(built, tmp_path):
    again = pipeline(tmp_path)
    for parts in [("run", "model.emw"), ("run", "train.log"), ("ev", "table.csv"),
                  ("rep", "report.csv"), ("rep", "ssim.png"), ("ds", "q.qtx")]:
        with open(built(*parts), "rb") as a, open(again(*parts), "rb") as b:
            assert a.read() == b.read(), parts


def test_super_resolve_command(built, tmp_path):
    lr = read_manifest(built("ds", "manifest.csv")).entries[0]
    src = os.path.join(built("ds"), lr.lr_path)
    code, _ = run("super-resolve", "--checkpoint", built("run", "model.emw"), "--transform",
                  built("ds", "q.qtx"), "--input", src, "--output", tmp_path / "sr.emg", "--heatmap", "true")
    assert code == 0
    sr, inp = read_grid(tmp_path / "sr.emg"), read_grid(src)
    assert sr.shape == (64, 64) and sr.lat_bounds == inp.lat_bounds
    assert np.all(sr.values >= 0)
    assert (tmp_path / "sr.emg.ppm").exists() and (tmp_path / "sr.emg.stamp").exists()
    code, _ = run("super-resolve", "--checkpoint", built("run", "model.emw"), "--transform",
                  built("ds", "q.qtx"), "--input", src, "--output", tmp_path / "x.emg", "--alpha", 2)
    assert code == 2 and not (tmp_path / "x.emg").exists()


def test_report_with_examples(built, tmp_path):
    code, out = run("report", "--tables", built("ev", "table.csv"), "--out-dir", tmp_path / "r",
                    "--manifest", built("ds", "manifest.csv"), "--checkpoint", built("run", "model.emw"),
                    "--transform", built("ds", "q.qtx"), "--n-examples", 1)
    assert code == 0
    names = os.listdir(tmp_path / "r")
    assert any(n.endswith("_triptych.png") for n in names)
    assert any(n.endswith("_hist.png") for n in names)
    assert out.splitlines()[0].startswith("label,")


def test_stamp_records_hash_seeds_and_versions(built):
    stamp = open(built("run", "stamp.txt")).read().splitlines()
    keys = dict(l.split("=", 1) for l in stamp)
    assert keys["command"] == "train"
    assert len(keys["config_sha256"]) == 64
    assert keys["seed.seed"] == "0" and keys["seed.init_seed"] == "0"
    assert keys["version.numpy"] == np.__version__


@pytest.mark.parametrize("argv, field", [
    (["train", "--batch-size", "0"], "batch_size"),
    (["train", "--lr-max", "1e-8"], "lr_min"),
    (["train", "--architecture", "unet"], "architecture"),
    (["train", "--iterations", "ten"], "iterations"),
    (["train", "--transform", "/nonexistent.qtx"], "transform"),
    (["synth", "--n-maps", "-1"], "n_maps"),
    (["prepare", "--protocol", "time_and_area"], "region"),
    (["prepare", "--protocol", "time_and_area", "--region", "10,0,0,10"], "region"),
])
def test_config_errors_exit_2_before_writing(built, tmp_path, capsys, argv, field):
    base = {
        "train": ["--manifest", built("ds", "manifest.csv"), "--transform", built("ds", "q.qtx"),
                  "--out-dir", tmp_path / "out"],
        "synth": ["--out-dir", tmp_path / "out"],
        "prepare": ["--corpus", built("corpus", "maps.csv"), "--out-dir", tmp_path / "out"],
    }[argv[0]]
    code, _ = run(argv[0], *base, *argv[1:])
    assert code == 2
    assert f"({field})" in capsys.readouterr().err
    assert os.listdir(tmp_path) == []


def test_missing_required_setting(tmp_path, capsys):
    code, _ = run("synth")
    assert code == 2 and "(out_dir)" in capsys.readouterr().err


def test_empty_corpus_exits_1(tmp_path, capsys):
    assert run("synth", "--out-dir", tmp_path / "c", "--n-maps", 0)[0] == 0
    assert open(tmp_path / "c" / "maps.csv").read().splitlines() == ["# map-id, path, year, month, compound"]
    code, _ = run("prepare", "--corpus", tmp_path / "c" / "maps.csv", "--out-dir", tmp_path / "d")
    assert code == 1
    assert "DomainError" in capsys.readouterr().err
    assert not (tmp_path / "d").exists()


def test_fit_transform_without_train_split_exits_1(tmp_path):
    (tmp_path / "m.csv").write_text("# pair-id, lr-path, hr-path, alpha, year, month, compound, split\n")
    code, _ = run("fit-transform", "--manifest", tmp_path / "m.csv", "--out", tmp_path / "q.qtx")
    assert code == 1 and not (tmp_path / "q.qtx").exists()


def test_evaluate_scaling_needs_reference(built, tmp_path, capsys):
    code, _ = run("evaluate", "--manifest", built("ds", "manifest.csv"), "--checkpoint",
                  built("run", "model.emw"), "--transform", "scaling", "--out-dir", tmp_path / "e")
    assert code == 2 and "(reference)" in capsys.readouterr().err
    code, out = run("evaluate", "--manifest", built("ds", "manifest.csv"), "--checkpoint",
                    built("run", "model.emw"), "--transform", "scaling", "--reference",
                    built("ds", "q.qtx"), "--out-dir", tmp_path / "e", "--model-id", "ts",
                    "--baseline", "false")
    assert code == 0 and out.splitlines()[1].startswith("D,ts,")


def test_precedence_defaults_file_flags(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("# comment\nn_maps = 5\nseed=9\nheight = 128\n")
    file_values = read_config_file(cfg_file)
    cfg = resolve_settings(SCHEMAS["synth"], file_values, {"out_dir": "x", "seed": "11"})
    assert cfg["n_maps"] == 5 and cfg["seed"] == 11 and cfg["height"] == 128 and cfg["width"] == 512


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("n_maps 5\n")
    with pytest.raises(ConfigError):
        read_config_file(bad)
    with pytest.raises(ConfigError) as exc:
        resolve_settings(SCHEMAS["synth"], {"colour": "red"}, {"out_dir": "x"})
    assert exc.value.field == "colour"
    with pytest.raises(ConfigError) as exc:
        read_config_file(tmp_path / "missing.cfg")
    assert exc.value.field == "config"


def test_config_file_drives_command(tmp_path):
    (tmp_path / "s.cfg").write_text(f"out_dir={tmp_path / 'c'}\nn_maps=2\nheight=64\nwidth=128\n")
    code, out = run("synth", "--config", tmp_path / "s.cfg")
    assert code == 0 and "wrote 2 maps" in out
    assert read_grid(tmp_path / "c" / "maps" / "map0001.emg").shape == (64, 128)


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
