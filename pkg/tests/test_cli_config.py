import csv

import numpy as np
import pytest

from lesionseg import imageio
from lesionseg.cli import main
from lesionseg.config import SCHEMA, ConfigError, RunConfig, describe_keys


def _run(argv):
    return main([str(a) for a in argv])


# ------------------------------------------------------------------ config


def test_defaults_roundtrip_through_text():
    rc = RunConfig()
    back = RunConfig.from_text(rc.to_text())
    assert back.to_text() == rc.to_text()
    for key in SCHEMA:
        assert back[key] == rc[key]


def test_config_file_with_comments(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# a comment\ntrain.cycles = 4   # trailing\n\nunet.hypercolumn = true\n", encoding="utf-8")
    rc = RunConfig.from_file(path)
    assert rc["train.cycles"] == 4
    assert rc.unet_config().hypercolumn is True
    assert rc.train_config().cycles == 4


def test_unknown_and_malformed_keys():
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_text("train.cyclez = 3\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("train.cycles = three\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("just words\n")


def test_builders_use_keys():
    rc = RunConfig.from_text(
        "data.input_size = 64\nunet.base_filters = 8\naug.brightness.p = 1\naug.brightness.beta = 0.1,0.1\n"
        "tta.set = id,hflip\n"
    )
    cfg = rc.train_config()
    assert cfg.input_size == (64, 64) and cfg.unet.base_filters == 8
    kc = cfg.aug.kinds["brightness"]
    assert kc.p == 1.0 and kc.ranges["beta"] == (0.1, 0.1)
    assert tuple(rc.tta_set()) == ("id", "hflip")


def test_describe_keys_lists_everything():
    text = describe_keys()
    for key in SCHEMA:
        assert key in text


# --------------------------------------------------------------------- cli


def test_unknown_subcommand_exits_1(capsys):
    assert _run(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert _run([]) == 1


@pytest.mark.parametrize("cmd", ["synth", "stats", "split", "train", "predict", "postprocess", "ensemble", "score"])
def test_help_lists_every_key(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    out = capsys.readouterr().out
    for key in SCHEMA:
        assert key in out


def test_bad_set_and_bad_config_exit_1(tmp_path):
    assert _run(["synth", "--out", tmp_path / "d", "--set", "nope.key=1"]) == 1
    assert _run(["synth", "--out", tmp_path / "d", "--set", "synth.count"]) == 1
    assert _run(["synth", "--out", tmp_path / "d", "--config", tmp_path / "missing.cfg"]) in (1, 2)
    assert _run(["synth", "--out", tmp_path / "d", "--set", "synth.size=16"]) == 1
    assert not (tmp_path / "d").exists()


def test_missing_data_exits_2(tmp_path):
    assert _run(["stats", "--data", tmp_path / "none", "--out", tmp_path / "s.txt"]) == 2
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad" / "x.png").write_bytes(b"not a png")
    assert _run(["stats", "--data", tmp_path / "bad", "--out", tmp_path / "s.txt"]) == 2


def test_split_ten_samples(tmp_path):
    data = tmp_path / "data"
    assert _run(["synth", "--out", data, "--count", 10]) == 0
    assert len(list(data.glob("*_mask.png"))) == 10
    assert _run(["split", "--data", data, "--out", tmp_path / "folds.csv", "--k", 5]) == 0
    with open(tmp_path / "folds.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["image_id", "fold"]
    counts = np.bincount([int(r[1]) for r in rows[1:]])
    assert counts.tolist() == [2] * 5


def test_score_identity(tmp_path, capsys):
    data = tmp_path / "data"
    assert _run(["synth", "--out", data, "--count", 3, "--size", 32, "--set", "synth.axis_max=10",
                 "--set", "synth.axis_min=4"]) == 0
    assert _run(["score", "--pred", data, "--gt", data, "--out", tmp_path / "s.csv"]) == 0
    last = (tmp_path / "s.csv").read_text().splitlines()[-1]
    assert last == "__aggregate__,1.000000,1.000000,1.000000"
    assert "jaccard=1.000000" in capsys.readouterr().out


def test_score_id_mismatch_exits_2(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    imageio.save_mask(np.zeros((4, 4)), a / "x.png")
    imageio.save_mask(np.zeros((4, 4)), b / "y.png")
    assert _run(["score", "--pred", a, "--gt", b, "--out", tmp_path / "s.csv"]) == 2


def test_ensemble_command_averages(tmp_path):
    a, b, out = tmp_path / "a", tmp_path / "b", tmp_path / "out"
    a.mkdir()
    b.mkdir()
    imageio.save_probmap(np.zeros((3, 3)), a / "x.png")
    imageio.save_probmap(np.ones((3, 3)), b / "x.png")
    assert _run(["ensemble", "--inputs", a, b, "--out", out]) == 0
    assert np.allclose(imageio.load_probmap(out / "x.png"), 0.5, atol=1e-4)
    imageio.save_probmap(np.ones((3, 3)), b / "z.png")
    assert _run(["ensemble", "--inputs", a, b, "--out", out]) == 2


def test_small_pipeline_is_idempotent(tmp_path):
    """synth -> split -> train -> predict -> postprocess -> score at toy scale, twice."""
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(
        "data.input_size = 32\nsynth.count = 6\nsynth.size = 32\nsynth.axis_min = 4\nsynth.axis_max = 12\n"
        "split.k = 3\nunet.base_filters = 4\nunet.depth = 2\ntrain.epochs_per_cycle = 2\ntrain.cycles = 2\n"
        "train.batch_size = 2\ntta.set = id,hflip\n",
        encoding="utf-8",
    )
    outputs = []
    for run in ("r1", "r2"):
        d = tmp_path / run
        c = ["--config", cfg]
        assert _run(["synth", "--out", d / "data", *c]) == 0
        assert _run(["split", "--data", d / "data", "--out", d / "folds.csv", *c]) == 0
        assert _run(["stats", "--data", d / "data", "--out", d / "stats.txt", *c]) == 0
        assert _run(["train", "--data", d / "data", "--folds", d / "folds.csv", "--out", d / "ckpt", *c]) == 0
        snaps = sorted((d / "ckpt").glob("snapshot_*.lsgw"))
        assert [p.name for p in snaps] == ["snapshot_0.lsgw", "snapshot_1.lsgw"]
        ck = [a for p in snaps for a in ("--checkpoint", p)]
        assert _run(["predict", *ck, "--data", d / "data", "--out", d / "probs", *c]) == 0
        assert _run(["postprocess", "--probs", d / "probs", "--out", d / "pred", *c]) == 0
        assert _run(["score", "--pred", d / "pred", "--gt", d / "data", "--out", d / "score.csv",
                     "--folds", d / "folds.csv", "--fold", 0, *c]) == 0
        log = (d / "ckpt" / "train.log").read_text().splitlines()
        assert len(log) == 4
        outputs.append(((d / "score.csv").read_bytes(), [p.read_bytes() for p in snaps],
                        (d / "probs" / "synth_0000.png").read_bytes()))
    assert outputs[0] == outputs[1]
    rows = outputs[0][0].decode().splitlines()
    assert rows[0] == "image_id,dice,jaccard,thresholded_jaccard"
    assert len(rows) == 1 + 2 + 1  # fold 0 holds 2 of 6 images
