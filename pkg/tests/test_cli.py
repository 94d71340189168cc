import json
import subprocess
import sys

import numpy as np
import pytest
import torch
from PIL import Image

from structgan.cli import build_parser, main
from structgan.config import builtin_config, serialize_config
from structgan.features import HEDResidual


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--n-train", "4", "--n-test", "3",
                 "--size", "32"]) == 0
    cfg = builtin_config("cycle+edge").replace(
        n_iter=1, n_iter_decay=1, load_size=(32, 32), crop_size=(32, 32), n_scales=3,
        growth_rate=4, layers_per_block=2, first_channels=8, ndf=8, disc_depth=3)
    (root / "desk.cfg").write_text(serialize_config(cfg))
    assert main(["train", "--config", str(root / "desk.cfg"), "--data-a",
                 str(root / "data" / "trainA"), "--data-b", str(root / "data" / "trainB"),
                 "--out", str(root / "run"), "--seed", "0"]) == 0
    return root


def test_train_writes_checkpoints(workspace):
    names = sorted(p.name for p in (workspace / "run").glob("*.pt"))
    assert names == ["checkpoint_epoch0001.pt", "checkpoint_epoch0002.pt"]
    assert (workspace / "run" / "metrics.csv").exists()


def test_evaluate_outputs(workspace, capsys):
    out = workspace / "eval"
    args = ["evaluate", "--checkpoint", str(workspace / "run" / "checkpoint_epoch0002.pt"),
            "--testset", str(workspace / "data"), "--out", str(out)]
    assert main(args) == 0
    assert "mean distance" in capsys.readouterr().out
    first = (out / "distances.csv").read_bytes()
    assert first.count(b"\n") == 4
    stats = json.loads((out / "boxstats.json").read_text())
    assert stats["n"] == 3
    assert (out / "comparison.png").exists()
    main(args)
    assert (out / "distances.csv").read_bytes() == first


def test_transform_keeps_names_and_sizes(workspace, tmp_path):
    src = tmp_path / "in"
    src.mkdir()
    for name, size in (("x.png", (40, 24)), ("y.jpg", (32, 32))):
        Image.fromarray(np.full((size[1], size[0], 3), 90, np.uint8)).save(src / name)
    assert main(["transform", "--checkpoint",
                 str(workspace / "run" / "checkpoint_epoch0002.pt"),
                 "--in", str(src), "--out", str(tmp_path / "out")]) == 0
    for name, size in (("x.png", (40, 24)), ("y.jpg", (32, 32))):
        with Image.open(tmp_path / "out" / name) as im:
            assert im.size == size


def test_train_with_hed_weights(workspace, tmp_path):
    torch.manual_seed(0)
    torch.save(HEDResidual().state_dict(), tmp_path / "hed.pt")
    rc = main(["train", "--config", str(workspace / "desk.cfg"),
               "--data-a", str(workspace / "data" / "trainA"),
               "--data-b", str(workspace / "data" / "trainB"), "--out", str(tmp_path / "run"),
               "--edge-detector", "hed", "--edge-weights", str(tmp_path / "hed.pt"),
               "--max-steps", "1"])
    assert rc == 0


def test_hed_without_weights_fails(workspace, tmp_path):
    with pytest.raises(RuntimeError, match="weights"):
        main(["train", "--config", str(workspace / "desk.cfg"),
              "--data-a", str(workspace / "data" / "trainA"),
              "--data-b", str(workspace / "data" / "trainB"), "--out", str(tmp_path / "run"),
              "--edge-detector", "hed", "--max-steps", "1"])


def test_parser_rejects_unknown_detector():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--data-a", "a", "--data-b", "b", "--out", "o",
                                   "--edge-detector", "canny"])


def test_console_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "structgan.cli", "--help"],
                         capture_output=True, text=True, check=True).stdout
    for cmd in ("train", "evaluate", "transform", "synth"):
        assert cmd in out
