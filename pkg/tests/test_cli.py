import argparse
import csv
import subprocess
import sys

import numpy as np
import pytest

from bfan import cli
from bfan.data import read_pnm


def run(*argv):
    return cli.main([str(a) for a in argv])


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def test_every_flag_is_documented():
    parser = cli.build_parser()
    subs = _subparsers(parser)
    assert set(subs) == {"gen-data", "gen-boundary", "train", "infer", "eval", "gradcheck", "ablate"}
    for name, sub in [("bfan", parser)] + list(subs.items()):
        text = sub.format_help()
        for action in sub._actions:
            if isinstance(action, (argparse._HelpAction, argparse._SubParsersAction)):
                continue
            assert action.help, f"{name}: {action.option_strings} has no help"
            for opt in action.option_strings:
                assert opt in text, f"{name}: {opt} missing from --help"


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        run("train", "--help")
    assert exc.value.code == 0
    assert "--manifest" in capsys.readouterr().out


def test_usage_errors_exit_1(tmp_path):
    assert run() == 1
    assert run("train") == 1
    assert run("frobnicate") == 1
    assert run("gen-data", "--n", "two", "--out", tmp_path) == 1
    assert run("gradcheck", "--op", "nonsense") == 1


def test_bad_config_exits_1(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("mystery = 1\n")
    run("gen-data", "--n", 2, "--size", 32, "--out", tmp_path / "d")
    assert run("train", "--config", cfg, "--manifest", tmp_path / "d" / "manifest.txt", "--out", tmp_path / "o") == 1


def test_decode_error_exits_2(tmp_path):
    (tmp_path / "masks").mkdir()
    (tmp_path / "masks" / "broken.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
    assert run("gen-boundary", "--masks-dir", tmp_path / "masks", "--out", tmp_path / "b") == 2


def test_contract_violation_exits_3(tmp_path, capsys):
    assert run("gen-data", "--n", 2, "--size", 48, "--out", tmp_path) == 3
    assert "data-io" in capsys.readouterr().err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["gen-data", "--n", "8", "--size", "32", "--seed", "3", "--out", str(root / "data")]) == 0
    return root


def test_gen_data_layout(dataset):
    d = dataset / "data"
    assert len(list((d / "images").glob("*.ppm"))) == 8
    assert len(list((d / "masks").glob("*.pgm"))) == 8
    assert (d / "manifest.txt").read_text().startswith("# split=train")


def test_gen_boundary_matches_dataset_labels(dataset, tmp_path):
    d = dataset / "data"
    assert run("gen-boundary", "--masks-dir", d / "masks", "--out", tmp_path) == 0
    for p in (d / "boundaries").glob("*.pgm"):
        assert (tmp_path / p.name).read_bytes() == p.read_bytes()


def test_eval_perfect_prediction(dataset, tmp_path, capsys):
    d = dataset / "data" / "masks"
    assert run("eval", "--pred-dir", d, "--gt-dir", d, "--out", tmp_path) == 0
    rows = list(csv.reader(open(tmp_path / "report.csv")))
    mean = [r for r in rows if r[0] == "__mean__"][0]
    assert float(mean[1]) == 1.0 and float(mean[2]) == 0.0
    assert len(rows) == 1 + 8 + 2
    assert len(open(tmp_path / "pr_curve.csv").read().splitlines()) == 257


def test_train_infer_eval_pipeline(dataset, tmp_path):
    man = dataset / "data" / "manifest.txt"
    sets = ["--set", "input_size=32,32", "--set", "base_channels=2", "--set", "boundary_channels=2",
            "--set", "agg_channels=4", "--set", "input_scale=0.017", "--set", "learning_rate=0.01"]
    assert run("train", "--manifest", man, "--epochs", 2, "--out", tmp_path / "t", *sets) == 0
    assert (tmp_path / "t" / "loss.csv").read_text().count("\n") == 3
    ckpt = tmp_path / "t" / "final.ckpt"
    assert run("infer", "--checkpoint", ckpt, "--images", man, "--out", tmp_path / "p",
               "--config", tmp_path / "t" / "run.cfg", "--dump-boundary") == 0
    preds = sorted((tmp_path / "p").glob("train_?????.pgm"))
    assert len(preds) == 8
    assert read_pnm(preds[0]).shape == (32, 32)
    assert len(list((tmp_path / "p").glob("*_boundary3.pgm"))) == 8
    assert run("eval", "--pred-dir", tmp_path / "p", "--gt-dir", dataset / "data" / "masks",
               "--out", tmp_path / "e") == 0
    # a config describing another architecture is refused
    other = tmp_path / "other.cfg"
    other.write_text((tmp_path / "t" / "run.cfg").read_text().replace("ablation = AffmPlus", "ablation = Baseline"))
    assert run("infer", "--checkpoint", ckpt, "--images", man, "--out", tmp_path / "q", "--config", other) == 1


def test_infer_from_image_directory(dataset, tmp_path):
    from bfan import model
    from bfan.config import RunConfig
    from bfan.layers import zero_params
    from bfan.trainer import Checkpoint

    rc = RunConfig().with_overrides({"input_size": "32,32", "base_channels": "2", "boundary_channels": "2",
                                     "agg_channels": "4"})
    params = model.init_params(rc.model)
    zero_params(params)
    Checkpoint(rc, params, {}, 0, {}).save(tmp_path / "z.ckpt")
    assert run("infer", "--checkpoint", tmp_path / "z.ckpt", "--images", dataset / "data" / "images",
               "--out", tmp_path / "o") == 0
    outs = list((tmp_path / "o").glob("*.pgm"))
    assert len(outs) == 8 and all(np.all(read_pnm(p) == 128) for p in outs)


def test_gradcheck_subset_exit_zero(capsys):
    assert run("gradcheck", "--op", "relu", "--op", "softmax_weights", "--seeds", 3) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_ablate_writes_four_rows(dataset, tmp_path):
    man = dataset / "data" / "manifest.txt"
    sets = ["--set", "input_size=32,32", "--set", "base_channels=2", "--set", "boundary_channels=2",
            "--set", "agg_channels=4", "--set", "input_scale=0.017"]
    assert run("ablate", "--manifest", man, "--epochs", 1, "--out", tmp_path, *sets) == 0
    rows = list(csv.reader(open(tmp_path / "ablation.csv")))
    assert rows[0] == ["setting", "f_beta", "mae"]
    assert [r[0] for r in rows[1:]] == ["Baseline", "BoundaryMinus", "BoundaryPlus", "AffmPlus"]


def test_console_script_runs():
    out = subprocess.run([sys.executable, "-m", "bfan.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "gradcheck" in out.stdout
