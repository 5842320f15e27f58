"""Command line interface: subcommands, artifacts, determinism, exit codes."""

import numpy as np
import pytest

from acflow.cli import cli_main
from acflow.flow import load_checkpoint

TRAIN = ["train", "--dataset", "two_moons", "--n-samples", "256",
         "--epochs", "2", "--seed", "7", "--attention", "l2",
         "--hidden-width", "12", "--blocks", "2", "--fixed-clock"]


@pytest.fixture(scope="module")
def trained_ckpt(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ckpt = root / "m.acf"
    rc = cli_main(TRAIN + ["--out", str(ckpt), "--metrics",
                           str(root / "m.csv")])
    assert rc == 0
    return ckpt


def test_train_twice_identical_artifacts(tmp_path):
    outs = []
    for tag in ("a", "b"):
        ckpt = tmp_path / f"{tag}.acf"
        csv = tmp_path / f"{tag}.csv"
        assert cli_main(TRAIN + ["--out", str(ckpt), "--metrics",
                                 str(csv)]) == 0
        outs.append((ckpt.read_bytes(), csv.read_bytes()))
    assert outs[0] == outs[1]


def test_eval_dataset_and_input(trained_ckpt, tmp_path, capsys):
    assert cli_main(["eval", "--model", str(trained_ckpt), "--dataset",
                     "two_moons", "--n-samples", "128", "--seed", "1"]) == 0
    assert capsys.readouterr().out.startswith("nll ")
    pts = tmp_path / "pts.csv"
    np.savetxt(pts, np.zeros((4, 2)), delimiter=",")
    assert cli_main(["eval", "--model", str(trained_ckpt), "--input",
                     str(pts), "--seed", "1"]) == 0


def test_sample_and_invert_roundtrip(trained_ckpt, tmp_path):
    s = tmp_path / "s.csv"
    assert cli_main(["sample", "--model", str(trained_ckpt), "--n", "16",
                     "--seed", "3", "--out", str(s)]) == 0
    samples = np.loadtxt(s, delimiter=",")
    assert samples.shape == (16, 2)
    model = load_checkpoint(trained_ckpt)
    z = tmp_path / "z.csv"
    np.savetxt(z, model.forward_np(samples), delimiter=",")
    inv = tmp_path / "inv.csv"
    assert cli_main(["invert", "--model", str(trained_ckpt), "--input",
                     str(z), "--out", str(inv)]) == 0
    back = np.loadtxt(inv, delimiter=",")
    assert np.max(np.abs(back - samples)) <= 1e-5


def test_interpolate_cmd(trained_ckpt, tmp_path):
    x1, x2 = tmp_path / "x1.csv", tmp_path / "x2.csv"
    np.savetxt(x1, np.array([[0.5, 0.2]]), delimiter=",")
    np.savetxt(x2, np.array([[-0.5, 0.8]]), delimiter=",")
    out = tmp_path / "i.csv"
    assert cli_main(["interpolate", "--model", str(trained_ckpt),
                     "--x1", str(x1), "--x2", str(x2), "--steps", "4",
                     "--out", str(out)]) == 0
    pts = np.loadtxt(out, delimiter=",")
    assert pts.shape == (5, 2)
    np.testing.assert_allclose(pts[0], [0.5, 0.2], atol=1e-5)


def test_perturb_emits_six_default_rows(trained_ckpt, tmp_path):
    out = tmp_path / "p.csv"
    assert cli_main(["perturb", "--model", str(trained_ckpt), "--dataset",
                     "two_moons", "--n-samples", "64", "--n-inputs", "32",
                     "--seed", "3", "--out", str(out)]) == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "sigma,mean,std"
    assert len(lines) == 7
    sigmas = [float(l.split(",")[0]) for l in lines[1:]]
    assert sigmas == [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0]


def test_certify_cmd(trained_ckpt, capsys):
    assert cli_main(["certify", "--model", str(trained_ckpt)]) == 0
    assert "overall: PASS" in capsys.readouterr().out


def test_paired_run_cmd(tmp_path):
    prefix = str(tmp_path / "pair")
    rc = cli_main(["paired-run", "--dataset", "two_moons", "--n-samples",
                   "256", "--epochs", "2", "--seed", "11", "--hidden-width",
                   "12", "--blocks", "2", "--eval-every", "1",
                   "--fixed-clock", "--out-prefix", prefix])
    assert rc == 0
    a = (tmp_path / "pair_none.csv").read_text().strip().split("\n")
    b = (tmp_path / "pair_l2.csv").read_text().strip().split("\n")
    assert len(a) == len(b) == 4  # header + epochs 0,1,2
    # identical starting NLL in the eval_nll column
    assert a[1].split(",")[3] == b[1].split(",")[3]


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "model.cfg"
    cfg.write_text("data_dim = 2\nblocks = 2\nhidden_width = 12\n"
                   "attention = none\n")
    ckpt = tmp_path / "c.acf"
    rc = cli_main(["train", "--dataset", "two_moons", "--n-samples", "128",
                   "--epochs", "1", "--seed", "2", "--config", str(cfg),
                   "--attention", "l2", "--fixed-clock", "--out", str(ckpt)])
    assert rc == 0
    model = load_checkpoint(ckpt)
    assert model.config.attention == "l2"  # flag wins over the file
    assert model.config.hidden_width == 12


def test_usage_errors_exit_2(capsys):
    assert cli_main(["bogus"]) == 2
    assert cli_main(["train", "--no-such-flag"]) == 2
    capsys.readouterr()


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert cli_main(["eval", "--model", str(tmp_path / "missing.acf"),
                     "--seed", "1"]) == 1
    assert "error:" in capsys.readouterr().err
