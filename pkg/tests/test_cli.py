import json

import pytest

from oatpulse.cli import build_parser, main
from oatpulse.env import PulseSequence


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


SMALL = ("--n-atoms", 10, "--total-time", 0.25, "--n-intervals", 4)


def test_train_then_rollout(tmp_path, capsys):
    code, out, _ = run(capsys, "train", *SMALL, "--episodes", 5, "--workers", 1, "--out", tmp_path)
    assert code == 0
    summary = json.loads(out)
    assert summary["status"] == "ok"
    tag = "only-x_N10_nt4_seed0"
    for suffix in (".config.json", ".sequence.json", ".ckpt.npz", ".curve.csv"):
        assert (tmp_path / f"{tag}{suffix}").exists()
    assert (tmp_path / "train.config.json").exists()
    assert (tmp_path / f"{tag}.curve.csv").read_text().splitlines()[0] == "episode,final_qfi,best_so_far"

    code, out, _ = run(capsys, "rollout", *SMALL, "--checkpoint", tmp_path / f"{tag}.ckpt.npz",
                       "--husimi", 5, 8, "--out", tmp_path)
    assert code == 0
    assert len((tmp_path / "rollout.qfi.csv").read_text().splitlines()) == 6
    assert len((tmp_path / "rollout.dicke.csv").read_text().splitlines()) == 12
    assert len((tmp_path / "rollout.husimi.csv").read_text().splitlines()) == 41


def test_oracle_ramsey_sweep(tmp_path, capsys):
    code, out, _ = run(capsys, "oracle", *SMALL, "--scheme", "both-xy", "--out", tmp_path)
    assert code == 0 and json.loads(out)["evaluated"] == 81
    seq_path = tmp_path / "oracle.sequence.json"
    PulseSequence.load(seq_path)
    # physics comes from the sequence file when no --n-atoms is given
    code, out, _ = run(capsys, "ramsey", "--sequence", seq_path, "--phi0", 1e-6, 1e-4, "--out", tmp_path)
    assert code == 0
    assert len((tmp_path / "ramsey.csv").read_text().splitlines()) == 3
    code, out, _ = run(capsys, "sweep", "--sequence", seq_path, "--out", tmp_path)
    assert code == 0
    assert (tmp_path / "sweep.csv").read_text().startswith("fraction,n_actual,qfi")


def test_config_file_with_override(tmp_path, capsys):
    cfg = {"physics": {"n_atoms": 12, "total_time": 0.3, "n_intervals": 3}, "out": str(tmp_path)}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    code, _, _ = run(capsys, "oracle", "--config", tmp_path / "cfg.json", "--n-intervals", 2)
    assert code == 0
    snap = json.loads((tmp_path / "oracle.config.json").read_text())
    assert snap["physics"]["n_atoms"] == 12 and snap["physics"]["n_intervals"] == 2


def test_errors_are_machine_readable(tmp_path, capsys):
    code, out, err = run(capsys, "oracle", "--n-atoms", 10, "--n-intervals", 30, "--out", tmp_path)
    assert code != 0 and out == ""
    line = json.loads(err.strip().splitlines()[-1])
    assert line["status"] == "error" and line["type"] == "BudgetExceeded"
    code, _, err = run(capsys, "train", "--n-atoms", 0, "--out", tmp_path)
    assert code != 0 and json.loads(err)["type"] == "ValueError"


def test_help_documents_csv_columns():
    text = build_parser().format_help()
    assert "relative_qfi_loss" in text and "best_so_far" in text


def test_unknown_scheme_rejected():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--scheme", "only-z"])
