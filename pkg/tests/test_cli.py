import subprocess
import sys

import numpy as np
import pytest

from sefdm_lab import cli
from sefdm_lab.cli import (
    EXIT_CHECK_FAILED,
    EXIT_IO,
    EXIT_PARAMETER,
    _SCHEMAS,
    build_parser,
    main,
    resolve_spec,
)


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "sefdm_lab.cli", *args], capture_output=True, text=True
    )


def test_train_defaults_follow_reference_recipe():
    args = build_parser().parse_args(["train"])
    spec = resolve_spec(args)
    assert spec["steps"] == 100_000
    assert spec["batch"] == 256
    assert spec["lr"] == pytest.approx(0.001)
    assert spec["train_ebn0"] == 0.0


def test_capacity_defaults_and_row_count(tmp_path):
    out = tmp_path / "cap.csv"
    code = main(
        ["capacity", "--ebn0-min", "0", "--ebn0-max", "4", "--ebn0-step", "2",
         "--out", str(out)]
    )
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "alpha,n,ebn0_db,snr_db,c_sefdm,r_sefdm,c_ofdm"
    # defaults: 4 alphas x 2 ns x 3 grid points
    assert len(lines) == 1 + 4 * 2 * 3
    assert spec_defaults("capacity")["alphas"] == [0.8, 0.85, 0.9, 1.0]
    assert spec_defaults("capacity")["ns"] == [12, 48]


def spec_defaults(command):
    return {k: v for k, (_, v) in _SCHEMAS[command].items()}


def test_capacity_alpha_one_rows_match_ofdm(tmp_path):
    out = tmp_path / "cap.csv"
    assert main(
        ["capacity", "--alphas", "1.0", "--ns", "4", "--ebn0-min", "0",
         "--ebn0-max", "10", "--ebn0-step", "5", "--out", str(out)]
    ) == 0
    for line in out.read_text().strip().splitlines()[1:]:
        cols = line.split(",")
        assert float(cols[4]) == pytest.approx(float(cols[6]), abs=1e-9)


def test_capacity_high_snr_ordering(tmp_path):
    out = tmp_path / "cap.csv"
    assert main(
        ["capacity", "--alphas", "0.8,0.9", "--ns", "48", "--ebn0-min", "20",
         "--ebn0-max", "20", "--ebn0-step", "1", "--out", str(out)]
    ) == 0
    rows = [line.split(",") for line in out.read_text().strip().splitlines()[1:]]
    by_alpha = {float(r[0]): r for r in rows}
    c08, c09 = float(by_alpha[0.8][4]), float(by_alpha[0.9][4])
    ofdm = float(by_alpha[0.8][6])
    assert c08 > c09 > ofdm


def test_capacity_unwritable_path():
    assert main(["capacity", "--out", "/nonexistent-dir/cap.csv"]) == EXIT_IO


def test_train_zero_steps_writes_model_and_empty_trace(tmp_path):
    out = tmp_path / "m.sfdm"
    code = main(
        ["train", "--n", "4", "--alpha", "0.9", "--steps", "0", "--seed", "5",
         "--out", str(out)]
    )
    assert code == 0
    assert out.exists()
    trace = (tmp_path / "m.sfdm.loss.csv").read_text()
    assert trace == "step,loss\n"
    from sefdm_lab.cnn import load_model

    model = load_model(out)
    assert model.n == 4 and model.alpha == 0.9


def test_train_determinism_byte_identical(tmp_path):
    a, b = tmp_path / "a.sfdm", tmp_path / "b.sfdm"
    argv = ["train", "--n", "4", "--alpha", "0.85", "--steps", "30", "--batch", "32",
            "--seed", "7"]
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    ta = (tmp_path / "a.sfdm.loss.csv").read_bytes()
    tb = (tmp_path / "b.sfdm.loss.csv").read_bytes()
    assert ta == tb


def test_ber_hard_matches_theory(tmp_path):
    out = tmp_path / "ber.csv"
    code = main(
        ["ber", "--detector", "hard", "--n", "12", "--alpha", "1.0",
         "--ebn0-min", "0", "--ebn0-max", "2", "--ebn0-step", "2",
         "--min-bits", "400000", "--min-errors", "100", "--seed", "17",
         "--out", str(out)]
    )
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "detector,alpha,n,ebn0_db,bits,errors,ber,seed"
    measured = [l.split(",") for l in lines[1:] if l.startswith("hard,")]
    theory = {l.split(",")[3]: float(l.split(",")[6]) for l in lines if l.startswith("theory_qpsk,")}
    assert len(measured) == 2 and len(theory) == 2
    import math

    for cols in measured:
        expected = theory[cols[3]]
        bits = int(cols[4])
        sigma = math.sqrt(expected * (1 - expected) / bits)
        assert abs(float(cols[6]) - expected) <= 3 * sigma


def test_ber_byte_identical_reruns_single_thread(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["ber", "--detector", "hard", "--n", "4", "--alpha", "0.9",
            "--ebn0-min", "0", "--ebn0-max", "4", "--ebn0-step", "2",
            "--min-bits", "20000", "--min-errors", "10", "--seed", "23", "--threads", "1"]
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_ber_mld_noiseless_point(tmp_path):
    out = tmp_path / "ber.csv"
    code = main(
        ["ber", "--detector", "mld", "--n", "4", "--alpha", "0.8",
         "--ebn0-min", "60", "--ebn0-max", "60", "--ebn0-step", "1",
         "--min-bits", "10000", "--min-errors", "5", "--seed", "2", "--out", str(out)]
    )
    assert code == 0
    row = [l for l in out.read_text().splitlines() if l.startswith("mld,")][0]
    assert row.split(",")[6] == "0"


def test_ber_mld_rejects_large_n(tmp_path):
    code = main(
        ["ber", "--detector", "mld", "--n", "16", "--alpha", "0.9",
         "--out", str(tmp_path / "x.csv")]
    )
    assert code == EXIT_PARAMETER


def test_ber_cnn_requires_model_and_checks_n(tmp_path):
    assert main(["ber", "--detector", "cnn", "--out", str(tmp_path / "x.csv")]) == EXIT_PARAMETER
    from sefdm_lab.cnn import build_model, save_model

    path = tmp_path / "m.sfdm"
    save_model(build_model(n=4, widths=(4,), blocks_per_scale=1, seed=0), path)
    code = main(
        ["ber", "--detector", "cnn", "--model", str(path), "--n", "8",
         "--out", str(tmp_path / "x.csv")]
    )
    assert code == EXIT_PARAMETER


def test_ber_cnn_mismatched_model_exits_nonzero_in_subprocess(tmp_path):
    from sefdm_lab.cnn import build_model, save_model

    path = tmp_path / "m.sfdm"
    save_model(build_model(n=4, widths=(4,), blocks_per_scale=1, seed=0), path)
    proc = run_cli(
        "ber", "--detector", "cnn", "--model", str(path), "--n", "6",
        "--out", str(tmp_path / "x.csv")
    )
    assert proc.returncode == EXIT_PARAMETER
    assert "N=4" in proc.stderr


def test_config_file_and_flag_precedence(tmp_path, monkeypatch):
    config = tmp_path / "run.conf"
    config.write_text(
        "# comment line\n"
        "n = 4\n"
        "alpha=0.9\n"
        "steps=0\n"
        "seed=99\n"
    )
    out = tmp_path / "m.sfdm"
    code = main(
        ["train", "--config", str(config), "--seed", "5", "--out", str(out)]
    )
    assert code == 0
    from sefdm_lab.cnn import load_model

    model = load_model(out)
    assert model.n == 4 and model.alpha == pytest.approx(0.9)
    assert model.seed == 5  # flag overrides config


def test_config_rejects_unknown_keys(tmp_path):
    config = tmp_path / "run.conf"
    config.write_text("bogus=1\n")
    assert main(["train", "--config", str(config)]) == EXIT_PARAMETER


def test_config_rejects_bad_lines(tmp_path):
    config = tmp_path / "run.conf"
    config.write_text("this is not a pair\n")
    assert main(["train", "--config", str(config)]) == EXIT_PARAMETER


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("SEFDM_SEED", "321")
    args = build_parser().parse_args(["train"])
    assert resolve_spec(args)["seed"] == 321
    args = build_parser().parse_args(["train", "--seed", "4"])
    assert resolve_spec(args)["seed"] == 4
    monkeypatch.delenv("SEFDM_SEED")
    args = build_parser().parse_args(["train"])
    assert resolve_spec(args)["seed"] == 0


def test_resolved_spec_is_logged(tmp_path, capsys):
    out = tmp_path / "cap.csv"
    main(["capacity", "--alphas", "1.0", "--ns", "2", "--ebn0-min", "0",
          "--ebn0-max", "0", "--ebn0-step", "1", "--out", str(out)])
    err = capsys.readouterr().err
    assert "[sefdm] capacity:" in err
    assert "alphas=[1.0]" in err


def test_check_passes_and_fault_injection_fails():
    assert main(["check"]) == 0
    assert main(["check", "--inject-gradient-fault"]) == EXIT_CHECK_FAILED


def test_check_prints_pass_lines(capsys):
    main(["check"])
    out = capsys.readouterr().out
    assert out.count("PASS") >= 4
    assert "FAIL" not in out


def test_cli_entrypoint_help():
    proc = run_cli("--help")
    assert proc.returncode == 0
    for sub in ("capacity", "train", "ber", "check"):
        assert sub in proc.stdout
