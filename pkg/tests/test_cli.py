import csv

import pytest

from kpuf.cli import default_password, main, read_password
from kpuf.exceptions import DomainError


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def visits(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    assert main(["experiment", "--seed", "3", "--runs", "3", "--out", str(out)]) == 0
    return out


def header(path):
    with open(path) as fh:
        return next(row for row in csv.reader(fh) if not row[0].startswith("#"))


def test_genpuf_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(capsys, "genpuf", "--seed", 7, "--out", a)[0] == 0
    assert run(capsys, "genpuf", "--seed", 7, "--out", b)[0] == 0
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("hex_flag", [[], ["--hex"]])
def test_encrypt_decrypt_round_trip(tmp_path, capsys, hex_flag):
    src = tmp_path / "msg.txt"
    src.write_bytes(b"meet me at the usual place")
    ct, back = tmp_path / "msg.kpuf", tmp_path / "back.txt"
    code, out, _ = run(capsys, "encrypt", "--seed", 2, "--in", src, "--out", ct, *hex_flag)
    assert code == 0 and "R=16" in out
    assert run(capsys, "decrypt", "--seed", 2, "--in", ct, "--out", back)[0] == 0
    assert back.read_bytes() == src.read_bytes()
    if not hex_flag:
        assert ct.read_bytes()[:4] == b"KPUF"


def test_encrypt_is_replayable(tmp_path, capsys):
    src = tmp_path / "m"
    src.write_bytes(b"x" * 50)
    run(capsys, "encrypt", "--seed", 1, "--in", src, "--out", tmp_path / "a")
    run(capsys, "encrypt", "--seed", 1, "--in", src, "--out", tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_decrypt_with_wrong_seed_is_tamper(tmp_path, capsys):
    src = tmp_path / "m"
    src.write_bytes(b"secret")
    run(capsys, "encrypt", "--seed", 1, "--in", src, "--out", tmp_path / "c")
    code, _, err = run(capsys, "decrypt", "--seed", 9, "--in", tmp_path / "c", "--out", tmp_path / "d")
    assert code == 1 and err.startswith("ERROR:tamper:")


def test_capacity_error(tmp_path, capsys):
    src = tmp_path / "big"
    src.write_bytes(b"a" * 1000)
    code, _, err = run(capsys, "encrypt", "--in", src, "--out", tmp_path / "o")
    assert code == 1 and err.startswith("ERROR:capacity:")


def test_missing_file_is_io_error(tmp_path, capsys):
    code, _, err = run(capsys, "decrypt", "--in", tmp_path / "nope", "--out", tmp_path / "o")
    assert code == 1 and err.startswith("ERROR:io:")


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as info:
        main(["encrypt"])
    assert info.value.code == 2
    assert "ERROR:usage:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["screen", "--in", "x", "--level", "90", "--out", "y"])
    assert info.value.code == 2


def test_password_file_forms(tmp_path):
    pw = default_password(5)
    raw, hexed = tmp_path / "raw", tmp_path / "hex"
    raw.write_bytes(pw)
    hexed.write_text(pw.hex() + "\n")
    assert read_password(raw) == read_password(hexed) == pw
    (tmp_path / "short").write_bytes(b"abc")
    with pytest.raises(DomainError):
        read_password(tmp_path / "short")


def test_experiment_outputs(visits, tmp_path, capsys):
    assert header(visits / "visits.csv") == ["run", "cell", "visits"]
    assert header(visits / "histogram.csv") == ["visits", "frequency"]
    assert (visits / "grid_run1.csv").exists()
    again = tmp_path / "again"
    code, out, _ = run(capsys, "experiment", "--seed", 3, "--runs", 3, "--out", again)
    assert code == 0 and "trials_per_run=480" in out
    for name in ("visits.csv", "histogram.csv", "grid_run1.csv"):
        assert (again / name).read_bytes() == (visits / name).read_bytes()


def test_fit_summary(visits, tmp_path, capsys):
    out = tmp_path / "s.csv"
    code, text, _ = run(capsys, "fit", "--in", visits / "visits.csv", "--model", "cell",
                        "--chains", 2, "--iters", 200, "--allow-unconverged", "--out", out)
    assert code == 0 and "a_bar: rhat=" in text
    assert header(out) == ["param", "median", "lo95", "hi95", "lo80", "hi80", "rhat", "ess"]
    assert len(out.read_text().splitlines()) == 1 + 2 + 1024


def test_fit_rerun_identical(visits, tmp_path, capsys):
    args = ["fit", "--in", visits / "visits.csv", "--model", "none", "--chains", 2,
            "--iters", 100, "--allow-unconverged", "--seed", 4]
    run(capsys, *args, "--out", tmp_path / "a")
    run(capsys, *args, "--out", tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_fit_gate_reports_convergence(visits, tmp_path, capsys):
    code, _, err = run(capsys, "fit", "--in", visits / "visits.csv", "--chains", 2,
                       "--iters", 20, "--out", tmp_path / "s")
    assert code == 1 and err.startswith("ERROR:convergence:")


def test_compare_csv(visits, tmp_path, capsys):
    out = tmp_path / "c.csv"
    code, _, _ = run(capsys, "compare", "--in", visits / "visits.csv", "--chains", 2,
                     "--iters", 200, "--allow-unconverged", "--out", out)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "model,looic,looic_se,elpd_diff,se_diff"
    assert sorted(line.split(",")[0] for line in lines[1:]) == ["both", "cell", "none"]


def test_screen_outputs(visits, tmp_path, capsys):
    code, text, _ = run(capsys, "screen", "--in", visits / "visits.csv", "--model", "cell",
                        "--level", 80, "--chains", 2, "--iters", 200, "--allow-unconverged",
                        "--cells", 20, "--out", tmp_path)
    assert code == 0 and "at 80%" in text
    assert header(tmp_path / "intervals.csv") == ["cell", "median", "lower", "upper", "flagged"]
    svg = (tmp_path / "intervals.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<line") >= 20


def test_screen_rejects_none_model(visits, tmp_path, capsys):
    code, _, err = run(capsys, "screen", "--in", visits / "visits.csv", "--model", "none",
                       "--out", tmp_path)
    assert code == 1 and err.startswith("ERROR:domain:")


def test_attack_outputs(tmp_path, capsys):
    src = tmp_path / "text.txt"
    src.write_text("It was the best of times, it was the worst of times. " * 40)
    code, out, _ = run(capsys, "attack", "--in", src, "--runs", 2, "--out", tmp_path)
    assert code == 0 and "separation:" in out
    assert header(tmp_path / "baseline.csv") == ["rank", "token", "count", "letter"]
    assert (tmp_path / "report.txt").read_text().startswith("== monoalphabetic baseline ==")


def test_attack_bad_profile(tmp_path, capsys):
    prof = tmp_path / "p.csv"
    prof.write_text("letter,frequency\na,1\n")
    code, _, err = run(capsys, "attack", "--profile", prof, "--runs", 1, "--out", tmp_path)
    assert code == 1 and err.startswith("ERROR:parse:")


def test_selftest(capsys):
    code, out, _ = run(capsys, "selftest")
    assert code == 0
    assert "FAIL" not in out and out.count("PASS") >= 5
