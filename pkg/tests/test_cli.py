import csv
import subprocess
import sys

import pytest

from polartrack import cli
from polartrack import harness as hx

SMALL = ["--format", "PM-QPSK", "--symbols", "3000", "--trials", "3", "--seed", "7"]


def _run(tmp_path, name, *argv):
    out = tmp_path / name
    assert cli.main([*argv, "--out", str(out)]) == 0
    return out.read_bytes()


def _rows(data: bytes):
    return list(csv.reader(data.decode().splitlines()))


@pytest.mark.parametrize("fmt,size", [("PS-QPSK", 8), ("PM-QPSK", 16), ("PM-16-QAM", 256)])
def test_dump_constellation(tmp_path, fmt, size):
    rows = _rows(_run(tmp_path, "c.csv", "dump-constellation", "--format", fmt))
    assert tuple(rows[0]) == cli.CONSTELLATION_HEADER
    assert len(rows) == size + 1
    assert rows[1][0] == "0"


def test_op_audit(tmp_path):
    rows = _rows(_run(tmp_path, "a.csv", "op-audit"))
    assert tuple(rows[0]) == cli.AUDIT_HEADER
    assert [r[2] for r in rows[1:]] == ["1", "4", "16"]
    assert rows[1][3] == "322.0" and rows[1][4] == "12"
    rows = _rows(_run(tmp_path, "b.csv", "op-audit", "--format", "PS-QPSK", "--sop-period", "2", "--factored"))
    assert len(rows) == 2 and rows[1][4] == "7"
    assert cli.main(["op-audit", "--algorithm", "kabsch"]) == 1


def test_sweep_csv_is_deterministic_across_workers(tmp_path):
    argv = ["sweep-snr", *SMALL, "--grid", "9,11", "--delta-p-hz", "1e5"]
    a = _run(tmp_path, "a.csv", *argv, "--workers", "1")
    b = _run(tmp_path, "b.csv", *argv, "--workers", "3")
    assert a == b
    rows = _rows(a)
    assert tuple(rows[0]) == cli.SWEEP_HEADER
    assert [r[0] for r in rows[1:]] == ["snr_db", "snr_db"]
    assert [r[1] for r in rows[1:]] == ["9.0", "11.0"]
    assert all(r[5] == "9000" and r[6] == "3" for r in rows[1:])


def test_sweep_pol_grid_and_stdout(capsys):
    assert cli.main(["sweep-pol", *SMALL, "--snr-db", "14", "--grid", "1e-6"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[1][:2] == ["delta_p_t", "1e-06"]


def test_converge(tmp_path):
    rows = _rows(_run(tmp_path, "c.csv", "converge", *SMALL, "--snr-db", "12", "--symbols", "500"))
    assert tuple(rows[0]) == cli.CONVERGENCE_HEADER
    assert [r[0] for r in rows[1:]] == ["0", "100", "200", "300", "400"]
    assert all(r[3] == "3" for r in rows[1:])


def test_track_demo(tmp_path):
    argv = ["track-demo", "--symbols", "2000", "--snr-db", "anchor+1"]
    a = _run(tmp_path, "a.csv", *argv)
    assert a == _run(tmp_path, "b.csv", *argv, "--workers", "4")
    rows = _rows(a)
    assert tuple(rows[0]) == cli.DEMO_HEADER
    assert len(rows) == 2001 and rows[1][0] == "0" and rows[-1][0] == "1999"


def test_tolerance_unbracketed(tmp_path):
    argv = ["tolerance-1db", "--format", "PM-QPSK", "--symbols", "5000", "--lo", "1e-9", "--hi", "1e-8"]
    rows = _rows(_run(tmp_path, "t.csv", *argv))
    assert tuple(rows[0]) == cli.TOLERANCE_HEADER
    assert rows[1][:4] == ["delta_p_t", "1e-08", ">1e-08", ">max"]
    assert float(rows[1][6]) == pytest.approx(hx.awgn_anchor_snr("PM-QPSK") + 1)


def test_config_file_and_flag_precedence(tmp_path):
    conf = tmp_path / "run.toml"
    conf.write_text('format = "PM-QPSK"\nsymbols = 2000\ntrials = 2\nsnr-db = 10.0\ngrid = [1e-6, 1e-5]\n'
                    'known_initial_channel = true\n')
    rows = _rows(_run(tmp_path, "a.csv", "sweep-pol", "--config", str(conf)))
    assert [r[1] for r in rows[1:]] == ["1e-06", "1e-05"] and rows[1][5] == "4000"
    rows = _rows(_run(tmp_path, "b.csv", "sweep-pol", "--config", str(conf), "--trials", "1", "--grid", "2e-6"))
    assert len(rows) == 2 and rows[1][1] == "2e-06" and rows[1][5] == "2000"


@pytest.mark.parametrize("argv", [
    ["sweep-pol", "--format", "PM-8-QAM"],
    ["sweep-pol", "--snr-db", "loud"],
    ["sweep-pol", "--algorithm", "proposed-stokes", "--metric", "ser", "--snr-db", "15"],
    ["sweep-lw", "--snr-db", "15", "--grid", ""],
    ["converge", "--snr-db", "15", "--symbols", "50"],
    ["track-demo", "--algorithm", "kabsch", "--snr-db", "15"],
    ["tolerance-1db", "--snr-db", "15", "--lo", "1e-3", "--hi", "1e-4"],
    ["no-such-command"],
])
def test_config_errors_exit_1(argv):
    assert cli.main(argv) == 1


def test_bad_config_file_exit_1(tmp_path):
    conf = tmp_path / "bad.toml"
    conf.write_text("colour = 3\n")
    assert cli.main(["sweep-pol", "--config", str(conf)]) == 1
    assert cli.main(["sweep-pol", "--config", str(tmp_path / "missing.toml")]) == 1
    conf.write_text("format = [\n")
    assert cli.main(["sweep-pol", "--config", str(conf)]) == 1


def test_budget_exit_2():
    assert cli.main(["sweep-pol", "--snr-db", "15", "--budget", "100"]) == 2


def test_entry_point_exit_code():
    proc = subprocess.run([sys.executable, "-m", "polartrack.cli", "converge", "--snr-db", "15", "--budget", "10"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "budget" in proc.stderr


def test_parse_snr():
    a = hx.awgn_anchor_snr("PM-QPSK")
    assert cli.parse_snr("anchor", "PM-QPSK") == a
    assert cli.parse_snr("anchor+1.5", "PM-QPSK") == pytest.approx(a + 1.5)
    assert cli.parse_snr("anchor - 2", "PM-QPSK") == pytest.approx(a - 2)
    assert cli.parse_snr("inf", "PM-QPSK") == float("inf")
    assert cli.parse_snr(12, "PM-QPSK") == 12.0


def test_fmt_value():
    assert cli.fmt_value(0.1) == "0.1"
    assert cli.fmt_value(3) == "3"
    assert cli.fmt_value(float("inf")) == "inf"
    assert cli.fmt_value(True) == "true"
