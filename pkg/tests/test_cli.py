import csv
import io
import json
import subprocess
import sys

import jsonschema
import pytest
from conftest import local

from opfbound.cli import CSV_COLUMNS, _schema, main, parse_sigmas


def run_cli(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def test_local_has_no_gap(capsys):
    code, out = run_cli(capsys, "local", "case9")
    assert code == 0
    rep = json.loads(out)
    jsonschema.validate(rep, _schema("report"))
    row = rep["rows"][0]
    assert row["mode"] == "local" and row["bound"] is None and row["gap_pct"] is None
    assert row["objective"] == pytest.approx(local("case9").objective, rel=1e-8)


def test_fastbound_report(capsys):
    code, out = run_cli(capsys, "fastbound", "case9", "--sigma", "20", "--compare-sdp")
    assert code == 0
    rep = json.loads(out)
    jsonschema.validate(rep, _schema("report"))
    fast = next(r for r in rep["rows"] if r["mode"] == "fastbound")
    assert fast["gap_pct"] == (fast["objective"] - fast["bound"]) / fast["objective"] * 100
    assert fast["sigma"] >= 20
    assert rep["fastbound"]["sigma_requested"] == 20
    assert rep["fastbound"]["sigma_used"] == fast["sigma"]
    assert rep["fastbound"]["dual_correspondence_ratio"] is not None
    assert {r["mode"] for r in rep["rows"]} == {"fastbound", "sdp"}
    assert rep["cliques"]["count"] >= 1


def test_csv_columns(capsys):
    code, out = run_cli(capsys, "compare", "case4", "--report", "csv")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert tuple(rows[0].keys()) == CSV_COLUMNS
    assert [r["mode"] for r in rows] == ["local", "fastbound", "sdp", "socp"]
    assert rows[0]["bound"] == "" and rows[0]["gap_pct"] == ""


def test_sdp_exactness_and_dumps(capsys, tmp_path):
    prog, cliques = tmp_path / "prog.txt", tmp_path / "cliques.json"
    code, out = run_cli(capsys, "relax", "case2", "--relaxation", "sdp", "--exactness", "--dump-program", str(prog),
                        "--dump-cliques", str(cliques))
    assert code == 0
    rep = json.loads(out)
    assert rep["mode"] == "sdp"
    assert rep["exactness"]["rank1"] is True
    assert prog.read_text().startswith("conic-triplet 1")
    assert json.loads(cliques.read_text())["format"] == "opfbound.cliques"


def test_socp_mode(capsys):
    code, out = run_cli(capsys, "socp", "case4")
    assert code == 0
    assert json.loads(out)["rows"][0]["mode"] == "socp"


def test_saved_local_solution_reused(capsys, tmp_path):
    path = tmp_path / "local.json"
    assert run_cli(capsys, "local", "case9", "--save-local", str(path))[0] == 0
    code, out = run_cli(capsys, "fastbound", "case9", "--local-solution", str(path))
    assert code == 0
    assert json.loads(out)["rows"][0]["objective"] == pytest.approx(local("case9").objective, rel=1e-12)


def test_sweep_csv(capsys, tmp_path):
    out_path = tmp_path / "sweep.csv"
    code, _ = run_cli(capsys, "sweep", "case4", "case9", "--sigmas", "0,50,...,100", "-o", str(out_path))
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out_path.read_text())))
    assert len(rows) == 6
    assert {r["case"] for r in rows} == {"case4", "case9"}


@pytest.mark.parametrize("argv, code", [
    (["fastbound", "no_such_case"], "file_not_found"),
    (["sweep", "case4", "--sigmas", "0,150"], "invalid_input"),
])
def test_error_json(capsys, argv, code):
    rc, out = run_cli(capsys, *argv)
    assert rc == 1
    err = json.loads(out)
    jsonschema.validate(err, _schema("error"))
    assert err["error"] == code


def test_parse_error_reported(capsys, tmp_path):
    bad = tmp_path / "bad.m"
    bad.write_text("function mpc = bad\nmpc.baseMVA = 100;\n")
    rc, out = run_cli(capsys, "local", str(bad))
    assert rc == 1
    assert json.loads(out)["case"] == str(bad)


@pytest.mark.parametrize("sigma", ["-5", "120", "abc"])
def test_sigma_rejected_by_parser(sigma):
    with pytest.raises(SystemExit) as exc:
        main(["fastbound", "case9", "--sigma", sigma])
    assert exc.value.code == 2


@pytest.mark.parametrize("text, expected", [
    ("0,10,...,50", [0, 10, 20, 30, 40, 50]),
    ("20", [20]),
    ("0, 25 ,...,100", [0, 25, 50, 75, 100]),
    ("5,10,60", [5, 10, 60]),
])
def test_parse_sigmas(text, expected):
    assert parse_sigmas(text) == expected


@pytest.mark.parametrize("text", ["10,5,...,0", "0,200"])
def test_parse_sigmas_rejects(text):
    with pytest.raises(ValueError):
        parse_sigmas(text)


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "opfbound.cli", "local", "case2"], capture_output=True, text=True,
                         check=True).stdout
    assert json.loads(out)["case"] == "case2"
