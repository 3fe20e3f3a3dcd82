import json
import os
import subprocess
import sys

import pytest

from sdklint.cli import EXIT_FINDINGS, EXIT_OK, EXIT_USAGE, main

from conftest import FIXTURES, MINI_DB, fixture_path

DB = ["--api-db", str(MINI_DB)]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_vet_text(capsys):
    code, out, err = run(capsys, "vet", fixture_path("under_set_min"), *DB)
    assert code == EXIT_OK
    assert "compatibility:" in out and "[19, 21)" in out


def test_vet_json_line(capsys):
    code, out, err = run(capsys, "vet", fixture_path("under_set_min"), *DB, "--json")
    assert code == EXIT_OK
    lines = out.splitlines()
    assert len(lines) == 1
    d = json.loads(lines[0])
    assert d["package"] == "com.example.vpn" and d["minOverNum"] == 1
    assert "compatibility:" in err


@pytest.mark.parametrize("name,code", [("under_set_min", EXIT_FINDINGS), ("clean", EXIT_OK)])
def test_fail_on_findings(capsys, name, code):
    assert run(capsys, "vet", fixture_path(name), *DB, "--fail-on-findings")[0] == code


def test_vet_broken_apk_exits_1(capsys):
    code, out, _ = run(capsys, "vet", FIXTURES / "broken_not_zip.apk", *DB, "--fail-on-findings")
    assert code == EXIT_USAGE
    assert "error in container" in out


def test_env_var_fallback(capsys, monkeypatch):
    monkeypatch.setenv("SDKLINT_API_DB", str(MINI_DB))
    assert run(capsys, "vet", fixture_path("clean"))[0] == EXIT_OK
    monkeypatch.delenv("SDKLINT_API_DB")
    code, _, err = run(capsys, "vet", fixture_path("clean"))
    assert code == EXIT_USAGE and "SDKLINT_API_DB" in err


def test_explicit_flag_beats_env(capsys, monkeypatch, tmp_path):
    monkeypatch.setenv("SDKLINT_API_DB", str(tmp_path / "missing.xml"))
    assert run(capsys, "vet", fixture_path("clean"), *DB)[0] == EXIT_OK


def test_bad_db_and_rules(capsys, tmp_path):
    bad = tmp_path / "bad.xml"
    bad.write_text("<api><class")
    code, _, err = run(capsys, "vet", fixture_path("clean"), "--api-db", bad)
    assert code == EXIT_USAGE and "api_db" in err
    rules = tmp_path / "r.txt"
    rules.write_text("nonsense\n")
    code, _, err = run(capsys, "vet", fixture_path("clean"), *DB, "--rules", rules)
    assert code == EXIT_USAGE and "rules" in err


def test_custom_rules_file(capsys, tmp_path):
    rules = tmp_path / "r.txt"
    rules.write_text("Landroid/net/VpnService$Builder; addDisallowedApplication "
                     "(Ljava/lang/String;)Landroid/net/VpnService$Builder; 30 made-up rule\n")
    code, out, _ = run(capsys, "vet", fixture_path("under_set_min"), *DB, "--rules", rules, "--json")
    kinds = sorted(f["kind"] for f in json.loads(out)["findings"])
    assert kinds == ["compatibility", "security"]


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as info:
        main(["vet"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == EXIT_USAGE


def test_corpus_streams_and_writes(capsys, tmp_path):
    out_dir = tmp_path / "out"
    code, out, err = run(capsys, "corpus", FIXTURES, *DB, "--jobs", 1, "--out", out_dir)
    assert code == EXIT_OK
    n = len(list(FIXTURES.glob("*.apk")))
    assert len(out.splitlines()) == n
    assert all("elapsedSeconds" in json.loads(line) for line in out.splitlines())
    reports = (out_dir / "reports.jsonl").read_text().splitlines()
    assert len(reports) == n and all("elapsedSeconds" not in r for r in reports)
    stats = json.loads((out_dir / "stats.json").read_text())
    assert stats["apps"] + sum(stats["failed"].values()) == n
    assert "medianSeconds" in json.loads((out_dir / "timing.json").read_text())
    assert "apps analyzed" in err


def test_corpus_without_out_prints_stats(capsys, tmp_path):
    lst = tmp_path / "l.txt"
    lst.write_text(f"{fixture_path('clean')}\n")
    code, out, _ = run(capsys, "corpus", f"@{lst}", *DB)
    assert code == EXIT_OK
    assert json.loads(out.splitlines()[-1])["corpusStats"]["apps"] == 1


def test_corpus_empty_dir(capsys, tmp_path):
    assert run(capsys, "corpus", tmp_path, *DB)[0] == EXIT_USAGE


def test_db_stats(capsys):
    code, out, _ = run(capsys, "db-stats", *DB)
    assert code == EXIT_OK
    d = json.loads(out)
    assert d["maxKnownLevel"] == 28 and d["kinds"] == ["method"]
    # JobService (2 inherited), JobScheduler.schedule, addDisallowedApplication, setElevation
    assert d["added"]["21"] == 5 and d["removed"] == {"23": 4}
    code, out, _ = run(capsys, "db-stats", *DB, "--kinds", "class,method,field")
    assert json.loads(out)["total"] == json.loads(out)["classes"] + json.loads(out)["methods"] + \
        json.loads(out)["fields"]


def test_module_entry_point():
    env = dict(os.environ, SDKLINT_API_DB=str(MINI_DB))
    proc = subprocess.run([sys.executable, "-m", "sdklint", "vet", str(fixture_path("under_set_min")),
                           "--fail-on-findings"], capture_output=True, text=True, env=env)
    assert proc.returncode == EXIT_FINDINGS, proc.stderr
