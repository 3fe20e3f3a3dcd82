"""Acceptance criteria 1 to 10.

Every criterion is one test; the verdicts are also printed as
``CRITERION n PASS|FAIL`` lines at the end of the pytest run (see
``pytest_terminal_summary`` in conftest.py).  Criteria 1 and 10 need the real
Android 9 ``api-versions.xml``; point ``SDKLINT_API_DB`` at it or place it at
``tests/data/api-versions.xml``.  Without it those two criteria fail.
"""

import functools
import json
import os
import random
import shutil
import subprocess
import sys
import time
from pathlib import Path

import pytest
from scipy.stats import spearmanr

from sdklint.apidb import MethodRef, level_histograms, load_api_db
from sdklint.apk import open_apk
from sdklint.consistency import COMPATIBILITY, SECURITY
from sdklint.dex import parse_dex
from sdklint.dex.insns import INVOKE
from sdklint.manifest import TARGET_BELOW_MIN, effective_dsdk, parse_manifest
from sdklint.report import VetOptions, dumps_doc, dumps_line, vet_corpus, vet_one
from sdklint.rules import default_rules
from sdklint.synth.fixtures import SINCE, WEBVIEW_ADD_JS, random_app, write_app

from conftest import DATA, FIXTURES, MINI_DB, fixture_path, golden, golden_names
from oracles import api_xml_counts, api_xml_lookup, expected_valid_calls

RESULTS = {}
VPN = "Landroid/net/VpnService$Builder;->addDisallowedApplication(Ljava/lang/String;)Landroid/net/VpnService$Builder;"
FLURRY = "Lcom/flurry/android/CatalogActivity;"


def criterion(number):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            RESULTS[number] = "FAIL"
            fn(*args, **kwargs)
            RESULTS[number] = "PASS"
        return run
    return wrap


def real_db_path():
    for candidate in (os.environ.get("SDKLINT_API_DB"), DATA / "api-versions.xml"):
        if candidate and Path(candidate).is_file() and Path(candidate).resolve() != MINI_DB.resolve():
            return Path(candidate)
    return None


def _require_real_db():
    path = real_db_path()
    assert path is not None, "real api-versions.xml not available (set SDKLINT_API_DB)"
    return path


def _compat(report):
    return {(str(f.api), tuple(f.crash_range)) for f in report.findings if f.kind == COMPATIBILITY}


def _security(report):
    return sorted((f.origin, f.library_class) for f in report.findings if f.kind == SECURITY)


@criterion(1)
def test_c01_database_from_real_mapping_file():
    path = _require_real_db()
    t0 = time.perf_counter()
    db = load_api_db(path)
    elapsed = time.perf_counter() - t0
    classes, methods, _fields = api_xml_counts(path)
    assert (len(db.classes), len(db.methods)) == (classes, methods)
    vpn = db.lookup(MethodRef.parse(VPN))
    assert vpn.since == 21 == api_xml_lookup(path, "android/net/VpnService$Builder",
                                             "addDisallowedApplication(Ljava/lang/String;)"
                                             "Landroid/net/VpnService$Builder;")
    assert db.classes["Landroid/app/job/JobService;"].lifecycle.since == 21
    assert elapsed < 2.0, f"parse took {elapsed:.2f}s"


# effective (min, target, min_defaulted, target_defaulted, outlier), tabulated from the fixture definitions
DEFAULTS = {
    "no_min": (1, 22, True, False, None),
    "no_uses_sdk": (1, 1, True, True, None),
    "no_target": (15, 15, False, True, None),
    "duplicate_min": (14, 28, False, False, None),
    "outlier_target_zero": (8, 0, False, False, TARGET_BELOW_MIN),
}


@criterion(2)
def test_c02_defaults_and_outliers(vet):
    for name, expected in DEFAULTS.items():
        d = effective_dsdk(parse_manifest(open_apk(fixture_path(name)).manifest), 28)
        assert (d.min, d.target, d.min_defaulted, d.target_defaulted, d.outlier) == expected, name
        dsdk = vet(name).to_dict()["dsdk"]
        assert (dsdk["min"], dsdk["target"], dsdk["outlier"]) == (expected[0], expected[1], expected[4]), name
    assert parse_manifest(open_apk(fixture_path("duplicate_min")).manifest).raw_min == [14, 21]


@criterion(3)
def test_c03_compatibility_detection(vet):
    assert _compat(vet("under_set_min")) == {(VPN, (19, 21))}
    for shape in ("fallthrough", "taken", "reversed"):
        assert _compat(vet(f"guarded_{shape}_21")) == set(), shape
    for shape in ("fallthrough", "taken"):
        assert _compat(vet(f"guarded_{shape}_19")) == {(VPN, (19, 21))}, shape


@criterion(4)
def test_c04_security_detection(vet):
    assert _security(vet("vuln_own_t16")) == [("app_own", None)]
    assert _security(vet("vuln_own_t17")) == []
    assert _security(vet("vuln_library_registered_t16")) == [("third_party", FLURRY)]
    assert _security(vet("vuln_library_registered_t17")) == []
    assert vet("vuln_library_registered_t16").package != "com.flurry.android"


@criterion(5)
def test_c05_liveness_and_monotonicity(vet, mini_db, rules, tmp_path):
    assert _security(vet("vuln_library_unregistered_t16")) == []
    assert _security(vet("vuln_library_registered_t16")) == [("third_party", FLURRY)]
    for seed in range(20):
        spec, plan, registered = random_app(random.Random(seed), seed)
        path = write_app(spec, tmp_path / f"{spec.name}.apk")
        valid = {}
        for all_live in (False, True):
            report = vet_one(path, mini_db, rules, VetOptions(all_live=all_live, keep_sites=True))
            assert report.ok, report.error
            valid[all_live] = sorted((s.owner_class, str(s.ref)) for s in report.sites if s.valid)
            assert valid[all_live] == expected_valid_calls(plan, spec.package, registered, SINCE, all_live)
            live = [c for c in plan if all_live or c.owner.startswith(spec.package + ".") or c.owner in registered]
            expected_sec = sum(1 for c in live if c.ref == WEBVIEW_ADD_JS) if report.dsdk.target < 17 else 0
            assert len(_security(report)) == expected_sec
        superset = list(valid[True])
        for item in valid[False]:
            superset.remove(item)


@criterion(6)
def test_c06_multidex(vet):
    split, single = vet("multidex"), vet("multidex_single")
    assert (split.dex_files, single.dex_files) == (2, 1)
    key = lambda r: json.dumps(r.to_dict(timing=False)["findings"], sort_keys=True)
    assert key(split) == key(single)
    assert _compat(split) == {(VPN, (19, 21))}


@criterion(7)
def test_c07_invoke_multisets_match_disassembler():
    names = golden_names()
    assert names
    for name in names:
        expected = golden(name)["dex"]
        images = {e: parse_dex(b, e) for e, b in open_apk(fixture_path(name)).dex_entries}
        assert sorted(images) == sorted(expected), name
        for entry, image in images.items():
            ours = {str(m.ref): sorted(str(i.ref) for i in m.instructions if i.kind == INVOKE)
                    for c in image.class_defs for m in c.methods}
            theirs = {k: v["invokes"] for k, v in expected[entry]["methods"].items()}
            assert ours == theirs, (name, entry)


def _python_env():
    env = dict(os.environ)
    src = str(Path(__file__).resolve().parents[1] / "src")
    env["PYTHONPATH"] = src + os.pathsep + env.get("PYTHONPATH", "")
    return env


def _build_bulk(path, dex_bytes, apk_bytes=None):
    # built in a child process so the vet below starts from a clean heap
    code = ("import sys; from sdklint.synth.bulk import bulk_app; "
            "bulk_app(sys.argv[1], int(sys.argv[2]), 2, apk_bytes=int(sys.argv[3]) or None)")
    subprocess.run([sys.executable, "-c", code, str(path), str(dex_bytes), str(apk_bytes or 0)],
                   check=True, env=_python_env())
    return path


def _perf_db():
    return real_db_path() or MINI_DB


@pytest.mark.slow
@criterion(8)
def test_c08_performance(tmp_path, rules):
    big = _build_bulk(tmp_path / "big.apk", 10_500_000, 25_000_000)
    apk = open_apk(big)
    assert len(apk.dex_entries) >= 2
    assert sum(len(b) for _, b in apk.dex_entries) >= 10_000_000
    assert os.path.getsize(big) >= 24_000_000
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "sdklint", "vet", str(big), "--api-db", str(_perf_db()),
                           "--json"], capture_output=True, text=True, env=_python_env())
    wall = time.perf_counter() - t0
    assert proc.returncode in (0, 1), proc.stderr
    assert json.loads(proc.stdout)["package"] == "com.example.bulk"
    print(f"vet of {os.path.getsize(big)} byte APK: {wall:.2f}s wall")
    assert wall < 10.0, f"vet took {wall:.2f}s"

    db = load_api_db(_perf_db())
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for i in range(50):
        shutil.copy(fixture_path("kitchen_sink"), corpus / f"copy{i:02d}.apk")
    t0 = time.perf_counter()
    reports, stats = vet_corpus(sorted(corpus.iterdir()), db, rules, jobs=os.cpu_count() or 1)
    rate = 50 / (time.perf_counter() - t0)
    assert stats["apps"] == 50 and not stats["failed"]
    print(f"corpus: {rate:.1f} apps/s")
    assert rate >= 5.0, f"{rate:.1f} apps/s"

    sizes, seconds = [], []
    for mb in (0.5, 1, 1.5, 2, 2.5, 3):
        path = _build_bulk(tmp_path / f"sweep{mb}.apk", int(mb * 1_000_000))
        report = min((vet_one(path, db, rules) for _ in range(2)), key=lambda r: r.elapsed)
        sizes.append(report.dex_bytes)
        seconds.append(report.elapsed)
    rho = spearmanr(sizes, seconds).correlation
    print(f"size sweep rank correlation {rho:.3f}")
    assert rho >= 0.8, (sizes, seconds)


@criterion(9)
def test_c09_determinism(mini_db, rules):
    paths = sorted(FIXTURES.glob("*.apk"))
    runs = []
    for jobs in (1, 2):
        reports, stats = vet_corpus(paths, mini_db, rules, jobs=jobs)
        runs.append(("".join(dumps_line(r.to_dict(timing=False)) for r in reports), dumps_doc(stats)))
    assert runs[0] == runs[1]


@criterion(10)
def test_c10_db_stats_histogram():
    path = _require_real_db()
    proc = subprocess.run([sys.executable, "-m", "sdklint", "db-stats", "--api-db", str(path)],
                          capture_output=True, text=True, env=_python_env())
    assert proc.returncode == 0, proc.stderr
    added = {int(k): v for k, v in json.loads(proc.stdout)["added"].items()}
    assert added == level_histograms(load_api_db(path))["added"]
    assert max(added, key=added.get) == 24
    top4 = sorted(added, key=added.get, reverse=True)[:4]
    assert {21, 26} <= set(top4), top4
