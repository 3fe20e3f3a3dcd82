# coding: utf-8

# # Vetting single apps
#
# This walkthrough builds a few small synthetic APKs, vets each one against
# the bundled miniature API database and prints the findings.  Everything is
# generated on the fly, so no Android SDK is needed.

# In[1]:

import tempfile
from pathlib import Path

from sdklint.apidb import load_api_db
from sdklint.report import summary_text, vet_one
from sdklint.rules import default_rules
from sdklint.synth.fixtures import catalogue, write_app

MINI_DB = Path(__file__).resolve().parents[1] / "tests" / "data" / "mini-api-versions.xml"
db = load_api_db(MINI_DB)
rules = default_rules()
specs = catalogue()
workdir = Path(tempfile.mkdtemp(prefix="sdklint-demo-"))


# An app declaring minSdkVersion 19 that calls a level-21 VPN method with no
# guard around it.  The crash range covers every level it would install on
# but cannot run the call.

# In[2]:

path = write_app(specs["under_set_min"], workdir / "under_set_min.apk")
print(summary_text(vet_one(path, db, rules)))


# The same call wrapped in `if (Build.VERSION.SDK_INT >= 21)` is protected, so
# the finding disappears.  A guard on 19 does not help.

# In[3]:

for name in ("guarded_fallthrough_21", "guarded_fallthrough_19"):
    report = vet_one(write_app(specs[name], workdir / f"{name}.apk"), db, rules)
    print(name, "->", [f.kind for f in report.findings])


# `addJavascriptInterface` is only dangerous below targetSdkVersion 17.

# In[4]:

for name in ("vuln_own_t16", "vuln_own_t17"):
    report = vet_one(write_app(specs[name], workdir / f"{name}.apk"), db, rules)
    print(summary_text(report))


# The JSON form is what `sdklint vet --json` prints.

# In[5]:

import json

report = vet_one(write_app(specs["many_apis"], workdir / "many_apis.apk"), db, rules)
print(json.dumps(report.to_dict(), indent=2)[:1200])
