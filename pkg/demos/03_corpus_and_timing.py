# coding: utf-8

# # A small corpus
#
# Forty randomized synthetic apps go through corpus mode, followed by a look
# at how analysis time grows with DEX size.

# In[1]:

import random
import tempfile
from pathlib import Path

from sdklint.apidb import load_api_db
from sdklint.report import timing_stats, vet_corpus, vet_one
from sdklint.rules import default_rules
from sdklint.synth.bulk import bulk_app
from sdklint.synth.fixtures import random_app, write_app

MINI_DB = Path(__file__).resolve().parents[1] / "tests" / "data" / "mini-api-versions.xml"
db = load_api_db(MINI_DB)
rules = default_rules()
workdir = Path(tempfile.mkdtemp(prefix="sdklint-demo-"))

paths = []
for seed in range(40):
    spec, _plan, _registered = random_app(random.Random(seed), seed)
    paths.append(write_app(spec, workdir / f"{spec.name}.apk"))


# In[2]:

reports, stats = vet_corpus(paths, db, rules, jobs=2)
for key in ("apps", "compatibilityApps", "securityApps", "lagSdkVersionMedian", "crashSeverity"):
    print(f"{key:>22}: {stats[key]}")


# Analysis time against DEX size.  The relation is close to linear.

# In[3]:

sizes = (250_000, 500_000, 1_000_000, 2_000_000)
for size in sizes:
    path = bulk_app(workdir / f"bulk{size}.apk", size)
    report = vet_one(path, db, rules)
    print(f"{report.dex_bytes:>9} DEX bytes  {report.elapsed:6.2f}s")

print(timing_stats(reports)["medianSeconds"])
