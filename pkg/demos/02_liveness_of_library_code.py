# coding: utf-8

# # Which code counts as live?
#
# Apps bundle third-party libraries, and most library classes are never
# reached.  A call only counts when its class is under the app package or
# under a class registered in the manifest.  This demo vets one vulnerable
# library class three ways.

# In[1]:

import tempfile
from pathlib import Path

from sdklint.apidb import load_api_db
from sdklint.report import VetOptions, summary_text, vet_one
from sdklint.rules import default_rules
from sdklint.synth.fixtures import vuln_library, vuln_library_called, write_app

MINI_DB = Path(__file__).resolve().parents[1] / "tests" / "data" / "mini-api-versions.xml"
db = load_api_db(MINI_DB)
rules = default_rules()
workdir = Path(tempfile.mkdtemp(prefix="sdklint-demo-"))


# Registered as an activity: the library is live and the finding names it.

# In[2]:

registered = write_app(vuln_library(registered=True), workdir / "registered.apk")
print(summary_text(vet_one(registered, db, rules)))


# Not registered and never called: nothing is reported.

# In[3]:

unregistered = write_app(vuln_library(registered=False), workdir / "unregistered.apk")
print(summary_text(vet_one(unregistered, db, rules)))


# Treating every class as live shows what a naive scan would have reported.

# In[4]:

print(summary_text(vet_one(unregistered, db, rules, VetOptions(all_live=True))))


# Not registered, but the app's own code calls into it.  The caller is app
# code, so the security finding is attributed to the app.

# In[5]:

called = write_app(vuln_library_called(), workdir / "called.apk")
print(summary_text(vet_one(called, db, rules)))
