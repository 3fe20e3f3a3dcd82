"""Vulnerable-API rules: a call that is unsafe while targetSdkVersion is low.

Rule files are line oriented::

    # class_descriptor method signature min_safe_target label...
    Landroid/webkit/WebView; addJavascriptInterface (Ljava/lang/Object;Ljava/lang/String;)V 17 RCE via reflection

The label is the rest of the line and may contain spaces.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from importlib import resources

from .apidb import MethodRef, is_class_descriptor, is_method_signature
from .errors import RuleFileError


@dataclass(frozen=True)
class VulnRule:
    class_descriptor: str
    method: str
    signature: str
    min_safe_target: int
    label: str

    @property
    def rule_id(self) -> str:
        return f"{self.class_descriptor}->{self.method}{self.signature}"

    @property
    def ref(self) -> MethodRef:
        return MethodRef(self.class_descriptor, self.method, self.signature)


def parse_rules(text: str, source: str = "<rules>") -> tuple:
    rules = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 4)
        if len(parts) < 4:
            raise RuleFileError(f"{source}:{lineno}: expected at least 4 fields, got {len(parts)}")
        cls, method, sig, threshold = parts[:4]
        label = parts[4] if len(parts) == 5 else ""
        if not is_class_descriptor(cls):
            raise RuleFileError(f"{source}:{lineno}: bad class descriptor {cls!r}")
        if not is_method_signature(sig):
            raise RuleFileError(f"{source}:{lineno}: bad method signature {sig!r}")
        try:
            level = int(threshold)
        except ValueError:
            raise RuleFileError(f"{source}:{lineno}: threshold {threshold!r} is not an integer") from None
        if level < 1:
            raise RuleFileError(f"{source}:{lineno}: threshold must be >= 1")
        rule = VulnRule(cls, method, sig, level, label)
        if rule.rule_id in seen:
            raise RuleFileError(f"{source}:{lineno}: duplicate rule {rule.rule_id}")
        seen.add(rule.rule_id)
        rules.append(rule)
    return tuple(rules)


def load_rules(path=None) -> tuple:
    """Rules from ``path``, or the built-in defaults when ``path`` is None."""
    if path is None:
        return default_rules()
    try:
        with open(os.fspath(path), encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise RuleFileError(f"cannot read rule file {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise RuleFileError(f"rule file {path} is not UTF-8") from None
    return parse_rules(text, os.fspath(path))


def _bundled(name):
    return resources.files("sdklint").joinpath("data", name).read_text(encoding="utf-8")


def default_rules() -> tuple:
    return parse_rules(_bundled("default_rules.txt"), "default_rules.txt")


def extra_rules() -> tuple:
    """Additional call-shaped rows, not enabled by default."""
    return parse_rules(_bundled("extra_rules.txt"), "extra_rules.txt")
