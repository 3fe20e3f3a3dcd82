"""API level database built from the SDK's ``api-versions.xml``.

The file lists every framework class with the API level it was added in
(``since``) and, when applicable, the levels where it was deprecated or
removed.  Members without their own ``since`` inherit the class value.
"""

from __future__ import annotations

import logging
import os
import re
from collections import Counter, deque
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple, Optional
from xml.parsers import expat

from .errors import ApiDbError

log = logging.getLogger(__name__)

#: maxLevel stand-in for APIs that were never removed.
SENTINEL = 100000

_TYPE = r"(?:\[*(?:[ZBSCIJFD]|L[^;()\[]+;))"
_SIGNATURE_RE = re.compile(rf"^\(({_TYPE})*\)(V|{_TYPE})$")

KNOWN_ELEMENTS = {"api", "class", "method", "field", "extends", "implements"}


@dataclass(frozen=True)
class ApiLifecycle:
    since: int = 1
    deprecated: Optional[int] = None
    removed: Optional[int] = None

    def __post_init__(self):
        if self.since < 1:
            raise ValueError(f"since must be >= 1, got {self.since}")
        if self.removed is not None and self.removed <= self.since:
            raise ValueError(f"removed ({self.removed}) must be > since ({self.since})")
        if self.deprecated is not None and self.deprecated < self.since:
            raise ValueError(
                f"deprecated ({self.deprecated}) must be >= since ({self.since})"
            )


class MethodRef(NamedTuple):
    """Canonical key for a method: owner descriptor, name, descriptor."""

    class_descriptor: str
    method_name: str
    signature: str

    def __str__(self):
        return f"{self.class_descriptor}->{self.method_name}{self.signature}"

    @classmethod
    def parse(cls, text: str) -> "MethodRef":
        """Parse ``Lpkg/Cls;->name(args)ret`` and validate it."""
        owner, sep, rest = text.partition("->")
        paren = rest.find("(")
        if not sep or paren <= 0:
            raise ValueError(f"not a method reference: {text!r}")
        ref = cls(owner, rest[:paren], rest[paren:])
        ref.check()
        return ref

    def check(self):
        if not is_class_descriptor(self.class_descriptor):
            raise ValueError(f"bad class descriptor {self.class_descriptor!r}")
        if not is_method_signature(self.signature):
            raise ValueError(f"bad method signature {self.signature!r}")


def is_class_descriptor(text: str) -> bool:
    return len(text) > 2 and text[0] == "L" and text[-1] == ";"


def is_method_signature(text: str) -> bool:
    return _SIGNATURE_RE.match(text) is not None


def descriptor_to_dotted(descriptor: str) -> str:
    """``Lcom/foo/Bar;`` -> ``com.foo.Bar``."""
    if descriptor.startswith("L") and descriptor.endswith(";"):
        descriptor = descriptor[1:-1]
    return descriptor.replace("/", ".")


def dotted_to_descriptor(name: str) -> str:
    return "L" + name.replace(".", "/") + ";"


@dataclass(frozen=True)
class ClassEntry:
    lifecycle: ApiLifecycle
    superclass: Optional[str] = None
    interfaces: tuple = ()


@dataclass(frozen=True, eq=False)
class ApiLevelDb:
    classes: Mapping[str, ClassEntry]
    methods: Mapping[MethodRef, ApiLifecycle]
    fields: Mapping[tuple, ApiLifecycle]
    max_known_level: int
    warnings: Mapping[str, int] = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("classes", "methods", "fields", "warnings"):
            value = getattr(self, name)
            if not isinstance(value, MappingProxyType):
                object.__setattr__(self, name, MappingProxyType(dict(value)))

    def __eq__(self, other):
        if not isinstance(other, ApiLevelDb):
            return NotImplemented
        return (
            self.classes == other.classes
            and self.methods == other.methods
            and self.fields == other.fields
            and self.max_known_level == other.max_known_level
        )

    __hash__ = None

    def __reduce__(self):
        # mapping proxies do not pickle; rebuild from plain dicts
        return (ApiLevelDb, (dict(self.classes), dict(self.methods), dict(self.fields),
                             self.max_known_level, dict(self.warnings)))

    def lookup(self, ref: MethodRef) -> Optional[ApiLifecycle]:
        """Memoized :func:`resolve_lifecycle`."""
        try:
            return self._cache[ref]
        except KeyError:
            result = self._cache[ref] = resolve_lifecycle(self, ref)
            return result

    def superclass_chain(self, descriptor: str) -> list:
        """``descriptor`` followed by its known ancestors (cycle-safe)."""
        chain, seen = [], set()
        while descriptor is not None and descriptor not in seen:
            seen.add(descriptor)
            chain.append(descriptor)
            entry = self.classes.get(descriptor)
            descriptor = entry.superclass if entry else None
        return chain


def _level(attrs, name):
    value = attrs.get(name)
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError:
        return None


def _class_descriptor(name):
    return "L" + name + ";"


def parse_api_versions(xml: bytes) -> ApiLevelDb:
    """Parse an ``api-versions.xml`` document into an :class:`ApiLevelDb`."""
    classes: dict = {}
    methods: dict = {}
    fields: dict = {}
    tally: Counter = Counter()
    max_level = 0
    current = None  # [descriptor, lifecycle, superclass, interfaces]
    depth = 0
    skip_depth = None
    saw_root = False
    members: dict = {}

    def make_lifecycle(attrs, default_since, what):
        nonlocal max_level
        since = _level(attrs, "since")
        deprecated = _level(attrs, "deprecated")
        removed = _level(attrs, "removed")
        for level in (since, deprecated, removed):
            if level is not None and level > max_level:
                max_level = level
        if since is None:
            since = default_since
        if since < 1:
            tally["invalid_since"] += 1
            since = 1
        if removed is not None and removed <= since:
            tally["removed_not_after_since"] += 1
            log.warning("%s: removed=%s not after since=%s; ignoring removal", what, removed, since)
            removed = None
        if deprecated is not None and deprecated < since:
            tally["deprecated_before_since"] += 1
            deprecated = None
        return ApiLifecycle(since, deprecated, removed)

    def start(tag, attrs):
        nonlocal current, depth, skip_depth, saw_root
        depth += 1
        if skip_depth is not None:
            return
        if depth == 1:
            saw_root = tag == "api"
            if not saw_root:
                raise ApiDbError(f"root element is <{tag}>, expected <api>", parser.CurrentByteIndex)
            return
        if tag == "class" and depth == 2:
            name = attrs.get("name")
            if not name:
                tally["class_without_name"] += 1
                skip_depth = depth
                return
            descriptor = _class_descriptor(name)
            if descriptor in classes:
                # last writer wins
                tally["duplicate_class"] += 1
                for ref in members.pop(descriptor, ()):
                    methods.pop(ref, None)
                    fields.pop(ref, None)
            current = [descriptor, make_lifecycle(attrs, 1, descriptor), None, []]
        elif current is not None and depth == 3 and tag in ("method", "field"):
            name = attrs.get("name", "")
            lifecycle = make_lifecycle(attrs, current[1].since, f"{current[0]}->{name}")
            if tag == "method":
                paren = name.find("(")
                if paren <= 0:
                    tally["malformed_method"] += 1
                    return
                key = MethodRef(current[0], name[:paren], name[paren:])
                if key in methods:
                    tally["duplicate_method"] += 1
                methods[key] = lifecycle
            else:
                key = (current[0], name)
                fields[key] = lifecycle
            members.setdefault(current[0], []).append(key)
        elif current is not None and depth == 3 and tag == "extends":
            # Several <extends> entries record superclass changes over time; the
            # last one describes the current hierarchy.
            name = attrs.get("name")
            if name:
                current[2] = _class_descriptor(name)
        elif current is not None and depth == 3 and tag == "implements":
            name = attrs.get("name")
            if name:
                current[3].append(_class_descriptor(name))
        else:
            tally["unknown_element" if tag not in KNOWN_ELEMENTS else "misplaced_element"] += 1
            skip_depth = depth

    def end(tag):
        nonlocal current, depth, skip_depth
        if skip_depth is not None:
            if depth == skip_depth:
                skip_depth = None
        elif depth == 2 and current is not None:
            descriptor, lifecycle, superclass, interfaces = current
            classes[descriptor] = ClassEntry(lifecycle, superclass, tuple(interfaces))
            current = None
        depth -= 1

    parser = expat.ParserCreate()
    parser.buffer_text = True
    parser.StartElementHandler = start
    parser.EndElementHandler = end
    try:
        parser.Parse(xml, True)
    except expat.ExpatError as exc:
        raise ApiDbError(f"malformed XML: {expat.errors.messages[exc.code]}", parser.ErrorByteIndex) from None
    if not saw_root:
        raise ApiDbError("document has no <api> root", 0)

    for key, count in tally.items():
        log.warning("api-versions: %d x %s", count, key)
    return ApiLevelDb(classes, methods, fields, max(max_level, 1), dict(tally))


def load_api_db(path) -> ApiLevelDb:
    with open(os.fspath(path), "rb") as fh:
        return parse_api_versions(fh.read())


def resolve_lifecycle(
    db: ApiLevelDb, ref: MethodRef, warnings: Optional[list] = None
) -> Optional[ApiLifecycle]:
    """Find the lifecycle of ``ref`` as declared on its class or an ancestor.

    Lookup order is the named class, its superclass chain up to the root,
    then interfaces breadth-first in declaration order.  Returns ``None`` when
    no framework declaration exists (e.g. the app's own classes).
    """
    classes = db.classes
    methods = db.methods
    if ref.class_descriptor not in classes:
        return None
    chain = []
    seen = set()
    descriptor = ref.class_descriptor
    while descriptor is not None:
        if descriptor in seen:
            msg = f"cyclic superclass chain at {descriptor} while resolving {ref}"
            log.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            return None
        seen.add(descriptor)
        chain.append(descriptor)
        hit = methods.get(MethodRef(descriptor, ref.method_name, ref.signature))
        if hit is not None:
            return hit
        entry = classes.get(descriptor)
        descriptor = entry.superclass if entry is not None else None

    queue = deque()
    for descriptor in chain:
        entry = classes.get(descriptor)
        if entry is not None:
            queue.extend(entry.interfaces)
    visited = set()
    while queue:
        descriptor = queue.popleft()
        if descriptor in visited:
            continue
        visited.add(descriptor)
        hit = methods.get(MethodRef(descriptor, ref.method_name, ref.signature))
        if hit is not None:
            return hit
        entry = classes.get(descriptor)
        if entry is not None:
            queue.extend(entry.interfaces)
    return None


def effective_span(lifecycle: ApiLifecycle, sentinel: int = SENTINEL) -> tuple:
    """(minLevel, maxLevel) contributed by one API; unremoved APIs get ``sentinel``."""
    return lifecycle.since, lifecycle.removed if lifecycle.removed is not None else sentinel


def level_histograms(db: ApiLevelDb, kinds: Iterable[str] = ("method",)) -> dict:
    """Added / deprecated / removed counts per API level.

    ``added`` starts at level 2; level-1 entries formed the initial SDK.
    """
    lifecycles = []
    kinds = set(kinds)
    if "class" in kinds:
        lifecycles.extend(entry.lifecycle for entry in db.classes.values())
    if "method" in kinds:
        lifecycles.extend(db.methods.values())
    if "field" in kinds:
        lifecycles.extend(db.fields.values())
    added, deprecated, removed = Counter(), Counter(), Counter()
    for lc in lifecycles:
        if lc.since >= 2:
            added[lc.since] += 1
        if lc.deprecated is not None:
            deprecated[lc.deprecated] += 1
        if lc.removed is not None:
            removed[lc.removed] += 1
    return {
        "total": len(lifecycles),
        "added": dict(sorted(added.items())),
        "deprecated": dict(sorted(deprecated.items())),
        "removed": dict(sorted(removed.items())),
    }
