"""Framework call extraction, SDK_INT guard matching and library liveness.

A call site is *valid* when it is live (not in uninvoked library code) and
no ``Build.VERSION.SDK_INT`` comparison in the same method restricts it to
platform levels where the API exists.

Guards are matched on the decoded instruction stream by offset order only;
no control-flow graph is built.  For ``if-<op> vA, vB, :T`` at offset ``g``
(forward branch, one operand holding SDK_INT and the other a constant):

* the fall-through range ``[g + len, T)`` runs when the condition is false;
* if the instruction ending at ``T`` is a forward ``goto :E``, the range
  ``[T, E)`` is the taken arm and runs when the condition is true.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

from .apidb import ApiLevelDb, ApiLifecycle, MethodRef, descriptor_to_dotted
from .dex.insns import CONST, IF_TEST, INVOKE, MOVE, SGET_SDK_INT

GUARD_SANE_RANGE = (1, 100)

_SWAP = {"lt": "gt", "gt": "lt", "le": "ge", "ge": "le", "eq": "eq", "ne": "ne"}
_NEGATE = {"lt": "ge", "ge": "lt", "gt": "le", "le": "gt", "eq": "ne", "ne": "eq"}

_SDK = object()  # register-state marker for "holds SDK_INT"
_new = tuple.__new__


def min_level_satisfying(op: str, k: int) -> Optional[int]:
    """Smallest platform level L >= 1 with ``L op k`` true; None if none exists."""
    if op == "ge":
        return max(k, 1)
    if op == "gt":
        return max(k + 1, 1)
    if op == "eq":
        return k if k >= 1 else None
    if op == "lt":
        return 1 if k > 1 else None
    if op == "le":
        return 1 if k >= 1 else None
    if op == "ne":
        return 2 if k == 1 else 1
    raise ValueError(f"unknown comparison {op!r}")


def guard_protects(op: str, k: int, since: int) -> bool:
    """True if code running only when ``SDK_INT op k`` never runs below ``since``."""
    low = min_level_satisfying(op, k)
    return low is None or low >= since


@dataclass(frozen=True)
class GuardInfo:
    offset: int
    comparison: str
    threshold: int
    protects_call: bool

    @property
    def sane(self) -> bool:
        lo, hi = GUARD_SANE_RANGE
        return lo <= self.threshold <= hi


class ApiCallSite(NamedTuple):
    # a tuple rather than a frozen dataclass: large apps create hundreds of thousands
    ref: MethodRef
    lifecycle: ApiLifecycle
    owner_class: str
    owner_method: MethodRef
    offset: int
    guarded_by: Optional[GuardInfo] = None
    live: bool = True
    dex_index: int = 0

    @property
    def protected(self) -> bool:
        return self.guarded_by is not None and self.guarded_by.protects_call

    @property
    def valid(self) -> bool:
        """Input to the consistency checks: live and not protected by a guard."""
        return self.live and not self.protected


@dataclass(frozen=True)
class VulnCallSite:
    rule_id: str
    call: "RawCallSite"
    origin: str  # "app_own" or "third_party"
    library_class: Optional[str] = None
    callers: tuple = ()


@dataclass(frozen=True)
class RawCallSite:
    """An invoke regardless of whether its target is a known framework API."""

    ref: MethodRef
    owner_class: str
    owner_method: MethodRef
    offset: int
    live: bool = True
    dex_index: int = 0


# -- liveness -------------------------------------------------------------

def is_live_name(dotted: str, roots, package: Optional[str]) -> bool:
    if package and dotted.startswith(package + "."):
        return True
    for root in roots:
        if (dotted == root or dotted.startswith(root + ".") or dotted.startswith(root + "$")
                or root.startswith(dotted + ".")):
            return True
    return False


def liveness_mask(images, roots, package: Optional[str]) -> dict:
    """Class descriptor -> live flag for every class defined in ``images``."""
    roots = tuple(sorted(roots))
    mask = {}
    for image in images:
        for cls in image.class_defs:
            if cls.descriptor not in mask:
                mask[cls.descriptor] = is_live_name(descriptor_to_dotted(cls.descriptor), roots, package)
    return mask


# -- guard regions --------------------------------------------------------

def guard_regions(instructions) -> list:
    """[(start, end, op, k, guard_offset)]: code in [start, end) runs only when SDK_INT op k."""
    regs = {}
    pending = []  # (if insn, normalized op, k)
    for insn in instructions:
        kind = insn.kind
        if kind == IF_TEST:
            if insn.b is not None and insn.target is not None and insn.target > insn.offset:
                va, vb = regs.get(insn.a), regs.get(insn.b)
                if va is _SDK and isinstance(vb, int) and vb is not _SDK:
                    pending.append((insn, insn.op, vb))
                elif vb is _SDK and isinstance(va, int):
                    pending.append((insn, _SWAP[insn.op], va))
            continue
        if kind == SGET_SDK_INT:
            regs[insn.a] = _SDK
        elif kind == CONST:
            if insn.wide:
                regs.pop(insn.a, None)
                regs.pop(insn.a + 1, None)
            elif insn.value is None:
                regs.pop(insn.a, None)
            else:
                regs[insn.a] = insn.value
        elif kind == MOVE:
            if insn.wide:
                regs.pop(insn.a, None)
                regs.pop(insn.a + 1, None)
            elif insn.b in regs:
                regs[insn.a] = regs[insn.b]
            else:
                regs.pop(insn.a, None)
        elif insn.a is not None and kind != INVOKE:
            regs.pop(insn.a, None)
            if insn.wide:
                regs.pop(insn.a + 1, None)
    if not pending:
        return []

    ends_at = {i.offset + i.length: i for i in instructions}
    regions = []
    for insn, op, k in pending:
        start, target = insn.offset + insn.length, insn.target
        if start < target:
            regions.append((start, target, _NEGATE[op], k, insn.offset))
        before = ends_at.get(target)
        if before is not None and before.op == "goto" and before.target is not None \
                and before.target > target:
            regions.append((target, before.target, op, k, insn.offset))
    return regions


def _guard_for(offset, since, regions) -> Optional[GuardInfo]:
    """Strongest guard covering ``offset``; nested guards combine by conjunction."""
    return _strongest(since, [r for r in regions if r[0] <= offset < r[1]])


def _strongest(since, covering) -> Optional[GuardInfo]:
    # highest lowest-reachable level wins; ties go to the earliest guard instruction
    best = None
    for _start, _end, op, k, goff in covering:
        low = min_level_satisfying(op, k)
        key = (float("inf") if low is None else low, -goff, op, k)
        if best is None or key > best:
            best = key
    if best is None:
        return None
    low, neg_off, op, k = best
    return GuardInfo(-neg_off, op, k, low >= since)


def _guards_for_calls(found, regions) -> list:
    """:func:`_guard_for` for every (insn, lifecycle) in offset order, by one sweep."""
    regions = sorted(regions)
    out = []
    active = []
    i = 0
    for insn, lc in found:
        offset = insn.offset
        while i < len(regions) and regions[i][0] <= offset:
            active.append(regions[i])
            i += 1
        if active:
            active = [r for r in active if r[1] > offset]
        out.append(_strongest(lc.since, active) if active else None)
    return out


# -- extraction -----------------------------------------------------------

class _Resolver:
    """Resolve invoke targets against the db, lifting refs that name app classes
    to the first framework ancestor unless an app class declares the method."""

    def __init__(self, images, db: ApiLevelDb):
        self.db = db
        self.app_super = {}
        self.app_methods = {}
        for image in images:
            for cls in image.class_defs:
                if cls.descriptor in self.app_super:
                    continue
                self.app_super[cls.descriptor] = cls.superclass
                self.app_methods[cls.descriptor] = {(m.ref.method_name, m.ref.signature)
                                                    for m in cls.methods}
        self.cache = {}

    def framework_target(self, ref: MethodRef) -> Optional[MethodRef]:
        classes = self.db.classes
        cls = ref.class_descriptor
        seen = set()
        key = (ref.method_name, ref.signature)
        while cls is not None and cls not in classes:
            if cls in seen or cls not in self.app_super:
                return None
            seen.add(cls)
            if key in self.app_methods[cls]:
                return None
            cls = self.app_super[cls]
        if cls is None:
            return None
        return ref if cls == ref.class_descriptor else MethodRef(cls, ref.method_name, ref.signature)

    def resolve(self, ref: MethodRef) -> Optional[ApiLifecycle]:
        try:
            return self.cache[ref]
        except KeyError:
            pass
        target = self.framework_target(ref)
        result = self.db.lookup(target) if target is not None else None
        self.cache[ref] = result
        return result

    def ancestors(self, descriptor: str) -> list:
        """App superclass chain followed by the db chain (cycle-safe)."""
        out, seen = [], set()
        cls = descriptor
        while cls is not None and cls not in seen and cls in self.app_super and cls not in self.db.classes:
            seen.add(cls)
            out.append(cls)
            cls = self.app_super[cls]
        if cls is not None and cls not in seen:
            out.extend(self.db.superclass_chain(cls))
        return out


def extract_valid_calls(images, mask: dict, db: ApiLevelDb, resolver: Optional[_Resolver] = None) -> list:
    """Every framework invoke as an ApiCallSite, in (dex, class, method, offset) order.

    Guarded and dead sites are returned too; filter on ``site.valid``.
    """
    resolver = resolver or _Resolver(images, db)
    sites = []
    for dex_index, image in enumerate(images, 1):
        for cls in image.class_defs:
            live = mask.get(cls.descriptor, True)
            for method in cls.methods:
                found = []
                for insn in method.invokes:
                    lc = resolver.resolve(insn.ref)
                    if lc is not None:
                        found.append((insn, lc))
                if not found:
                    continue
                # only methods that read SDK_INT can hold guards; the rest skip the full decode
                regions = guard_regions(method.instructions) if method.reads_sdk_int else None
                guards = _guards_for_calls(found, regions) if regions else [None] * len(found)
                owner, mref = cls.descriptor, method.ref
                for (insn, lc), guard in zip(found, guards):
                    sites.append(_new(ApiCallSite, (insn.ref, lc, owner, mref, insn.offset, guard, live, dex_index)))
    return sites


def _dot_prefixed(descriptor: str, package: Optional[str]) -> bool:
    return bool(package) and descriptor_to_dotted(descriptor).startswith(package + ".")


def _rule_matches(rule, ref: MethodRef, resolver: _Resolver) -> bool:
    if ref.method_name != rule.method or ref.signature != rule.signature:
        return False
    if ref.class_descriptor == rule.class_descriptor:
        return True
    return rule.class_descriptor in resolver.ancestors(ref.class_descriptor)


def find_vulnerable_calls(images, mask: dict, rules, package: Optional[str],
                          db: ApiLevelDb, resolver: Optional[_Resolver] = None) -> list:
    """Rule-matching invokes with their origin (app code or a library class).

    A site in a dead class survives only if some other class invokes the
    method that contains it; otherwise it is dropped as unused library code.
    """
    resolver = resolver or _Resolver(images, db)
    by_name = {}
    for rule in rules:
        by_name.setdefault((rule.method, rule.signature), []).append(rule)
    if not by_name:
        return []

    matched = []
    for dex_index, image in enumerate(images, 1):
        for cls in image.class_defs:
            for method in cls.methods:
                for insn in method.invokes:
                    if not isinstance(insn.ref, MethodRef):
                        continue
                    candidates = by_name.get((insn.ref.method_name, insn.ref.signature))
                    if not candidates:
                        continue
                    for rule in candidates:
                        if _rule_matches(rule, insn.ref, resolver):
                            site = RawCallSite(insn.ref, cls.descriptor, method.ref, insn.offset,
                                               mask.get(cls.descriptor, True), dex_index)
                            matched.append((rule, site))
    if not matched:
        return []

    wanted = {site.owner_method for _, site in matched}
    callers = {ref: set() for ref in wanted}
    for image in images:
        for cls in image.class_defs:
            for method in cls.methods:
                for insn in method.invokes:
                    if insn.ref in callers and insn.ref.class_descriptor != cls.descriptor:
                        callers[insn.ref].add(cls.descriptor)

    out = []
    for rule, site in matched:
        who = tuple(sorted(callers[site.owner_method]))
        if not site.live and not who:
            continue
        if _dot_prefixed(site.owner_class, package) or any(_dot_prefixed(c, package) for c in who):
            out.append(VulnCallSite(rule.rule_id, site, "app_own", None, who))
        else:
            out.append(VulnCallSite(rule.rule_id, site, "third_party", site.owner_class, who))
    return out
