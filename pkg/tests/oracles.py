"""Independent reference implementations used as test oracles.

These deliberately use different machinery from the package under test
(ElementTree instead of expat, zipfile instead of the custom reader,
explicit enumeration instead of closed-form rules).
"""

import xml.etree.ElementTree as ET


def api_xml_counts(path_or_bytes):
    """(classes, methods, fields) counted by walking the XML tree."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        root = ET.fromstring(path_or_bytes)
    else:
        root = ET.parse(path_or_bytes).getroot()
    classes, methods, fields = set(), set(), set()
    for cls in root.findall("class"):
        name = cls.get("name")
        classes.add(name)
        for m in cls.findall("method"):
            methods.add((name, m.get("name")))
        for f in cls.findall("field"):
            fields.add((name, f.get("name")))
    return len(classes), len(methods), len(fields)


def api_xml_lookup(path_or_bytes, cls, member):
    """``since`` of a class (member None) or of one of its own members, by tree walk."""
    root = ET.parse(path_or_bytes).getroot() if not isinstance(path_or_bytes, bytes) \
        else ET.fromstring(path_or_bytes)
    for c in root.findall("class"):
        if c.get("name") != cls:
            continue
        class_since = int(c.get("since", "1"))
        if member is None:
            return class_since
        for m in list(c.findall("method")) + list(c.findall("field")):
            if m.get("name") == member:
                return int(m.get("since", class_since))
    return None


def compare_by_enumeration(op, k, level):
    return {"eq": level == k, "ne": level != k, "lt": level < k, "ge": level >= k,
            "gt": level > k, "le": level <= k}[op]


def guard_protects_by_enumeration(op, k, since, top=200):
    """A guarded call is safe if no level in [1, since) satisfies the guard."""
    return not any(compare_by_enumeration(op, k, level) for level in range(1, min(since, top + 1)))


def expected_valid_calls(plan, package, registered, since_of, all_live=False):
    """Brute-force valid-call set of a randomly planned app, as sorted (owner descriptor, ref) pairs.

    A call is live when its class sits under the package, is registered, or
    everything is treated as live; it is protected when the lowest level that
    can reach it already provides the API.
    """
    out = []
    for call in plan:
        live = all_live or call.owner.startswith(package + ".") or call.owner in registered
        protected = call.guard is not None and call.lowest_level >= since_of[call.ref]
        if live and not protected:
            out.append(("L" + call.owner.replace(".", "/") + ";", str(call.ref)))
    return sorted(out)
