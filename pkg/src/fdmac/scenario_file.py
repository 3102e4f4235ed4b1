"""Scenario files: sectioned ``key = value`` text.

Example::

    [topology]
    nodes = AP, M1, M2
    ap = AP
    edges = AP-M1, AP-M2

    [traffic]
    AP = saturated; dst = M1, M2; payload = 1500
    M1 = poisson; rate = 200; dst = AP; payload = 500
    M2 = list; at = 1000, 5000; dst = AP

    [mac]
    bufdepth = 2
    p_pick = 0.5

    [phy]
    snr_db = 40

    [run]
    seed = 1
    duration_us = 1000000
    repeats = 1

``#`` starts a comment. Unknown sections and keys are errors, reported with
their line and column. Everything except [topology] and ``seed`` is optional;
[mac] and [phy] accept every ``MacParams``/``PhyParams`` field.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .engine import ConfigError, PhyParams, Scenario, TrafficSpec
from .mac import MacParams
from .medium import Topology

SECTIONS = ("topology", "traffic", "mac", "phy", "run")
TOPOLOGY_KEYS = ("nodes", "ap", "edges")
RUN_KEYS = ("seed", "duration_us", "repeats")
TRAFFIC_KEYS = ("dst", "payload", "rate", "at")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(raw: str, typ, key: str, line: int, col: int):
    try:
        if typ is bool or typ == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        if typ in ("float | None",):
            return None if raw.lower() == "none" else float(raw)
        return raw
    except ValueError:
        raise ConfigError(key, f"bad value {raw!r}", line, col) from None


def _split_list(raw: str) -> list[str]:
    return [x.strip() for x in raw.split(",") if x.strip()]


def _traffic(node: str, raw: str, line: int, col: int) -> TrafficSpec:
    parts = raw.split(";")
    kind = parts[0].strip()
    opts: dict = {}
    offset = col + len(parts[0]) + 1
    for part in parts[1:]:
        if "=" not in part:
            raise ConfigError(node, f"expected key=value in {part.strip()!r}", line, offset)
        k, v = (x.strip() for x in part.split("=", 1))
        kcol = offset + len(part) - len(part.lstrip())
        if k not in TRAFFIC_KEYS:
            raise ConfigError(k, f"unknown traffic key {k!r}", line, kcol)
        opts[k] = (v, kcol)
        offset += len(part) + 1
    try:
        dsts = tuple(_split_list(opts["dst"][0])) if "dst" in opts else ()
        payload = _coerce(opts["payload"][0], int, "payload", line, opts["payload"][1]) if "payload" in opts else 1500
        rate = _coerce(opts["rate"][0], float, "rate", line, opts["rate"][1]) if "rate" in opts else 0.0
        at = tuple(_coerce(x, int, "at", line, opts["at"][1]) for x in _split_list(opts["at"][0])) if "at" in opts else ()
        return TrafficSpec(kind, dsts, payload, rate, at)
    except ConfigError as e:
        if e.line is None:
            raise ConfigError(e.field, e.message, line, col) from None
        raise


def parse_scenario(text: str) -> Scenario:
    section = None
    seen: dict = {s: {} for s in SECTIONS}
    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        col = len(line) - len(line.lstrip()) + 1
        stripped = line.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("section", f"unterminated header {stripped!r}", lineno, col)
            name = stripped[1:-1].strip()
            if name not in SECTIONS:
                raise ConfigError(name, f"unknown section [{name}]", lineno, col)
            section = name
            continue
        if section is None:
            raise ConfigError("section", "key outside any section", lineno, col)
        if "=" not in stripped:
            raise ConfigError(stripped, "expected key = value", lineno, col)
        key, value = (x.strip() for x in stripped.split("=", 1))
        vcol = line.index("=") + 2 + (len(line.split("=", 1)[1]) - len(line.split("=", 1)[1].lstrip()))
        if key in seen[section]:
            raise ConfigError(key, "duplicate key", lineno, col)
        seen[section][key] = (value, lineno, col, vcol)
    return _build(seen)


def _build(seen: dict) -> Scenario:
    topo = seen["topology"]
    for k, (_, ln, col, _v) in topo.items():
        if k not in TOPOLOGY_KEYS:
            raise ConfigError(k, f"unknown key {k!r} in [topology]", ln, col)
    for k in ("nodes", "ap"):
        if k not in topo:
            raise ConfigError(k, "missing from [topology]")
    names = _split_list(topo["nodes"][0])
    edges = []
    if "edges" in topo:
        value, ln, _c, vcol = topo["edges"]
        for e in _split_list(value):
            if e.count("-") != 1:
                raise ConfigError("edges", f"bad edge {e!r}, expected A-B", ln, vcol)
            edges.append(tuple(x.strip() for x in e.split("-")))
    try:
        topology = Topology.from_edges(names, topo["ap"][0], edges)
    except ValueError as e:
        _, ln, col, _v = topo.get("edges", topo["nodes"])
        raise ConfigError("topology", str(e), ln, col) from None

    traffic = {}
    for node, (value, ln, col, vcol) in seen["traffic"].items():
        if node not in names:
            raise ConfigError(node, f"unknown node {node!r} in [traffic]", ln, col)
        traffic[node] = _traffic(node, value, ln, vcol)

    mac_types = {f.name: f.type for f in dataclasses.fields(MacParams)}
    mac_kw = {}
    for k, (value, ln, col, vcol) in seen["mac"].items():
        if k not in mac_types:
            raise ConfigError(k, f"unknown key {k!r} in [mac]", ln, col)
        mac_kw[k] = _coerce(value, mac_types[k], k, ln, vcol)
    phy_types = {f.name: f.type for f in dataclasses.fields(PhyParams)}
    phy_kw = {}
    for k, (value, ln, col, vcol) in seen["phy"].items():
        if k not in phy_types:
            raise ConfigError(k, f"unknown key {k!r} in [phy]", ln, col)
        phy_kw[k] = _coerce(value, phy_types[k], k, ln, vcol)
    run_kw = {}
    for k, (value, ln, col, vcol) in seen["run"].items():
        if k not in RUN_KEYS:
            raise ConfigError(k, f"unknown key {k!r} in [run]", ln, col)
        run_kw[k] = _coerce(value, int, k, ln, vcol)
    try:
        mac = MacParams(**mac_kw)
    except ValueError as e:
        ln, col = _locate(seen["mac"], str(e))
        raise ConfigError("mac", str(e), ln, col) from None
    try:
        return Scenario(topology, traffic, mac, PhyParams(**phy_kw), **run_kw)
    except ConfigError as e:
        if e.line is None:
            if e.field in seen["run"]:
                _, ln, col, _v = seen["run"][e.field]
                raise ConfigError(e.field, e.message, ln, col) from None
            if e.field in ("dst", "traffic"):
                ln, col = _locate(seen["traffic"], e.message)
                raise ConfigError(e.field, e.message, ln, col) from None
        raise


def _locate(entries: dict, message: str):
    """Position of the entry a semantic error most likely refers to."""
    words = set(message.replace("'", " ").replace("=", " ").split())
    for key, (value, ln, col, vcol) in entries.items():
        if key in words:
            return ln, col
    for key, (value, ln, col, vcol) in entries.items():
        if words & set(value.replace(",", " ").replace(";", " ").split()):
            return ln, vcol
    if entries:
        _, ln, col, _v = next(iter(entries.values()))
        return ln, col
    return None, None


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text())
