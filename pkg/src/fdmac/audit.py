"""Trace auditing: independent checks over the event stream of a run.

The auditor is a trace sink. Pass it to a simulator instead of a list and
it checks each row as it arrives, so long runs need no trace in memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field


def _fields(detail: str) -> dict:
    return dict(kv.split("=", 1) for kv in detail.split())


@dataclass
class TraceAuditor:
    """Flags any transmission that starts while its node is receiving.

    A node is receiving from the moment an incoming frame starts until
    ``until`` (frame end for the addressee, header end for others). A
    transmission at exactly the start of a reception is synchronous and
    allowed; one strictly inside an interval is a violation.
    """

    violations: list = field(default_factory=list)
    dirty_starts: int = 0
    tx_starts: int = 0
    rows: int = 0
    last_time: int = 0
    time_reversals: int = 0
    _rx: dict = field(default_factory=dict)  # node -> list[(start, until)]

    def append(self, row) -> None:
        t, node, event, detail = row
        self.rows += 1
        if t < self.last_time:
            self.time_reversals += 1
        self.last_time = t
        if event == "rx_start":
            f = _fields(detail)
            until = int(f["until"])
            ivs = self._rx.setdefault(node, [])
            ivs[:] = [iv for iv in ivs if iv[1] > t]
            ivs.append((t, until))
            if f["mode"] == "dirty" and int(f["dst"]) == node:
                self.dirty_starts += 1
        elif event == "tx_start":
            self.tx_starts += 1
            for start, until in self._rx.get(node, ()):
                if start < t < until:
                    self.violations.append((t, node, start, until))
                    break

    def extend(self, rows) -> "TraceAuditor":
        for r in rows:
            self.append(r)
        return self

    @property
    def ok(self) -> bool:
        return not self.violations and not self.time_reversals


def parse_trace_line(line: str, names) -> tuple:
    t, node, event, detail = line.split(",", 3)
    return int(t), names.index(node), event, detail


def audit_rows(rows, names=None) -> TraceAuditor:
    """Audit tuples from a run, or ``time_us,node,event,detail`` strings."""
    aud = TraceAuditor()
    for r in rows:
        if isinstance(r, str):
            r = parse_trace_line(r, names)
        aud.append(r)
    return aud
