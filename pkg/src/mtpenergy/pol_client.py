"""Orchestration-side client: import the manifest, monitor the PEA, report.

Counter deltas are the authoritative energy figures. The trapezoidal
integral of the matching power node is computed alongside as a cross-check
and its relative gap is reported, never used to correct the counter.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import socket
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from mtpenergy import caex_document as caex, tagbus
from mtpenergy.enrg_model import ENERGY_TO_WH, POWER_TO_W, MidRegistry, default_mid_registry, is_power_unit
from mtpenergy.errors import MtpEnergyError, ParseError
from mtpenergy.mtp_injector import (
    MeasurementEntry,
    MeasurementRegistry,
    ViewEntry,
    extract_measurement_registry,
    validate_energy_mtp,
)
from mtpenergy.tagbus import Ack, Browse, BrowseResult, Error, Hello, Quality, Read, Reset, Subscribe, Update

log = logging.getLogger(__name__)

DYNAMIC_ATTRIBUTES = ("V", "VbR")
CSV_COLUMNS = ["scope", "target", "resource", "energy", "unit", "avg_power", "samples", "gap_rel"]
EPS = 1e-12


class ClientError(MtpEnergyError):
    pass


class ConnectFailure(ClientError):
    pass


class ValidationFailed(ClientError):
    pass


class InsufficientSamples(ClientError):
    pass


ProtocolError = tagbus.ProtocolError


# -- sample log ------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    ts: str
    t_ms: int
    value: tagbus.Value
    quality: Quality


@dataclass
class SampleLog:
    samples: dict[str, list[Sample]] = field(default_factory=dict)
    order: list[tuple[str, Sample]] = field(default_factory=list)

    def add(self, node: str, ts: str, value: tagbus.Value, quality: Quality) -> bool:
        """Append a sample; returns False (and drops it) unless ts is strictly newer."""
        sample = Sample(ts, tagbus.ts_ms(ts), value, quality)
        series = self.samples.setdefault(node, [])
        if series and sample.t_ms <= series[-1].t_ms:
            return False
        series.append(sample)
        self.order.append((node, sample))
        return True

    def __len__(self) -> int:
        return len(self.order)

    def get(self, node: str) -> list[Sample]:
        return self.samples.get(node, [])

    def to_ndjson(self) -> str:
        lines = [
            json.dumps({"node": n, "ts": s.ts, "value": s.value, "q": s.quality.value},
                       separators=(",", ":"), ensure_ascii=False)
            for n, s in self.order
        ]
        return "".join(line + "\n" for line in lines)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ndjson(), encoding="utf-8")

    @classmethod
    def from_ndjson(cls, text: str, registry: MeasurementRegistry | None = None) -> SampleLog:
        out = cls()
        known = set(registry.node_ids) if registry is not None else None
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                node, ts, value, q = d["node"], d["ts"], d["value"], Quality(d["q"])
                tagbus.parse_ts(ts)
            except (ValueError, KeyError, TypeError, tagbus.ProtocolError) as exc:
                raise ParseError(f"sample log line {lineno}: {exc}") from exc
            if known is not None and node not in known:
                raise ParseError(f"sample log line {lineno}: node {node!r} is not in the manifest")
            out.add(node, ts, value, q)
        return out

    @classmethod
    def load(cls, path: str | Path, registry: MeasurementRegistry | None = None) -> SampleLog:
        return cls.from_ndjson(Path(path).read_text(encoding="utf-8"), registry)


# -- monitoring ------------------------------------------------------------


class TagClient:
    """Blocking line-protocol client."""

    def __init__(self, endpoint: str, timeout: float = 5.0) -> None:
        host, _, port = endpoint.rpartition(":")
        try:
            self.sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
        except (OSError, ValueError) as exc:
            raise ConnectFailure(f"cannot connect to {endpoint}: {exc}") from exc
        self.stream = self.sock.makefile("rb")

    def send(self, msg: tagbus.TagMessage) -> None:
        self.sock.sendall(tagbus.encode_message(msg))

    def recv(self) -> tagbus.TagMessage | None:
        """Next message, or None at end of stream."""
        try:
            line = self.stream.readline(tagbus.MAX_FRAME_BYTES + 1)
        except socket.timeout as exc:
            raise ProtocolError("timed out waiting for the server") from exc
        except OSError:
            return None
        if not line:
            return None
        try:
            return tagbus.decode_message(line.rstrip(b"\n"))
        except tagbus.ProtocolError as exc:
            raise ProtocolError(f"bad frame {line[:80]!r}: {exc}") from exc

    def close(self) -> None:
        try:
            self.stream.close()
            self.sock.close()
        except OSError:
            pass

    def __enter__(self) -> TagClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def load_registry(manifest_path: str | Path, mids: MidRegistry) -> MeasurementRegistry:
    doc = caex.load_caex(manifest_path)
    report = validate_energy_mtp(doc, mids)
    if not report.ok:
        raise ValidationFailed(f"{manifest_path}: {len(report.errors)} validation error(s)\n{report.render()}")
    return extract_measurement_registry(doc, mids)


def _expect(client: TagClient, kind: type) -> tagbus.TagMessage:
    msg = client.recv()
    if msg is None:
        raise ProtocolError(f"connection closed while waiting for {kind.op}")
    if isinstance(msg, Error):
        raise ProtocolError(f"server error {msg.code}: {msg.msg}")
    if not isinstance(msg, kind):
        raise ProtocolError(f"expected {kind.op}, got {msg.op}")
    return msg


def monitor(
    manifest_path: str | Path,
    endpoint: str,
    ticks: int | None = None,
    duration: float | None = None,
    interval_ms: int = 100,
    log_path: str | Path | None = None,
    resets: dict[str, int] | None = None,
    mids: MidRegistry | None = None,
    timeout: float = 10.0,
) -> SampleLog:
    """Subscribe to every dynamic node of the manifest and log the updates.

    Static attributes are read once at the start. The session ends at end of
    stream, after *ticks* subscription intervals of simulated time, or after
    *duration* wall seconds. *resets* maps a node to the interval count at
    which a counter reset is requested.
    """
    if ticks is None and duration is None:
        raise ValueError("monitor needs a tick budget or a duration")
    mids = mids if mids is not None else default_mid_registry()
    registry = load_registry(manifest_path, mids)
    dynamic = [it.node_id for _, _, it in registry.items() if it.attribute_name in DYNAMIC_ATTRIBUTES]
    static = [it.node_id for _, _, it in registry.items() if it.attribute_name not in DYNAMIC_ATTRIBUTES]
    pending_resets = dict(resets or {})
    samples = SampleLog()
    deadline = time.monotonic() + duration if duration is not None else None

    with TagClient(endpoint, timeout) as client:
        client.send(Hello("pol", tagbus.PROTO_VERSION))
        hello = _expect(client, Hello)
        if hello.proto != tagbus.PROTO_VERSION:
            raise ProtocolError(f"server speaks protocol {hello.proto}, expected {tagbus.PROTO_VERSION}")
        client.send(Browse())
        served = {i.node for i in _expect(client, BrowseResult).items}
        missing = sorted(set(registry.node_ids) - served)
        if missing:
            raise ProtocolError(f"server does not serve {len(missing)} manifest node(s), e.g. {missing[0]}")

        if static:
            client.send(Read(tuple(static), id=1))
            while True:
                msg = client.recv()
                if msg is None:
                    raise ProtocolError("connection closed during initial read")
                if isinstance(msg, Error):
                    raise ProtocolError(f"server error {msg.code}: {msg.msg}")
                if isinstance(msg, Ack) and msg.id == 1:
                    break
                if isinstance(msg, Update):
                    samples.add(msg.node, msg.ts, msg.value, msg.q)

        client.send(Subscribe(tuple(dynamic), interval_ms, id=2))
        start_ms: int | None = None
        next_id = 3
        while True:
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                client.sock.settimeout(min(timeout, remaining))
            try:
                msg = client.recv()
            except ProtocolError:
                if deadline is not None and time.monotonic() >= deadline:
                    break
                raise
            if msg is None:
                break
            if isinstance(msg, Error):
                raise ProtocolError(f"server error {msg.code}: {msg.msg}")
            if not isinstance(msg, Update):
                continue
            t = tagbus.ts_ms(msg.ts)
            if start_ms is None:
                start_ms = t
            elapsed = (t - start_ms) // interval_ms
            if ticks is not None and t - start_ms > ticks * interval_ms:
                break
            samples.add(msg.node, msg.ts, msg.value, msg.q)
            for node, at in list(pending_resets.items()):
                if elapsed >= at:
                    client.send(Reset(node, id=next_id))
                    next_id += 1
                    del pending_resets[node]

    if log_path is not None:
        samples.save(log_path)
    return samples


# -- integration and reports -----------------------------------------------


def _as_ms(t: int | str | None) -> int | None:
    if t is None or isinstance(t, int):
        return t
    return tagbus.ts_ms(t)


def integrate_energy(
    log: SampleLog,
    power_node: str,
    t0: int | str | None = None,
    t1: int | str | None = None,
    power_unit: str = "W",
    energy_unit: str = "Wh",
) -> float:
    """Trapezoidal integral of *power_node* over [t0, t1] in *energy_unit*.

    Only Good samples are used; gaps left by excluded samples are bridged by
    the straight line between their neighbours.
    """
    lo, hi = _as_ms(t0), _as_ms(t1)
    pts = [
        (s.t_ms, float(s.value)) for s in log.get(power_node)
        if s.quality is Quality.Good and (lo is None or s.t_ms >= lo) and (hi is None or s.t_ms <= hi)
    ]
    if len(pts) < 2:
        raise InsufficientSamples(f"{power_node}: {len(pts)} usable sample(s) in window, need 2")
    area = math.fsum((t1_ - t0_) * (p0 + p1) / 2.0 for (t0_, p0), (t1_, p1) in zip(pts, pts[1:]))
    return area * POWER_TO_W[power_unit] / 3.6e6 / ENERGY_TO_WH[energy_unit]


def _latest(series: list[Sample], t_ms: int) -> float | None:
    found = None
    for s in series:
        if s.t_ms > t_ms:
            break
        found = float(s.value)
    return found


def counter_delta(log: SampleLog, view: ViewEntry) -> tuple[float, list[Sample]]:
    """Energy registered by a counter view over the log, across resets.

    A reset shows as a drop of the counter or a change of its VbR node; the
    segment before it ends at the reported VbR (the exact pre-reset reading).
    """
    series = [s for s in log.get(view.value_node) if s.quality is not Quality.Stale]
    if not series:
        return 0.0, series
    vbr = [s for s in log.get(view.item("VbR").node_id) if s.quality is not Quality.Stale]
    total = 0.0
    seg_start = float(series[0].value)
    prev = series[0]
    for s in series[1:]:
        vbr_now, vbr_prev = _latest(vbr, s.t_ms), _latest(vbr, prev.t_ms)
        if float(s.value) < float(prev.value) or vbr_now != vbr_prev:
            before = vbr_now if vbr_now is not None and vbr_now != vbr_prev else float(prev.value)
            total += before - seg_start
            seg_start = 0.0
        prev = s
    total += float(prev.value) - seg_start
    return total, series


@dataclass(frozen=True)
class ScopeEntry:
    scope: str
    target: str
    resource: str
    energy: float
    unit: str
    average_power: float
    sample_count: int
    coverage: tuple[str, str]
    gap_rel: float | None


@dataclass(frozen=True)
class CrossCheck:
    node: str
    power_node: str
    counter_delta: float
    integrated_estimate: float
    relative_gap: float
    unit: str


@dataclass
class EnergyReport:
    totals: dict[str, float] = field(default_factory=dict)
    scopes: list[ScopeEntry] = field(default_factory=list)
    cross_checks: list[CrossCheck] = field(default_factory=list)
    excluded_samples: int = 0
    unit: str = "Wh"


def _power_partner(entry: MeasurementEntry, mids: MidRegistry) -> ViewEntry | None:
    candidates = [v for v in entry.views if is_power_unit(v.unit.display) and not mids.is_counter(v.mid)]
    return candidates[0] if candidates else None


def aggregate_report(
    log: SampleLog,
    registry: MeasurementRegistry,
    mids: MidRegistry | None = None,
) -> EnergyReport:
    mids = mids if mids is not None else default_mid_registry()
    groups: dict[tuple[str, str, str], list[tuple[float, list[Sample]]]] = defaultdict(list)
    checks: list[CrossCheck] = []
    for entry in registry.entries:
        partner = _power_partner(entry, mids)
        for view in entry.views:
            if not mids.is_counter(view.mid):
                continue
            unit = view.unit.display
            delta, series = counter_delta(log, view)
            key = (entry.scope.kind.value, entry.scope.target, view.resource.value)
            groups[key].append((delta * ENERGY_TO_WH.get(unit, 1.0), series))
            if partner is None or len(series) < 2:
                continue
            try:
                est = integrate_energy(log, partner.value_node, series[0].t_ms, series[-1].t_ms,
                                       partner.unit.display, unit)
            except InsufficientSamples:
                continue
            gap = abs(delta - est) / max(abs(delta), EPS)
            checks.append(CrossCheck(view.value_node, partner.value_node, delta, est, gap, unit))

    gap_by_node = {c.node: c.relative_gap for c in checks}
    counter_nodes_by_key: dict[tuple[str, str, str], list[str]] = defaultdict(list)
    for entry in registry.entries:
        for view in entry.views:
            if mids.is_counter(view.mid):
                counter_nodes_by_key[(entry.scope.kind.value, entry.scope.target, view.resource.value)].append(
                    view.value_node)

    scopes = []
    for key in sorted(groups):
        parts = groups[key]
        energy = 0.0
        for e, _ in parts:
            energy += e
        all_samples = [s for _, series in parts for s in series]
        if not all_samples:
            # counters that never reported contribute no entry
            continue
        first = min(all_samples, key=lambda s: s.t_ms)
        last = max(all_samples, key=lambda s: s.t_ms)
        hours = (last.t_ms - first.t_ms) / 3.6e6
        avg = energy / hours if hours > 0 else 0.0
        gaps = [gap_by_node[n] for n in counter_nodes_by_key[key] if n in gap_by_node]
        scopes.append(ScopeEntry(key[0], key[1], key[2], energy, "Wh", avg, len(all_samples), (first.ts, last.ts),
                                 max(gaps) if gaps else None))

    # every metered resource gets a total, zero when nothing was logged
    totals: dict[str, float] = {key[2]: 0.0 for key in groups}
    for s in scopes:
        totals[s.resource] = totals.get(s.resource, 0.0) + s.energy
    excluded = sum(1 for _, s in log.order if s.quality is not Quality.Good)
    return EnergyReport(dict(sorted(totals.items())), scopes, sorted(checks, key=lambda c: c.node), excluded)


def _num(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def render_report(report: EnergyReport, fmt: str = "csv") -> str:
    """Serialize *report* as ``csv``, ``json`` or ``text``; output is deterministic."""
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s in report.scopes:
            w.writerow([s.scope, s.target, s.resource, _num(s.energy), s.unit, _num(s.average_power),
                        s.sample_count, _num(s.gap_rel)])
        for res, energy in report.totals.items():
            samples = sum(s.sample_count for s in report.scopes if s.resource == res)
            w.writerow(["Total", "", res, _num(energy), report.unit, "", samples, ""])
        return buf.getvalue()
    if fmt == "json":
        data = {
            "resources": {r: {"energy": e, "unit": report.unit} for r, e in report.totals.items()},
            "scopes": [
                {
                    "scope": s.scope, "target": s.target, "resource": s.resource, "energy": s.energy,
                    "unit": s.unit, "average_power": s.average_power, "average_power_unit": "W",
                    "sample_count": s.sample_count,
                    "coverage": list(s.coverage), "gap_rel": s.gap_rel,
                }
                for s in report.scopes
            ],
            "cross_check": [
                {
                    "node": c.node, "power_node": c.power_node, "counter_delta": c.counter_delta,
                    "integrated_estimate": c.integrated_estimate, "relative_gap": c.relative_gap,
                    "unit": c.unit,
                }
                for c in report.cross_checks
            ],
            "excluded_samples": report.excluded_samples,
        }
        return json.dumps(data, indent=2) + "\n"
    if fmt == "text":
        rows = [["scope", "target", "resource", f"energy [{report.unit}]", "avg power [W]", "samples", "gap"]]
        for s in report.scopes:
            rows.append([s.scope, s.target or "-", s.resource, f"{s.energy:.6f}", f"{s.average_power:.3f}",
                         str(s.sample_count), "-" if s.gap_rel is None else f"{s.gap_rel:.3e}"])
        for res, energy in report.totals.items():
            rows.append(["Total", "-", res, f"{energy:.6f}", "", "", ""])
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.append(f"excluded samples: {report.excluded_samples}")
        for c in report.cross_checks:
            lines.append(f"cross-check {c.node} vs {c.power_node}: counter {c.counter_delta:.6f} {c.unit}, "
                         f"integrated {c.integrated_estimate:.6f} {c.unit}, gap {c.relative_gap:.3e}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")
