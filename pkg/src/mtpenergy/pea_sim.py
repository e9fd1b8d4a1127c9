"""Deterministic simulated PEA serving the tag protocol.

Simulated time advances in fixed ticks and is decoupled from wall time, so
every published value is a function of (profile, seed, tick count) alone.
Counter nodes integrate their power source with the trapezoidal rule between
ticks. The clock starts with the first subscription so that a monitoring
session always sees the run from tick 0.
"""

from __future__ import annotations

import json
import logging
import math
import queue
import random
import socket
import sys
import threading
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Mapping, Union

import jsonschema

from mtpenergy import caex_document as caex, tagbus
from mtpenergy.enrg_model import ATTRIBUTES, MidRegistry, default_mid_registry, is_energy_unit, is_power_unit
from mtpenergy.errors import MtpEnergyError, ParseError
from mtpenergy.mtp_injector import MeasurementRegistry, ViewEntry, extract_measurement_registry, validate_energy_mtp
from mtpenergy.tagbus import (
    Ack,
    Browse,
    BrowseItem,
    BrowseResult,
    Error,
    Hello,
    Quality,
    Read,
    Reset,
    Subscribe,
    TagMessage,
    Update,
)

log = logging.getLogger(__name__)

DEFAULT_EPOCH = "2025-01-01T00:00:00.000Z"
MAX_STRIKES = 3


class SimulationError(MtpEnergyError):
    pass


class UnknownNode(SimulationError):
    pass


class BadGenerator(SimulationError):
    pass


class InvalidManifest(SimulationError):
    pass


class BindFailure(SimulationError):
    pass


# -- profile ---------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    level: float
    noise: float = 0.0


@dataclass(frozen=True)
class Sine:
    offset: float
    amplitude: float
    period_ms: float
    noise: float = 0.0


@dataclass(frozen=True)
class Ramp:
    start: float
    slope_per_s: float
    noise: float = 0.0


@dataclass(frozen=True)
class CounterIntegrating:
    source_node: str
    scale: float


SignalGenerator = Union[Constant, Sine, Ramp, CounterIntegrating]


@dataclass(frozen=True)
class SimulationProfile:
    seed: int
    tick_ms: int
    signals: dict[str, SignalGenerator]
    epoch: datetime = field(default_factory=lambda: tagbus.parse_ts(DEFAULT_EPOCH))
    resets: tuple[tuple[str, int], ...] = ()


def _generator(d: dict) -> SignalGenerator:
    kind = d["kind"]
    if kind == "constant":
        return Constant(float(d["level"]), float(d.get("noise", 0.0)))
    if kind == "sine":
        return Sine(float(d["offset"]), float(d["amplitude"]), float(d["period_ms"]), float(d.get("noise", 0.0)))
    if kind == "ramp":
        return Ramp(float(d["start"]), float(d["slope_per_s"]), float(d.get("noise", 0.0)))
    return CounterIntegrating(d["source_node"], float(d["scale"]))


def load_profile(
    text: str,
    registry: MeasurementRegistry | None = None,
    mids: MidRegistry | None = None,
) -> SimulationProfile:
    """Parse and check a profile; node checks need the served *registry*."""
    try:
        data = json.loads(text)
        schema = json.loads(resources.files("mtpenergy").joinpath("data/profile.schema.json").read_text())
        jsonschema.validate(data, schema)
    except json.JSONDecodeError as exc:
        raise ParseError(f"profile is not JSON: {exc}") from exc
    except jsonschema.ValidationError as exc:
        raise ParseError(f"profile: {exc.message} at /{'/'.join(map(str, exc.path))}") from exc
    if data["tick_ms"] < 1:
        raise BadGenerator(f"tick_ms must be >= 1, got {data['tick_ms']}")
    signals = {node: _generator(g) for node, g in data["signals"].items()}
    epoch = tagbus.parse_ts(data.get("epoch", DEFAULT_EPOCH))
    resets = tuple((r["node"], r["tick"]) for r in data.get("resets", []))
    profile = SimulationProfile(data["seed"], data["tick_ms"], signals, epoch, resets)
    _check_profile(profile, registry, mids)
    return profile


def _check_profile(profile: SimulationProfile, registry: MeasurementRegistry | None, mids: MidRegistry | None) -> None:
    views: dict[str, ViewEntry] = {}
    if registry is not None:
        known = set(registry.node_ids)
        for _, v in registry.views():
            views[v.value_node] = v
        for node in profile.signals:
            if node not in known:
                raise UnknownNode(f"profile drives {node!r}, which the manifest does not declare")
            if node not in views:
                raise BadGenerator(f"{node}: generators may only drive the V node of a view")
    for node, gen in profile.signals.items():
        unit = views[node].unit.display if node in views else None
        if isinstance(gen, CounterIntegrating):
            source = profile.signals.get(gen.source_node)
            if source is None or isinstance(source, CounterIntegrating):
                raise BadGenerator(f"{node}: counter source {gen.source_node!r} is not an instantaneous signal")
            if views:
                if not is_power_unit(views[gen.source_node].unit.display):
                    raise BadGenerator(f"{node}: counter source {gen.source_node!r} is not a power node")
                if mids is not None and not mids.is_counter(views[node].mid):
                    raise BadGenerator(f"{node}: measurement id {views[node].mid.code} is not a counter")
        elif isinstance(gen, Sine):
            if unit is not None and (is_power_unit(unit) or is_energy_unit(unit)) and abs(gen.amplitude) > gen.offset:
                raise BadGenerator(f"{node}: sine would go negative on a non-negative quantity")
        if getattr(gen, "noise", 0.0) < 0:
            raise BadGenerator(f"{node}: noise must be non-negative")
    for node, _ in profile.resets:
        if views and node not in views:
            raise UnknownNode(f"scheduled reset names {node!r}, which is not the V node of a view")
        counter = isinstance(profile.signals.get(node), CounterIntegrating) or (
            mids is not None and node in views and mids.is_counter(views[node].mid))
        if not counter:
            raise BadGenerator(f"scheduled reset on {node!r}, which is not a counter")


def signal_value(gen: SignalGenerator, t_ms: int, seed: int = 0, node: str = "", tick: int = 0) -> float:
    """Value of an instantaneous generator at simulated time *t_ms*."""
    if isinstance(gen, Constant):
        value = gen.level
    elif isinstance(gen, Sine):
        value = gen.offset + gen.amplitude * math.sin(2 * math.pi * t_ms / gen.period_ms)
    elif isinstance(gen, Ramp):
        value = gen.start + gen.slope_per_s * t_ms / 1000.0
    else:
        raise TypeError("counter generators have no closed-form value")
    if gen.noise:
        value += random.Random(f"{seed}:{node}:{tick}").gauss(0.0, gen.noise)
    return value


# -- meter state -----------------------------------------------------------


@dataclass(frozen=True)
class MeterState:
    """Dynamic values keyed by V node; VbR and reset times keyed by the same node."""

    values: Mapping[str, float]
    vbr: Mapping[str, float]
    last_reset_ms: Mapping[str, int | None]
    sim_clock: int = 0
    tick: int = 0


def initial_state(registry: MeasurementRegistry, profile: SimulationProfile) -> MeterState:
    values, vbr, resets = {}, {}, {}
    for _, v in registry.views():
        node = v.value_node
        gen = profile.signals.get(node)
        if gen is None or isinstance(gen, CounterIntegrating):
            values[node] = v.view.v
        else:
            values[node] = signal_value(gen, 0, profile.seed, node, 0)
        vbr[node] = v.view.vbr
        resets[node] = None
    return MeterState(values, vbr, resets)


def step(state: MeterState, profile: SimulationProfile, dt_ms: int | None = None) -> MeterState:
    """Advance one tick. Counters add the trapezoid of their source over the tick."""
    dt = profile.tick_ms if dt_ms is None else dt_ms
    clock, tick = state.sim_clock + dt, state.tick + 1
    values = dict(state.values)
    for node, gen in profile.signals.items():
        if not isinstance(gen, CounterIntegrating):
            values[node] = signal_value(gen, clock, profile.seed, node, tick)
    for node, gen in profile.signals.items():
        if isinstance(gen, CounterIntegrating):
            p0, p1 = state.values[gen.source_node], values[gen.source_node]
            values[node] = state.values[node] + gen.scale * (p0 + p1) / 2.0 * dt
    return replace(state, values=values, sim_clock=clock, tick=tick)


def reset_counter(state: MeterState, node: str) -> MeterState:
    vbr = dict(state.vbr)
    values = dict(state.values)
    resets = dict(state.last_reset_ms)
    vbr[node] = values[node]
    values[node] = 0.0
    resets[node] = state.sim_clock
    return replace(state, values=values, vbr=vbr, last_reset_ms=resets)


# -- request handling ------------------------------------------------------

_NUMERIC = {a.name: a.data_type for a in ATTRIBUTES}
_UNIT_ATTRS = {"V", "VSclMin", "VSclMax", "AccR", "VbR"}


def _static_value(attr: str, text: str) -> tagbus.Value:
    kind = _NUMERIC.get(attr)
    try:
        if kind == "xs:double":
            return float(text)
        if kind == "xs:unsignedInt":
            return int(text)
    except ValueError:
        pass
    return text


@dataclass
class Session:
    """Per-connection protocol state."""

    subscriptions: dict[str, list[int]] = field(default_factory=dict)
    strikes: int = 0
    closed: bool = False


class Simulator:
    """Meter state plus request handling for every session of one PEA."""

    def __init__(
        self,
        registry: MeasurementRegistry,
        profile: SimulationProfile,
        mids: MidRegistry | None = None,
    ) -> None:
        self.registry = registry
        self.profile = profile
        self.mids = mids if mids is not None else default_mid_registry()
        self.state = initial_state(registry, profile)
        self._items = {}
        self._counter_nodes: set[str] = set()
        for _, v, it in registry.items():
            self._items[it.node_id] = (v, it)
        for _, v in registry.views():
            gen = profile.signals.get(v.value_node)
            if self.mids.is_counter(v.mid) or isinstance(gen, CounterIntegrating):
                self._counter_nodes.add(v.value_node)
        self.started = threading.Event()

    @property
    def node_ids(self) -> list[str]:
        return list(self._items)

    def timestamp(self) -> str:
        return tagbus.ts_after(self.profile.epoch, self.state.sim_clock)

    def value(self, node: str) -> tagbus.Value:
        view, item = self._items[node]
        if item.attribute_name == "V":
            return self.state.values[node]
        if item.attribute_name == "VbR":
            return self.state.vbr[view.value_node]
        return _static_value(item.attribute_name, item.default_value)

    def quality(self, node: str, value: tagbus.Value) -> Quality:
        view, item = self._items[node]
        if item.attribute_name == "V" and not (view.view.v_scl_min <= value <= view.view.v_scl_max):
            return Quality.OutOfRange
        return Quality.Good

    def update(self, node: str) -> Update:
        value = self.value(node)
        return Update(node, value, self.timestamp(), self.quality(node, value))

    def advance(self) -> None:
        """Apply resets scheduled after the current tick, then step."""
        for node, tick in self.profile.resets:
            if tick == self.state.tick:
                self.state = reset_counter(self.state, node)
        self.state = step(self.state, self.profile)

    def due_updates(self, session: Session) -> list[Update]:
        out = []
        clock = self.state.sim_clock
        for node, sub in session.subscriptions.items():
            interval, next_due = sub
            if clock >= next_due:
                out.append(self.update(node))
                while sub[1] <= clock:
                    sub[1] += interval
        return out

    def _unknown(self, nodes) -> list[str]:
        return [n for n in nodes if n not in self._items]

    def handle_request(self, msg: TagMessage, session: Session) -> list[TagMessage]:
        if isinstance(msg, Hello):
            if msg.proto != tagbus.PROTO_VERSION:
                return [Error("proto", f"protocol {msg.proto} not supported, expected {tagbus.PROTO_VERSION}")]
            return [Hello("pea", tagbus.PROTO_VERSION)]
        if isinstance(msg, Browse):
            items = []
            for node, (view, item) in self._items.items():
                attr = item.attribute_name
                unit = view.unit.display if attr in _UNIT_ATTRS else ("ms" if attr == "MP" else "")
                items.append(BrowseItem(node, item.guid, unit))
            return [BrowseResult(tuple(items))]
        if isinstance(msg, Read):
            bad = self._unknown(msg.nodes)
            if bad:
                return [Error("unknown_node", f"unknown node(s): {', '.join(bad)}")]
            return [*(self.update(n) for n in msg.nodes), Ack(msg.id)]
        if isinstance(msg, Subscribe):
            bad = self._unknown(msg.nodes)
            if bad:
                return [Error("unknown_node", f"unknown node(s): {', '.join(bad)}")]
            if msg.interval_ms < tagbus.MIN_INTERVAL_MS:
                return [Error("bad_interval", f"interval_ms must be >= {tagbus.MIN_INTERVAL_MS}")]
            clock = self.state.sim_clock
            for n in msg.nodes:
                session.subscriptions[n] = [msg.interval_ms, clock + msg.interval_ms]
            self.started.set()
            out: list[TagMessage] = [self.update(n) for n in msg.nodes]
            if msg.id is not None:
                out.append(Ack(msg.id))
            return out
        if isinstance(msg, Reset):
            if msg.node not in self._items:
                return [Error("unknown_node", f"unknown node {msg.node}")]
            target = self._items[msg.node][0].value_node
            if target not in self._counter_nodes:
                return [Error("not_counter", f"{msg.node} does not belong to a counter")]
            self.state = reset_counter(self.state, target)
            return [Ack(msg.id)]
        return [Error("unexpected_op", f"{msg.op} is not a request")]

    def handle_line(self, line: bytes, session: Session) -> list[TagMessage]:
        """Decode one frame and answer it; protocol faults become Error replies."""
        try:
            msg = tagbus.decode_message(line)
        except tagbus.MalformedFrame as exc:
            session.strikes += 1
            if session.strikes >= MAX_STRIKES:
                session.closed = True
            return [Error("malformed", str(exc))]
        except tagbus.UnknownOp as exc:
            return [Error("unknown_op", str(exc))]
        except tagbus.MissingField as exc:
            return [Error("missing_field", str(exc))]
        return self.handle_request(msg, session)


# -- TCP server ------------------------------------------------------------


class _Connection:
    def __init__(self, sock: socket.socket, server: PeaServer) -> None:
        self.sock = sock
        self.server = server
        self.session = Session()
        self.outbox: queue.Queue[bytes | None] = queue.Queue()
        self.reader = threading.Thread(target=self._read, daemon=True)
        self.writer = threading.Thread(target=self._write, daemon=True)

    def start(self) -> None:
        self.reader.start()
        self.writer.start()

    def send(self, msgs: list[TagMessage]) -> None:
        for m in msgs:
            self.outbox.put(tagbus.encode_message(m))

    def close(self) -> None:
        self.outbox.put(None)

    def _read(self) -> None:
        stream = self.sock.makefile("rb")
        try:
            while not self.session.closed:
                line = stream.readline(tagbus.MAX_FRAME_BYTES + 1)
                if not line:
                    break
                if line.endswith(b"\n"):
                    line = line[:-1]
                with self.server.lock:
                    self.send(self.server.sim.handle_line(line, self.session))
        except OSError:
            pass
        finally:
            self.session.closed = True
            self.close()

    def _write(self) -> None:
        try:
            while True:
                data = self.outbox.get()
                if data is None:
                    break
                self.sock.sendall(data)
        except OSError:
            pass
        finally:
            self.session.closed = True
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.sock.close()
            self.server._forget(self)


class PeaServer:
    """Threaded TCP front end for a :class:`Simulator`.

    One tick thread owns the clock; each connection has a reader and a writer
    thread with its own outbound queue. All state access happens under
    ``lock`` so no handler sees a half-applied tick.
    """

    def __init__(
        self,
        sim: Simulator,
        host: str = "127.0.0.1",
        port: int = 0,
        accelerate: float = 1.0,
        ticks: int | None = None,
    ) -> None:
        self.sim = sim
        self.host = host
        self.port = port
        self.accelerate = accelerate
        self.ticks = ticks
        self.lock = threading.Lock()
        self._connections: list[_Connection] = []
        self._stop = threading.Event()
        self._done = threading.Event()
        self._listener: socket.socket | None = None

    def start(self) -> tuple[str, int]:
        try:
            listener = socket.create_server((self.host, self.port))
        except OSError as exc:
            raise BindFailure(f"cannot bind {self.host}:{self.port}: {exc}") from exc
        listener.settimeout(0.1)
        self._listener = listener
        self.port = listener.getsockname()[1]
        threading.Thread(target=self._accept, daemon=True).start()
        threading.Thread(target=self._tick, daemon=True).start()
        return self.host, self.port

    def _accept(self) -> None:
        assert self._listener is not None
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            sock.settimeout(None)
            conn = _Connection(sock, self)
            with self.lock:
                self._connections.append(conn)
            conn.start()
        self._listener.close()

    def _forget(self, conn: _Connection) -> None:
        with self.lock:
            if conn in self._connections:
                self._connections.remove(conn)

    def _tick(self) -> None:
        while not self.sim.started.wait(0.05):
            if self._stop.is_set():
                self._done.set()
                return
        period = self.sim.profile.tick_ms / 1000.0 / self.accelerate if self.accelerate > 0 else 0.0
        t0 = time.monotonic()
        n = 0
        while not self._stop.is_set() and (self.ticks is None or n < self.ticks):
            n += 1
            if period:
                delay = t0 + n * period - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            with self.lock:
                self.sim.advance()
                for conn in self._connections:
                    conn.send(self.sim.due_updates(conn.session))
        if self.ticks is not None:
            log.info("tick budget of %d reached", self.ticks)
            self.shutdown()
        self._done.set()

    def shutdown(self) -> None:
        self._stop.set()
        with self.lock:
            for conn in self._connections:
                conn.close()

    def wait(self, timeout: float | None = None) -> bool:
        """Block until the tick budget is spent or :meth:`shutdown` is called."""
        if not self._done.wait(timeout):
            return False
        with self.lock:
            writers = [c.writer for c in self._connections]
        for w in writers:
            w.join(timeout=5)
        return True


def load_served_registry(manifest_path: str | Path, mids: MidRegistry) -> MeasurementRegistry:
    doc = caex.load_caex(manifest_path)
    report = validate_energy_mtp(doc, mids)
    if not report.ok:
        raise InvalidManifest(f"{manifest_path}: {len(report.errors)} validation error(s)\n{report.render()}")
    return extract_measurement_registry(doc, mids)


def run_server(
    manifest_path: str | Path,
    profile_path: str | Path,
    port: int,
    host: str = "127.0.0.1",
    accelerate: float = 1.0,
    ticks: int | None = None,
    mids: MidRegistry | None = None,
) -> None:
    """Serve until the tick budget is spent (or forever without one)."""
    mids = mids if mids is not None else default_mid_registry()
    registry = load_served_registry(manifest_path, mids)
    profile = load_profile(Path(profile_path).read_text(encoding="utf-8"), registry, mids)
    server = PeaServer(Simulator(registry, profile, mids), host, port, accelerate, ticks)
    bound_host, bound_port = server.start()
    print(f"serving {len(registry.node_ids)} nodes on {bound_host}:{bound_port}", file=sys.stderr, flush=True)
    try:
        while not server.wait(0.5):
            pass
    except KeyboardInterrupt:
        server.shutdown()
        server.wait(5)
