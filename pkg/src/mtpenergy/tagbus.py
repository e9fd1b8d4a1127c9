"""Line-oriented tag protocol between the simulated PEA and the POL client.

Each frame is one UTF-8 JSON object terminated by ``\\n`` with ``op`` as the
first key. The protocol replaces OPC UA for this toolkit: browse the served
nodes, read them, subscribe to interval pushes, and reset energy counters.

    {"op":"hello","client":"pol","proto":1}
    {"op":"browse"}
    {"op":"browse_result","items":[{"node":"EM001/V","guid":"...","unit":"V"}]}
    {"op":"read","nodes":["EM001/V"],"id":1}
    {"op":"subscribe","nodes":["EM001/V"],"interval_ms":100}
    {"op":"update","node":"EM001/V","value":50.0,"ts":"2025-01-01T00:00:00.000Z","q":"good"}
    {"op":"reset","node":"EM001/V"}
    {"op":"ack","id":1}
    {"op":"error","code":"proto","msg":"..."}
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Union

from mtpenergy.errors import MtpEnergyError

PROTO_VERSION = 1
MIN_INTERVAL_MS = 10
MAX_FRAME_BYTES = 1 << 20


class ProtocolError(MtpEnergyError):
    pass


class MalformedFrame(ProtocolError):
    pass


class UnknownOp(ProtocolError):
    pass


class MissingField(ProtocolError):
    def __init__(self, name: str) -> None:
        super().__init__(f"missing field {name!r}")
        self.name = name


class Quality(enum.Enum):
    Good = "good"
    OutOfRange = "out_of_range"
    Stale = "stale"


Value = Union[float, int, str]


@dataclass(frozen=True)
class Hello:
    client: str
    proto: int = PROTO_VERSION
    op = "hello"


@dataclass(frozen=True)
class Browse:
    op = "browse"


@dataclass(frozen=True)
class BrowseItem:
    node: str
    guid: str
    unit: str = ""


@dataclass(frozen=True)
class BrowseResult:
    items: tuple[BrowseItem, ...] = ()
    op = "browse_result"


@dataclass(frozen=True)
class Read:
    nodes: tuple[str, ...]
    id: int | None = None
    op = "read"


@dataclass(frozen=True)
class Subscribe:
    nodes: tuple[str, ...]
    interval_ms: int = 100
    id: int | None = None
    op = "subscribe"


@dataclass(frozen=True)
class Update:
    node: str
    value: Value
    ts: str
    q: Quality = Quality.Good
    op = "update"


@dataclass(frozen=True)
class Reset:
    node: str
    id: int | None = None
    op = "reset"


@dataclass(frozen=True)
class Ack:
    id: int | None = None
    op = "ack"


@dataclass(frozen=True)
class Error:
    code: str
    msg: str = ""
    op = "error"


TagMessage = Union[Hello, Browse, BrowseResult, Read, Subscribe, Update, Reset, Ack, Error]
OPS: dict[str, type] = {
    cls.op: cls for cls in (Hello, Browse, BrowseResult, Read, Subscribe, Update, Reset, Ack, Error)
}


def _payload(msg: TagMessage) -> dict:
    if isinstance(msg, Hello):
        return {"client": msg.client, "proto": msg.proto}
    if isinstance(msg, BrowseResult):
        return {"items": [{"node": i.node, "guid": i.guid, "unit": i.unit} for i in msg.items]}
    if isinstance(msg, (Read, Subscribe)):
        d: dict = {"nodes": list(msg.nodes)}
        if isinstance(msg, Subscribe):
            d["interval_ms"] = msg.interval_ms
        if msg.id is not None:
            d["id"] = msg.id
        return d
    if isinstance(msg, Update):
        return {"node": msg.node, "value": msg.value, "ts": msg.ts, "q": msg.q.value}
    if isinstance(msg, Reset):
        return {"node": msg.node} if msg.id is None else {"node": msg.node, "id": msg.id}
    if isinstance(msg, Ack):
        return {"id": msg.id}
    if isinstance(msg, Error):
        return {"code": msg.code, "msg": msg.msg}
    return {}


def encode_message(msg: TagMessage) -> bytes:
    frame = {"op": msg.op, **_payload(msg)}
    return json.dumps(frame, ensure_ascii=False, allow_nan=False, separators=(",", ":")).encode("utf-8") + b"\n"


# -- decoding --------------------------------------------------------------


def _field(d: dict, name: str, kind: type | tuple[type, ...], optional: bool = False):
    if name not in d:
        if optional:
            return None
        raise MissingField(name)
    value = d[name]
    if optional and value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, kind):
        raise MalformedFrame(f"field {name!r} has wrong type {type(value).__name__}")
    return value


def _nodes(d: dict) -> tuple[str, ...]:
    nodes = _field(d, "nodes", list)
    if not all(isinstance(n, str) for n in nodes):
        raise MalformedFrame("field 'nodes' must list strings")
    return tuple(nodes)


def decode_message(line: bytes | str) -> TagMessage:
    """Inverse of :func:`encode_message`; unknown fields are ignored."""
    if isinstance(line, bytes):
        if len(line) > MAX_FRAME_BYTES:
            raise MalformedFrame("frame too long")
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFrame(f"invalid UTF-8: {exc.reason}") from exc
    try:
        d = json.loads(line)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise MalformedFrame(f"bad JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise MalformedFrame("frame is not a JSON object")
    op = _field(d, "op", str)
    if op not in OPS:
        raise UnknownOp(f"unknown op {op!r}")

    if op == "hello":
        return Hello(_field(d, "client", str), _field(d, "proto", int))
    if op == "browse":
        return Browse()
    if op == "browse_result":
        raw = _field(d, "items", list)
        items = []
        for it in raw:
            if not isinstance(it, dict):
                raise MalformedFrame("browse item is not an object")
            items.append(BrowseItem(_field(it, "node", str), _field(it, "guid", str),
                                    _field(it, "unit", str, optional=True) or ""))
        return BrowseResult(tuple(items))
    if op == "read":
        return Read(_nodes(d), _field(d, "id", int, optional=True))
    if op == "subscribe":
        return Subscribe(_nodes(d), _field(d, "interval_ms", int), _field(d, "id", int, optional=True))
    if op == "update":
        q = _field(d, "q", str)
        try:
            quality = Quality(q)
        except ValueError:
            raise MalformedFrame(f"unknown quality {q!r}") from None
        return Update(_field(d, "node", str), _field(d, "value", (int, float, str)), _field(d, "ts", str), quality)
    if op == "reset":
        return Reset(_field(d, "node", str), _field(d, "id", int, optional=True))
    if op == "ack":
        return Ack(_field(d, "id", int, optional=True))
    return Error(_field(d, "code", str), _field(d, "msg", str, optional=True) or "")


# -- timestamps ------------------------------------------------------------

_TS_FORMAT = "%Y-%m-%dT%H:%M:%S.%fZ"


def parse_ts(ts: str) -> datetime:
    try:
        return datetime.strptime(ts, _TS_FORMAT).replace(tzinfo=timezone.utc)
    except ValueError as exc:
        raise MalformedFrame(f"bad timestamp {ts!r}") from exc


def format_ts(t: datetime) -> str:
    t = t.astimezone(timezone.utc)
    return t.strftime("%Y-%m-%dT%H:%M:%S.") + f"{t.microsecond // 1000:03d}Z"


def ts_after(epoch: datetime, ms: int) -> str:
    return format_ts(epoch + timedelta(milliseconds=ms))


def ts_ms(ts: str) -> int:
    """Milliseconds since the Unix epoch."""
    delta = parse_ts(ts) - datetime(1970, 1, 1, tzinfo=timezone.utc)
    return delta.days * 86_400_000 + delta.seconds * 1000 + delta.microseconds // 1000
