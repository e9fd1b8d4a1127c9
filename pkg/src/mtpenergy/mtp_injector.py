"""Energy-data extension of MTP manifests.

``inject_energy_library`` adds the EnRGView class below AnaView and the
``MTPEnergyManagementSUCLib``. ``add_measurement_instance`` places one
MeasurementType (with its EnRGView instances) in the InstanceList, one
source item per exposed attribute in the SourceList, and a reference in the
scoped MeasurementList below the energy-management aspect of the PEA.
``extract_measurement_registry`` is the inverse used by the orchestration
side, and ``validate_energy_mtp`` checks the linking rules.

Only the 11 dynamic attributes get source items; TagName and TagDescription
stay static CAEX values.
"""

from __future__ import annotations

import enum
import json
import random
import re
import uuid
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterator

import jsonschema

from mtpenergy import caex_document as caex
from mtpenergy.caex_document import CaexDocument, CaexElement, ElementPath
from mtpenergy.enrg_model import (
    ATTRIBUTE_NAMES,
    ATTRIBUTES,
    EXPOSED_ATTRIBUTES,
    STATIC_ATTRIBUTES,
    AccuracyClass,
    AccuracyDomain,
    EngineeringUnit,
    EnRgView,
    MeasurementId,
    MidRegistry,
    Resource,
    attribute_value,
    format_value,
    validate_enrg_view,
    view_from_texts,
)
from mtpenergy.errors import MtpEnergyError, ParseError

INDICATOR_PATH = ElementPath(("MTPDataObjectSUCLib", "DataAssembly", "IndicatorElement"))
ANAVIEW_PATH = INDICATOR_PATH / "AnaView"
ENRG_CLASS_PATH = ANAVIEW_PATH / "EnRGView"
EM_LIB = "MTPEnergyManagementSUCLib"
ATTR_TYPE_LIB = "MTPDataTypeAttributeLib"
IDLINK_TYPE = f"{ATTR_TYPE_LIB}/IDLinkAttributeType"
OPCUA_ITEM_CLASS = "MTPCommunicationICLib/DataItem/OPCUAItem"
OPCUA_SERVER_CLASS = "MTPCommunicationSUCLib/ServerAssembly/OPCUAServer"
MEASUREMENT_TYPE_CLASS = f"{EM_LIB}/MeasurementType"
MEASUREMENT_REF_CLASS = f"{EM_LIB}/MeasurementReference"

PEA_PATH = ElementPath(("ModuleTypePackage", "PEA"))
INSTANCE_LIST_PATH = PEA_PATH / "CommunicationSet" / "InstanceList"
SOURCE_LIST_PATH = PEA_PATH / "CommunicationSet" / "SourceList"
ENERGY_SERVER = "EnergyTagServer"
ASPECT = "EnergyManagement"
FUNCTIONS = "EnergyManagementFunctions"
MEASUREMENT_LIST = "MeasurementList"
MEASUREMENT_LIST_PATH = PEA_PATH / ASPECT / FUNCTIONS / MEASUREMENT_LIST

GUID_RE = re.compile(r"^[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}$")


class InjectionError(MtpEnergyError):
    pass


class MissingAnaView(InjectionError):
    pass


class ConflictingDefinition(InjectionError):
    pass


class LibraryMissing(InjectionError):
    pass


class DuplicateTagName(InjectionError):
    pass


class InvalidMeasurementSpec(InjectionError, ValueError):
    pass


class ExtractionFailed(MtpEnergyError):
    def __init__(self, report: ValidationReport) -> None:
        codes = ", ".join(sorted({v.code for v in report.errors}))
        super().__init__(f"manifest has {len(report.errors)} error(s): {codes}")
        self.report = report


# -- domain types ----------------------------------------------------------


class ScopeKind(enum.Enum):
    Module = "Module"
    Service = "Service"
    Component = "Component"


SCOPE_LISTS = {
    ScopeKind.Module: "ModuleMeasurements",
    ScopeKind.Service: "ServiceMeasurements",
    ScopeKind.Component: "ComponentMeasurements",
}


@dataclass(frozen=True)
class Scope:
    kind: ScopeKind
    target: str = ""

    def __post_init__(self) -> None:
        if (self.kind is ScopeKind.Module) == bool(self.target):
            raise ValueError("scope target must be set exactly when the scope is not Module")

    @property
    def sort_key(self) -> tuple[str, str]:
        return (self.kind.value, self.target)


class Access(enum.Enum):
    Read = "Read"
    ReadWrite = "ReadWrite"


@dataclass(frozen=True)
class MeasurementSpec:
    scope: Scope
    device_tag: str
    views: tuple[EnRgView, ...]
    server_endpoint: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "views", tuple(self.views))
        if not self.views:
            raise InvalidMeasurementSpec(f"{self.device_tag}: at least one view is required")
        if not self.device_tag or "/" in self.device_tag:
            raise InvalidMeasurementSpec(f"bad device tag {self.device_tag!r}")


@dataclass(frozen=True)
class SourceItem:
    attribute_name: str
    node_id: str
    guid: str
    access: Access
    default_value: str


@dataclass(frozen=True)
class ViewEntry:
    instance_guid: str
    view: EnRgView
    items: tuple[SourceItem, ...]

    @property
    def tag_name(self) -> str:
        return self.view.tag_name

    @property
    def mid(self) -> MeasurementId:
        return self.view.mid

    @property
    def resource(self) -> Resource:
        return self.view.res

    @property
    def unit(self) -> EngineeringUnit:
        return self.view.v_unit

    def item(self, attribute: str) -> SourceItem:
        for it in self.items:
            if it.attribute_name == attribute:
                return it
        raise KeyError(attribute)

    @property
    def value_node(self) -> str:
        return self.item("V").node_id


@dataclass(frozen=True)
class MeasurementEntry:
    instance_guid: str
    device_tag: str
    scope: Scope
    endpoint: str
    views: tuple[ViewEntry, ...]

    def to_spec(self) -> MeasurementSpec:
        return MeasurementSpec(self.scope, self.device_tag, tuple(v.view for v in self.views), self.endpoint)


@dataclass
class MeasurementRegistry:
    entries: list[MeasurementEntry] = field(default_factory=list)

    def views(self) -> Iterator[tuple[MeasurementEntry, ViewEntry]]:
        for e in self.entries:
            for v in e.views:
                yield e, v

    def items(self) -> Iterator[tuple[MeasurementEntry, ViewEntry, SourceItem]]:
        for e, v in self.views():
            for it in v.items:
                yield e, v, it

    @property
    def node_ids(self) -> list[str]:
        return [it.node_id for _, _, it in self.items()]

    def lookup(self, node_id: str) -> tuple[MeasurementEntry, ViewEntry, SourceItem]:
        for e, v, it in self.items():
            if it.node_id == node_id:
                return e, v, it
        raise KeyError(node_id)


@dataclass(frozen=True, order=True)
class Violation:
    location: str
    code: str
    severity: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def add(self, severity: str, code: str, location: str | ElementPath, message: str) -> None:
        self.violations.append(Violation(str(location), code, severity, message))

    def sorted(self) -> ValidationReport:
        return ValidationReport(sorted(self.violations))

    @property
    def errors(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "Error"]

    @property
    def warnings(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "Warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def render(self) -> str:
        lines = [f"{v.severity}\t{v.code}\t{v.location}\t{v.message}" for v in self.violations]
        lines.append(f"{len(self.errors)} error(s), {len(self.warnings)} warning(s)")
        return "\n".join(lines) + "\n"


def node_id_for(tag_name: str, attribute: str) -> str:
    return f"{tag_name}/{attribute}"


def new_guid(rng: random.Random | None = None) -> str:
    if rng is None:
        return str(uuid.uuid4())
    return str(uuid.UUID(int=rng.getrandbits(128), version=4))


# -- measurement spec files ------------------------------------------------


def _schema(name: str) -> dict:
    return json.loads(resources.files("mtpenergy").joinpath(f"data/{name}").read_text(encoding="utf-8"))


def view_from_json(d: dict) -> EnRgView:
    unit = d["v_unit"]
    return EnRgView(
        tag_name=d["tag_name"],
        tag_description=d.get("tag_description", ""),
        v=float(d["v"]),
        v_unit=EngineeringUnit(int(unit["unit_id"]), unit["display"]),
        v_scl_min=float(d["v_scl_min"]),
        v_scl_max=float(d["v_scl_max"]),
        acc_c=AccuracyClass(d["acc_c"]),
        acc_d=AccuracyDomain(d["acc_d"]),
        acc_r=float(d["acc_r"]),
        mid=MeasurementId(int(d["mid"])),
        vbr=float(d.get("vbr", 0.0)),
        mp=int(d["mp"]),
        res=Resource(d["res"]),
    )


def view_to_json(view: EnRgView) -> dict:
    return {
        "tag_name": view.tag_name,
        "tag_description": view.tag_description,
        "v": view.v,
        "v_unit": {"unit_id": view.v_unit.unit_id, "display": view.v_unit.display},
        "v_scl_min": view.v_scl_min,
        "v_scl_max": view.v_scl_max,
        "acc_c": view.acc_c.value,
        "acc_d": view.acc_d.value,
        "acc_r": view.acc_r,
        "mid": view.mid.code,
        "vbr": view.vbr,
        "mp": view.mp,
        "res": view.res.value,
    }


def load_measurement_specs(text: str) -> list[MeasurementSpec]:
    """Read a measurement spec file (see ``specs/measurement_spec.schema.json``)."""
    try:
        data = json.loads(text)
        jsonschema.validate(data, _schema("measurement_spec.schema.json"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"measurement spec is not JSON: {exc}") from exc
    except jsonschema.ValidationError as exc:
        raise ParseError(f"measurement spec: {exc.message} at /{'/'.join(map(str, exc.path))}") from exc
    specs = []
    for m in data["measurements"]:
        try:
            scope = Scope(ScopeKind(m["scope"]), m.get("target", ""))
            views = tuple(view_from_json(v) for v in m["views"])
            specs.append(MeasurementSpec(scope, m["device_tag"], views, m["server_endpoint"]))
        except ValueError as exc:
            raise ParseError(f"measurement {m.get('device_tag')!r}: {exc}") from exc
    return specs


def dump_measurement_specs(specs: list[MeasurementSpec]) -> str:
    data = {
        "measurements": [
            {
                "scope": s.scope.kind.value,
                "target": s.scope.target,
                "device_tag": s.device_tag,
                "server_endpoint": s.server_endpoint,
                "views": [view_to_json(v) for v in s.views],
            }
            for s in specs
        ]
    }
    return json.dumps(data, indent=2) + "\n"


# -- library injection -----------------------------------------------------


def _suc(name: str, base: str | None = None, children: list | None = None) -> CaexElement:
    attrs = [("Name", name)]
    if base:
        attrs.append(("RefBaseClassPath", base))
    return CaexElement("SystemUnitClass", attrs, children or [])


def build_enrg_class() -> CaexElement:
    attrs = [
        caex.make_attribute(a.name, data_type=a.data_type, description=a.description)
        for a in ATTRIBUTES
    ]
    return _suc("EnRGView", str(ANAVIEW_PATH), attrs)


def build_energy_library() -> CaexElement:
    attr = caex.make_attribute
    classes = [
        _suc("EnergyManagementAspect", children=[
            CaexElement("Description", text_content="Energy-management aspect of a PEA"),
        ]),
        _suc("EnergyManagementFunctions"),
        _suc("MeasurementList", children=[
            _suc(SCOPE_LISTS[k], f"{EM_LIB}/MeasurementList") for k in ScopeKind
        ]),
        _suc("MeasurementReference", children=[
            attr("RefID", data_type="xs:IDREF", description="ID of the referenced MeasurementType"),
            attr("Scope", data_type="xs:string", description="Module, Service or Component"),
            attr("Target", data_type="xs:string", description="Service or component name"),
        ]),
        _suc("MeasurementType", children=[
            attr("ServerEndpoint", data_type="xs:string", description="host:port of the tag server"),
        ]),
    ]
    return CaexElement(
        "SystemUnitClassLib",
        [("Name", EM_LIB)],
        [CaexElement("Version", text_content="1.0.0"), *classes],
    )


def build_attribute_type_lib() -> CaexElement:
    idlink = CaexElement(
        "AttributeType",
        [("Name", "IDLinkAttributeType"), ("AttributeDataType", "xs:IDREF")],
        [CaexElement("Description", text_content="Attribute whose value is the ID of a communication item")],
    )
    return CaexElement(
        "AttributeTypeLib", [("Name", ATTR_TYPE_LIB)],
        [CaexElement("Version", text_content="1.0.0"), idlink],
    )


def _lib_position(root: CaexElement, after_name: str) -> int | None:
    for i, c in enumerate(root.children):
        if isinstance(c, CaexElement) and c.get("Name") == after_name:
            return i + 1
    return None


def inject_energy_library(doc: CaexDocument) -> CaexDocument:
    """Return a copy of *doc* carrying the EnRGView class and energy library.

    Idempotent; raises MissingAnaView when the IndicatorElement group or its
    AnaView class is absent and ConflictingDefinition when a different
    EnRGView or energy library already exists.
    """
    out = doc.copy()
    anaview = caex.find_by_path(out, ANAVIEW_PATH)
    if anaview is None or anaview.name != "SystemUnitClass":
        raise MissingAnaView(f"{ANAVIEW_PATH} not found")

    wanted = build_enrg_class()
    existing = [c for c in anaview.elements if c.get("Name") == "EnRGView"]
    if existing:
        if existing[0] != wanted or len(existing) > 1:
            raise ConflictingDefinition(f"{ENRG_CLASS_PATH} exists with a different definition")
    else:
        caex.insert_child(anaview, wanted)

    lib = build_energy_library()
    current = out.root.child(EM_LIB)
    if current is not None:
        if current != lib:
            raise ConflictingDefinition(f"{EM_LIB} exists with a different definition")
    else:
        pos = _lib_position(out.root, INDICATOR_PATH.segments[0])
        caex.insert_child(out.root, lib, pos)

    types_lib = out.root.child(ATTR_TYPE_LIB)
    if types_lib is None:
        caex.insert_child(out.root, build_attribute_type_lib(), _lib_position(out.root, INDICATOR_PATH.segments[0]) - 1)
    elif types_lib.child("IDLinkAttributeType") is None:
        caex.insert_child(types_lib, build_attribute_type_lib().elements[1])
    return out


# -- measurement instances -------------------------------------------------


def _internal(name: str, guid: str, ref: str, children: list | None = None) -> CaexElement:
    return CaexElement(
        "InternalElement",
        [("Name", name), ("ID", guid), ("RefBaseSystemUnitPath", ref)],
        children or [],
    )


def _ensure(parent: CaexElement, name: str, ref: str, rng: random.Random | None) -> CaexElement:
    found = parent.child(name, "InternalElement")
    if found is None:
        found = _internal(name, new_guid(rng), ref)
        caex.insert_child(parent, found)
    return found


def _build_item(view: EnRgView, attr: str, rng: random.Random | None, counter: bool) -> CaexElement:
    access = Access.ReadWrite if (counter and attr == "V") else Access.Read
    children = [
        caex.make_attribute("Identifier", node_id_for(view.tag_name, attr), "xs:string"),
        caex.make_attribute("Access", access.value, "xs:string"),
        caex.make_attribute("DefaultValue", format_value(attribute_value(view, attr)), "xs:string"),
    ]
    if attr == "VUnit":
        children.append(caex.make_attribute("UnitDisplay", view.v_unit.display, "xs:string"))
    return CaexElement(
        "ExternalInterface",
        [("Name", f"{view.tag_name}.{attr}"), ("ID", new_guid(rng)), ("RefBaseClassPath", OPCUA_ITEM_CLASS)],
        children,
    )


def add_measurement_instance(
    doc: CaexDocument,
    spec: MeasurementSpec,
    rng: random.Random | None = None,
    registry: MidRegistry | None = None,
) -> CaexDocument:
    """Return a copy of *doc* with *spec* instantiated.

    Re-adding a measurement that is already present with identical content is
    a no-op. Any other reuse of a device or view tag raises DuplicateTagName.
    *registry* marks counter views (their V item becomes ReadWrite).
    """
    if caex.find_by_path(doc, ENRG_CLASS_PATH) is None or doc.root.child(EM_LIB) is None:
        raise LibraryMissing("inject_energy_library must run before adding measurements")
    for view in spec.views:
        bad = [v for v in validate_enrg_view(view) if v.code != "ValueOutOfScale"]
        if bad:
            raise InvalidMeasurementSpec(f"{spec.device_tag}/{view.tag_name}: {bad[0].message}")
    tags = [v.tag_name for v in spec.views]
    if len(set(tags)) != len(tags):
        raise DuplicateTagName(f"{spec.device_tag}: view tag names repeat")

    existing = extract_measurement_registry(doc)
    for entry in existing.entries:
        if entry.device_tag == spec.device_tag and entry.to_spec() == spec:
            return doc.copy()
    taken = {e.device_tag for e in existing.entries} | {v.tag_name for _, v in existing.views()}
    clash = sorted(taken.intersection([spec.device_tag, *tags]))
    if clash:
        raise DuplicateTagName(f"tag name(s) already used in manifest: {', '.join(clash)}")

    out = doc.copy()
    instance_list = caex.find_by_path(out, INSTANCE_LIST_PATH)
    source_list = caex.find_by_path(out, SOURCE_LIST_PATH)
    pea = caex.find_by_path(out, PEA_PATH)
    if instance_list is None or source_list is None or pea is None:
        raise InjectionError(f"manifest lacks {INSTANCE_LIST_PATH} or {SOURCE_LIST_PATH}")

    server = _ensure(source_list, ENERGY_SERVER, OPCUA_SERVER_CLASS, rng)
    mt = _internal(spec.device_tag, new_guid(rng), MEASUREMENT_TYPE_CLASS, [
        caex.make_attribute("ServerEndpoint", spec.server_endpoint, "xs:string"),
    ])
    for view in spec.views:
        counter = registry.is_counter(view.mid) if registry is not None else False
        inst = _internal(view.tag_name, new_guid(rng), str(ENRG_CLASS_PATH))
        for a in ATTRIBUTES:
            if a.exposed:
                item = _build_item(view, a.name, rng, counter)
                caex.insert_child(server, item)
                inst.children.append(caex.make_attribute(
                    a.name, item.get("ID"), "xs:IDREF", ref_type=IDLINK_TYPE))
            else:
                inst.children.append(caex.make_attribute(
                    a.name, attribute_value(view, a.name), a.data_type))
        mt.children.append(inst)
    caex.insert_child(instance_list, mt)

    aspect = _ensure(pea, ASPECT, f"{EM_LIB}/EnergyManagementAspect", rng)
    functions = _ensure(aspect, FUNCTIONS, f"{EM_LIB}/EnergyManagementFunctions", rng)
    mlist = _ensure(functions, MEASUREMENT_LIST, f"{EM_LIB}/MeasurementList", rng)
    for kind in ScopeKind:
        _ensure(mlist, SCOPE_LISTS[kind], f"{EM_LIB}/MeasurementList/{SCOPE_LISTS[kind]}", rng)
    scoped = mlist.child(SCOPE_LISTS[spec.scope.kind], "InternalElement")
    caex.insert_child(scoped, _internal(spec.device_tag, new_guid(rng), MEASUREMENT_REF_CLASS, [
        caex.make_attribute("RefID", mt.get("ID"), "xs:IDREF"),
        caex.make_attribute("Scope", spec.scope.kind.value, "xs:string"),
        caex.make_attribute("Target", spec.scope.target, "xs:string"),
    ]))
    return out


# -- scanning: shared by validation and extraction -------------------------


def _walk(elem: CaexElement, path: tuple[str, ...] = ()) -> Iterator[tuple[CaexElement, tuple[str, ...]]]:
    for c in elem.elements:
        p = path + (c.get("Name") or c.name,)
        yield c, p
        yield from _walk(c, p)


def _location(elem: CaexElement, path: tuple[str, ...]) -> str:
    return elem.get("ID") or "/".join(path)


def _attr_values(elem: CaexElement) -> dict[str, str | None]:
    out: dict[str, str | None] = {}
    for a in caex.attribute_elements(elem):
        out[a.get("Name") or ""] = caex.attribute_value(elem, a.get("Name") or "")
    return out


def _scan(doc: CaexDocument, registry: MidRegistry | None) -> tuple[ValidationReport, MeasurementRegistry]:
    report = ValidationReport()
    err = lambda code, loc, msg: report.add("Error", code, loc, msg)  # noqa: E731
    warn = lambda code, loc, msg: report.add("Warning", code, loc, msg)  # noqa: E731

    everything = list(_walk(doc.root))
    by_id: dict[str, list[CaexElement]] = defaultdict(list)
    for e, _ in everything:
        if e.get("ID") is not None:
            by_id[e.get("ID")].append(e)
    for guid, elems in by_id.items():
        if len(elems) > 1:
            err("DuplicateGuid", guid, f"ID shared by {len(elems)} elements")

    enrg_ref = str(ENRG_CLASS_PATH)
    mts = [(e, p) for e, p in everything
           if e.name == "InternalElement" and e.get("RefBaseSystemUnitPath") == MEASUREMENT_TYPE_CLASS]
    stray_views = [(e, p) for e, p in everything
                   if e.get("RefBaseSystemUnitPath") == enrg_ref and not any(
                       any(c is e for c in m.children) for m, _ in mts)]
    has_energy = bool(mts or stray_views)

    # library placement and definition
    enrg_classes = [(e, p) for e, p in everything if e.name == "SystemUnitClass" and e.get("Name") == "EnRGView"]
    enrg_class = caex.find_by_path(doc, ENRG_CLASS_PATH)
    for e, p in enrg_classes:
        if e is not enrg_class:
            err("LibraryMisplaced", "/".join(p), f"EnRGView class must sit at {ENRG_CLASS_PATH}")
    if enrg_class is not None:
        names = [a.get("Name") for a in caex.attribute_elements(enrg_class)]
        if names != list(ATTRIBUTE_NAMES):
            err("ClassDefinitionMismatch", ENRG_CLASS_PATH,
                f"EnRGView defines {names}, expected {list(ATTRIBUTE_NAMES)}")
        if enrg_class.get("RefBaseClassPath") != str(ANAVIEW_PATH):
            err("ClassDefinitionMismatch", ENRG_CLASS_PATH, "EnRGView must derive from AnaView")
    elif has_energy:
        err("LibraryMissing", ENRG_CLASS_PATH, "EnRGView instances exist but the class is missing")
    em_lib = doc.root.child(EM_LIB)
    if em_lib is None and has_energy:
        err("LibraryMissing", EM_LIB, "measurements exist but the energy-management library is missing")
    elif em_lib is not None and em_lib.name != "SystemUnitClassLib":
        err("LibraryMisplaced", EM_LIB, f"{EM_LIB} must be a SystemUnitClassLib")

    for e, p in stray_views:
        err("MeasurementMisplaced", _location(e, p), "EnRGView instance outside a MeasurementType")

    # source items of the energy tag server
    server = None
    source_list = caex.find_by_path(doc, SOURCE_LIST_PATH)
    if source_list is not None:
        server = source_list.child(ENERGY_SERVER, "InternalElement")
    if has_energy and server is None:
        err("MissingSourceList", SOURCE_LIST_PATH / ENERGY_SERVER, "energy tag server missing from SourceList")
    items: dict[str, CaexElement] = {}
    item_ids: list[str] = []
    if server is not None:
        for it in server.elements:
            if it.name != "ExternalInterface":
                continue
            guid = it.get("ID") or ""
            item_ids.append(guid)
            if not GUID_RE.match(guid):
                err("BadGuid", it.get("Name") or guid, f"item ID {guid!r} is not a canonical UUID")
            items.setdefault(guid, it)
    all_nodes = Counter()
    if source_list is not None:
        for e, _ in _walk(source_list):
            if e.name == "ExternalInterface":
                node = caex.attribute_value(e, "Identifier")
                if node:
                    all_nodes[node] += 1
    for node, n in all_nodes.items():
        if n > 1:
            err("DuplicateNodeId", node, f"node id used by {n} source items")

    referenced: Counter[str] = Counter()
    claimed: set[str] = set()
    node_of_item = {g: caex.attribute_value(it, "Identifier") for g, it in items.items()}

    # measurement types and their views
    entries: list[MeasurementEntry] = []
    mt_by_id: dict[str, CaexElement] = {}
    tag_owner: dict[str, str] = {}
    instance_list = caex.find_by_path(doc, INSTANCE_LIST_PATH)
    for mt, p in mts:
        loc = _location(mt, p)
        mt_guid = mt.get("ID") or ""
        mt_by_id[mt_guid] = mt
        if instance_list is None or not any(c is mt for c in instance_list.children):
            err("MeasurementMisplaced", loc, f"MeasurementType must sit in {INSTANCE_LIST_PATH}")
        if not GUID_RE.match(mt_guid):
            err("BadGuid", loc, f"MeasurementType ID {mt_guid!r} is not a canonical UUID")
        endpoint = caex.attribute_value(mt, "ServerEndpoint")
        if not endpoint:
            err("MissingEndpoint", loc, "MeasurementType has no ServerEndpoint")
        device = mt.get("Name") or ""
        if device in tag_owner:
            err("DuplicateTagName", loc, f"device tag {device!r} used twice")
        tag_owner[device] = loc
        views = [v for v in mt.elements if v.get("RefBaseSystemUnitPath") == enrg_ref]
        if not views:
            err("EmptyMeasurementType", loc, "MeasurementType holds no EnRGView")
        view_entries: list[ViewEntry] = []
        for v in views:
            vp = p + (v.get("Name") or "",)
            vloc = _location(v, vp)
            values = _attr_values(v)
            names = [a.get("Name") for a in caex.attribute_elements(v)]
            for missing in [n for n in ATTRIBUTE_NAMES if n not in values]:
                err("AttributeMismatch", vloc, f"attribute {missing} of the EnRGView class is missing")
            for extra in [n for n in names if n not in ATTRIBUTE_NAMES]:
                err("AttributeMismatch", vloc, f"attribute {extra} is not defined by the EnRGView class")
            for n, c in Counter(names).items():
                if c > 1:
                    err("AttributeMismatch", vloc, f"attribute {n} appears {c} times")
            tag = values.get("TagName") or ""
            if tag != v.get("Name"):
                warn("TagNameMismatch", vloc, f"TagName {tag!r} differs from element name {v.get('Name')!r}")
            if tag in tag_owner:
                err("DuplicateTagName", vloc, f"tag name {tag!r} used twice")
            tag_owner[tag] = vloc

            resolved: dict[str, CaexElement] = {}
            for attr in EXPOSED_ATTRIBUTES:
                if attr not in values:
                    continue
                link = values[attr] or ""
                target = items.get(link)
                if target is not None:
                    resolved[attr] = target
                    referenced[link] += 1
                    if node_of_item.get(link) != node_id_for(tag, attr):
                        warn("NodeIdMismatch", link, f"item node {node_of_item.get(link)!r} for {tag}.{attr}")
                    continue
                if link in by_id:
                    err("BadLinkTarget", vloc, f"{attr} links to {link}, which is not an energy source item")
                    continue
                expected = node_id_for(tag, attr)
                orphans = [g for g, n in node_of_item.items() if n == expected]
                if orphans:
                    claimed.update(orphans)
                    err("DanglingGuid", vloc, f"{attr} links to {link!r}, which resolves to nothing")
                else:
                    err("MissingSourceItem", vloc, f"no source item for attribute {attr}")
            for attr in EXPOSED_ATTRIBUTES:
                if attr in values and values[attr] and not GUID_RE.match(values[attr]):
                    err("BadGuid", vloc, f"{attr} link {values[attr]!r} is not a canonical UUID")

            if len(resolved) == len(EXPOSED_ATTRIBUTES) and all(n in values for n in STATIC_ATTRIBUTES):
                texts = {n: values[n] or "" for n in STATIC_ATTRIBUTES}
                src: list[SourceItem] = []
                for attr in EXPOSED_ATTRIBUTES:
                    it = resolved[attr]
                    texts[attr] = caex.attribute_value(it, "DefaultValue") or ""
                    try:
                        access = Access(caex.attribute_value(it, "Access") or "")
                    except ValueError:
                        err("BadValue", it.get("ID"), f"illegal access literal on {tag}.{attr}")
                        access = Access.Read
                    src.append(SourceItem(attr, node_of_item[it.get("ID")] or "", it.get("ID"), access, texts[attr]))
                display = caex.attribute_value(resolved["VUnit"], "UnitDisplay") or ""
                try:
                    view = view_from_texts(texts, display)
                except (ValueError, KeyError) as exc:
                    err("BadValue", vloc, f"cannot read static values: {exc}")
                    continue
                for viol in validate_enrg_view(view, registry):
                    err(viol.code, vloc, f"{viol.field}: {viol.message}")
                view_entries.append(ViewEntry(v.get("ID") or "", view, tuple(src)))
        entries.append(MeasurementEntry(mt_guid, device, Scope(ScopeKind.Module), endpoint or "", tuple(view_entries)))

    for guid in item_ids:
        if referenced[guid] == 0 and guid not in claimed:
            err("ExtraSourceItem", guid, f"source item {node_of_item.get(guid)!r} is not linked from any EnRGView")
        elif referenced[guid] > 1:
            err("DuplicateLink", guid, f"source item linked {referenced[guid]} times")

    # measurement list
    scopes: dict[str, list[Scope]] = defaultdict(list)
    mlist = caex.find_by_path(doc, MEASUREMENT_LIST_PATH)
    if has_energy and mlist is None:
        err("MissingMeasurementList", MEASUREMENT_LIST_PATH, "energy-management MeasurementList missing")
    if mlist is not None:
        list_kind = {name: kind for kind, name in SCOPE_LISTS.items()}
        for group in mlist.elements:
            if group.name != "InternalElement":
                continue
            gname = group.get("Name") or ""
            if gname not in list_kind:
                err("IllegalScope", MEASUREMENT_LIST_PATH / gname, f"unknown measurement group {gname!r}")
            for ref in group.elements:
                if ref.name != "InternalElement":
                    continue
                rloc = ref.get("ID") or str(MEASUREMENT_LIST_PATH / gname / (ref.get("Name") or ""))
                refid = caex.attribute_value(ref, "RefID") or ""
                if refid not in mt_by_id:
                    err("DanglingReference", rloc, f"MeasurementList reference {refid!r} matches no MeasurementType")
                literal = caex.attribute_value(ref, "Scope") or ""
                try:
                    kind = ScopeKind(literal)
                except ValueError:
                    err("IllegalScope", rloc, f"scope literal {literal!r} is not Module, Service or Component")
                    continue
                if list_kind.get(gname) is not kind:
                    err("ScopeMismatch", rloc, f"{kind.value} reference stored in {gname}")
                try:
                    scope = Scope(kind, caex.attribute_value(ref, "Target") or "")
                except ValueError as exc:
                    err("IllegalScope", rloc, str(exc))
                    continue
                if refid in mt_by_id:
                    scopes[refid].append(scope)
    for i, entry in enumerate(entries):
        listed = scopes.get(entry.instance_guid, [])
        if not listed:
            err("UnlistedMeasurement", entry.instance_guid, "MeasurementType is not referenced from the MeasurementList")
        elif len(listed) > 1:
            err("DuplicateReference", entry.instance_guid, f"MeasurementType referenced {len(listed)} times")
        else:
            entries[i] = MeasurementEntry(entry.instance_guid, entry.device_tag, listed[0], entry.endpoint, entry.views)

    return report.sorted(), MeasurementRegistry(entries)


def validate_energy_mtp(doc: CaexDocument, registry: MidRegistry | None = None) -> ValidationReport:
    """Check placement, attribute sets and GUID links of the energy extension.

    A manifest without any energy content yields an empty report.
    """
    return _scan(doc, registry)[0]


def extract_measurement_registry(doc: CaexDocument, registry: MidRegistry | None = None) -> MeasurementRegistry:
    report, reg = _scan(doc, registry)
    if not report.ok:
        raise ExtractionFailed(report)
    return reg
