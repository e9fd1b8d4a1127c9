"""EnRGView: the energy measurement record carried by the extended AnaView.

Besides the record itself this module holds the value enumerations, the
measurement-ID registry and the checks applied to a single view.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from mtpenergy.errors import MtpEnergyError, ParseError

MID_REGISTRY_ENV = "MTPENERGY_MID_REGISTRY"


class UnknownAccuracy(MtpEnergyError):
    pass


class UnknownMid(MtpEnergyError, KeyError):
    pass


class UnassignedMid(MtpEnergyError, KeyError):
    pass


class DuplicateCode(ParseError):
    pass


@dataclass(frozen=True)
class EngineeringUnit:
    unit_id: int
    display: str

    def __post_init__(self) -> None:
        if not self.display:
            raise ValueError("unit display text must not be empty")


class AccuracyClass(enum.Enum):
    C0_1 = "C0_1"
    C0_2 = "C0_2"
    C0_5 = "C0_5"
    C1 = "C1"
    C2 = "C2"
    C3 = "C3"
    Unknown = "Unknown"

    @property
    def percentage(self) -> float | None:
        return _ACCURACY_PERCENT.get(self)


_ACCURACY_PERCENT = {
    AccuracyClass.C0_1: 0.1,
    AccuracyClass.C0_2: 0.2,
    AccuracyClass.C0_5: 0.5,
    AccuracyClass.C1: 1.0,
    AccuracyClass.C2: 2.0,
    AccuracyClass.C3: 3.0,
}


class AccuracyDomain(enum.Enum):
    CurrentValue = "CurrentValue"
    MeasurementSeries = "MeasurementSeries"


class Resource(enum.Enum):
    Electricity = "Electricity"
    Gas = "Gas"
    Coal = "Coal"
    Water = "Water"
    Steam = "Steam"
    CompressedAir = "CompressedAir"
    Heat = "Heat"
    Other = "Other"


class QuantityClass(enum.Enum):
    Instantaneous = "Instantaneous"
    Counter = "Counter"


@dataclass(frozen=True, order=True)
class MeasurementId:
    code: int

    def __post_init__(self) -> None:
        if self.code < 0:
            raise ValueError("measurement id must be non-negative")

    @property
    def assigned(self) -> bool:
        return self.code > 0


@dataclass(frozen=True)
class EnRgView:
    tag_name: str
    tag_description: str
    v: float
    v_unit: EngineeringUnit
    v_scl_min: float
    v_scl_max: float
    acc_c: AccuracyClass
    acc_d: AccuracyDomain
    acc_r: float
    mid: MeasurementId
    vbr: float
    mp: int
    res: Resource


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    field: str


# -- attribute table -------------------------------------------------------


@dataclass(frozen=True)
class AttributeDef:
    name: str
    field: str
    data_type: str
    description: str
    exposed: bool


ATTRIBUTES: tuple[AttributeDef, ...] = (
    AttributeDef("TagName", "tag_name", "xs:string", "Measuring point name", False),
    AttributeDef("TagDescription", "tag_description", "xs:string", "Measuring point description", False),
    AttributeDef("V", "v", "xs:double", "Measurement value", True),
    AttributeDef("VUnit", "v_unit", "xs:unsignedInt", "Engineering unit of V (UNECE code)", True),
    AttributeDef("VSclMin", "v_scl_min", "xs:double", "Scale minimum of V", True),
    AttributeDef("VSclMax", "v_scl_max", "xs:double", "Scale maximum of V", True),
    AttributeDef("AccC", "acc_c", "xs:string", "Accuracy class", True),
    AttributeDef("AccD", "acc_d", "xs:string", "Accuracy domain", True),
    AttributeDef("AccR", "acc_r", "xs:double", "Accuracy range (full-scale value)", True),
    AttributeDef("MID", "mid", "xs:unsignedInt", "Measurement ID", True),
    AttributeDef("VbR", "vbr", "xs:double", "Value before last counter reset", True),
    AttributeDef("MP", "mp", "xs:unsignedInt", "Measurement period in ms", True),
    AttributeDef("Res", "res", "xs:string", "Measured energy resource", True),
)
ATTRIBUTE_NAMES = tuple(a.name for a in ATTRIBUTES)
EXPOSED_ATTRIBUTES = tuple(a.name for a in ATTRIBUTES if a.exposed)
STATIC_ATTRIBUTES = tuple(a.name for a in ATTRIBUTES if not a.exposed)
_BY_NAME = {a.name: a for a in ATTRIBUTES}


def attribute_value(view: EnRgView, name: str) -> float | int | str:
    """Wire/manifest value of one attribute; enums become their literal, VUnit its code."""
    value = getattr(view, _BY_NAME[name].field)
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, EngineeringUnit):
        return value.unit_id
    if isinstance(value, MeasurementId):
        return value.code
    return value


def format_value(value: float | int | str) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def view_from_texts(texts: dict[str, str], unit_display: str) -> EnRgView:
    """Rebuild a view from attribute value texts as stored in a manifest.

    Raises ValueError/KeyError on unparsable values.
    """
    return EnRgView(
        tag_name=texts["TagName"],
        tag_description=texts["TagDescription"],
        v=float(texts["V"]),
        v_unit=EngineeringUnit(int(texts["VUnit"]), unit_display),
        v_scl_min=float(texts["VSclMin"]),
        v_scl_max=float(texts["VSclMax"]),
        acc_c=AccuracyClass(texts["AccC"]),
        acc_d=AccuracyDomain(texts["AccD"]),
        acc_r=float(texts["AccR"]),
        mid=MeasurementId(int(texts["MID"])),
        vbr=float(texts["VbR"]),
        mp=int(texts["MP"]),
        res=Resource(texts["Res"]),
    )


# -- MID registry ----------------------------------------------------------


@dataclass(frozen=True)
class MidEntry:
    code: int
    kind: str
    quantity_class: QuantityClass
    canonical_unit: EngineeringUnit


@dataclass
class MidRegistry:
    entries: dict[int, MidEntry] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, code: int) -> bool:
        return code in self.entries

    def is_counter(self, mid: MeasurementId | int) -> bool:
        code = mid.code if isinstance(mid, MeasurementId) else mid
        entry = self.entries.get(code)
        return entry is not None and entry.quantity_class is QuantityClass.Counter


def load_mid_registry(text: str) -> MidRegistry:
    """Parse ``code;kind;quantity_class;unit_display;unit_id`` lines."""
    reg = MidRegistry()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(";")]
        if len(parts) != 5:
            raise ParseError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        code_s, kind, qclass, display, unit_id = parts
        try:
            code = int(code_s)
            entry = MidEntry(code, kind, QuantityClass(qclass), EngineeringUnit(int(unit_id), display))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
        if code <= 0 or not kind:
            raise ParseError(f"line {lineno}: code must be positive and kind non-empty")
        if code in reg.entries:
            raise DuplicateCode(f"line {lineno}: code {code} defined twice")
        reg.entries[code] = entry
    return reg


def default_mid_registry() -> MidRegistry:
    """Registry from ``$MTPENERGY_MID_REGISTRY`` or the bundled default file."""
    override = os.environ.get(MID_REGISTRY_ENV)
    if override:
        return load_mid_registry(Path(override).read_text(encoding="utf-8"))
    text = resources.files("mtpenergy").joinpath("data/mid_registry.txt").read_text(encoding="utf-8")
    return load_mid_registry(text)


def decode_measurement_id(reg: MidRegistry, mid: MeasurementId | int) -> MidEntry:
    code = mid.code if isinstance(mid, MeasurementId) else mid
    if code == 0:
        raise UnassignedMid("measurement id 0 is unassigned")
    try:
        return reg.entries[code]
    except KeyError:
        raise UnknownMid(f"measurement id {code} not in registry") from None


# -- checks ----------------------------------------------------------------


def validate_enrg_view(
    view: EnRgView,
    registry: MidRegistry | None = None,
    out_of_range_flagged: bool = False,
) -> list[Violation]:
    """Check a view's invariants; the result is empty when the view is sound.

    A value outside the scale range is accepted only when the caller says it
    was flagged out of range by the source. Counter checks need *registry*.
    """
    out: list[Violation] = []
    if not view.tag_name:
        out.append(Violation("EmptyTagName", "tag_name must not be empty", "tag_name"))
    elif "/" in view.tag_name or view.tag_name.strip() != view.tag_name:
        out.append(Violation("BadTagName", f"tag_name {view.tag_name!r} is not address-safe", "tag_name"))
    numbers = {"v": view.v, "v_scl_min": view.v_scl_min, "v_scl_max": view.v_scl_max,
               "acc_r": view.acc_r, "vbr": view.vbr}
    for name, value in numbers.items():
        if not math.isfinite(value):
            out.append(Violation("NonFinite", f"{name} is {value}", name))
    if view.v_scl_min > view.v_scl_max:
        out.append(Violation(
            "ScaleInverted", f"v_scl_min {view.v_scl_min} > v_scl_max {view.v_scl_max}", "v_scl_min"))
    elif not out_of_range_flagged and not (view.v_scl_min <= view.v <= view.v_scl_max):
        out.append(Violation(
            "ValueOutOfScale", f"v {view.v} outside [{view.v_scl_min}, {view.v_scl_max}]", "v"))
    if view.acc_r < 0:
        out.append(Violation("NegativeAccuracyRange", f"acc_r {view.acc_r} < 0", "acc_r"))
    if view.mp < 0:
        out.append(Violation("NegativePeriod", f"mp {view.mp} < 0", "mp"))
    if not view.mid.assigned:
        out.append(Violation("UnassignedMid", "measurement id 0 is unassigned", "mid"))
    elif registry is not None:
        entry = registry.entries.get(view.mid.code)
        if entry is None:
            out.append(Violation("UnknownMid", f"measurement id {view.mid.code} not in registry", "mid"))
        elif entry.quantity_class is QuantityClass.Counter and view.vbr < 0:
            out.append(Violation("NegativeVbR", f"vbr {view.vbr} < 0 on counter", "vbr"))
    return out


def accuracy_interval(view: EnRgView) -> tuple[float, float]:
    """Interval ``v +/- percentage(acc_c) * acc_r / 100``.

    The half-width references the full-scale value acc_r regardless of the
    accuracy domain, which is carried as metadata only.
    """
    pct = view.acc_c.percentage
    if pct is None:
        raise UnknownAccuracy(f"{view.tag_name}: accuracy class is Unknown")
    half = pct / 100.0 * view.acc_r
    return (view.v - half, view.v + half)


# -- unit scaling for integration ------------------------------------------

POWER_TO_W = {"W": 1.0, "kW": 1e3, "MW": 1e6}
ENERGY_TO_WH = {"Wh": 1.0, "kWh": 1e3, "MWh": 1e6, "J": 1 / 3600.0, "kJ": 1 / 3.6, "MJ": 1e3 / 3.6}


def is_power_unit(display: str) -> bool:
    return display in POWER_TO_W


def is_energy_unit(display: str) -> bool:
    return display in ENERGY_TO_WH
