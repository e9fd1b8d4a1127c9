"""Seeded corruptions of an energy-extended manifest.

Each mutator takes a valid injected document and a ``random.Random`` and
returns a corrupted copy; ``EXPECTED_CODE`` names the validator error each
one must trigger.
"""

from __future__ import annotations

import copy
import random
from typing import Callable

from mtpenergy import caex_document as caex
from mtpenergy.caex_document import CaexDocument, CaexElement
from mtpenergy.enrg_model import EXPOSED_ATTRIBUTES
from mtpenergy.mtp_injector import (
    ENERGY_SERVER,
    ENRG_CLASS_PATH,
    MEASUREMENT_LIST_PATH,
    SOURCE_LIST_PATH,
    new_guid,
)


def _server(doc: CaexDocument) -> CaexElement:
    server = caex.find_by_path(doc, SOURCE_LIST_PATH / ENERGY_SERVER)
    if server is None:
        raise ValueError("document carries no energy source items to mutate")
    return server


def _items(doc: CaexDocument) -> list[CaexElement]:
    return [c for c in _server(doc).elements if c.name == "ExternalInterface"]


def _views(doc: CaexDocument) -> list[CaexElement]:
    ref = str(ENRG_CLASS_PATH)
    return [e for e in doc.iter() if e.name == "InternalElement" and e.get("RefBaseSystemUnitPath") == ref]


def _references(doc: CaexDocument) -> list[CaexElement]:
    mlist = caex.find_by_path(doc, MEASUREMENT_LIST_PATH)
    if mlist is None:
        raise ValueError("document has no MeasurementList")
    return [r for g in mlist.elements for r in g.elements if r.name == "InternalElement"]


def _set_value(elem: CaexElement, attribute: str, value: str) -> None:
    for a in caex.attribute_elements(elem):
        if a.get("Name") == attribute:
            for v in a.elements:
                if v.name == "Value":
                    v.text_content = value
                    return
    raise KeyError(attribute)


def dangling_guid(doc: CaexDocument, rng: random.Random) -> CaexDocument:
    out = doc.copy()
    view = rng.choice(_views(out))
    _set_value(view, rng.choice(EXPOSED_ATTRIBUTES), new_guid(rng))
    return out


def duplicate_guid(doc: CaexDocument, rng: random.Random) -> CaexDocument:
    out = doc.copy()
    a, b = rng.sample(_items(out), 2)
    b.set("ID", a.get("ID"))
    return out


def missing_source_item(doc: CaexDocument, rng: random.Random) -> CaexDocument:
    out = doc.copy()
    server = _server(out)
    victim = rng.choice(_items(out))
    server.children = [c for c in server.children if c is not victim]
    return out


def extra_source_item(doc: CaexDocument, rng: random.Random) -> CaexDocument:
    out = doc.copy()
    server = _server(out)
    template = rng.choice(_items(out))
    extra = copy.deepcopy(template)
    extra.set("ID", new_guid(rng))
    extra.set("Name", (template.get("Name") or "item") + "_extra")
    _set_value(extra, "Identifier", (caex.attribute_value(template, "Identifier") or "") + "_extra")
    caex.insert_child(server, extra)
    return out


def illegal_scope(doc: CaexDocument, rng: random.Random) -> CaexDocument:
    out = doc.copy()
    _set_value(rng.choice(_references(out)), "Scope", "Plant")
    return out


def attribute_mismatch(doc: CaexDocument, rng: random.Random) -> CaexDocument:
    out = doc.copy()
    view = rng.choice(_views(out))
    attrs = caex.attribute_elements(view)
    rng.choice(attrs).set("Name", "AccX")
    return out


def dangling_reference(doc: CaexDocument, rng: random.Random) -> CaexDocument:
    out = doc.copy()
    _set_value(rng.choice(_references(out)), "RefID", new_guid(rng))
    return out


Mutator = Callable[[CaexDocument, random.Random], CaexDocument]

MUTATORS: dict[str, Mutator] = {
    "dangling_guid": dangling_guid,
    "duplicate_guid": duplicate_guid,
    "missing_source_item": missing_source_item,
    "extra_source_item": extra_source_item,
    "illegal_scope": illegal_scope,
    "attribute_mismatch": attribute_mismatch,
}

EXPECTED_CODE = {
    "dangling_guid": "DanglingGuid",
    "duplicate_guid": "DuplicateGuid",
    "missing_source_item": "MissingSourceItem",
    "extra_source_item": "ExtraSourceItem",
    "illegal_scope": "IllegalScope",
    "attribute_mismatch": "AttributeMismatch",
    "dangling_reference": "DanglingReference",
}

# MeasurementList reference corruption; checked alongside the six above.
EXTRA_MUTATORS: dict[str, Mutator] = {"dangling_reference": dangling_reference}
