from __future__ import annotations

import random
from dataclasses import replace

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from mtpenergy import caex_document as caex, mtp_injector as injector
from mtpenergy.enrg_model import (
    ATTRIBUTE_NAMES,
    EXPOSED_ATTRIBUTES,
    AccuracyClass,
    AccuracyDomain,
    EngineeringUnit,
    MeasurementId,
    Resource,
    default_mid_registry,
)
from mtpenergy.errors import ParseError
from mtpenergy.mtp_injector import (
    ENRG_CLASS_PATH,
    GUID_RE,
    INDICATOR_PATH,
    MEASUREMENT_LIST_PATH,
    SOURCE_LIST_PATH,
    MeasurementSpec,
    Scope,
    ScopeKind,
    add_measurement_instance,
    extract_measurement_registry,
    inject_energy_library,
    validate_energy_mtp,
)
from mtpenergy.mutations import EXPECTED_CODE, EXTRA_MUTATORS, MUTATORS

from conftest import FIXTURES, PRISTINE, SPEC


def _items(doc):
    server = caex.find_by_path(doc, SOURCE_LIST_PATH / injector.ENERGY_SERVER)
    return [] if server is None else [c for c in server.elements if c.name == "ExternalInterface"]


def _views(doc):
    ref = str(ENRG_CLASS_PATH)
    return [e for e in doc.iter() if e.name == "InternalElement" and e.get("RefBaseSystemUnitPath") == ref]


def _fresh(pristine, spec, mids, seed=1):
    return add_measurement_instance(inject_energy_library(pristine), spec, random.Random(seed), mids)


# -- library ----------------------------------------------------------------


def test_enrg_class_has_thirteen_attributes(pristine_doc):
    doc = inject_energy_library(pristine_doc)
    group = caex.find_by_path(doc, INDICATOR_PATH)
    assert group is not None
    cls = caex.find_by_path(doc, ENRG_CLASS_PATH)
    assert cls is not None
    names = [a.get("Name") for a in caex.attribute_elements(cls)]
    assert names == list(ATTRIBUTE_NAMES)
    assert cls.get("RefBaseClassPath") == str(INDICATOR_PATH / "AnaView")


def test_energy_library_follows_data_object_library(pristine_doc):
    doc = inject_energy_library(pristine_doc)
    libs = [c.get("Name") for c in doc.root.elements]
    i = libs.index("MTPDataObjectSUCLib")
    assert libs[i + 1] == injector.EM_LIB
    assert caex.find_by_path(doc, "MTPDataTypeAttributeLib/IDLinkAttributeType") is not None


def test_library_injection_idempotent(pristine_doc):
    once = inject_energy_library(pristine_doc)
    twice = inject_energy_library(once)
    assert caex.serialize_caex(twice) == caex.serialize_caex(once)


def test_library_injection_leaves_input_alone(pristine_doc):
    before = caex.serialize_caex(pristine_doc)
    inject_energy_library(pristine_doc)
    assert caex.serialize_caex(pristine_doc) == before


def test_missing_anaview():
    doc = caex.parse_caex('<CAEXFile><SystemUnitClassLib Name="MTPDataObjectSUCLib"/></CAEXFile>')
    with pytest.raises(injector.MissingAnaView):
        inject_energy_library(doc)


def test_conflicting_enrg_class(pristine_doc):
    doc = inject_energy_library(pristine_doc)
    cls = caex.find_by_path(doc, ENRG_CLASS_PATH)
    cls.children.pop()
    with pytest.raises(injector.ConflictingDefinition):
        inject_energy_library(doc)


def test_instances_need_library(pristine_doc, compact_spec):
    with pytest.raises(injector.LibraryMissing):
        add_measurement_instance(pristine_doc, compact_spec)


def test_non_interference(pristine_doc, compact_spec, mids):
    doc = _fresh(pristine_doc, compact_spec, mids)
    touched = {"MTPDataObjectSUCLib", injector.EM_LIB, "MTPDataTypeAttributeLib", ""}
    for before in pristine_doc.root.elements:
        name = before.get("Name") or ""
        if name in touched or before.name == "InstanceHierarchy":
            continue
        assert caex.serialize_element(doc.root.child(name)) == caex.serialize_element(before)
    # inside the PEA only the injected subtrees differ
    for sub in ("InstanceList", "SourceList"):
        old = caex.find_by_path(pristine_doc, injector.PEA_PATH / "CommunicationSet" / sub).elements
        new = caex.find_by_path(doc, injector.PEA_PATH / "CommunicationSet" / sub).elements
        assert new[: len(old)] == old


# -- instances --------------------------------------------------------------


def test_one_view_gives_eleven_items(pristine_doc, compact_spec, mids):
    spec = replace(compact_spec, views=compact_spec.views[:1])
    doc = _fresh(pristine_doc, spec, mids)
    assert len(_items(doc)) == 11
    mts = [e for e in doc.iter() if e.get("RefBaseSystemUnitPath") == injector.MEASUREMENT_TYPE_CLASS]
    assert len(mts) == 1
    refs = [e for e in doc.iter() if e.get("RefBaseSystemUnitPath") == injector.MEASUREMENT_REF_CLASS]
    assert len(refs) == 1


def test_compact_meter_gives_33_distinct_guids(pristine_doc, compact_spec, mids):
    doc = _fresh(pristine_doc, compact_spec, mids)
    ids = [i.get("ID") for i in _items(doc)]
    assert len(ids) == 33
    assert len(set(ids)) == 33
    assert all(GUID_RE.match(i) for i in ids)


def test_links_resolve_both_ways(pristine_doc, compact_spec, mids):
    doc = _fresh(pristine_doc, compact_spec, mids)
    item_ids = {i.get("ID"): i for i in _items(doc)}
    linked = []
    for view in _views(doc):
        for attr in caex.attribute_elements(view):
            if attr.get("Name") in EXPOSED_ATTRIBUTES:
                target = caex.attribute_value(view, attr.get("Name"))
                assert target in item_ids
                assert caex.find_by_id(doc, target) is item_ids[target]
                linked.append(target)
    assert sorted(linked) == sorted(item_ids)


def test_counter_value_item_is_writable(pristine_doc, compact_spec, mids):
    doc = _fresh(pristine_doc, compact_spec, mids)
    access = {i.get("Name"): caex.attribute_value(i, "Access") for i in _items(doc)}
    assert access["EI001E.V"] == "ReadWrite"
    assert access["EI001P.V"] == "Read"
    assert access["EI001E.VbR"] == "Read"


def test_duplicate_tag_rejected(pristine_doc, compact_spec, mids):
    doc = _fresh(pristine_doc, compact_spec, mids)
    clash = replace(compact_spec, device_tag="EI009")
    with pytest.raises(injector.DuplicateTagName):
        add_measurement_instance(doc, clash, random.Random(2), mids)


def test_identical_readd_is_noop(pristine_doc, compact_spec, mids):
    doc = _fresh(pristine_doc, compact_spec, mids)
    again = add_measurement_instance(doc, compact_spec, random.Random(99), mids)
    assert caex.serialize_caex(again) == caex.serialize_caex(doc)


def test_repeated_view_tags_rejected(pristine_doc, compact_spec, mids):
    spec = replace(compact_spec, views=(compact_spec.views[0], compact_spec.views[0]))
    with pytest.raises(injector.DuplicateTagName):
        _fresh(pristine_doc, spec, mids)


def test_invalid_view_rejected(pristine_doc, compact_spec, mids):
    bad = replace(compact_spec.views[0], v_scl_min=10.0, v_scl_max=-10.0)
    with pytest.raises(injector.InvalidMeasurementSpec):
        _fresh(pristine_doc, replace(compact_spec, views=(bad,)), mids)


def test_seeded_injection_is_reproducible(pristine_doc, compact_spec, mids):
    a = caex.serialize_caex(_fresh(pristine_doc, compact_spec, mids, seed=5))
    b = caex.serialize_caex(_fresh(pristine_doc, compact_spec, mids, seed=5))
    c = caex.serialize_caex(_fresh(pristine_doc, compact_spec, mids, seed=6))
    assert a == b
    assert a != c


def test_unseeded_guids_are_fresh(pristine_doc, compact_spec, mids):
    lib = inject_energy_library(pristine_doc)
    a = {i.get("ID") for i in _items(add_measurement_instance(lib, compact_spec, None, mids))}
    b = {i.get("ID") for i in _items(add_measurement_instance(lib, compact_spec, None, mids))}
    assert not a & b


# -- spec files -------------------------------------------------------------


def test_spec_file_round_trip():
    specs = injector.load_measurement_specs(SPEC.read_text(encoding="utf-8"))
    assert injector.load_measurement_specs(injector.dump_measurement_specs(specs)) == specs


@pytest.mark.parametrize("text", ["{", "[]", '{"measurements": [{"scope": "Plant"}]}',
                                  '{"measurements": [{"scope": "Service", "device_tag": "X", '
                                  '"server_endpoint": "h:1", "views": []}]}'])
def test_bad_spec_files(text):
    with pytest.raises(ParseError):
        injector.load_measurement_specs(text)


def test_scope_target_rules():
    with pytest.raises(ValueError):
        Scope(ScopeKind.Module, "x")
    with pytest.raises(ValueError):
        Scope(ScopeKind.Service)


# -- extraction -------------------------------------------------------------


def test_unextended_registry_is_empty(pristine_doc, mids):
    assert extract_measurement_registry(pristine_doc, mids).entries == []


def test_extraction_counts(injected_doc, mids):
    reg = extract_measurement_registry(injected_doc, mids)
    assert len(reg.entries) == 1
    assert len(list(reg.views())) == 3
    assert len(reg.node_ids) == 33
    assert len(set(reg.node_ids)) == 33


def test_extraction_inverse(injected_doc, compact_spec, mids):
    entry = extract_measurement_registry(injected_doc, mids).entries[0]
    assert entry.to_spec() == compact_spec
    assert entry.endpoint == "127.0.0.1:4841"
    assert [v.tag_name for v in entry.views] == ["EI001VML1N", "EI001P", "EI001E"]
    assert all(len(v.items) == 11 for v in entry.views)


def test_extraction_of_multi_scope_fixture(mids):
    doc = caex.load_caex(FIXTURES / "distillation_multi_injected.aml")
    reg = extract_measurement_registry(doc, mids)
    scopes = {e.device_tag: e.scope for e in reg.entries}
    assert scopes == {
        "EI001": Scope(ScopeKind.Module),
        "EI002": Scope(ScopeKind.Service, "Distillation"),
        "EI003": Scope(ScopeKind.Component, "TI001"),
    }


def test_extraction_fails_on_dangling_guid(mids):
    doc = caex.load_caex(FIXTURES / "mutated_dangling_guid.aml")
    with pytest.raises(injector.ExtractionFailed) as info:
        extract_measurement_registry(doc, mids)
    assert "DanglingGuid" in {v.code for v in info.value.report.errors}


_unit = st.sampled_from([EngineeringUnit(5462, "V"), EngineeringUnit(5723220, "W"),
                         EngineeringUnit(5720146, "Wh"), EngineeringUnit(4937544, "kWh")])
_num = st.floats(-1e9, 1e9, allow_nan=False, allow_infinity=False)


@st.composite
def _view(draw, tag: str):
    lo = draw(_num)
    hi = draw(st.floats(lo, 2e9, allow_nan=False))
    return injector.EnRgView(
        tag_name=tag,
        tag_description=draw(st.text(st.characters(blacklist_categories=("Cs", "Cc")), max_size=20)),
        v=draw(st.floats(lo, hi, allow_nan=False)),
        v_unit=draw(_unit),
        v_scl_min=lo,
        v_scl_max=hi,
        acc_c=draw(st.sampled_from(AccuracyClass)),
        acc_d=draw(st.sampled_from(AccuracyDomain)),
        acc_r=draw(st.floats(0, 1e9)),
        mid=MeasurementId(draw(st.sampled_from([1001, 1002, 2001, 3001, 4001, 5001]))),
        vbr=draw(st.floats(0, 1e9)),
        mp=draw(st.integers(0, 2**31)),
        res=draw(st.sampled_from(Resource)),
    )


@st.composite
def _specs(draw):
    kind = draw(st.sampled_from(ScopeKind))
    target = "" if kind is ScopeKind.Module else draw(st.from_regex(r"\A[A-Za-z][A-Za-z0-9]{0,6}\Z"))
    device = draw(st.from_regex(r"\A[A-Z]{2}[0-9]{3}\Z"))
    n = draw(st.integers(1, 4))
    views = tuple(draw(_view(f"{device}V{i}")) for i in range(n))
    return MeasurementSpec(Scope(kind, target), device, views, draw(st.from_regex(r"\A[a-z0-9.]{1,12}:[0-9]{2,5}\Z")))


@given(_specs(), st.integers(0, 2**32))
@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
def test_inverse_property(spec, seed):
    mids = default_mid_registry()
    pristine = caex.load_caex(PRISTINE)
    doc = add_measurement_instance(inject_energy_library(pristine), spec, random.Random(seed), mids)
    # survives a trip through text as well
    doc = caex.parse_caex(caex.serialize_caex(doc))
    reg = extract_measurement_registry(doc, mids)
    assert [e.to_spec() for e in reg.entries] == [spec]
    assert len(reg.node_ids) == 11 * len(spec.views)
    assert validate_energy_mtp(doc, mids).ok


# -- validation -------------------------------------------------------------


def test_pristine_and_injected_are_clean(pristine_doc, injected_doc, mids):
    assert validate_energy_mtp(pristine_doc, mids).errors == []
    assert validate_energy_mtp(injected_doc, mids).errors == []


def test_deleted_item_names_attribute(injected_doc, mids):
    server = caex.find_by_path(injected_doc, SOURCE_LIST_PATH / injector.ENERGY_SERVER)
    victim = next(c for c in server.elements if c.get("Name") == "EI001P.AccR")
    server.children = [c for c in server.children if c is not victim]
    errors = validate_energy_mtp(injected_doc, mids).errors
    assert [e.code for e in errors] == ["MissingSourceItem"]
    assert "AccR" in errors[0].message


def test_random_reference_is_dangling(injected_doc, mids):
    bad = EXTRA_MUTATORS["dangling_reference"](injected_doc, random.Random(3))
    assert "DanglingReference" in {e.code for e in validate_energy_mtp(bad, mids).errors}


def test_missing_measurement_list(injected_doc, mids):
    aspect = caex.find_by_path(injected_doc, MEASUREMENT_LIST_PATH)
    parent = caex.find_parent(injected_doc, aspect)
    parent.children = [c for c in parent.children if c is not aspect]
    assert "MissingMeasurementList" in {e.code for e in validate_energy_mtp(injected_doc, mids).errors}


def test_report_rendering(injected_doc, mids):
    bad = MUTATORS["illegal_scope"](injected_doc, random.Random(0))
    text = validate_energy_mtp(bad, mids).sorted().render()
    lines = text.splitlines()
    assert lines[-1].endswith("warning(s)")
    assert all(line.count("\t") == 3 for line in lines[:-1])


@pytest.mark.parametrize("name", sorted({**MUTATORS, **EXTRA_MUTATORS}))
def test_mutation_fixtures(name, mids):
    doc = caex.load_caex(FIXTURES / f"mutated_{name}.aml")
    codes = {e.code for e in validate_energy_mtp(doc, mids).errors}
    assert EXPECTED_CODE[name] in codes


@given(st.sampled_from(sorted({**MUTATORS, **EXTRA_MUTATORS})), st.integers(0, 2**32))
@settings(max_examples=60, deadline=None)
def test_mutations_always_detected(name, seed):
    doc = caex.load_caex(FIXTURES / "distillation_pea_injected.aml")
    mutate = {**MUTATORS, **EXTRA_MUTATORS}[name]
    bad = mutate(doc, random.Random(seed))
    codes = {e.code for e in validate_energy_mtp(bad, default_mid_registry()).errors}
    assert EXPECTED_CODE[name] in codes
