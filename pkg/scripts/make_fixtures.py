"""Regenerate the derived fixtures under fixtures/ and the schemas under specs/.

Run from the repository root:  python3 scripts/make_fixtures.py
Output is deterministic (seeded GUIDs), so re-running leaves git clean.
"""

from __future__ import annotations

import copy
import json
import random
import shutil
from dataclasses import replace
from importlib import resources
from pathlib import Path

from mtpenergy import caex_document as caex
from mtpenergy.enrg_model import default_mid_registry
from mtpenergy.mtp_injector import (
    Scope,
    ScopeKind,
    add_measurement_instance,
    dump_measurement_specs,
    inject_energy_library,
    load_measurement_specs,
)
from mtpenergy.mutations import EXTRA_MUTATORS, MUTATORS

ROOT = Path(__file__).resolve().parent.parent
FIX = ROOT / "fixtures"
SEED = 42


def inject(doc: caex.CaexDocument, specs, seed: int) -> caex.CaexDocument:
    rng = random.Random(seed)
    mids = default_mid_registry()
    out = inject_energy_library(doc)
    for spec in specs:
        out = add_measurement_instance(out, spec, rng, mids)
    return out


def renamed(spec, device: str, scope: Scope):
    views = tuple(replace(v, tag_name=device + v.tag_name[5:],
                          tag_description=v.tag_description.replace("001", device[2:]))
                  for v in spec.views)
    return replace(spec, device_tag=device, scope=scope, views=views)


def multi_scope_specs(base):
    return [
        base,
        renamed(base, "EI002", Scope(ScopeKind.Service, "Distillation")),
        renamed(base, "EI003", Scope(ScopeKind.Component, "TI001")),
    ]


def multi_profile() -> dict:
    signals = {}
    for i, level in ((1, 100.0), (2, 250.0), (3, 40.0)):
        d = f"EI00{i}"
        signals[f"{d}VML1N/V"] = {"kind": "sine", "offset": 230.0, "amplitude": 5.0, "period_ms": 10000}
        signals[f"{d}P/V"] = {"kind": "constant", "level": level}
        signals[f"{d}E/V"] = {"kind": "counter", "source_node": f"{d}P/V", "scale": 1 / 3.6e6}
    return {"seed": 11, "tick_ms": 100, "signals": signals}


MIXED = """<?xml version="1.0" encoding="UTF-8"?>
<!-- synthetic: mixed content, comments, processing instructions, unicode -->
<?app-hint keep="yes"?>
<CAEXFile FileName="mixed.aml" SchemaVersion="3.0" xmlns="http://www.dke.de/CAEX">
  <Description>Druckbehälter Ü-7 &amp; "Kühlung" &lt;A&gt; note</Description>
  <InstanceHierarchy Name="Plant">
    <!-- inline note -->
    <InternalElement Name="Tank" ID="11111111-2222-4333-8444-555555555555">
      <Description>level <b>high</b> warning</Description>
      <?render mode="bold"?>
      <Attribute Name="Volume" AttributeDataType="xs:double"><Value>  12.5  </Value></Attribute>
      <Attribute Name="Label"><Value><![CDATA[<raw> & text]]></Value></Attribute>
    </InternalElement>
  </InstanceHierarchy>
</CAEXFile>
<!-- trailing comment -->
"""

NAMESPACED = """<?xml version="1.0" encoding="UTF-8"?>
<caex:CAEXFile xmlns:caex="http://www.dke.de/CAEX" xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance" caex:FileName="ns.aml" xsi:schemaLocation="x y">
  <caex:InstanceHierarchy Name="NS">
    <caex:InternalElement Name="Pump" ID="aaaaaaaa-bbbb-4ccc-8ddd-eeeeeeeeeeee" xsi:type="T"/>
  </caex:InstanceHierarchy>
</caex:CAEXFile>
"""


def large_manifest(base_doc: caex.CaexDocument, base_spec) -> caex.CaexDocument:
    specs = [base_spec]
    for i in range(2, 41):
        kind = (ScopeKind.Module, ScopeKind.Service, ScopeKind.Component)[i % 3]
        target = {"Module": "", "Service": "Heating", "Component": f"C{i:03d}"}[kind.value]
        specs.append(renamed(base_spec, f"EI{i:03d}", Scope(kind, target)))
    return inject(base_doc, specs, 1234)


def main() -> None:
    pristine = caex.load_caex(FIX / "distillation_pea.aml")
    specs = load_measurement_specs((FIX / "compact_meter_spec.json").read_text(encoding="utf-8"))

    injected = inject(pristine, specs, SEED)
    caex.save_caex(injected, FIX / "distillation_pea_injected.aml")

    for name, mutate in {**MUTATORS, **EXTRA_MUTATORS}.items():
        caex.save_caex(mutate(injected, random.Random(SEED)), FIX / f"mutated_{name}.aml")

    multi = multi_scope_specs(specs[0])
    (FIX / "multi_scope_spec.json").write_text(dump_measurement_specs(multi), encoding="utf-8")
    caex.save_caex(inject(pristine, multi, SEED), FIX / "distillation_multi_injected.aml")
    (FIX / "multi_scope_profile.json").write_text(json.dumps(multi_profile(), indent=2) + "\n", encoding="utf-8")

    # sine profile with one counter reset half way through a 600-tick run
    reset = json.loads((FIX / "distillation_sine_profile.json").read_text(encoding="utf-8"))
    reset["resets"] = [{"node": "EI001E/V", "tick": 300}]
    (FIX / "distillation_reset_profile.json").write_text(json.dumps(reset, indent=2) + "\n", encoding="utf-8")

    syn = FIX / "synthetic"
    syn.mkdir(exist_ok=True)
    (syn / "mixed_content.aml").write_text(MIXED, encoding="utf-8")
    (syn / "namespaced.aml").write_text(NAMESPACED, encoding="utf-8")
    caex.save_caex(large_manifest(copy.deepcopy(pristine), specs[0]), syn / "large_injected.aml")

    specs_dir = ROOT / "specs"
    specs_dir.mkdir(exist_ok=True)
    for name in ("measurement_spec.schema.json", "profile.schema.json"):
        src = resources.files("mtpenergy").joinpath(f"data/{name}")
        with resources.as_file(src) as p:
            shutil.copyfile(p, specs_dir / name)
    print("fixtures regenerated")


if __name__ == "__main__":
    main()
