from __future__ import annotations

import contextlib
from pathlib import Path

import pytest

from mtpenergy import caex_document as caex, pea_sim
from mtpenergy.enrg_model import default_mid_registry
from mtpenergy.mtp_injector import extract_measurement_registry, load_measurement_specs

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
PRISTINE = FIXTURES / "distillation_pea.aml"
INJECTED = FIXTURES / "distillation_pea_injected.aml"
MULTI = FIXTURES / "distillation_multi_injected.aml"
SPEC = FIXTURES / "compact_meter_spec.json"
PROFILE = FIXTURES / "distillation_profile.json"
SINE_PROFILE = FIXTURES / "distillation_sine_profile.json"
RESET_PROFILE = FIXTURES / "distillation_reset_profile.json"
MULTI_PROFILE = FIXTURES / "multi_scope_profile.json"
SYNTHETIC = sorted((FIXTURES / "synthetic").glob("*.aml"))


@pytest.fixture(scope="session")
def mids():
    return default_mid_registry()


@pytest.fixture()
def pristine_doc():
    return caex.load_caex(PRISTINE)


@pytest.fixture()
def injected_doc():
    return caex.load_caex(INJECTED)


@pytest.fixture(scope="session")
def compact_spec():
    return load_measurement_specs(SPEC.read_text(encoding="utf-8"))[0]


@pytest.fixture(scope="session")
def registry(mids):
    return extract_measurement_registry(caex.load_caex(INJECTED), mids)


@contextlib.contextmanager
def serving(manifest: Path = INJECTED, profile: Path = PROFILE, ticks: int | None = None,
            accelerate: float = 200.0):
    """Run an in-process simulated PEA; yields (endpoint, server)."""
    mids = default_mid_registry()
    reg = pea_sim.load_served_registry(manifest, mids)
    prof = pea_sim.load_profile(profile.read_text(encoding="utf-8"), reg, mids)
    server = pea_sim.PeaServer(pea_sim.Simulator(reg, prof, mids), accelerate=accelerate, ticks=ticks)
    host, port = server.start()
    try:
        yield f"{host}:{port}", server
    finally:
        server.shutdown()
        server.wait(5)
