"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N <name>: PASS|FAIL (detail)`` line
to the terminal and then asserts, so the verdicts read the same with or
without ``-s``.
"""

from __future__ import annotations

import csv
import io
import json
import random
import re
import subprocess
import sys
import time
from pathlib import Path

import pytest

from mtpenergy import caex_document as caex, pol_client, tagbus
from mtpenergy.enrg_model import ATTRIBUTE_NAMES, EXPOSED_ATTRIBUTES, default_mid_registry
from mtpenergy.mtp_injector import (
    ENERGY_SERVER,
    ENRG_CLASS_PATH,
    GUID_RE,
    INDICATOR_PATH,
    SOURCE_LIST_PATH,
    extract_measurement_registry,
    load_measurement_specs,
    validate_energy_mtp,
)
from mtpenergy.mutations import EXPECTED_CODE, EXTRA_MUTATORS, MUTATORS
from mtpenergy.pea_sim import Session
from mtpenergy.pol_client import TagClient
from mtpenergy.tagbus import Error, Hello

from conftest import FIXTURES, PRISTINE, RESET_PROFILE, SINE_PROFILE, SPEC, SYNTHETIC, serving

PYTHON = [sys.executable, "-m", "mtpenergy"]
TICKS = 600
ACCELERATE = 300


@pytest.fixture()
def verdict(capsys):
    def report(number: int, name: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number} {name}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f" ({detail})"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return report


def _cli(*args: str, check: bool = True) -> subprocess.CompletedProcess:
    proc = subprocess.run([*PYTHON, *args], capture_output=True, text=True, timeout=120)
    if check and proc.returncode != 0:
        raise AssertionError(f"mtpenergy {args[0]} exited {proc.returncode}: {proc.stderr}")
    return proc


def _serve_and_monitor(manifest: Path, profile: Path, log: Path, ticks: int = TICKS) -> float:
    """Run ``serve`` and ``monitor`` as separate processes; returns wall seconds."""
    start = time.monotonic()
    server = subprocess.Popen(
        [*PYTHON, "serve", "--mtp", str(manifest), "--profile", str(profile), "--port", "0",
         "--ticks", str(ticks), "--accelerate", str(ACCELERATE)],
        stderr=subprocess.PIPE, text=True,
    )
    try:
        banner = server.stderr.readline()
        match = re.search(r"on (\S+:\d+)$", banner.strip())
        assert match, f"no endpoint in server banner {banner!r}"
        _cli("monitor", "--mtp", str(manifest), "--connect", match.group(1),
             "--ticks", str(ticks), "--log", str(log))
        assert server.wait(timeout=30) == 0
    finally:
        if server.poll() is None:
            server.kill()
            server.wait()
        server.stderr.close()
    return time.monotonic() - start


@pytest.fixture(scope="module")
def injected_path(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("inject") / "pea_energy.aml"
    _cli("inject", "--mtp", str(PRISTINE), "--measurements", str(SPEC), "--out", str(out), "--seed", "42")
    return out


def test_criterion_1_round_trip(verdict):
    manifests = [PRISTINE, *SYNTHETIC]
    start = time.perf_counter()
    failures = []
    for path in manifests:
        text = path.read_text(encoding="utf-8")
        first = caex.parse_caex(text)
        canonical = caex.serialize_caex(first)
        second = caex.parse_caex(canonical)
        if second != first:
            failures.append(f"{path.name}: structure changed")
        if caex.serialize_caex(second) != canonical:
            failures.append(f"{path.name}: canonical form not stable")
    elapsed = time.perf_counter() - start
    ok = len(manifests) >= 4 and not failures and elapsed < 1.0
    verdict(1, "round-trip fidelity", ok,
            f"{len(manifests)} manifests in {elapsed:.3f}s" + (f"; {failures}" if failures else ""))


def test_criterion_2_injection(verdict, injected_path, tmp_path):
    problems = []
    validation = _cli("validate", str(injected_path), check=False)
    if validation.returncode != 0 or not validation.stdout.startswith("0 error(s)"):
        problems.append(f"validate: {validation.stdout.strip()!r}")
    doc = caex.load_caex(injected_path)
    cls = caex.find_by_path(doc, ENRG_CLASS_PATH)
    if cls is None or ENRG_CLASS_PATH.segments[: len(INDICATOR_PATH.segments)] != INDICATOR_PATH.segments:
        problems.append("EnRGView class not under the IndicatorElement group")
        names = []
    else:
        names = [a.get("Name") for a in caex.attribute_elements(cls)]
        if names != list(ATTRIBUTE_NAMES) or len(names) != 13:
            problems.append(f"class attributes {names}")

    items = caex.find_by_path(doc, SOURCE_LIST_PATH / ENERGY_SERVER).elements
    ids = [i.get("ID") for i in items]
    if len(ids) != 33 or len(set(ids)) != 33 or not all(GUID_RE.match(i or "") for i in ids):
        problems.append(f"{len(ids)} source items, {len(set(ids))} distinct GUIDs")
    # forward: every exposed view attribute names an item; backward: every item is named once
    by_id = {i.get("ID"): i for i in items}
    linked = []
    views = [e for e in doc.iter()
             if e.name == "InternalElement" and e.get("RefBaseSystemUnitPath") == str(ENRG_CLASS_PATH)]
    for view in views:
        for name in EXPOSED_ATTRIBUTES:
            target = caex.attribute_value(view, name)
            if target not in by_id or caex.find_by_id(doc, target) is not by_id[target]:
                problems.append(f"{view.get('Name')}.{name} -> {target} does not resolve")
            linked.append(target)
    if sorted(linked) != sorted(ids):
        problems.append("item GUIDs and view links are not a bijection")

    again = tmp_path / "again.aml"
    _cli("inject", "--mtp", str(injected_path), "--measurements", str(SPEC), "--out", str(again), "--seed", "42")
    if again.read_bytes() != injected_path.read_bytes():
        problems.append("re-running inject changed the file")
    verdict(2, "injection correctness", not problems,
            f"{len(names)} attributes, {len(set(ids))} GUIDs, {len(views)} views" + (f"; {problems}" if problems else ""))


def test_criterion_3_extraction_inverse(verdict, injected_path):
    spec = load_measurement_specs(SPEC.read_text(encoding="utf-8"))[0]
    registry = extract_measurement_registry(caex.load_caex(injected_path), default_mid_registry())
    entry = registry.entries[0]
    problems = []
    if len(registry.entries) != 1:
        problems.append(f"{len(registry.entries)} entries")
    if entry.to_spec() != spec:
        problems.append("recovered spec differs")
    checks = {
        "tag names": ([v.tag_name for v in entry.views], [v.tag_name for v in spec.views]),
        "scope": (entry.scope, spec.scope),
        "device tag": (entry.device_tag, spec.device_tag),
        "endpoint": (entry.endpoint, spec.server_endpoint),
        "mids": ([v.mid for v in entry.views], [v.mid for v in spec.views]),
        "resources": ([v.resource for v in entry.views], [v.res for v in spec.views]),
        "units": ([v.view.v_unit for v in entry.views], [v.v_unit for v in spec.views]),
        "item counts": ([len(v.items) for v in entry.views], [len(EXPOSED_ATTRIBUTES)] * len(spec.views)),
    }
    problems += [name for name, (got, want) in checks.items() if got != want]
    verdict(3, "extraction inverse", not problems, ", ".join(problems) or "all fields recovered")


def test_criterion_4_mutation_detection(verdict):
    mids = default_mid_registry()
    pristine = validate_energy_mtp(caex.load_caex(FIXTURES / "distillation_pea_injected.aml"), mids)
    missed = []
    names = sorted(MUTATORS)
    for name in names:
        report = validate_energy_mtp(caex.load_caex(FIXTURES / f"mutated_{name}.aml"), mids)
        if EXPECTED_CODE[name] not in {v.code for v in report.errors}:
            missed.append(name)
    for name in sorted(EXTRA_MUTATORS):
        report = validate_energy_mtp(caex.load_caex(FIXTURES / f"mutated_{name}.aml"), mids)
        if EXPECTED_CODE[name] not in {v.code for v in report.errors}:
            missed.append(name)
    ok = len(names) == 6 and not missed and not pristine.errors
    verdict(4, "mutation detection", ok,
            f"{len(names)} + {len(EXTRA_MUTATORS)} mutants caught, pristine errors {len(pristine.errors)}"
            + (f"; missed {missed}" if missed else ""))


def _report(manifest: Path, log: Path, fmt: str) -> str:
    return _cli("report", "--log", str(log), "--mtp", str(manifest), "--format", fmt).stdout


def test_criterion_5_energy_cross_check(verdict, injected_path, tmp_path):
    log = tmp_path / "session.ndjson"
    wall = _serve_and_monitor(injected_path, SINE_PROFILE, log)
    data = json.loads(_report(injected_path, log, "json"))
    (check,) = data["cross_check"]
    samples = pol_client.SampleLog.load(log)
    n = len(samples.get("EI001E/V"))
    total = data["resources"]["Electricity"]["energy"]
    ok = (check["relative_gap"] < 0.005 and total == check["counter_delta"]
          and n == TICKS + 1 and wall < 5.0)
    verdict(5, "energy cross-check", ok,
            f"gap {check['relative_gap']:.3e}, total {total!r} Wh, counter delta {check['counter_delta']!r} Wh, "
            f"{n} counter samples, wall {wall:.2f}s")


def test_criterion_6_reset_semantics(verdict, injected_path, tmp_path):
    reset_log, twin_log = tmp_path / "reset.ndjson", tmp_path / "twin.ndjson"
    _serve_and_monitor(injected_path, RESET_PROFILE, reset_log)
    _serve_and_monitor(injected_path, SINE_PROFILE, twin_log)
    with_reset = pol_client.SampleLog.load(reset_log)
    counter = with_reset.get("EI001E/V")
    drops = [i for i in range(1, len(counter)) if counter[i].value < counter[i - 1].value]
    vbr = {s.t_ms: s.value for s in with_reset.get("EI001E/VbR")}
    problems = []
    if len(drops) != 1:
        problems.append(f"{len(drops)} counter drops")
        observed = pre = None
    else:
        pre = counter[drops[0] - 1].value
        observed = vbr.get(counter[drops[0]].t_ms)
        if observed != pre:
            problems.append(f"VbR {observed!r} != pre-reset {pre!r}")
    a = json.loads(_report(injected_path, reset_log, "json"))["resources"]["Electricity"]["energy"]
    b = json.loads(_report(injected_path, twin_log, "json"))["resources"]["Electricity"]["energy"]
    rel = abs(a - b) / abs(b)
    if not rel <= 1e-9:
        problems.append(f"totals differ by {rel:.3e}")
    verdict(6, "reset semantics", not problems,
            f"VbR {observed!r} vs pre-reset {pre!r}, totals {a!r} / {b!r} (rel {rel:.1e})"
            + (f"; {problems}" if problems else ""))


def test_criterion_7_determinism(verdict, injected_path, tmp_path):
    logs = [tmp_path / "a.ndjson", tmp_path / "b.ndjson"]
    for log in logs:
        _serve_and_monitor(injected_path, SINE_PROFILE, log)
    csvs = [_report(injected_path, log, "csv") for log in logs]
    same_log = logs[0].read_bytes() == logs[1].read_bytes()
    same_csv = csvs[0] == csvs[1]
    rows = list(csv.reader(io.StringIO(csvs[0])))
    verdict(7, "determinism", same_log and same_csv and len(rows) > 1,
            f"logs identical {same_log} ({logs[0].stat().st_size} bytes), csv identical {same_csv}")


def _fuzz_frames(rng: random.Random, count: int) -> list[bytes]:
    valid = [
        tagbus.encode_message(m).rstrip(b"\n")
        for m in (Hello("pol"), tagbus.Browse(), tagbus.Read(("EI001E/V",), 2),
                  tagbus.Subscribe(("EI001P/V",), 100, 3), tagbus.Reset("EI001E/V", 4))
    ]
    frames = []
    for i in range(count):
        kind = i % 3
        if kind == 0:
            frame = bytes(rng.getrandbits(8) for _ in range(rng.randint(1, 64))).replace(b"\n", b"")
            frame = frame or b"\x00"
        elif kind == 1:
            whole = rng.choice(valid)
            frame = whole[: rng.randint(1, len(whole) - 1)]
        else:
            op = "".join(rng.choice("abcdefghijklmnopqrstuvwxyz_") for _ in range(rng.randint(1, 12)))
            if op in tagbus.OPS:
                op += "_x"
            frame = json.dumps({"op": op, "id": rng.randint(0, 99)}).encode()
        frames.append(frame)
    return frames


def test_criterion_8_protocol_robustness(verdict, registry, mids):
    from mtpenergy.pea_sim import Simulator, load_profile

    sim = Simulator(registry, load_profile(SINE_PROFILE.read_text(encoding="utf-8"), registry, mids), mids)
    rng = random.Random(2024)
    frames = _fuzz_frames(rng, 10_500)
    session = Session()
    errors = strikes = crashes = 0
    for frame in frames:
        before = session.strikes
        try:
            replies = sim.handle_line(frame, session)
        except Exception:  # noqa: BLE001 - any escape is a failure to count
            crashes += 1
            continue
        if replies and all(isinstance(r, Error) for r in replies):
            errors += 1
        if session.strikes > before:
            strikes += 1
        if not (replies and all(isinstance(r, Error) for r in replies)) and session.strikes == before:
            crashes += 1
        if session.closed:
            session = Session()

    # the same kind of traffic over real sockets, then a clean handshake
    socket_frames = _fuzz_frames(random.Random(7), 600)
    alive = False
    with serving(profile=SINE_PROFILE) as (endpoint, server):
        for start in range(0, len(socket_frames), 50):
            with TagClient(endpoint, timeout=5) as client:
                client.sock.sendall(b"".join(f + b"\n" for f in socket_frames[start:start + 50]))
                while client.recv() is not None:
                    pass
        with TagClient(endpoint, timeout=5) as client:
            client.send(Hello("pol"))
            alive = client.recv() == Hello("pea", 1)

    ok = len(frames) >= 10_000 and crashes == 0 and alive
    verdict(8, "protocol robustness", ok,
            f"{len(frames)} frames: {errors} error replies, {strikes} strikes, {crashes} unhandled; "
            f"{len(socket_frames)} socket frames, server alive {alive}")
