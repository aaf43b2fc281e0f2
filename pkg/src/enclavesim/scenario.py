"""Scenario files: run one program under one policy across several secrets.

A scenario is a TOML file:

    program = "ex1.asm"
    device = "timer"            # or a path to a device script
    policy = "sl"
    fuel = 2000

    [[secrets]]
    id = "ok"
    patch = [[0x9000, 0x0042]]  # word writes applied before reset

    [[probes]]
    kind = "latency"
    at = 23

    [[asserts]]
    kind = "equal"              # equal | diff | value
    probe = "latency@23"

Probes are computed from the recorded trace after the run; the machine
itself is never instrumented. Values are attacker-visible numbers, so
"equal" across secrets is the interesting property for a secure policy
and "diff" is the leak demonstration for an insecure one.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .asm import assemble_file
from .cpu import Policy, make_machine
from .device import Timer, load_device_script
from .memory import Layout, set_word
from .regs import PC
from .traces import RunResult, coarse_trace, run_machine


@dataclass(frozen=True)
class Probe:
    kind: str
    at: int | None = None
    period: int | None = None

    @property
    def label(self) -> str:
        if self.at is not None:
            return f"{self.kind}@{self.at}"
        if self.period is not None:
            return f"{self.kind}@{self.period}"
        return self.kind


@dataclass(frozen=True)
class Secret:
    id: str
    patch: tuple  # ((addr, word), ...)


@dataclass(frozen=True)
class Check:
    kind: str  # 'equal' | 'diff' | 'value'
    probe: str
    secret: str | None = None
    expect: int | None = None


@dataclass
class Scenario:
    name: str
    program: str
    device: str
    policy: Policy
    fuel: int
    secrets: list[Secret]
    probes: list[Probe]
    checks: list[Check] = field(default_factory=list)
    base_dir: str = "."


@dataclass
class ScenarioResult:
    scenario: Scenario
    layout: Layout
    rows: list  # (secret_id, probe_label, value)
    failures: list
    runs: dict  # secret_id -> RunResult
    machines: dict = field(default_factory=dict)  # secret_id -> final Machine

    @property
    def ok(self) -> bool:
        return not self.failures


class ScenarioError(Exception):
    pass


_PROBE_KINDS = ("start_to_end", "latency", "resume_to_end", "int_count")


def load_scenario(path: str) -> Scenario:
    with open(path, "rb") as f:
        doc = tomllib.load(f)
    base = os.path.dirname(os.path.abspath(path))
    name = os.path.splitext(os.path.basename(path))[0]
    try:
        policy = Policy(doc.get("policy", "sh"))
    except ValueError:
        raise ScenarioError(f"unknown policy {doc.get('policy')!r}") from None
    secrets = []
    for s in doc.get("secrets", [{"id": "default", "patch": []}]):
        patch = tuple((int(a), int(w)) for a, w in s.get("patch", []))
        secrets.append(Secret(str(s["id"]), patch))
    if not secrets:
        secrets = [Secret("default", ())]
    probes = []
    for p in doc.get("probes", []):
        kind = p["kind"]
        if kind not in _PROBE_KINDS:
            raise ScenarioError(f"unknown probe kind {kind!r}")
        probes.append(Probe(kind, p.get("at"), p.get("period")))
    checks = []
    for a in doc.get("asserts", []):
        kind = a["kind"]
        if kind not in ("equal", "diff", "value"):
            raise ScenarioError(f"unknown assert kind {kind!r}")
        checks.append(Check(kind, a["probe"], a.get("secret"), a.get("expect")))
    return Scenario(
        name=name,
        program=doc["program"],
        device=doc.get("device", "timer"),
        policy=policy,
        fuel=int(doc.get("fuel", 10000)),
        secrets=secrets,
        probes=probes,
        checks=checks,
        base_dir=base,
    )


def build_device(spec: str, base_dir: str = "."):
    if spec == "timer":
        return Timer()
    path = spec if os.path.isabs(spec) else os.path.join(base_dir, spec)
    return load_device_script(path)


def measure(probe: Probe, run: RunResult, layout: Layout):
    """Extract one attacker-visible number from a finished run.

    Returns None when the trace never reaches the probed event.
    """
    fine = run.fine
    if probe.kind == "start_to_end":
        for c in coarse_trace(fine):
            if c.kind == "jmpout":
                return c.dt
        return None
    if probe.kind == "latency":
        if probe.at is None:
            raise ScenarioError("latency probe needs 'at'")
        for obs in fine:
            if obs.pre_pc == layout.isr:
                return obs.pre_t - probe.at
        return None
    if probe.kind == "resume_to_end":
        reti_post = None
        for obs in fine:
            if reti_post is None:
                if obs.kind == "reti":
                    reti_post = obs.post_t
            elif obs.kind == "jmpout":
                return obs.post_t - reti_post
        return None
    if probe.kind == "int_count":
        return sum(1 for obs in fine if obs.kind == "handle")
    raise ScenarioError(f"unknown probe kind {probe.kind!r}")


def run_scenario(sc: Scenario, want_snapshots: bool = False) -> ScenarioResult:
    prog_path = sc.program if os.path.isabs(sc.program) else os.path.join(sc.base_dir, sc.program)
    image, layout, _ = assemble_file(prog_path)
    device = build_device(sc.device, sc.base_dir)

    rows = []
    runs = {}
    machines = {}
    values: dict[tuple[str, str], object] = {}
    for secret in sc.secrets:
        mem = bytearray(image)
        for addr, word in secret.patch:
            set_word(mem, addr, word)
        m = make_machine(mem, layout, device, sc.policy)
        run = run_machine(m, sc.fuel, want_snapshots=want_snapshots)
        runs[secret.id] = run
        machines[secret.id] = m
        for probe in sc.probes:
            v = measure(probe, run, layout)
            rows.append((secret.id, probe.label, v))
            values[(secret.id, probe.label)] = v

    failures = []
    for chk in sc.checks:
        got = [values.get((s.id, chk.probe)) for s in sc.secrets]
        if any(v is None for v in got):
            missing = [s.id for s, v in zip(sc.secrets, got) if v is None]
            failures.append(f"{chk.probe}: no value for secrets {missing}")
            continue
        if chk.kind == "equal":
            if len(set(got)) != 1:
                failures.append(f"{chk.probe}: expected equal across secrets, got {got}")
        elif chk.kind == "diff":
            if len(set(got)) == 1:
                failures.append(f"{chk.probe}: expected differing values, got {got}")
        elif chk.kind == "value":
            if chk.secret is None:
                failures.append(f"{chk.probe}: value assert needs a secret id")
                continue
            v = values.get((chk.secret, chk.probe))
            if v != chk.expect:
                failures.append(f"{chk.probe}[{chk.secret}]: expected {chk.expect}, got {v}")
    return ScenarioResult(sc, layout, rows, failures, runs, machines)


def report_csv(res: ScenarioResult) -> str:
    lines = ["scenario,secret,probe,value"]
    for sid, label, v in res.rows:
        lines.append(f"{res.scenario.name},{sid},{label},{'' if v is None else v}")
    return "\n".join(lines) + "\n"
