"""Environment preparation, test-case execution and SUT state restore.

A session owns the live connections to one SUT instance and a state
snapshot taken before any test traffic. Cases run as their bound
activity list, strictly in order; each pattern step renders its script
command and is routed by the first word to an internal tool handler
(cansend, probe, seedkey, fuzz, vulnscan). Expect steps examine the
frames produced by the preceding stimulus. Verdicts partition into
pass/fail/error/inconclusive; error is reserved for infrastructure
faults and never encodes an oracle outcome.
"""

from __future__ import annotations

import socket
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

from . import __version__
from .frames import Frame, FrameError, parse_line
from .fuzz_engine import PRNG_NAME, FuzzConfig, minimize, run_campaign
from .item_model import Exposure, Interface, InterfaceKind, ProbeConfig, fingerprint_sut
from .script_registry import RegistryError, ScriptRegistry, render_command
from .simulator import (
    EcuState,
    dump_state,
    handle_frame,
    load_state,
    official_key,
    weak_key,
)
from .tcg import SutDatabase, TestCase
from .vuln_scanner import VulnDbEntry, scan

DEFAULT_DEADLINE_MS = 500
VERDICTS = ("pass", "fail", "error", "inconclusive")

_TESTER_PRESENT = bytes([0x01, 0x3E])


class ExecutorError(RuntimeError):
    """Infrastructure fault: connectivity, configuration or protocol."""


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _payload(frame: Frame) -> bytes:
    """Service payload of a response frame (length byte honoured)."""
    if not frame.data:
        return b""
    return frame.data[1 : 1 + frame.data[0]]


# -- environment templates ---------------------------------------------


@dataclass
class EnvTemplate:
    """Serializable recipe for a test environment.

    ``configuration`` holds the SUT endpoint, applicable test
    categories and the preconditions that must hold before testing;
    ``interface_descriptions`` lists one record per logical interface
    with its stimulation parameters and verification procedure.
    """

    configuration: dict
    interface_descriptions: list[dict]

    def __post_init__(self) -> None:
        if not self.configuration or not self.interface_descriptions:
            raise ExecutorError(
                "environment template needs both a configuration and "
                "interface descriptions"
            )

    def to_dict(self) -> dict:
        return {
            "configuration": self.configuration,
            "interface_descriptions": self.interface_descriptions,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvTemplate":
        return cls(doc["configuration"], doc["interface_descriptions"])


def build_env_template(
    cases: list[TestCase],
    sutdb: SutDatabase,
    *,
    host: str,
    data_port: int,
    mgmt_port: int,
) -> EnvTemplate:
    """Merge the environmental needs of a batch of cases into one template."""
    if not cases:
        raise ExecutorError("cannot build an environment template from zero cases")
    interfaces: dict[str, dict] = {}
    preconditions: list[str] = []
    for case in cases:
        needs = case.environmental_needs
        for iface in needs.get("interfaces", []):
            params = dict(iface.get("params", {}))
            item_ref = params.get("item_ref", iface["logical"])
            endpoint = sutdb.endpoints.get(item_ref, {})
            interfaces.setdefault(
                item_ref,
                {
                    "logical": iface["logical"],
                    "kind": iface["kind"],
                    "item_ref": item_ref,
                    "bus": endpoint.get("bus", iface["logical"]),
                    "stimulation": {"protocol": "frame-lines-over-tcp", "params": params},
                    "verification": "read-response-frames",
                },
            )
        for pre in needs.get("preconditions", []):
            if pre not in preconditions:
                preconditions.append(pre)
    configuration = {
        "sut_id": sutdb.sut_id,
        "endpoint": {"host": host, "data_port": data_port, "mgmt_port": mgmt_port},
        "categories": sorted({c.method for c in cases}),
        "preconditions": preconditions,
    }
    return EnvTemplate(
        configuration=configuration,
        interface_descriptions=[interfaces[k] for k in sorted(interfaces)],
    )


# -- line-framed TCP channels -------------------------------------------


class _LineClient:
    """Newline-framed TCP client with per-read deadlines."""

    def __init__(self, host: str, port: int, connect_timeout: float = 2.0):
        try:
            self.sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as exc:
            raise ExecutorError(f"cannot connect to {host}:{port}: {exc}") from None
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.buf = b""

    def send_line(self, line: str) -> None:
        try:
            self.sock.settimeout(2.0)
            self.sock.sendall(line.encode() + b"\n")
        except OSError as exc:
            raise ExecutorError(f"connection lost while sending: {exc}") from None

    def recv_line(self, timeout: float) -> str | None:
        """Next line within ``timeout``; zero sweeps already-delivered bytes."""
        deadline = time.monotonic() + timeout
        while b"\n" not in self.buf:
            remaining = deadline - time.monotonic()
            try:
                self.sock.settimeout(max(remaining, 0.0))
                chunk = self.sock.recv(4096)
            except (BlockingIOError, socket.timeout):
                if remaining <= 0:
                    return None
                continue
            except OSError as exc:
                raise ExecutorError(f"connection lost while reading: {exc}") from None
            if not chunk:
                raise ExecutorError("peer closed the connection")
            self.buf += chunk
        line, self.buf = self.buf.split(b"\n", 1)
        return line.decode()

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class DataChannel:
    """Frame traffic for one bus."""

    def __init__(self, host: str, port: int):
        self.client = _LineClient(host, port)

    def send(self, frame: Frame) -> None:
        self.client.send_line(frame.to_line())

    def collect(self, first_wait: float, idle_gap: float) -> list[Frame]:
        """Read frames until the line goes quiet for ``idle_gap``."""
        frames: list[Frame] = []
        wait = first_wait
        while True:
            line = self.client.recv_line(wait)
            if line is None:
                return frames
            try:
                frames.append(parse_line(line))
            except FrameError:
                pass
            wait = idle_gap

    def drain(self) -> list[Frame]:
        return self.collect(0.0, 0.0)

    def close(self) -> None:
        self.client.close()


class MgmtChannel:
    """State management: dump and load opaque snapshots."""

    def __init__(self, host: str, port: int):
        self.client = _LineClient(host, port)

    def _command(self, line: str, timeout: float = 2.0) -> str:
        self.client.send_line(line)
        reply = self.client.recv_line(timeout)
        if reply is None:
            raise ExecutorError(f"management channel timed out on {line.split()[0]}")
        if not reply.startswith("OK"):
            raise ExecutorError(f"management command failed: {reply}")
        return reply[2:].strip()

    def dump(self) -> str:
        blob = self._command("DUMP")
        if not blob:
            raise ExecutorError("SUT returned an empty state dump")
        return blob

    def load(self, blob: str) -> None:
        self._command("LOAD " + blob)

    def close(self) -> None:
        self.client.close()


# -- sessions ------------------------------------------------------------


@dataclass
class Session:
    """Live connections plus the pre-attack snapshot they started from."""

    template: EnvTemplate
    channels: dict[str, DataChannel]
    mgmt: MgmtChannel
    pre_attack_snapshot: str
    started_at: str
    func_id: int

    def channel(self, bus: str) -> DataChannel:
        if bus not in self.channels:
            raise ExecutorError(f"no interface module for bus {bus!r}")
        return self.channels[bus]

    def default_channel(self) -> DataChannel:
        return self.channels[sorted(self.channels)[0]]

    def probe_alive(self, channel: DataChannel, wait: float) -> bool:
        channel.drain()
        channel.send(Frame(self.func_id, _TESTER_PRESENT))
        return bool(channel.collect(wait, 0.0))

    def close(self) -> None:
        for chan in self.channels.values():
            chan.close()
        self.mgmt.close()


def prepare_env(template: EnvTemplate, sutdb: SutDatabase) -> Session:
    """Connect, snapshot the SUT before any test traffic, check preconditions."""
    endpoint = template.configuration.get("endpoint", {})
    host = endpoint.get("host", "127.0.0.1")
    data_port = int(endpoint.get("data_port", 0))
    mgmt_port = int(endpoint.get("mgmt_port", 0))

    mgmt = MgmtChannel(host, mgmt_port)
    try:
        snapshot = mgmt.dump()
    except ExecutorError as exc:
        mgmt.close()
        raise ExecutorError(f"SUT does not support state snapshots: {exc}") from None

    channels: dict[str, DataChannel] = {}
    try:
        for iface in template.interface_descriptions:
            bus = iface["bus"]
            if bus not in channels:
                channels[bus] = DataChannel(host, data_port)
    except ExecutorError:
        for chan in channels.values():
            chan.close()
        mgmt.close()
        raise

    func_id = int(str(sutdb.dictionaries.get("func_id", "7df")), 16)
    session = Session(
        template=template,
        channels=channels,
        mgmt=mgmt,
        pre_attack_snapshot=snapshot,
        started_at=_now(),
        func_id=func_id,
    )

    for pre in template.configuration.get("preconditions", []):
        if pre == "env_ready":
            continue
        if pre == "sut_alive":
            if not session.probe_alive(session.default_channel(), 0.25):
                session.close()
                raise ExecutorError("precondition sut_alive failed: no probe response")
            continue
        session.close()
        raise ExecutorError(f"unknown precondition {pre!r}")
    return session


# -- in-process campaign transport ---------------------------------------


class StateTransport:
    """Fuzz transport over a forked ECU state.

    Campaigns run against the SUT's own dumped state through the pure
    transition function, which makes every frame, probe and response
    count a function of (state, seed) alone. Triggers found this way
    are afterwards confirmed over the wire against the live SUT.
    """

    def __init__(self, state: EcuState):
        self._snapshot = dump_state(state)
        self.state = load_state(self._snapshot)
        self._pending = 0

    def send(self, frame: Frame) -> None:
        self.state, responses = handle_frame(self.state, frame)
        self._pending += len(responses)

    def drain(self) -> int:
        n, self._pending = self._pending, 0
        return n

    def alive(self) -> bool:
        self.state, responses = handle_frame(
            self.state, Frame(0x7DF, _TESTER_PRESENT)
        )
        return bool(responses)

    def restore(self) -> None:
        self.state = load_state(self._snapshot)
        self._pending = 0


# -- execution -------------------------------------------------------------


@dataclass
class Resources:
    """Shared lookups and timing knobs for the tool handlers."""

    sutdb: SutDatabase
    vulndb: list[VulnDbEntry] = field(default_factory=list)
    probe_cfg: ProbeConfig = ProbeConfig()
    response_wait: float = 0.25
    idle_gap: float = 0.03


@dataclass
class StepRecord:
    step: dict
    command: str | None = None
    tx: list[str] = field(default_factory=list)
    rx: list[str] = field(default_factory=list)
    met: bool | None = None
    note: str = ""
    detail: dict = field(default_factory=dict)
    latency_ms: float | None = None

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "command": self.command,
            "tx": self.tx,
            "rx": self.rx,
            "met": self.met,
            "note": self.note,
            "detail": self.detail,
        }


@dataclass
class TestResult:
    case_ref: str
    verdict: str
    started_at: str
    duration_s: float
    step_log: list[StepRecord]
    oracle_evaluation: dict
    metadata: dict
    error: str = ""

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise ExecutorError(f"unknown verdict {self.verdict!r}")

    def to_dict(self) -> dict:
        """Timing lives apart from the repeatable result content."""
        return {
            "timing": {
                "started_at": self.started_at,
                "duration_s": self.duration_s,
                "step_latencies_ms": [r.latency_ms for r in self.step_log],
            },
            "result": {
                "case_ref": self.case_ref,
                "verdict": self.verdict,
                "step_log": [r.to_dict() for r in self.step_log],
                "oracle_evaluation": self.oracle_evaluation,
                "metadata": self.metadata,
                "error": self.error,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TestResult":
        res, timing = doc["result"], doc["timing"]
        records = [
            StepRecord(latency_ms=lat, **entry)
            for entry, lat in zip(res["step_log"], timing["step_latencies_ms"])
        ]
        return cls(
            case_ref=res["case_ref"],
            verdict=res["verdict"],
            started_at=timing["started_at"],
            duration_s=timing["duration_s"],
            step_log=records,
            oracle_evaluation=res["oracle_evaluation"],
            metadata=res["metadata"],
            error=res.get("error", ""),
        )


def _parse_kv(tokens: list[str], where: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for tok in tokens:
        if "=" not in tok:
            raise ExecutorError(f"{where}: expected key=value, got {tok!r}")
        key, value = tok.split("=", 1)
        out[key] = value
    return out


class _CaseRun:
    """One case execution: routes commands, accumulates the step log."""

    def __init__(self, case: TestCase, session: Session, resources: Resources,
                 registry: ScriptRegistry):
        self.case = case
        self.session = session
        self.res = resources
        self.registry = registry
        self.records: list[StepRecord] = []
        self.last_rx: list[Frame] = []
        self.last_channel: DataChannel | None = None
        self.fuzz_findings = 0
        self.scan_ran = False
        self.scan_findings = 0

    # -- tool handlers ---------------------------------------------------

    def _tool_cansend(self, argv: list[str], record: StepRecord) -> None:
        if len(argv) != 2:
            raise ExecutorError(f"cansend wants '<bus> <id>#<data>', got {argv}")
        bus, line = argv
        channel = self.session.channel(bus)
        try:
            frame = parse_line(line)
        except FrameError as exc:
            raise ExecutorError(f"cansend: bad frame {line!r}: {exc}") from None
        started = time.monotonic()
        channel.send(frame)
        rx = channel.collect(self.res.response_wait, self.res.idle_gap)
        record.latency_ms = (time.monotonic() - started) * 1000.0
        record.tx.append(frame.to_line())
        record.rx.extend(f.to_line() for f in rx)
        self.last_rx, self.last_channel = rx, channel

    def _tool_probe(self, argv: list[str], record: StepRecord) -> None:
        if len(argv) != 1:
            raise ExecutorError(f"probe wants '<bus>', got {argv}")
        channel = self.session.channel(argv[0])
        frame = Frame(self.session.func_id, _TESTER_PRESENT)
        started = time.monotonic()
        channel.send(frame)
        rx = channel.collect(self.res.response_wait, self.res.idle_gap)
        record.latency_ms = (time.monotonic() - started) * 1000.0
        record.tx.append(frame.to_line())
        record.rx.extend(f.to_line() for f in rx)
        record.note = "alive" if rx else "silent"
        self.last_rx, self.last_channel = rx, channel

    def _tool_seedkey(self, argv: list[str], record: StepRecord) -> None:
        if len(argv) != 4:
            raise ExecutorError(
                f"seedkey wants '<bus> <phys_id> <algorithm> <const>', got {argv}"
            )
        bus, phys_hex, algorithm, const_hex = argv
        channel = self.session.channel(bus)
        try:
            phys = int(phys_hex, 16)
            const = int(const_hex, 16)
        except ValueError as exc:
            raise ExecutorError(f"seedkey: bad hex argument: {exc}") from None
        derivations = {"add_xor": official_key, "weak_xor": weak_key}
        if algorithm not in derivations:
            raise ExecutorError(f"seedkey: unknown algorithm {algorithm!r}")

        started = time.monotonic()
        request = Frame(phys, bytes([0x02, 0x27, 0x01]))
        channel.send(request)
        rx = channel.collect(self.res.response_wait, self.res.idle_gap)
        record.tx.append(request.to_line())
        record.rx.extend(f.to_line() for f in rx)
        seed = None
        for frame in rx:
            payload = _payload(frame)
            if len(payload) >= 4 and payload[0] == 0x67 and payload[1] == 0x01:
                seed = (payload[2], payload[3])
        if seed is None:
            record.latency_ms = (time.monotonic() - started) * 1000.0
            record.note = "no seed granted"
            self.last_rx, self.last_channel = rx, channel
            return
        key = derivations[algorithm](seed, const)
        submit = Frame(phys, bytes([0x04, 0x27, 0x02, key[0], key[1]]))
        channel.send(submit)
        rx2 = channel.collect(self.res.response_wait, self.res.idle_gap)
        record.latency_ms = (time.monotonic() - started) * 1000.0
        record.tx.append(submit.to_line())
        record.rx.extend(f.to_line() for f in rx2)
        unlocked = any(
            _payload(f)[:2] == bytes([0x67, 0x02]) for f in rx2
        )
        record.note = "unlock achieved" if unlocked else "key rejected"
        record.detail = {
            "seed": f"{seed[0]:02x}{seed[1]:02x}",
            "algorithm": algorithm,
            "unlocked": unlocked,
        }
        self.last_rx, self.last_channel = rx + rx2, channel

    def _tool_fuzz(self, argv: list[str], record: StepRecord) -> None:
        if not argv:
            raise ExecutorError("fuzz wants '<bus> key=value...'")
        bus, kv = argv[0], _parse_kv(argv[1:], "fuzz")
        channel = self.session.channel(bus)
        for needed in ("budget", "seed", "probe_every", "corpus"):
            if needed not in kv:
                raise ExecutorError(f"fuzz: missing argument {needed!r}")
        corpus_lines = self.res.sutdb.dictionaries.get(kv["corpus"])
        if not isinstance(corpus_lines, list) or not corpus_lines:
            raise ExecutorError(
                f"fuzz: SUT database has no corpus dictionary {kv['corpus']!r}"
            )
        try:
            config = FuzzConfig(
                seed=int(kv["seed"]),
                budget=int(kv["budget"]),
                corpus=tuple(parse_line(line) for line in corpus_lines),
                probe_every=int(kv["probe_every"]),
            )
        except (ValueError, FrameError) as exc:
            raise ExecutorError(f"fuzz: bad campaign configuration: {exc}") from None

        started = time.monotonic()
        # The campaign runs against a fork of the SUT's dumped state, so
        # frame-by-frame behaviour is exactly reproducible; each trigger
        # is then confirmed over the wire against the live SUT.
        campaign_start = self.session.mgmt.dump()
        transport = StateTransport(load_state(campaign_start))
        result = run_campaign(config, transport)
        findings = [minimize(f, transport) for f in result.findings]

        confirmations = []
        for finding in findings:
            channel.drain()
            channel.send(finding.trigger_input)
            record.tx.append(finding.trigger_input.to_line())
            alive = self.session.probe_alive(channel, self.res.response_wait)
            confirmations.append(not alive)
            self.session.mgmt.load(campaign_start)
        record.latency_ms = (time.monotonic() - started) * 1000.0

        self.fuzz_findings += len(findings)
        record.note = f"{len(findings)} reproduced trigger(s)"
        record.detail = {
            "config": config.to_dict(),
            "stats": result.stats,
            "findings": [f.to_dict() for f in findings],
            "confirmed_on_wire": confirmations,
        }
        self.last_rx, self.last_channel = [], channel

    def _tool_vulnscan(self, argv: list[str], record: StepRecord) -> None:
        if len(argv) != 1:
            raise ExecutorError(f"vulnscan wants '<targets>', got {argv}")
        targets = [t for t in argv[0].split(",") if t]
        endpoint = self.session.template.configuration["endpoint"]
        known = {i["item_ref"] for i in self.session.template.interface_descriptions}
        started = time.monotonic()
        reports = []
        for target in targets:
            if target not in known:
                raise ExecutorError(f"vulnscan: no live endpoint for {target!r}")
            stub = Interface(
                id=target, component_ref="", kind=InterfaceKind.CANLIKE,
                exposure=Exposure.EXTERNAL,
            )
            fp = fingerprint_sut(
                stub, self.res.probe_cfg,
                endpoint=(endpoint["host"], int(endpoint["data_port"])),
            )
            report = scan(fp, self.res.vulndb)
            reports.append((fp, report))
            self.scan_ran = True
            self.scan_findings += len(report.findings)
        record.latency_ms = (time.monotonic() - started) * 1000.0
        record.note = (
            f"{sum(len(r.findings) for _, r in reports)} database match(es) "
            f"over {len(targets)} interface(s)"
        )
        record.detail = {
            "scans": [
                {
                    "target": report.target,
                    "session": report.session,
                    "fingerprint": {
                        "responding_request_ids": [
                            f"{i:03x}" for i in fp.responding_request_ids
                        ],
                        "supported_services": [
                            f"{s:02x}" for s in fp.supported_services
                        ],
                    },
                    "findings": [f.to_dict() for f in report.findings],
                    "followups": report.followups,
                }
                for fp, report in reports
            ]
        }
        self.last_rx, self.last_channel = [], None

    _TOOLS = {
        "cansend": _tool_cansend,
        "probe": _tool_probe,
        "seedkey": _tool_seedkey,
        "fuzz": _tool_fuzz,
        "vulnscan": _tool_vulnscan,
    }

    # -- step execution ----------------------------------------------------

    def run_pattern(self, step) -> None:
        record = StepRecord(step=step.to_dict())
        if step.script_ref is None or step.script_ref not in self.registry.scripts:
            raise ExecutorError(
                f"case {self.case.id!r}: no script registered as {step.script_ref!r}"
            )
        script = self.registry.scripts[step.script_ref]
        try:
            command = render_command(
                script, step.bound_args, self.res.sutdb.slot_values()
            )
        except RegistryError as exc:
            raise ExecutorError(str(exc)) from None
        record.command = command
        tool, *argv = command.split()
        handler = self._TOOLS.get(tool)
        if handler is None:
            raise ExecutorError(f"no interface module handles tool {tool!r}")
        handler(self, argv, record)
        self.records.append(record)

    def run_expect(self, step) -> None:
        record = StepRecord(step=step.to_dict())
        if self.last_channel is None and self.last_rx == [] and not self.records:
            raise ExecutorError("expect step without a preceding stimulus")
        deadline_ms = step.within_ms if step.within_ms is not None else DEFAULT_DEADLINE_MS
        deadline = time.monotonic() + deadline_ms / 1000.0
        matcher = step.name
        args = step.bound_args

        def matches(frame: Frame) -> bool:
            payload = _payload(frame)
            if matcher == "RESPONSE":
                service = int(args["service"], 16)
                return len(payload) >= 1 and payload[0] == (service + 0x40) & 0xFF
            if matcher == "NEG_RESPONSE":
                service = int(args["service"], 16)
                return (
                    len(payload) >= 2 and payload[0] == 0x7F and payload[1] == service
                )
            raise ExecutorError(f"unknown matcher {matcher!r}")

        examined = list(self.last_rx)
        if matcher == "NO_RESPONSE":
            while time.monotonic() < deadline and self.last_channel is not None:
                extra = self.last_channel.collect(
                    max(0.0, deadline - time.monotonic()), 0.0
                )
                examined.extend(extra)
            met = not examined
        else:
            met = any(matches(f) for f in examined)
            while not met and self.last_channel is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                extra = self.last_channel.collect(remaining, 0.0)
                if not extra:
                    break
                examined.extend(extra)
                self.last_rx.extend(extra)
                met = any(matches(f) for f in extra)
        record.rx = [f.to_line() for f in examined]
        record.met = met
        record.note = "matched" if met else "not matched"
        self.records.append(record)

    # -- oracle ------------------------------------------------------------

    def facts(self, final_probe_alive: bool) -> dict:
        all_rx = [
            parse_line(line) for r in self.records for line in r.rx
        ]
        expectations = [r.met for r in self.records if r.step["kind"] == "expect"]
        return {
            "expectations": expectations,
            "unlock_achieved": any(
                _payload(f)[:2] == bytes([0x67, 0x02]) for f in all_rx
            ),
            "write_accepted": any(
                _payload(f)[:1] == bytes([0x6E]) for f in all_rx
            ),
            "fuzz_findings": self.fuzz_findings,
            "scan_ran": self.scan_ran,
            "scan_findings": self.scan_findings,
            "final_probe_alive": final_probe_alive,
        }


def condition_holds(name: str, facts: dict) -> bool:
    """Evaluate one oracle condition against the recorded execution facts."""
    expectations = facts["expectations"]
    table = {
        "all_expectations_met": all(m is True for m in expectations),
        "any_expectation_missed": any(m is not True for m in expectations),
        "sut.alive": facts["final_probe_alive"] and facts["fuzz_findings"] == 0,
        "sut.crashed": facts["fuzz_findings"] > 0 or not facts["final_probe_alive"],
        "unlock.achieved": facts["unlock_achieved"],
        "write.accepted": facts["write_accepted"],
        "scan.findings": facts["scan_ran"] and facts["scan_findings"] > 0,
        "scan.clean": facts["scan_ran"] and facts["scan_findings"] == 0,
    }
    if name not in table:
        raise ExecutorError(f"unknown oracle condition {name!r}")
    return table[name]


def execute_case(
    case: TestCase,
    session: Session,
    resources: Resources,
    registry: ScriptRegistry,
) -> TestResult:
    """Run the case's activities in order and evaluate its oracle.

    Infrastructure faults surface as verdict ``error`` with whatever
    partial log exists; oracle outcomes never do.
    """
    started_at = _now()
    started = time.monotonic()
    run = _CaseRun(case, session, resources, registry)
    metadata = {
        "sut_id": resources.sutdb.sut_id,
        "tools": {"vecuforge": __version__},
        "prng": PRNG_NAME,
    }
    expected = case.expected_results
    oracle: dict = {
        "pass_condition": expected.get("pass_condition", ""),
        "fail_condition": expected.get("fail_condition", ""),
    }

    def finish(verdict: str, error: str = "") -> TestResult:
        return TestResult(
            case_ref=case.id,
            verdict=verdict,
            started_at=started_at,
            duration_s=round(time.monotonic() - started, 3),
            step_log=run.records,
            oracle_evaluation=oracle,
            metadata=metadata,
            error=error,
        )

    needed = {
        i.get("params", {}).get("item_ref", i["logical"])
        for i in case.environmental_needs.get("interfaces", [])
    }
    available = {i["item_ref"] for i in session.template.interface_descriptions}
    missing = sorted(needed - available)
    if missing:
        return finish("error", f"interface module missing for {missing}")

    try:
        if not session.probe_alive(session.default_channel(), resources.response_wait):
            return finish(
                "error", "precondition sut_alive failed before the first activity"
            )
        for step in case.activities:
            if step.kind == "pattern":
                run.run_pattern(step)
            elif step.kind == "expect":
                run.run_expect(step)
            else:
                raise ExecutorError(f"unknown activity kind {step.kind!r}")
        final_alive = session.probe_alive(
            session.default_channel(), resources.response_wait
        )
    except ExecutorError as exc:
        return finish("error", str(exc))
    facts = run.facts(final_alive)
    oracle["facts"] = facts
    try:
        fail_holds = condition_holds(oracle["fail_condition"], facts)
        pass_holds = condition_holds(oracle["pass_condition"], facts)
    except ExecutorError as exc:
        return finish("error", str(exc))
    oracle["pass_holds"] = pass_holds
    oracle["fail_holds"] = fail_holds

    if fail_holds:
        return finish("fail")
    if pass_holds:
        return finish("pass")
    return finish("inconclusive")


# -- restore ---------------------------------------------------------------


@dataclass
class CleanupReport:
    session_ref: str
    restored: bool
    verified: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "session_ref": self.session_ref,
            "restored": self.restored,
            "verified": self.verified,
            "detail": self.detail,
        }


def restore(session: Session, *, close: bool = False) -> CleanupReport:
    """Put the SUT back into the pre-attack snapshot and verify by re-dump."""
    ref = session.started_at
    try:
        for chan in session.channels.values():
            chan.drain()
        session.mgmt.load(session.pre_attack_snapshot)
        redump = session.mgmt.dump()
    except ExecutorError as exc:
        return CleanupReport(ref, restored=False, verified=False, detail=str(exc))
    finally:
        if close:
            session.close()
    if redump != session.pre_attack_snapshot:
        return CleanupReport(
            ref, restored=True, verified=False,
            detail="re-dumped state differs from the pre-attack snapshot",
        )
    return CleanupReport(ref, restored=True, verified=True)
