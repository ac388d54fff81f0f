"""Item definition: what we believe the unit under test looks like.

An item file (JSON) declares the boundary, functions, components,
interfaces and security goals. Fingerprinting then asks the live SUT
what is actually there, and reconcile() reports where declaration and
observation disagree.

Fingerprinting strategy: sweep request ids over a configurable range
with tester-present probes, then sweep single service bytes 0x00-0x7F
on every id that answered. Single-byte probes cannot mutate SUT state,
so the SUT is left in its initial session. The sweep is blind when the
SUT does not answer tester present at all; that case reports an empty
surface, which reconcile() will flag against the declaration.
"""

from __future__ import annotations

import json
import socket
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum

from .frames import Frame, FrameError, parse_line


class ItemError(ValueError):
    """Malformed item file or violated model invariant."""


class FingerprintError(RuntimeError):
    """SUT unreachable or probe budget exhausted."""


class InterfaceKind(str, Enum):
    CANLIKE = "canlike"
    DIAG = "diag"
    DEBUG = "debug"


class Exposure(str, Enum):
    EXTERNAL = "external"
    INTERNAL = "internal"


class SecurityProperty(str, Enum):
    CONFIDENTIALITY = "confidentiality"
    INTEGRITY = "integrity"
    AUTHENTICATION = "authentication"
    AVAILABILITY = "availability"
    AUTHORIZATION = "authorization"
    NON_REPUDIATION = "non_repudiation"


@dataclass(frozen=True)
class Function:
    id: str
    name: str
    description: str = ""
    kind: str = ""


@dataclass(frozen=True)
class Component:
    id: str
    name: str
    description: str = ""


@dataclass(frozen=True)
class Interface:
    id: str
    component_ref: str
    kind: InterfaceKind
    exposure: Exposure
    address: tuple[tuple[str, str], ...] = ()

    @property
    def address_map(self) -> dict[str, str]:
        return dict(self.address)


@dataclass(frozen=True)
class SecurityGoal:
    id: str
    property: SecurityProperty
    target_ref: str
    statement: str


@dataclass
class Item:
    id: str
    name: str
    boundary: str
    functions: list[Function] = field(default_factory=list)
    components: list[Component] = field(default_factory=list)
    interfaces: list[Interface] = field(default_factory=list)
    security_goals: list[SecurityGoal] = field(default_factory=list)
    config_params: dict = field(default_factory=dict)

    def element_ids(self) -> set[str]:
        return (
            {f.id for f in self.functions}
            | {c.id for c in self.components}
            | {i.id for i in self.interfaces}
            | {g.id for g in self.security_goals}
        )

    def interface(self, iface_id: str) -> Interface:
        for iface in self.interfaces:
            if iface.id == iface_id:
                return iface
        raise ItemError(f"interface {iface_id!r} not in item {self.id!r}")


def _require(doc: dict, key: str, where: str) -> object:
    if key not in doc:
        raise ItemError(f"{where} is missing required field {key!r}")
    return doc[key]


def _enum(cls, raw: object, where: str):
    try:
        return cls(raw)
    except ValueError:
        allowed = ", ".join(e.value for e in cls)
        raise ItemError(f"{where}: {raw!r} is not one of {allowed}") from None


def item_from_dict(doc: dict) -> Item:
    item = Item(
        id=str(_require(doc, "id", "item")),
        name=str(_require(doc, "name", "item")),
        boundary=str(_require(doc, "boundary", "item")),
        functions=[
            Function(
                id=str(_require(f, "id", "function")),
                name=str(_require(f, "name", "function")),
                description=str(f.get("description", "")),
                kind=str(f.get("kind", "")),
            )
            for f in doc.get("functions", [])
        ],
        components=[
            Component(
                id=str(_require(c, "id", "component")),
                name=str(_require(c, "name", "component")),
                description=str(c.get("description", "")),
            )
            for c in doc.get("components", [])
        ],
        interfaces=[
            Interface(
                id=str(_require(i, "id", "interface")),
                component_ref=str(_require(i, "component_ref", "interface")),
                kind=_enum(InterfaceKind, _require(i, "kind", "interface"), f"interface {i.get('id')}"),
                exposure=_enum(Exposure, _require(i, "exposure", "interface"), f"interface {i.get('id')}"),
                address=tuple(sorted((str(k), str(v)) for k, v in i.get("address", {}).items())),
            )
            for i in doc.get("interfaces", [])
        ],
        security_goals=[
            SecurityGoal(
                id=str(_require(g, "id", "security goal")),
                property=_enum(SecurityProperty, _require(g, "property", "security goal"), f"goal {g.get('id')}"),
                target_ref=str(_require(g, "target_ref", "security goal")),
                statement=str(_require(g, "statement", "security goal")),
            )
            for g in doc.get("security_goals", [])
        ],
        config_params=dict(doc.get("config_params", {})),
    )
    validate_item(item)
    return item


def validate_item(item: Item) -> None:
    if not item.boundary.strip():
        raise ItemError(f"item {item.id!r}: boundary must be non-empty")
    if not item.interfaces:
        raise ItemError(f"item {item.id!r}: at least one interface is required")
    seen: set[str] = set()
    for eid in (
        [f.id for f in item.functions]
        + [c.id for c in item.components]
        + [i.id for i in item.interfaces]
        + [g.id for g in item.security_goals]
    ):
        if eid in seen:
            raise ItemError(f"duplicate id {eid!r} within item {item.id!r}")
        seen.add(eid)
    component_ids = {c.id for c in item.components}
    for iface in item.interfaces:
        if iface.component_ref not in component_ids:
            raise ItemError(
                f"interface {iface.id!r} references unknown component {iface.component_ref!r}"
            )
        if iface.exposure is Exposure.EXTERNAL and not iface.address:
            raise ItemError(f"external interface {iface.id!r} needs a non-empty address")
    for goal in item.security_goals:
        if goal.target_ref not in item.element_ids():
            raise ItemError(f"goal {goal.id!r} targets unknown element {goal.target_ref!r}")


def load_item(path: str) -> Item:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ItemError(f"{path}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ItemError(f"{path}: top level must be an object")
    return item_from_dict(doc)


def serialize_item(item: Item) -> dict:
    return {
        "id": item.id,
        "name": item.name,
        "boundary": item.boundary,
        "functions": [
            {"id": f.id, "name": f.name, "description": f.description, "kind": f.kind}
            for f in item.functions
        ],
        "components": [
            {"id": c.id, "name": c.name, "description": c.description} for c in item.components
        ],
        "interfaces": [
            {
                "id": i.id,
                "component_ref": i.component_ref,
                "kind": i.kind.value,
                "exposure": i.exposure.value,
                "address": dict(i.address),
            }
            for i in item.interfaces
        ],
        "security_goals": [
            {"id": g.id, "property": g.property.value, "target_ref": g.target_ref, "statement": g.statement}
            for g in item.security_goals
        ],
        "config_params": item.config_params,
    }


def save_item(item: Item, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(serialize_item(item), fh, indent=2, sort_keys=True)
        fh.write("\n")


def declared_services(item: Item) -> set[int]:
    """Service bytes the item claims to expose (config key declared_services)."""
    raw = item.config_params.get("declared_services", [])
    return {int(str(v), 16) for v in raw}


# -- fingerprinting -----------------------------------------------------


@dataclass(frozen=True)
class ProbeConfig:
    id_range: tuple[int, int] = (0x7D0, 0x7FF)
    service_range: tuple[int, int] = (0x00, 0x7F)
    probe_timeout: float = 0.01
    budget: float | None = None


@dataclass
class FingerprintReport:
    probed_interface: str
    responding_request_ids: list[int]
    supported_services: list[int]
    banners: dict[int, bytes]
    timestamp: str

    def __post_init__(self) -> None:
        self.responding_request_ids = sorted(set(self.responding_request_ids))
        self.supported_services = sorted(set(self.supported_services))
        missing = [s for s in self.supported_services if s not in self.banners]
        if missing:
            raise ItemError(f"fingerprint lists services without banners: {missing}")

    def to_dict(self) -> dict:
        return {
            "probed_interface": self.probed_interface,
            "responding_request_ids": [f"{i:03x}" for i in self.responding_request_ids],
            "supported_services": [f"{s:02x}" for s in self.supported_services],
            "banners": {f"{s:02x}": b.hex() for s, b in sorted(self.banners.items())},
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FingerprintReport":
        return cls(
            probed_interface=doc["probed_interface"],
            responding_request_ids=[int(v, 16) for v in doc["responding_request_ids"]],
            supported_services=[int(v, 16) for v in doc["supported_services"]],
            banners={int(k, 16): bytes.fromhex(v) for k, v in doc["banners"].items()},
            timestamp=doc["timestamp"],
        )


class _ProbeChannel:
    """Line-framed probe connection with per-read timeouts."""

    def __init__(self, host: str, port: int):
        try:
            self.sock = socket.create_connection((host, port), timeout=2.0)
        except OSError as exc:
            raise FingerprintError(f"SUT unreachable at {host}:{port}: {exc}") from None
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.buf = b""

    def probe(self, frame: Frame, timeout: float) -> Frame | None:
        """Send one frame, return the first response line within timeout."""
        self.sock.sendall(frame.to_line().encode() + b"\n")
        deadline = time.monotonic() + timeout
        while b"\n" not in self.buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            self.sock.settimeout(remaining)
            try:
                chunk = self.sock.recv(4096)
            except socket.timeout:
                return None
            except OSError as exc:
                raise FingerprintError(f"connection lost during probe: {exc}") from None
            if not chunk:
                raise FingerprintError("SUT closed the connection during probing")
            self.buf += chunk
        line, self.buf = self.buf.split(b"\n", 1)
        try:
            return parse_line(line.decode())
        except FrameError:
            return None

    def close(self) -> None:
        self.sock.close()


def fingerprint_sut(
    interface: Interface,
    probe_cfg: ProbeConfig = ProbeConfig(),
    endpoint: tuple[str, int] | None = None,
) -> FingerprintReport:
    """Actively enumerate responding request ids and service bytes.

    ``endpoint`` overrides the host/port from the interface address,
    which is useful when the live SUT was started on an ephemeral port.
    """
    addr = interface.address_map
    if endpoint is None:
        if "host" not in addr or "port" not in addr:
            raise FingerprintError(f"interface {interface.id!r} has no host/port address")
        endpoint = (addr["host"], int(addr["port"]))

    started = time.monotonic()

    def check_budget() -> None:
        if probe_cfg.budget is not None and time.monotonic() - started > probe_cfg.budget:
            raise FingerprintError(
                f"timeout budget exceeded ({probe_cfg.budget}s) while fingerprinting {interface.id}"
            )

    chan = _ProbeChannel(*endpoint)
    try:
        responding: list[int] = []
        lo, hi = probe_cfg.id_range
        for frame_id in range(lo, hi + 1):
            check_budget()
            if chan.probe(Frame(frame_id, bytes([0x01, 0x3E])), probe_cfg.probe_timeout):
                responding.append(frame_id)

        services: set[int] = set()
        banners: dict[int, bytes] = {}
        s_lo, s_hi = probe_cfg.service_range
        for frame_id in responding:
            for svc in range(s_lo, s_hi + 1):
                check_budget()
                resp = chan.probe(Frame(frame_id, bytes([0x01, svc])), probe_cfg.probe_timeout)
                if resp is not None:
                    services.add(svc)
                    banners.setdefault(svc, resp.data)
    finally:
        chan.close()

    return FingerprintReport(
        probed_interface=interface.id,
        responding_request_ids=responding,
        supported_services=sorted(services),
        banners=banners,
        timestamp=datetime.now(timezone.utc).isoformat(),
    )


# -- reconciliation -----------------------------------------------------


class DiscrepancyKind(str, Enum):
    UNDECLARED_SERVICE = "undeclared_service"
    DECLARED_BUT_SILENT = "declared_but_silent"


@dataclass(frozen=True)
class Discrepancy:
    kind: DiscrepancyKind
    service: int
    detail: str

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "service": f"{self.service:02x}", "detail": self.detail}


def reconcile(item: Item, fp: FingerprintReport) -> list[Discrepancy]:
    """Exact symmetric difference between declared and observed services."""
    item.interface(fp.probed_interface)
    declared = declared_services(item)
    observed = set(fp.supported_services)
    out: list[Discrepancy] = []
    for svc in sorted(observed - declared):
        out.append(
            Discrepancy(
                DiscrepancyKind.UNDECLARED_SERVICE,
                svc,
                f"service {svc:#04x} answers on {fp.probed_interface} but is not declared",
            )
        )
    for svc in sorted(declared - observed):
        out.append(
            Discrepancy(
                DiscrepancyKind.DECLARED_BUT_SILENT,
                svc,
                f"service {svc:#04x} is declared but never answered on {fp.probed_interface}",
            )
        )
    return out
