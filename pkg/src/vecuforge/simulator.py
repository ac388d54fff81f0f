"""Deterministic virtual ECU with a CAN/UDS-like diagnostic protocol.

The ECU answers requests on ids 0x7DF (functional) and 0x7E0 (physical),
always responding from 0x7E8. Payload layout: first byte is the length of
the service byte plus its parameters. Implemented services:

* 0x01 pid 0x0D  current speed: ``02 01 0d`` -> ``03 41 0d <speed>``
* 0x3E           tester present: ``01 3e`` -> ``01 7e``
* 0x10           session control: ``02 10 ss`` (ss in 01/02/03) -> ``02 50 ss``
* 0x27           security access: seed request ``02 27 01``, key send
                 ``04 27 02 k1 k2``; the official key derivation is additive
                 rotate+XOR, and with toggle V1 on the plain
                 seed-XOR-constant key is also accepted (weak derivation)
* 0x2E           write data id: needs session 0x03 and an unlocked ECU;
                 with toggle V2 on the lock check is skipped in session 0x02
* 0x42           undocumented: ``01 42`` -> ``02 62 42`` with toggle V4 on,
                 silent otherwise

A frame whose length byte exceeds the actually present parameter bytes
stops the ECU (alive=False, absorbing until RESET/LOAD) when toggle V3 is
on, and draws ``03 7f 00 13`` when it is off.

A management channel accepts line commands DUMP (base64 state), LOAD,
RESET and CONFIG k=v. State dumps are canonical: loading a dump and
dumping again yields identical bytes.
"""

from __future__ import annotations

import argparse
import base64
import copy
import json
import selectors
import socket
import threading
from dataclasses import dataclass, field, replace

from .frames import Frame, FrameError, parse_line

FUNCTIONAL_REQ_ID = 0x7DF
PHYSICAL_REQ_ID = 0x7E0
RESPONSE_ID = 0x7E8

SVC_CURRENT_DATA = 0x01
SVC_SESSION = 0x10
SVC_SECURITY = 0x27
SVC_WRITE_DID = 0x2E
SVC_TESTER_PRESENT = 0x3E
SVC_UNDOCUMENTED = 0x42

NRC_SUBFUNCTION = 0x12
NRC_LENGTH = 0x13
NRC_SEQUENCE = 0x24
NRC_SECURITY_DENIED = 0x33
NRC_INVALID_KEY = 0x35

IMPLEMENTED_SERVICES = frozenset(
    {SVC_CURRENT_DATA, SVC_SESSION, SVC_SECURITY, SVC_WRITE_DID, SVC_TESTER_PRESENT, SVC_UNDOCUMENTED}
)

VALID_SESSIONS = (0x01, 0x02, 0x03)


@dataclass(frozen=True)
class SimConfig:
    """Launch configuration: behaviour knobs and the four seeded defects."""

    speed: int = 0x32
    v1_weak_key: bool = True
    v2_session_bypass: bool = True
    v3_length_crash: bool = True
    v4_hidden_service: bool = True
    key_const: int = 0xA5
    services: frozenset[int] = IMPLEMENTED_SERVICES

    def with_vulns(self, enabled: bool) -> "SimConfig":
        return replace(
            self,
            v1_weak_key=enabled,
            v2_session_bypass=enabled,
            v3_length_crash=enabled,
            v4_hidden_service=enabled,
        )

    def to_dict(self) -> dict:
        return {
            "speed": self.speed,
            "v1": self.v1_weak_key,
            "v2": self.v2_session_bypass,
            "v3": self.v3_length_crash,
            "v4": self.v4_hidden_service,
            "key_const": self.key_const,
            "services": sorted(self.services),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(
            speed=d["speed"],
            v1_weak_key=d["v1"],
            v2_session_bypass=d["v2"],
            v3_length_crash=d["v3"],
            v4_hidden_service=d["v4"],
            key_const=d["key_const"],
            services=frozenset(d["services"]),
        )


@dataclass
class EcuState:
    """Complete, serializable ECU state; a dump reconstructs behaviour exactly."""

    config: SimConfig = field(default_factory=SimConfig)
    session: int = 0x01
    locked: bool = True
    last_seed: tuple[int, int] | None = None
    seed_counter: int = 0
    alive: bool = True
    data_ids: dict[int, bytes] = field(default_factory=dict)

    def clone(self) -> "EcuState":
        return EcuState(
            config=self.config,
            session=self.session,
            locked=self.locked,
            last_seed=self.last_seed,
            seed_counter=self.seed_counter,
            alive=self.alive,
            data_ids=copy.deepcopy(self.data_ids),
        )


def weak_key(seed: tuple[int, int], const: int) -> tuple[int, int]:
    """The V1 derivation: plain XOR with a constant, invertible from traffic."""
    return seed[0] ^ const, seed[1] ^ const


def official_key(seed: tuple[int, int], const: int) -> tuple[int, int]:
    """The intended derivation: byte-wise add-then-XOR; never equal to weak_key."""
    return ((seed[0] + 0x3B) & 0xFF) ^ const, ((seed[1] + 0xC7) & 0xFF) ^ const


def seed_for_counter(counter: int) -> tuple[int, int]:
    """Deterministic seed sequence; counter is part of the dumped state."""
    return (0x13 + 0x2F * counter) & 0xFF, (0x7A + 0x51 * counter) & 0xFF


def _resp(payload: list[int]) -> Frame:
    return Frame(RESPONSE_ID, bytes([len(payload)] + payload))


def _negative(service: int, nrc: int) -> Frame:
    return _resp([0x7F, service, nrc])


def handle_frame(state: EcuState, frame: Frame) -> tuple[EcuState, list[Frame]]:
    """Pure transition function: (state, frame) -> (state', responses).

    A crashed ECU (alive=False) ignores every frame, tester present
    included, until RESET or LOAD.
    """
    if not state.alive:
        return state, []
    if frame.id not in (FUNCTIONAL_REQ_ID, PHYSICAL_REQ_ID):
        return state, []
    data = frame.data
    if len(data) == 0:
        return state, []
    length = data[0]
    params = data[1:]
    if length > len(params):
        if state.config.v3_length_crash:
            crashed = state.clone()
            crashed.alive = False
            return crashed, []
        return state, [_negative(0x00, NRC_LENGTH)]
    body = params[:length]
    if len(body) == 0:
        return state, []
    service = body[0]
    args = body[1:]
    if service not in state.config.services or service not in IMPLEMENTED_SERVICES:
        return state, []

    if service == SVC_CURRENT_DATA:
        if len(args) != 1:
            return state, [_negative(service, NRC_LENGTH)]
        if args[0] != 0x0D:
            return state, [_negative(service, NRC_SUBFUNCTION)]
        return state, [_resp([0x41, 0x0D, state.config.speed])]

    if service == SVC_TESTER_PRESENT:
        if len(args) != 0:
            return state, [_negative(service, NRC_LENGTH)]
        return state, [_resp([0x7E])]

    if service == SVC_SESSION:
        if len(args) != 1:
            return state, [_negative(service, NRC_LENGTH)]
        if args[0] not in VALID_SESSIONS:
            return state, [_negative(service, NRC_SUBFUNCTION)]
        nxt = state.clone()
        nxt.session = args[0]
        return nxt, [_resp([0x50, args[0]])]

    if service == SVC_SECURITY:
        if len(args) == 1 and args[0] == 0x01:
            nxt = state.clone()
            seed = seed_for_counter(nxt.seed_counter)
            nxt.seed_counter += 1
            nxt.last_seed = seed
            return nxt, [_resp([0x67, 0x01, seed[0], seed[1]])]
        if len(args) == 3 and args[0] == 0x02:
            if state.last_seed is None:
                return state, [_negative(service, NRC_SEQUENCE)]
            key = (args[1], args[2])
            accepted = {official_key(state.last_seed, state.config.key_const)}
            if state.config.v1_weak_key:
                accepted.add(weak_key(state.last_seed, state.config.key_const))
            if key in accepted:
                nxt = state.clone()
                nxt.locked = False
                return nxt, [_resp([0x67, 0x02])]
            return state, [_negative(service, NRC_INVALID_KEY)]
        if len(args) >= 1 and args[0] in (0x01, 0x02):
            return state, [_negative(service, NRC_LENGTH)]
        if len(args) >= 1:
            return state, [_negative(service, NRC_SUBFUNCTION)]
        return state, [_negative(service, NRC_LENGTH)]

    if service == SVC_WRITE_DID:
        if len(args) < 3:
            return state, [_negative(service, NRC_LENGTH)]
        allowed = (state.session == 0x03 and not state.locked) or (
            state.config.v2_session_bypass and state.session == 0x02
        )
        if not allowed:
            return state, [_negative(service, NRC_SECURITY_DENIED)]
        did = (args[0] << 8) | args[1]
        nxt = state.clone()
        nxt.data_ids[did] = bytes(args[2:])
        return nxt, [_resp([0x6E, args[0], args[1]])]

    if service == SVC_UNDOCUMENTED:
        if not state.config.v4_hidden_service:
            return state, []
        if len(args) != 0:
            return state, [_negative(service, NRC_LENGTH)]
        return state, [_resp([0x62, 0x42])]

    return state, []


def dump_state(state: EcuState) -> str:
    """Serialize state to base64; canonical bytes for a given state."""
    doc = {
        "config": state.config.to_dict(),
        "session": state.session,
        "locked": state.locked,
        "last_seed": list(state.last_seed) if state.last_seed is not None else None,
        "seed_counter": state.seed_counter,
        "alive": state.alive,
        "data_ids": {f"{k:04x}": v.hex() for k, v in sorted(state.data_ids.items())},
    }
    raw = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return base64.b64encode(raw).decode("ascii")


def load_state(blob: str) -> EcuState:
    doc = json.loads(base64.b64decode(blob.encode("ascii")))
    return EcuState(
        config=SimConfig.from_dict(doc["config"]),
        session=doc["session"],
        locked=doc["locked"],
        last_seed=tuple(doc["last_seed"]) if doc["last_seed"] is not None else None,
        seed_counter=doc["seed_counter"],
        alive=doc["alive"],
        data_ids={int(k, 16): bytes.fromhex(v) for k, v in doc["data_ids"].items()},
    )


def _parse_config_value(state: EcuState, key: str, value: str) -> SimConfig:
    cfg = state.config
    if key in ("v1", "v2", "v3", "v4"):
        if value not in ("on", "off"):
            raise ValueError(f"{key} wants on/off, got {value!r}")
        flag = value == "on"
        return replace(
            cfg,
            **{
                "v1": {"v1_weak_key": flag},
                "v2": {"v2_session_bypass": flag},
                "v3": {"v3_length_crash": flag},
                "v4": {"v4_hidden_service": flag},
            }[key],
        )
    if key == "speed":
        return replace(cfg, speed=int(value, 16) & 0xFF)
    if key == "key_const":
        return replace(cfg, key_const=int(value, 16) & 0xFF)
    if key == "services":
        svc = frozenset(int(p, 16) for p in value.split(",") if p)
        return replace(cfg, services=svc)
    raise ValueError(f"unknown config key {key!r}")


class SimServer:
    """Socket front-end around the pure state machine.

    One selector loop owns the state, so event order equals arrival order.
    The data endpoint speaks the frame wire codec; the management endpoint
    speaks DUMP/LOAD/RESET/CONFIG lines.
    """

    def __init__(self, config: SimConfig | None = None, host: str = "127.0.0.1",
                 data_port: int = 0, mgmt_port: int = 0):
        self._launch_config = config or SimConfig()
        self.state = EcuState(config=self._launch_config)
        self._host = host
        self._data_listener = self._listen(host, data_port)
        self._mgmt_listener = self._listen(host, mgmt_port)
        self._sel = selectors.DefaultSelector()
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()

    @staticmethod
    def _listen(host: str, port: int) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((host, port))
        sock.listen(16)
        sock.setblocking(False)
        return sock

    @property
    def data_endpoint(self) -> tuple[str, int]:
        return self._data_listener.getsockname()

    @property
    def mgmt_endpoint(self) -> tuple[str, int]:
        return self._mgmt_listener.getsockname()

    def start(self) -> "SimServer":
        self._sel.register(self._data_listener, selectors.EVENT_READ, ("listen", "data"))
        self._sel.register(self._mgmt_listener, selectors.EVENT_READ, ("listen", "mgmt"))
        self._thread = threading.Thread(target=self._run, name="sut-sim", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
        for key in list(self._sel.get_map().values()):
            try:
                key.fileobj.close()
            except OSError:
                pass
        self._sel.close()

    # -- event loop ---------------------------------------------------

    def _run(self) -> None:
        conns: dict[socket.socket, dict] = {}
        while not self._stop.is_set():
            events = self._sel.select(timeout=0.05)
            for key, mask in events:
                kind, role = key.data
                if kind == "listen":
                    try:
                        conn, _ = key.fileobj.accept()
                    except OSError:
                        continue
                    conn.setblocking(False)
                    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                    conns[conn] = {"role": role, "in": b"", "out": bytearray()}
                    self._sel.register(conn, selectors.EVENT_READ, ("conn", role))
                    continue
                conn = key.fileobj
                info = conns.get(conn)
                if info is None:
                    continue
                if mask & selectors.EVENT_READ:
                    self._read(conn, info, conns)
                if conn in conns and mask & selectors.EVENT_WRITE:
                    self._flush(conn, info, conns)

    def _read(self, conn: socket.socket, info: dict, conns: dict) -> None:
        try:
            chunk = conn.recv(65536)
        except (BlockingIOError, InterruptedError):
            return
        except OSError:
            self._drop(conn, conns)
            return
        if not chunk:
            self._drop(conn, conns)
            return
        info["in"] += chunk
        while b"\n" in info["in"]:
            line, info["in"] = info["in"].split(b"\n", 1)
            text = line.decode("utf-8", errors="replace").strip()
            if not text:
                continue
            if info["role"] == "data":
                out = self._handle_data_line(text)
            else:
                out = self._handle_mgmt_line(text)
            if out:
                info["out"] += out.encode()
        if info["out"]:
            self._flush(conn, info, conns)

    def _flush(self, conn: socket.socket, info: dict, conns: dict) -> None:
        try:
            sent = conn.send(bytes(info["out"]))
            del info["out"][:sent]
        except (BlockingIOError, InterruptedError):
            sent = 0
        except OSError:
            self._drop(conn, conns)
            return
        want = selectors.EVENT_READ | (selectors.EVENT_WRITE if info["out"] else 0)
        try:
            self._sel.modify(conn, want, ("conn", info["role"]))
        except (KeyError, ValueError):
            pass

    def _drop(self, conn: socket.socket, conns: dict) -> None:
        try:
            self._sel.unregister(conn)
        except (KeyError, ValueError):
            pass
        conns.pop(conn, None)
        try:
            conn.close()
        except OSError:
            pass

    def _handle_data_line(self, text: str) -> str:
        try:
            frame = parse_line(text)
        except FrameError:
            return ""
        self.state, responses = handle_frame(self.state, frame)
        return "".join(r.to_line() + "\n" for r in responses)

    def _handle_mgmt_line(self, text: str) -> str:
        parts = text.split(None, 1)
        cmd = parts[0].upper()
        arg = parts[1] if len(parts) > 1 else ""
        if cmd == "DUMP":
            return "OK " + dump_state(self.state) + "\n"
        if cmd == "LOAD":
            try:
                self.state = load_state(arg)
            except (ValueError, KeyError) as exc:
                return f"ERR bad state blob: {exc}\n"
            return "OK\n"
        if cmd == "RESET":
            self.state = EcuState(config=self._launch_config)
            return "OK\n"
        if cmd == "CONFIG":
            if "=" not in arg:
                return "ERR CONFIG wants key=value\n"
            k, v = arg.split("=", 1)
            try:
                new_cfg = _parse_config_value(self.state, k.strip(), v.strip())
            except ValueError as exc:
                return f"ERR {exc}\n"
            self.state = replace_config(self.state, new_cfg)
            return "OK\n"
        return "ERR unknown command\n"


def replace_config(state: EcuState, config: SimConfig) -> EcuState:
    nxt = state.clone()
    nxt.config = config
    return nxt


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description="run a virtual ECU instance")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--data-port", type=int, default=0)
    ap.add_argument("--mgmt-port", type=int, default=0)
    ap.add_argument("--vulns", choices=["on", "off"], default="on",
                    help="enable or disable all four seeded defects")
    ap.add_argument("--speed", default="32", help="speed byte, hex")
    args = ap.parse_args(argv)

    config = SimConfig(speed=int(args.speed, 16) & 0xFF).with_vulns(args.vulns == "on")
    server = SimServer(config, host=args.host, data_port=args.data_port, mgmt_port=args.mgmt_port)
    server.start()
    print(f"LISTENING data={server.data_endpoint[1]} mgmt={server.mgmt_endpoint[1]}", flush=True)
    try:
        while True:
            server._stop.wait(3600)
            if server._stop.is_set():
                break
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
