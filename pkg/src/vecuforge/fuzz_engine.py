"""Seeded mutation fuzzing with a liveness oracle and input minimization.

The generator interleaves untouched corpus frames with single-mutation
variants, delivers them through a transport, and probes liveness on a
fixed cadence. A missed probe is bisected (restore + prefix replay) to
the exact trigger frame, which must then reproduce alone from a fresh
restore before it is reported. Everything is driven by one seeded PRNG
stream, so a campaign is a pure function of (seed, config, SUT config).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Protocol

from .frames import MAX_DATA_LEN, Frame, format_line, parse_line

MUTATION_OPS = ("bit_flip", "byte_random", "extend", "length_field_corrupt", "truncate")
PRNG_NAME = "stdlib-mersenne-twister"


class FuzzError(ValueError):
    """Bad campaign configuration."""


class FuzzTransport(Protocol):
    """Delivery, monitoring, and state-restore surface the engine drives.

    ``drain`` returns the number of response frames collected since the
    last call; ``alive`` issues one liveness probe; ``restore`` puts the
    SUT back into its pre-campaign state.
    """

    def send(self, frame: Frame) -> None: ...

    def drain(self) -> int: ...

    def alive(self) -> bool: ...

    def restore(self) -> None: ...


@dataclass(frozen=True)
class FuzzConfig:
    seed: int
    budget: int
    corpus: tuple[Frame, ...]
    mutation_ops: frozenset[str] = frozenset(MUTATION_OPS)
    probe_every: int = 50

    def __post_init__(self) -> None:
        if self.budget <= 0:
            raise FuzzError(f"budget must be positive, got {self.budget}")
        if not self.corpus:
            raise FuzzError("corpus must be non-empty")
        if self.probe_every < 1:
            raise FuzzError(f"probe_every must be >= 1, got {self.probe_every}")
        unknown = set(self.mutation_ops) - set(MUTATION_OPS)
        if unknown:
            raise FuzzError(f"unknown mutation ops: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "budget": self.budget,
            "corpus": [format_line(f) for f in self.corpus],
            "mutation_ops": sorted(self.mutation_ops),
            "probe_every": self.probe_every,
            "prng": PRNG_NAME,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FuzzConfig":
        return cls(
            seed=doc["seed"],
            budget=doc["budget"],
            corpus=tuple(parse_line(line) for line in doc["corpus"]),
            mutation_ops=frozenset(doc.get("mutation_ops", MUTATION_OPS)),
            probe_every=doc.get("probe_every", 50),
        )


@dataclass(frozen=True)
class FuzzFinding:
    trigger_input: Frame
    source_input: Frame
    position: int
    verdict_evidence: dict
    reproduced: bool
    minimized_input: Frame | None = None

    def to_dict(self) -> dict:
        return {
            "trigger_input": format_line(self.trigger_input),
            "source_input": format_line(self.source_input),
            "position": self.position,
            "verdict_evidence": self.verdict_evidence,
            "reproduced": self.reproduced,
            "minimized_input": (
                None if self.minimized_input is None else format_line(self.minimized_input)
            ),
        }


# -- generator -------------------------------------------------------------


def mutate(frame: Frame, rng: random.Random, ops: frozenset[str]) -> Frame:
    """Apply exactly one rng-chosen mutation to the frame data."""
    if not ops:
        return frame
    data = bytearray(frame.data)
    op = rng.choice(sorted(ops))
    if op == "bit_flip":
        if not data:
            return frame
        ix = rng.randrange(len(data))
        data[ix] ^= 1 << rng.randrange(8)
    elif op == "byte_random":
        if not data:
            return frame
        data[rng.randrange(len(data))] = rng.randrange(256)
    elif op == "length_field_corrupt":
        if not data:
            return frame
        data[0] = rng.randint(len(data), 0xFF)
    elif op == "truncate":
        data = data[: rng.randint(0, max(0, len(data) - 1))]
    elif op == "extend":
        room = MAX_DATA_LEN - len(data)
        if room <= 0:
            return frame
        data.extend(rng.randrange(256) for _ in range(rng.randint(1, room)))
    return Frame(frame.id, bytes(data))


# -- campaign --------------------------------------------------------------


@dataclass
class CampaignResult:
    findings: list[FuzzFinding]
    stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"findings": [f.to_dict() for f in self.findings], "stats": self.stats}


def _replay_prefix(transport: FuzzTransport, log: list[Frame], upto: int) -> bool:
    """True when the SUT survives the first ``upto`` frames after a restore."""
    transport.restore()
    for frame in log[:upto]:
        transport.send(frame)
    transport.drain()
    return transport.alive()


def _bisect_trigger(
    transport: FuzzTransport, log: list[Frame], checkpoint: int, dead_at: int
) -> int:
    """Smallest prefix length in (checkpoint, dead_at] that kills the SUT.

    ``log`` must start at the last restore point so prefixes replay from
    clean state; the caller guarantees log[:checkpoint] leaves it alive.
    """
    lo, hi = checkpoint + 1, dead_at
    while lo < hi:
        mid = (lo + hi) // 2
        if _replay_prefix(transport, log, mid):
            lo = mid + 1
        else:
            hi = mid
    return lo


def _single_frame_kills(transport: FuzzTransport, frame: Frame) -> bool:
    transport.restore()
    transport.send(frame)
    transport.drain()
    return not transport.alive()


def run_campaign(config: FuzzConfig, transport: FuzzTransport) -> CampaignResult:
    """Send ``budget`` frames, probing liveness every ``probe_every``.

    Stats count campaign traffic only; bisection and reproduction
    replays are bookkeeping and stay out of the numbers. A finding is
    reported only if its trigger frame alone kills a freshly restored
    SUT, deduplicated by trigger bytes.
    """
    rng = random.Random(config.seed)
    corpus = list(config.corpus)
    # log/sources hold only frames sent since the last restore, so replays
    # start from known-clean state; base maps them back to campaign positions.
    log: list[Frame] = []
    sources: list[Frame] = []
    base = 0
    checkpoint = 0
    findings: list[FuzzFinding] = []
    seen_triggers: set[tuple[int, bytes]] = set()
    stats = {"frames_sent": 0, "probes": 0, "responses": 0}

    sent = 0
    while sent < config.budget:
        if sent % 5 == 0:
            source = frame = corpus[(sent // 5) % len(corpus)]
        else:
            source = corpus[rng.randrange(len(corpus))]
            frame = mutate(source, rng, config.mutation_ops)
        transport.send(frame)
        log.append(frame)
        sources.append(source)
        sent += 1
        stats["frames_sent"] += 1
        stats["responses"] += transport.drain()

        if sent % config.probe_every == 0 or sent == config.budget:
            stats["responses"] += transport.drain()
            stats["probes"] += 1
            if transport.alive():
                checkpoint = len(log)
                continue
            kill = _bisect_trigger(transport, log, checkpoint, len(log))
            trigger = log[kill - 1]
            key = (trigger.id, trigger.data)
            if key not in seen_triggers and _single_frame_kills(transport, trigger):
                seen_triggers.add(key)
                findings.append(
                    FuzzFinding(
                        trigger_input=trigger,
                        source_input=sources[kill - 1],
                        position=base + kill - 1,
                        verdict_evidence={
                            "missed_probe_after_frame": sent,
                            "window_start": base + checkpoint,
                        },
                        reproduced=True,
                    )
                )
            transport.restore()
            base += len(log)
            log = []
            sources = []
            checkpoint = 0

    return CampaignResult(findings=findings, stats=stats)


# -- minimization ----------------------------------------------------------


def minimize(finding: FuzzFinding, transport: FuzzTransport) -> FuzzFinding:
    """1-minimal reduction of the trigger, verified by replay.

    Two passes repeat to a fixed point: drop any single byte, and
    restore any single byte toward the corpus source. A finding whose
    trigger no longer reproduces comes back flagged, untouched.
    """
    if not _single_frame_kills(transport, finding.trigger_input):
        return replace(finding, reproduced=False)

    current = finding.trigger_input
    changed = True
    while changed:
        changed = False
        for ix in range(len(current.data)):
            candidate = Frame(current.id, current.data[:ix] + current.data[ix + 1 :])
            if _single_frame_kills(transport, candidate):
                current = candidate
                changed = True
                break
        if changed:
            continue
        source = finding.source_input.data
        for ix in range(min(len(current.data), len(source))):
            if current.data[ix] == source[ix]:
                continue
            candidate = Frame(
                current.id,
                current.data[:ix] + source[ix : ix + 1] + current.data[ix + 1 :],
            )
            if _single_frame_kills(transport, candidate):
                current = candidate
                changed = True
                break
    transport.restore()
    return replace(finding, minimized_input=current)
