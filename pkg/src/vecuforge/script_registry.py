"""Script database: concrete, parameterized implementations of patterns.

A script binds a pattern name to a shell-form command template such as
``cansend {bus} {id}#{data}``. Slots are filled from pattern arguments
and from SUT-database dictionary keys (sut_slots). Commands are never
given to a real shell; the executor routes them to internal tool
handlers by the first word.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .scenario_dsl import PatternStep

_SLOT_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
PARAM_TYPES = ("string", "number", "hexbytes", "any")


class RegistryError(ValueError):
    """Malformed script definition or registration conflict."""


@dataclass(frozen=True)
class ParamSpec:
    type: str = "any"
    required: bool = True

    def __post_init__(self) -> None:
        if self.type not in PARAM_TYPES:
            raise RegistryError(f"unknown param type {self.type!r}")


@dataclass(frozen=True)
class TestScript:
    id: str
    implements: str
    command_template: str
    param_schema: tuple[tuple[str, ParamSpec], ...] = ()
    tools: tuple[str, ...] = ()
    sut_slots: tuple[str, ...] = ()
    oracle_hooks: tuple[str, ...] = ()

    @property
    def params(self) -> dict[str, ParamSpec]:
        return dict(self.param_schema)

    def slots(self) -> list[str]:
        return _SLOT_RE.findall(self.command_template)

    def check(self, known_patterns: frozenset[str]) -> None:
        if self.implements not in known_patterns:
            raise RegistryError(
                f"script {self.id!r} implements unknown pattern {self.implements!r}"
            )
        allowed = set(self.params) | set(self.sut_slots)
        for slot in self.slots():
            if slot not in allowed:
                raise RegistryError(
                    f"script {self.id!r}: template slot {{{slot}}} is neither a "
                    f"schema param nor a sut_slot"
                )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "implements": self.implements,
            "command_template": self.command_template,
            "param_schema": {
                name: {"type": spec.type, "required": spec.required}
                for name, spec in self.param_schema
            },
            "tools": list(self.tools),
            "sut_slots": list(self.sut_slots),
            "oracle_hooks": list(self.oracle_hooks),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TestScript":
        return cls(
            id=doc["id"],
            implements=doc["implements"],
            command_template=doc["command_template"],
            param_schema=tuple(
                sorted(
                    (name, ParamSpec(spec.get("type", "any"), spec.get("required", True)))
                    for name, spec in doc.get("param_schema", {}).items()
                )
            ),
            tools=tuple(doc.get("tools", [])),
            sut_slots=tuple(doc.get("sut_slots", [])),
            oracle_hooks=tuple(doc.get("oracle_hooks", [])),
        )


class ScriptRegistry:
    """Directory of one JSON file per script; the id is the filename stem."""

    def __init__(self, directory: str | Path, known_patterns: frozenset[str]):
        self.directory = Path(directory)
        self.known_patterns = known_patterns
        self.scripts: dict[str, TestScript] = {}
        for path in sorted(self.directory.glob("*.json")):
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
            doc.setdefault("id", path.stem)
            if doc["id"] != path.stem:
                raise RegistryError(f"{path.name}: id {doc['id']!r} must equal the filename stem")
            script = TestScript.from_dict(doc)
            script.check(known_patterns)
            self.scripts[script.id] = script

    def match_script(self, pattern: PatternStep) -> TestScript | None:
        """First script (smallest id) implementing the pattern with all
        required params supplied by the pattern args or sut_slots."""
        supplied = {name for name, _ in pattern.args}
        for script in sorted(self.scripts.values(), key=lambda s: s.id):
            if script.implements != pattern.name:
                continue
            required = {n for n, spec in script.params.items() if spec.required}
            if required <= (supplied | set(script.sut_slots)):
                return script
        return None

    def register_script(self, script: TestScript) -> str:
        script.check(self.known_patterns)
        if script.id in self.scripts:
            raise RegistryError(f"script id {script.id!r} already registered")
        path = self.directory / f"{script.id}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(script.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.scripts[script.id] = script
        return script.id


def render_command(script: TestScript, bound_args: dict[str, str], slot_values: dict[str, str]) -> str:
    """Fill every template slot; a leftover slot is an error, never emitted."""
    values = dict(slot_values)
    values.update(bound_args)
    out = _SLOT_RE.sub(lambda m: str(values[m.group(1)]) if m.group(1) in values else m.group(0),
                       script.command_template)
    leftover = _SLOT_RE.findall(out)
    if leftover:
        raise RegistryError(f"script {script.id!r}: unbound slots {leftover} in {out!r}")
    return out


# -- validation against SUT configurations -------------------------------


class ValidationStatus(str, Enum):
    VALID = "valid"
    INVALID = "invalid"
    UNTESTED = "untested"


@dataclass
class ValidationRecord:
    script_ref: str
    outcomes: list[tuple[str, str]] = field(default_factory=list)
    status: ValidationStatus = ValidationStatus.UNTESTED
    cause: str = ""


def validate_script(script, positive_cfg, negative_cfg, edge_cfgs, attack_runner) -> ValidationRecord:
    """Confirm a script succeeds where it must and fails where it must.

    ``attack_runner(label, config) -> bool`` executes the script against a
    SUT launched with ``config`` and reports attack success. Status is
    valid exactly when the positive config succeeds and the negative one
    does not; edge configs are recorded without affecting status.
    """
    record = ValidationRecord(script_ref=script.id)
    try:
        pos = attack_runner("positive", positive_cfg)
        record.outcomes.append(("positive", "attack-success" if pos else "attack-failure"))
        neg = attack_runner("negative", negative_cfg)
        record.outcomes.append(("negative", "attack-success" if neg else "attack-failure"))
        for i, cfg in enumerate(edge_cfgs):
            edge = attack_runner(f"edge-{i}", cfg)
            record.outcomes.append((f"edge-{i}", "attack-success" if edge else "attack-failure"))
    except Exception as exc:
        record.status = ValidationStatus.UNTESTED
        record.cause = str(exc)
        return record
    record.status = ValidationStatus.VALID if (pos and not neg) else ValidationStatus.INVALID
    return record
