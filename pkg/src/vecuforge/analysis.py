"""Threat enumeration, risk rating and security concept derivation.

Threats come from matching a catalog of predicates against the item's
interfaces and components. Risk is impact times occurrence probability
on a 0..4 scale each (so 0..16 overall), acceptable when strictly below
the threshold. Every unacceptable risk yields exactly one security
requirement, linked to the first countermeasure that mitigates its
threat class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from .item_model import Interface, Item, SecurityGoal, declared_services


class AnalysisError(ValueError):
    """Out-of-range rating or malformed catalog/countermeasure data."""


def _check_range(name: str, value: int, lo: int, hi: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or not lo <= value <= hi:
        raise AnalysisError(f"{name} must be an integer in [{lo},{hi}], got {value!r}")
    return value


@dataclass(frozen=True)
class ImpactVector:
    safety: int
    financial: int
    operational: int
    privacy: int

    def __post_init__(self) -> None:
        for name in ("safety", "financial", "operational", "privacy"):
            _check_range(name, getattr(self, name), 0, 4)

    @property
    def level(self) -> int:
        return max(self.safety, self.financial, self.operational, self.privacy)

    def to_dict(self) -> dict:
        return {
            "safety": self.safety,
            "financial": self.financial,
            "operational": self.operational,
            "privacy": self.privacy,
            "level": self.level,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ImpactVector":
        return cls(
            safety=int(doc["safety"]),
            financial=int(doc["financial"]),
            operational=int(doc["operational"]),
            privacy=int(doc["privacy"]),
        )


@dataclass(frozen=True)
class MatchPredicate:
    """Conjunctive element filter; None fields are wildcards."""

    interface_kind: str | None = None
    exposure: str | None = None
    service: int | None = None
    goal_property: str | None = None

    def __post_init__(self) -> None:
        if all(
            v is None
            for v in (self.interface_kind, self.exposure, self.service, self.goal_property)
        ):
            raise AnalysisError("match predicate needs at least one non-wildcard field")

    def to_dict(self) -> dict:
        out: dict = {}
        if self.interface_kind is not None:
            out["interface_kind"] = self.interface_kind
        if self.exposure is not None:
            out["exposure"] = self.exposure
        if self.service is not None:
            out["service"] = f"0x{self.service:02x}"
        if self.goal_property is not None:
            out["goal_property"] = self.goal_property
        return out


@dataclass(frozen=True)
class ThreatCatalogEntry:
    id: str
    title: str
    match_predicate: MatchPredicate
    threat_class: str
    default_feasibility: int
    regulation_refs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        _check_range("default_feasibility", self.default_feasibility, 0, 4)


@dataclass(frozen=True)
class Threat:
    id: str
    catalog_ref: str
    target: str
    mapped_goal: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "catalog_ref": self.catalog_ref,
            "target": self.target,
            "mapped_goal": self.mapped_goal,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Threat":
        return cls(
            id=doc["id"],
            catalog_ref=doc["catalog_ref"],
            target=doc["target"],
            mapped_goal=doc["mapped_goal"],
        )


@dataclass(frozen=True)
class Risk:
    threat_ref: str
    impact: ImpactVector
    probability: int
    value: int
    threshold: int
    acceptable: bool

    def to_dict(self) -> dict:
        return {
            "threat_ref": self.threat_ref,
            "impact": self.impact.to_dict(),
            "probability": self.probability,
            "value": self.value,
            "threshold": self.threshold,
            "acceptable": self.acceptable,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Risk":
        return cls(
            threat_ref=doc["threat_ref"],
            impact=ImpactVector.from_dict(doc["impact"]),
            probability=int(doc["probability"]),
            value=int(doc["value"]),
            threshold=int(doc["threshold"]),
            acceptable=bool(doc["acceptable"]),
        )


class RequirementKind(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class VerificationHint(str, Enum):
    FUNCTIONAL = "functional"
    INTERFACE = "interface"
    PENETRATION = "penetration"
    VULNSCAN = "vulnscan"
    FUZZ = "fuzz"


@dataclass(frozen=True)
class SecurityRequirement:
    id: str
    text: str
    kind: RequirementKind
    derived_from: tuple[str, ...]
    goal_ref: str
    countermeasure_ref: str | None
    verification_hint: VerificationHint

    def __post_init__(self) -> None:
        if not self.derived_from:
            raise AnalysisError(f"requirement {self.id!r} derives from no threat")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "kind": self.kind.value,
            "derived_from": list(self.derived_from),
            "goal_ref": self.goal_ref,
            "countermeasure_ref": self.countermeasure_ref,
            "verification_hint": self.verification_hint.value,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SecurityRequirement":
        return cls(
            id=doc["id"],
            text=doc["text"],
            kind=RequirementKind(doc["kind"]),
            derived_from=tuple(doc["derived_from"]),
            goal_ref=doc["goal_ref"],
            countermeasure_ref=doc["countermeasure_ref"],
            verification_hint=VerificationHint(doc["verification_hint"]),
        )


@dataclass(frozen=True)
class Countermeasure:
    id: str
    description: str
    mitigates: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.mitigates:
            raise AnalysisError(f"countermeasure {self.id!r} mitigates nothing")


@dataclass
class Catalog:
    entries: list[ThreatCatalogEntry]
    negative_classes: set[str] = field(default_factory=set)
    hint_by_class: dict[str, VerificationHint] = field(default_factory=dict)


def load_catalog(path: str) -> Catalog:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    entries = [
        ThreatCatalogEntry(
            id=e["id"],
            title=e["title"],
            match_predicate=MatchPredicate(
                interface_kind=e["match_predicate"].get("interface_kind"),
                exposure=e["match_predicate"].get("exposure"),
                service=(
                    int(str(e["match_predicate"]["service"]), 16)
                    if "service" in e["match_predicate"]
                    else None
                ),
                goal_property=e["match_predicate"].get("goal_property"),
            ),
            threat_class=e["threat_class"],
            default_feasibility=e["default_feasibility"],
            regulation_refs=tuple(e.get("regulation_refs", [])),
        )
        for e in doc["entries"]
    ]
    hints = {k: VerificationHint(v) for k, v in doc.get("hint_by_class", {}).items()}
    return Catalog(entries, set(doc.get("negative_classes", [])), hints)


def load_countermeasures(path: str) -> list[Countermeasure]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return [
        Countermeasure(id=c["id"], description=c["description"], mitigates=tuple(c["mitigates"]))
        for c in doc["countermeasures"]
    ]


# -- threat enumeration -------------------------------------------------


def _resolve_goal(entry: ThreatCatalogEntry, element_id: str, item: Item) -> SecurityGoal | None:
    """Pick the goal a threat maps to, or None when no goal fits.

    With a goal_property in the predicate, candidates are the goals of
    that property, preferring one targeting the element. Wildcarded,
    the first goal on the element wins, falling back to the first goal
    of the item (every threat must map to some goal).
    """
    wanted = entry.match_predicate.goal_property
    if wanted is not None:
        candidates = [g for g in item.security_goals if g.property.value == wanted]
        if not candidates:
            return None
        for g in candidates:
            if g.target_ref == element_id:
                return g
        return candidates[0]
    on_target = [g for g in item.security_goals if g.target_ref == element_id]
    if on_target:
        return on_target[0]
    return item.security_goals[0] if item.security_goals else None


def _predicate_matches(entry: ThreatCatalogEntry, element, item: Item) -> bool:
    pred = entry.match_predicate
    is_iface = isinstance(element, Interface)
    if pred.interface_kind is not None and (not is_iface or element.kind.value != pred.interface_kind):
        return False
    if pred.exposure is not None and (not is_iface or element.exposure.value != pred.exposure):
        return False
    if pred.service is not None:
        carries_services = is_iface and element.kind.value in ("canlike", "diag")
        if not carries_services or pred.service not in declared_services(item):
            return False
    if pred.goal_property is not None and not any(
        g.property.value == pred.goal_property for g in item.security_goals
    ):
        return False
    return True


def enumerate_threats(item: Item, entries: list[ThreatCatalogEntry]) -> list[Threat]:
    """One threat per (catalog entry, element) pair whose predicate matches."""
    threats: list[Threat] = []
    elements = list(item.interfaces) + list(item.components)
    for entry in sorted(entries, key=lambda e: e.id):
        for element in sorted(elements, key=lambda e: e.id):
            if not _predicate_matches(entry, element, item):
                continue
            goal = _resolve_goal(entry, element.id, item)
            if goal is None:
                continue
            threats.append(
                Threat(
                    id=f"T-{entry.id}-{element.id}",
                    catalog_ref=entry.id,
                    target=element.id,
                    mapped_goal=goal.id,
                )
            )
    return threats


def assess_risk(threat: Threat, impact: ImpactVector, probability: int, threshold: int = 4) -> Risk:
    _check_range("probability", probability, 0, 4)
    _check_range("threshold", threshold, 1, 16)
    value = impact.level * probability
    return Risk(
        threat_ref=threat.id,
        impact=impact,
        probability=probability,
        value=value,
        threshold=threshold,
        acceptable=value < threshold,
    )


# -- security concept ---------------------------------------------------


def derive_requirements(
    threats_with_risks: list[tuple[Threat, Risk]],
    library: list[Countermeasure],
    *,
    entry_index: dict[str, ThreatCatalogEntry],
    negative_classes: set[str] = frozenset(),
    hint_by_class: dict[str, VerificationHint] | None = None,
) -> list[SecurityRequirement]:
    """One requirement per unacceptable risk; acceptable risks yield none."""
    hint_by_class = hint_by_class or {}
    out: list[SecurityRequirement] = []
    for threat, risk in threats_with_risks:
        if risk.acceptable:
            continue
        entry = entry_index[threat.catalog_ref]
        tclass = entry.threat_class
        countermeasure = next((c for c in library if tclass in c.mitigates), None)
        kind = RequirementKind.NEGATIVE if tclass in negative_classes else RequirementKind.POSITIVE
        phrase = tclass.replace("_", " ")
        if kind is RequirementKind.NEGATIVE:
            text = f"{threat.target} shall not exhibit {phrase} behavior ({entry.title})."
        else:
            text = f"{threat.target} shall withstand {phrase} attacks ({entry.title})."
        if countermeasure is None:
            text = "[UNCOVERED] " + text
        out.append(
            SecurityRequirement(
                id="REQ-" + threat.id.removeprefix("T-"),
                text=text,
                kind=kind,
                derived_from=(threat.id,),
                goal_ref=threat.mapped_goal,
                countermeasure_ref=countermeasure.id if countermeasure else None,
                verification_hint=hint_by_class.get(tclass, VerificationHint.FUNCTIONAL),
            )
        )
    return out


@dataclass
class ConsistencyReport:
    orphan_requirements: list[str]
    uncovered_goals: list[str]

    def to_dict(self) -> dict:
        return {
            "orphan_requirements": self.orphan_requirements,
            "uncovered_goals": self.uncovered_goals,
        }


def check_consistency(
    requirements: list[SecurityRequirement], goals: list[SecurityGoal]
) -> ConsistencyReport:
    goal_ids = {g.id for g in goals}
    referenced = {r.goal_ref for r in requirements}
    return ConsistencyReport(
        orphan_requirements=sorted(r.id for r in requirements if r.goal_ref not in goal_ids),
        uncovered_goals=sorted(g.id for g in goals if g.id not in referenced),
    )


# -- whole-stage convenience --------------------------------------------


@dataclass
class AnalysisResult:
    threats: list[Threat]
    risks: list[Risk]
    requirements: list[SecurityRequirement]
    consistency: ConsistencyReport
    threat_class_by_id: dict[str, str]
    regulation_refs_by_threat: dict[str, tuple[str, ...]]


def analyze_item(item: Item, catalog: Catalog, library: list[Countermeasure]) -> AnalysisResult:
    """Run enumeration, rating and concept derivation with item-supplied scales.

    Impact vectors come from config_params.impact_ratings keyed by the
    mapped goal's property; probability is the catalog entry's default
    feasibility; the threshold is config_params.risk_threshold.
    """
    ratings = item.config_params.get("impact_ratings", {})
    threshold = int(item.config_params.get("risk_threshold", 4))
    entry_index = {e.id: e for e in catalog.entries}
    goal_index = {g.id: g for g in item.security_goals}

    threats = enumerate_threats(item, catalog.entries)
    pairs: list[tuple[Threat, Risk]] = []
    for threat in threats:
        prop = goal_index[threat.mapped_goal].property.value
        if prop not in ratings:
            raise AnalysisError(f"no impact rating for goal property {prop!r}")
        impact = ImpactVector(**ratings[prop])
        entry = entry_index[threat.catalog_ref]
        pairs.append((threat, assess_risk(threat, impact, entry.default_feasibility, threshold)))

    requirements = derive_requirements(
        pairs,
        library,
        entry_index=entry_index,
        negative_classes=catalog.negative_classes,
        hint_by_class=catalog.hint_by_class,
    )
    return AnalysisResult(
        threats=threats,
        risks=[r for _, r in pairs],
        requirements=requirements,
        consistency=check_consistency(requirements, item.security_goals),
        threat_class_by_id={t.id: entry_index[t.catalog_ref].threat_class for t in threats},
        regulation_refs_by_threat={
            t.id: entry_index[t.catalog_ref].regulation_refs for t in threats
        },
    )
