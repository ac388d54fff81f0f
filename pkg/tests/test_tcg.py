"""Covering-array construction and test case generation."""

from __future__ import annotations

import itertools
import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecuforge.scenario_dsl import parse_scenario
from vecuforge.script_registry import ScriptRegistry
from vecuforge.tcg import (
    SutDatabase,
    TcgError,
    covering_array,
    generate_cases,
    load_sutdb,
)
from vecuforge.tcg import TestCase as Case
from vecuforge.vocabulary import PATTERNS


def assert_full_coverage(domains: dict[str, list], t: int, rows: list[tuple]) -> None:
    """Brute-force checker: every t-way value combination occurs in a row.

    Deliberately independent of the construction: enumerate all parameter
    subsets and value products directly.
    """
    params = sorted(domains)
    positions = {p: i for i, p in enumerate(params)}
    for subset in itertools.combinations(params, t):
        for combo in itertools.product(*(domains[p] for p in subset)):
            hit = any(
                all(row[positions[p]] == v for p, v in zip(subset, combo))
                for row in rows
            )
            assert hit, f"t-tuple {dict(zip(subset, combo))} not covered"


def product_size(domains: dict[str, list]) -> int:
    size = 1
    for vals in domains.values():
        size *= len(vals)
    return size


class TestCoveringArray:
    def test_single_parameter_each_value_once(self):
        arr = covering_array({"P": ["a", "b"]}, t=1)
        assert arr.rows == [("a",), ("b",)]

    def test_strength_equals_width_gives_full_product(self):
        domains = {"A": ["0", "1"], "B": ["x", "y"], "C": ["p", "q"]}
        arr = covering_array(domains, t=3)
        expected = [
            (a, b, c) for a in domains["A"] for b in domains["B"] for c in domains["C"]
        ]
        assert arr.rows == expected

    def test_pairwise_three_binary_parameters(self):
        domains = {"A": ["0", "1"], "B": ["x", "y"], "C": ["p", "q"]}
        arr = covering_array(domains, t=2)
        assert_full_coverage(domains, 2, arr.rows)
        assert len(arr.rows) <= 8
        pairs = {
            (pi, pj, row[i], row[j])
            for row in arr.rows
            for (i, pi), (j, pj) in itertools.combinations(enumerate(arr.parameters), 2)
        }
        assert len(pairs) == 12

    @pytest.mark.parametrize("t", [2, 3])
    @pytest.mark.parametrize("levels", [2, 3, 4])
    @pytest.mark.parametrize("width", [2, 3, 4, 5])
    def test_uniform_configurations(self, width, levels, t):
        if t > width:
            pytest.skip("strength exceeds parameter count")
        domains = {f"P{i}": [f"v{j}" for j in range(levels)] for i in range(width)}
        arr = covering_array(domains, t)
        assert_full_coverage(domains, t, arr.rows)
        assert len(arr.rows) <= product_size(domains)

    @pytest.mark.parametrize(
        "sizes", [(1, 3), (2, 4, 3), (1, 1, 2), (4, 2, 3, 2), (2, 2, 2, 2, 3)]
    )
    def test_mixed_level_configurations(self, sizes):
        domains = {f"P{i}": [f"v{j}" for j in range(n)] for i, n in enumerate(sizes)}
        for t in (2, 3):
            if t > len(sizes):
                continue
            arr = covering_array(domains, t)
            assert_full_coverage(domains, t, arr.rows)
            assert len(arr.rows) <= product_size(domains)

    def test_row_count_monotone_in_strength(self):
        domains = {"A": ["0", "1"], "B": ["x", "y", "z"], "C": ["p", "q"]}
        counts = [len(covering_array(domains, t).rows) for t in (1, 2, 3)]
        assert counts[0] <= counts[1] <= counts[2] <= product_size(domains)

    def test_deterministic(self):
        domains = {"A": ["0", "1", "2"], "B": ["x", "y"], "C": ["p", "q", "r", "s"]}
        assert covering_array(domains, 2).rows == covering_array(domains, 2).rows

    def test_strength_out_of_range(self):
        with pytest.raises(TcgError, match="out of range"):
            covering_array({"A": ["0"], "B": ["1"]}, t=3)
        with pytest.raises(TcgError, match="out of range"):
            covering_array({"A": ["0"]}, t=0)

    def test_empty_domain_rejected(self):
        with pytest.raises(TcgError, match="'B' is empty"):
            covering_array({"A": ["0"], "B": []}, t=1)

    def test_no_parameters_rejected(self):
        with pytest.raises(TcgError, match="at least one parameter"):
            covering_array({}, t=1)

    @settings(max_examples=60, deadline=None)
    @given(
        domains=st.dictionaries(
            st.sampled_from(["A", "B", "C", "D"]),
            st.lists(st.sampled_from(["0", "1", "2", "3"]), min_size=1, max_size=4, unique=True),
            min_size=1,
            max_size=4,
        ),
        t=st.integers(min_value=1, max_value=4),
    )
    def test_coverage_property(self, domains, t):
        if t > len(domains):
            t = len(domains)
        arr = covering_array(domains, t)
        assert_full_coverage(domains, t, arr.rows)
        assert len(arr.rows) <= product_size(domains)


class TestSutDatabase:
    def test_load_bundled(self, samples_dir):
        db = load_sutdb(samples_dir / "sutdb.json")
        assert db.sut_id == "SIM-ECU-01"
        assert db.domain_values("DID") == ["0xf190"]
        assert db.domain_values("REQ_ID") == ["7df", "7e0"]
        assert "func_id" in db.slot_values()

    def test_range_expands_to_boundaries(self):
        db = SutDatabase(sut_id="X", domains={"N": {"range": [0, 10]}})
        assert db.domain_values("N") == ["0", "1", "9", "10"]

    def test_degenerate_ranges(self):
        db = SutDatabase(sut_id="X", domains={"A": {"range": [5, 5]}, "B": {"range": [5, 6]}})
        assert db.domain_values("A") == ["5"]
        assert db.domain_values("B") == ["5", "6"]

    def test_inverted_range_rejected(self):
        db = SutDatabase(sut_id="X", domains={"N": {"range": [10, 0]}})
        with pytest.raises(TcgError, match="inverted"):
            db.domain_values("N")

    def test_unknown_domain_named(self):
        db = SutDatabase(sut_id="X")
        with pytest.raises(TcgError, match="'GHOST'"):
            db.domain_values("GHOST")

    def test_empty_domain_named(self):
        db = SutDatabase(sut_id="X", domains={"A": []})
        with pytest.raises(TcgError, match="'A' is empty"):
            db.domain_values("A")


def scenario_text(
    sid: str = "scn-t",
    meta_extra: str = "",
    steps: str = "    pattern TESTER_PRESENT()",
) -> str:
    return (
        f'scenario "{sid}" {{\n'
        "  meta {\n"
        '    method: "functional"\n'
        '    requirement_ref: "REQ-1"\n'
        f"{meta_extra}"
        "  }\n"
        "  env {\n"
        "    interface bus canlike\n"
        "  }\n"
        "  steps {\n"
        f"{steps}\n"
        "  }\n"
        "  oracle {\n"
        "    pass: all_expectations_met\n"
        "    fail: any_expectation_missed\n"
        "  }\n"
        "}\n"
    )


@pytest.fixture(scope="module")
def registry(samples_dir):
    return ScriptRegistry(samples_dir / "scripts", known_patterns=PATTERNS)


@pytest.fixture(scope="module")
def sutdb(samples_dir):
    return load_sutdb(samples_dir / "sutdb.json")


class TestGenerateCases:
    def test_zero_placeholders_single_case(self, sutdb, registry):
        scenario = parse_scenario(scenario_text())
        cases = generate_cases(scenario, sutdb, registry)
        assert len(cases) == 1
        assert cases[0].id == "scn-t-000"
        assert cases[0].input_data == {"bindings": {}}
        assert cases[0].method == "functional"

    def test_two_placeholders_full_pairwise_product(self, registry):
        db = SutDatabase(sut_id="X", domains={"A": ["1", "2"], "B": ["x", "y"]})
        scenario = parse_scenario(
            scenario_text(
                meta_extra='    domain_A: "A"\n    domain_B: "B"\n',
                steps="    pattern SEND_CAN_MSG(data=$B, id=$A)",
            )
        )
        cases = generate_cases(scenario, db, registry, t=2)
        assert [c.id for c in cases] == [f"scn-t-{i:03d}" for i in range(4)]
        rows = {(c.variability["A"], c.variability["B"]) for c in cases}
        assert rows == {("1", "x"), ("1", "y"), ("2", "x"), ("2", "y")}

    def test_single_placeholder_strength_clamped(self, registry):
        db = SutDatabase(sut_id="X", domains={"A": ["1", "2", "3"]})
        scenario = parse_scenario(
            scenario_text(
                meta_extra='    domain_A: "A"\n',
                steps="    pattern SEND_CAN_MSG(data=0x013e, id=$A)",
            )
        )
        cases = generate_cases(scenario, db, registry, t=2)
        assert [c.variability["A"] for c in cases] == ["1", "2", "3"]

    def test_domain_declaration_maps_placeholder_to_key(self, sutdb, registry):
        scenario = parse_scenario(
            scenario_text(
                meta_extra='    domain_TARGET: "DID"\n',
                steps="    pattern WRITE_DATA(did=$TARGET, value=0xbeef)",
            )
        )
        cases = generate_cases(scenario, sutdb, registry)
        assert cases[0].variability == {"TARGET": "0xf190"}

    def test_hex_bindings_normalized_in_bound_args(self, sutdb, registry):
        scenario = parse_scenario(
            scenario_text(
                meta_extra='    domain_DID: "DID"\n    domain_VALUE: "VALUE"\n',
                steps="    pattern WRITE_DATA(did=$DID, value=$VALUE)",
            )
        )
        cases = generate_cases(scenario, sutdb, registry)
        step = cases[0].activities[0]
        assert step.bound_args == {"did": "f190", "value": "beef"}
        assert step.script_ref == "write-data"

    def test_non_hex_bindings_pass_through(self, registry):
        db = SutDatabase(sut_id="X", domains={"REQ_ID": ["7df", "7e0"]})
        scenario = parse_scenario(
            scenario_text(
                meta_extra='    domain_REQ_ID: "REQ_ID"\n',
                steps="    pattern SEND_CAN_MSG(data=0x013e, id=$REQ_ID)",
            )
        )
        cases = generate_cases(scenario, db, registry)
        assert {c.activities[0].bound_args["id"] for c in cases} == {"7df", "7e0"}

    def test_expect_steps_become_expectations(self, sutdb, registry):
        scenario = parse_scenario(
            scenario_text(
                steps=(
                    "    pattern TESTER_PRESENT()\n"
                    "    expect RESPONSE(service=0x3e) within 250ms"
                )
            )
        )
        case = generate_cases(scenario, sutdb, registry)[0]
        assert [a.kind for a in case.activities] == ["pattern", "expect"]
        expect = case.activities[1]
        assert expect.name == "RESPONSE"
        assert expect.within_ms == 250
        assert expect.script_ref is None
        assert case.expected_results["expectations"] == [
            {"matcher": "RESPONSE", "args": {"service": "3e"}, "within_ms": 250}
        ]
        assert case.expected_results["pass_condition"] == "all_expectations_met"

    def test_traceability_copied_from_meta(self, sutdb, registry):
        scenario = parse_scenario(
            scenario_text(meta_extra='    threat_ref: "T-1"\n    risk_ref: "R-abc"\n')
        )
        case = generate_cases(scenario, sutdb, registry)[0]
        assert case.traceability == {
            "requirement_refs": ["REQ-1"],
            "threat_refs": ["T-1"],
            "risk_ref": "R-abc",
        }

    def test_empty_traceability_rejected(self, sutdb, registry):
        text = scenario_text().replace('    requirement_ref: "REQ-1"\n', "")
        scenario = parse_scenario(text)
        with pytest.raises(TcgError, match="empty traceability"):
            generate_cases(scenario, sutdb, registry)

    def test_missing_script_names_pattern(self, sutdb, tmp_path):
        empty = ScriptRegistry(tmp_path, known_patterns=PATTERNS)
        scenario = parse_scenario(scenario_text())
        with pytest.raises(TcgError, match="TESTER_PRESENT"):
            generate_cases(scenario, sutdb, empty)

    def test_missing_domain_names_placeholder(self, registry):
        db = SutDatabase(sut_id="X")
        scenario = parse_scenario(
            scenario_text(
                meta_extra='    domain_GHOST: "GHOST"\n',
                steps="    pattern SEND_CAN_MSG(data=0x013e, id=$GHOST)",
            )
        )
        with pytest.raises(TcgError, match="'GHOST'"):
            generate_cases(scenario, db, registry)

    def test_invalid_scenario_rejected(self, sutdb, registry):
        scenario = parse_scenario(scenario_text(steps="    pattern FROB_BUS()"))
        with pytest.raises(TcgError, match="does not validate"):
            generate_cases(scenario, sutdb, registry)

    def test_checklist_fields_populated(self, sutdb, registry):
        case = generate_cases(parse_scenario(scenario_text()), sutdb, registry)[0]
        assert case.purpose
        assert case.sut_description.startswith("SIM-ECU-01")
        assert case.environmental_needs["interfaces"][0] == {
            "logical": "bus",
            "kind": "canlike",
            "params": {},
        }
        assert case.procedural_requirements
        assert case.expected_results["fail_condition"] == "any_expectation_missed"

    def test_serialization_deterministic(self, sutdb, registry):
        scenario = parse_scenario(
            scenario_text(
                meta_extra='    domain_DID: "DID"\n    domain_VALUE: "VALUE"\n',
                steps="    pattern WRITE_DATA(did=$DID, value=$VALUE)",
            )
        )
        one = json.dumps([c.to_dict() for c in generate_cases(scenario, sutdb, registry)])
        two = json.dumps([c.to_dict() for c in generate_cases(scenario, sutdb, registry)])
        assert one == two

    def test_case_round_trip(self, sutdb, registry):
        scenario = parse_scenario(
            scenario_text(
                meta_extra='    domain_DID: "DID"\n    domain_VALUE: "VALUE"\n',
                steps=(
                    "    pattern WRITE_DATA(did=$DID, value=$VALUE)\n"
                    "    expect RESPONSE(service=0x2e) within 500ms"
                ),
            )
        )
        for case in generate_cases(scenario, sutdb, registry):
            assert Case.from_dict(case.to_dict()) == case
