"""The standard vocabulary: pattern, matcher and condition names.

Scenarios are validated against this set; the script registry maps the
patterns to concrete scripts and the executor implements the matchers
and conditions.
"""

from __future__ import annotations

from .scenario_dsl import Vocabulary

PATTERNS = frozenset(
    {
        "SEND_CAN_MSG",
        "TESTER_PRESENT",
        "SET_SESSION",
        "SECURITY_ACCESS",
        "SECURITY_ACCESS_WEAK",
        "WRITE_DATA",
        "FUZZ_CAMPAIGN",
        "VULN_SCAN",
    }
)

MATCHERS = frozenset({"RESPONSE", "NEG_RESPONSE", "NO_RESPONSE"})

CONDITIONS = frozenset(
    {
        "all_expectations_met",
        "any_expectation_missed",
        "sut.alive",
        "sut.crashed",
        "unlock.achieved",
        "write.accepted",
        "scan.findings",
        "scan.clean",
    }
)

PRECONDITIONS = frozenset({"sut_alive", "env_ready"})

STANDARD_VOCABULARY = Vocabulary(
    patterns=PATTERNS,
    matchers=MATCHERS,
    conditions=CONDITIONS,
    preconditions=PRECONDITIONS,
)
