"""Pipeline orchestrator: every stage is a subcommand over a run store.

A run store is a directory of stage artifacts; each stage writes only
its own files and consumes only artifacts of earlier stages, so any
prefix of the pipeline can be re-run or inspected in isolation. Exit
codes: 0 success, 1 completed with failed findings, 2 usage or
configuration error (missing prerequisites name the stage to run
first), 3 infrastructure error.

``demo`` runs the whole pipeline against a self-started simulator
instance and tears it down afterwards.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import shutil
import subprocess
import sys
from contextlib import contextmanager
from pathlib import Path

from .analysis import (
    AnalysisError,
    Risk,
    SecurityRequirement,
    analyze_item,
    load_catalog,
    load_countermeasures,
)
from .executor import (
    ExecutorError,
    Resources,
    TestResult,
    build_env_template,
    execute_case,
    prepare_env,
    restore,
)
from .item_model import (
    Exposure,
    FingerprintError,
    InterfaceKind,
    ItemError,
    ProbeConfig,
    fingerprint_sut,
    item_from_dict,
    load_item,
    reconcile,
)
from .planner import PlannerError, TestPlan, build_plan, load_attack_trees
from .reporter import (
    UNTESTED_REASONS,
    ReporterError,
    TraceIndex,
    build_report,
    render,
)
from .scenario_dsl import DslError, parse_scenario, serialize
from .script_registry import RegistryError, ScriptRegistry
from .tcg import TcgError, TestCase, generate_cases, load_sutdb
from .vocabulary import PATTERNS
from .vuln_scanner import ScanError, load_vulndb

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_USAGE = 2
EXIT_INFRA = 3

RUN_DIR_ENV = "VECUFORGE_RUN_DIR"

_SAMPLES = Path(__file__).parent / "samples"

_CONFIG_ERRORS = (
    ItemError,
    AnalysisError,
    PlannerError,
    DslError,
    TcgError,
    RegistryError,
    ScanError,
    ReporterError,
    json.JSONDecodeError,
    OSError,
)


class UsageError(Exception):
    """Bad flags, bad input files, or missing prerequisite artifacts."""


class InfraError(Exception):
    """The environment (SUT, network, subprocess) failed, not the inputs."""


# -- run store ---------------------------------------------------------------


class RunStore:
    """Directory of per-stage artifacts with canonical JSON encoding."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def write_bytes(self, rel: str, data: bytes) -> None:
        target = self.path(rel)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)

    def write_json(self, rel: str, doc: dict) -> None:
        self.write_bytes(
            rel, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()
        )

    def read_json(self, rel: str, produced_by: str) -> dict:
        target = self.path(rel)
        if not target.exists():
            raise UsageError(
                f"missing artifact {rel!r}; run the {produced_by!r} stage first"
            )
        with open(target, encoding="utf-8") as fh:
            return json.load(fh)

    def read_documents(self, subdir: str, suffix: str, produced_by: str) -> list[dict]:
        """All artifacts in a stage subdirectory, in sorted filename order."""
        directory = self.path(subdir)
        paths = sorted(directory.glob(f"*{suffix}")) if directory.is_dir() else []
        if not paths:
            raise UsageError(
                f"no {suffix} artifacts under {subdir!r}; "
                f"run the {produced_by!r} stage first"
            )
        docs = []
        for path in paths:
            with open(path, encoding="utf-8") as fh:
                docs.append(json.load(fh))
        return docs

    def reset_dir(self, subdir: str) -> None:
        """Clear a stage-owned subdirectory so reruns leave no stale files."""
        directory = self.path(subdir)
        if directory.is_dir():
            shutil.rmtree(directory)
        directory.mkdir(parents=True)


# -- helpers -----------------------------------------------------------------


def _parse_endpoint(text: str | None, *, need_mgmt: bool) -> tuple[str, int, int]:
    """Parse ``host:data_port[:mgmt_port]``."""
    if not text:
        raise UsageError(
            "this stage talks to a running SUT; pass --sim-endpoint "
            "host:data_port" + (":mgmt_port" if need_mgmt else "[:mgmt_port]")
        )
    parts = text.split(":")
    try:
        if len(parts) == 3:
            return parts[0], int(parts[1]), int(parts[2])
        if len(parts) == 2 and not need_mgmt:
            return parts[0], int(parts[1]), 0
    except ValueError:
        pass
    raise UsageError(f"cannot parse --sim-endpoint {text!r}")


def _load_item_artifact(store: RunStore):
    return item_from_dict(store.read_json("item.json", "item"))


def _analysis_from_inputs(store: RunStore, args):
    item = _load_item_artifact(store)
    return analyze_item(
        item,
        load_catalog(args.catalog),
        load_countermeasures(args.countermeasures),
    )


@contextmanager
def _sim_process(vulns: str):
    """Spawn a simulator subprocess and guarantee its teardown."""
    proc = subprocess.Popen(
        [sys.executable, "-m", "vecuforge.simulator", "--vulns", vulns],
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
    )
    try:
        line = proc.stdout.readline() if proc.stdout else ""
        match = re.match(r"LISTENING data=(\d+) mgmt=(\d+)", line or "")
        if not match:
            raise InfraError(f"simulator did not come up (got {line!r})")
        yield "127.0.0.1", int(match.group(1)), int(match.group(2))
    finally:
        proc.terminate()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()


# -- stages ------------------------------------------------------------------


def stage_item(store: RunStore, args) -> int:
    path = Path(args.item)
    if not path.exists():
        raise UsageError(f"item definition {str(path)!r} does not exist")
    load_item(path)  # full validation before anything is written
    with open(path, encoding="utf-8") as fh:
        store.write_json("item.json", json.load(fh))
    return EXIT_OK


def stage_fingerprint(store: RunStore, args) -> int:
    item = _load_item_artifact(store)
    host, data_port, _ = _parse_endpoint(args.sim_endpoint, need_mgmt=False)
    probe_cfg = ProbeConfig()
    fingerprints: dict[str, dict] = {}
    stamps: dict[str, str] = {}
    discrepancies: list[dict] = []
    for iface in item.interfaces:
        if iface.exposure is not Exposure.EXTERNAL:
            continue
        if iface.kind not in (InterfaceKind.CANLIKE, InterfaceKind.DIAG):
            continue
        fp = fingerprint_sut(iface, probe_cfg, endpoint=(host, data_port))
        doc = fp.to_dict()
        stamps[iface.id] = doc.pop("timestamp")
        fingerprints[iface.id] = doc
        discrepancies.extend(d.to_dict() for d in reconcile(item, fp))
    if not fingerprints:
        raise UsageError("item declares no external protocol interfaces to probe")
    store.write_json(
        "fingerprint.json",
        {"timestamps": stamps, "fingerprints": fingerprints},
    )
    store.write_json("discrepancies.json", {"discrepancies": discrepancies})
    return EXIT_OK


def stage_analyze(store: RunStore, args) -> int:
    analysis = _analysis_from_inputs(store, args)
    store.write_json(
        "threats.json",
        {
            "threats": [t.to_dict() for t in analysis.threats],
            "threat_class_by_id": analysis.threat_class_by_id,
            "regulation_refs_by_threat": {
                k: list(v) for k, v in analysis.regulation_refs_by_threat.items()
            },
        },
    )
    store.write_json("risks.json", {"risks": [r.to_dict() for r in analysis.risks]})
    return EXIT_OK


def stage_concept(store: RunStore, args) -> int:
    store.read_json("threats.json", "analyze")
    store.read_json("risks.json", "analyze")
    analysis = _analysis_from_inputs(store, args)
    store.write_json(
        "requirements.json",
        {"requirements": [r.to_dict() for r in analysis.requirements]},
    )
    store.write_json("consistency.json", analysis.consistency.to_dict())
    store.write_json("trace_index.json", TraceIndex.from_analysis(analysis).to_dict())
    return EXIT_OK


def stage_plan(store: RunStore, args) -> int:
    item = _load_item_artifact(store)
    threats_doc = store.read_json("threats.json", "analyze")
    risks = [Risk.from_dict(d) for d in store.read_json("risks.json", "analyze")["risks"]]
    requirements = [
        SecurityRequirement.from_dict(d)
        for d in store.read_json("requirements.json", "concept")["requirements"]
    ]
    plan, scenarios = build_plan(
        item,
        risks,
        requirements,
        trees=load_attack_trees(args.attack_trees),
        threat_class_by_id=threats_doc["threat_class_by_id"],
        seed=args.seed,
        fuzz_budget=args.budget,
    )
    store.write_json("plan.json", plan.to_dict())
    store.reset_dir("scenarios")
    for scenario in scenarios:
        store.write_bytes(f"scenarios/{scenario.id}.scn", serialize(scenario).encode())
    return EXIT_OK


def stage_tcg(store: RunStore, args) -> int:
    store.read_json("plan.json", "plan")
    scenario_dir = store.path("scenarios")
    paths = sorted(scenario_dir.glob("*.scn")) if scenario_dir.is_dir() else []
    if not paths:
        raise UsageError("no .scn artifacts under 'scenarios'; run the 'plan' stage first")
    sutdb = load_sutdb(args.sutdb)
    registry = ScriptRegistry(args.scripts, PATTERNS)
    cases: list[TestCase] = []
    for path in paths:
        scenario = parse_scenario(path.read_text(encoding="utf-8"))
        cases.extend(generate_cases(scenario, sutdb, registry, t=args.strength))
    store.reset_dir("cases")
    for case in cases:
        store.write_json(f"cases/{case.id}.case.json", case.to_dict())
    return EXIT_OK


def stage_execute(store: RunStore, args) -> int:
    case_docs = store.read_documents("cases", ".case.json", "tcg")
    cases = [TestCase.from_dict(doc) for doc in case_docs]
    sutdb = load_sutdb(args.sutdb)
    registry = ScriptRegistry(args.scripts, PATTERNS)
    resources = Resources(sutdb=sutdb, vulndb=load_vulndb(args.vulndb))
    host, data_port, mgmt_port = _parse_endpoint(args.sim_endpoint, need_mgmt=True)

    template = build_env_template(
        cases, sutdb, host=host, data_port=data_port, mgmt_port=mgmt_port
    )
    try:
        session = prepare_env(template, sutdb)
    except ExecutorError as exc:
        raise InfraError(f"cannot prepare the test environment: {exc}") from None

    store.reset_dir("results")
    cleanups: list[dict] = []
    any_fail = False
    broken = None
    try:
        for case in cases:
            result = execute_case(case, session, resources, registry)
            store.write_json(f"results/{case.id}.result.json", result.to_dict())
            any_fail = any_fail or result.verdict == "fail"
            cleanup = restore(session)
            cleanups.append({"case_ref": case.id, **cleanup.to_dict()})
            if not (cleanup.restored and cleanup.verified):
                broken = cleanup
                break
    finally:
        session.close()
        store.write_json("cleanup.json", {"cleanups": cleanups})
    if broken is not None:
        raise InfraError(
            f"SUT state restore failed after {broken.session_ref}: {broken.detail}; "
            "remaining cases skipped"
        )
    return EXIT_FINDINGS if any_fail else EXIT_OK


def stage_report(store: RunStore, args) -> int:
    plan = TestPlan.from_dict(store.read_json("plan.json", "plan"))
    cases = [
        TestCase.from_dict(doc)
        for doc in store.read_documents("cases", ".case.json", "tcg")
    ]
    index = TraceIndex.from_dict(store.read_json("trace_index.json", "concept"))
    results_dir = store.path("results")
    results = [
        TestResult.from_dict(json.loads(path.read_text(encoding="utf-8")))
        for path in (sorted(results_dir.glob("*.result.json")) if results_dir.is_dir() else [])
    ]
    report = build_report(
        plan, cases, results, index, untested_reason=args.untested_reason
    )
    store.write_bytes("report.json", render(report, "machine"))
    store.write_bytes("report.txt", render(report, "text"))
    return EXIT_FINDINGS if report.dashboard["fail"] else EXIT_OK


def stage_demo(store: RunStore, args) -> int:
    with _sim_process(args.vulns) as (host, data_port, mgmt_port):
        live = argparse.Namespace(**vars(args))
        live.sim_endpoint = f"{host}:{data_port}:{mgmt_port}"
        stage_item(store, live)
        stage_fingerprint(store, live)
        stage_analyze(store, live)
        stage_concept(store, live)
        stage_plan(store, live)
        stage_tcg(store, live)
        stage_execute(store, live)
        return stage_report(store, live)


_STAGES = {
    "item": stage_item,
    "fingerprint": stage_fingerprint,
    "analyze": stage_analyze,
    "concept": stage_concept,
    "plan": stage_plan,
    "tcg": stage_tcg,
    "execute": stage_execute,
    "report": stage_report,
    "demo": stage_demo,
}


# -- argument parsing ----------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vecuforge",
        description="automated security-testing pipeline for diagnostic ECUs",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for name, func in _STAGES.items():
        stage = sub.add_parser(name, help=(func.__doc__ or "").strip() or None)
        stage.add_argument(
            "--run-dir",
            default=os.environ.get(RUN_DIR_ENV),
            help=f"artifact directory (default: ${RUN_DIR_ENV})",
        )
        stage.add_argument("--item", default=str(_SAMPLES / "item.json"))
        stage.add_argument("--catalog", default=str(_SAMPLES / "catalog.json"))
        stage.add_argument(
            "--countermeasures", default=str(_SAMPLES / "countermeasures.json")
        )
        stage.add_argument(
            "--attack-trees", default=str(_SAMPLES / "attack_trees.json")
        )
        stage.add_argument("--vulndb", default=str(_SAMPLES / "vulndb.json"))
        stage.add_argument("--sutdb", default=str(_SAMPLES / "sutdb.json"))
        stage.add_argument("--scripts", default=str(_SAMPLES / "scripts"))
        stage.add_argument("--seed", type=int, default=1)
        stage.add_argument("--strength", type=int, default=2,
                           help="covering-array interaction strength")
        stage.add_argument("--budget", type=int, default=2000,
                           help="fuzz campaign frame budget")
        stage.add_argument("--sim-endpoint", default=None,
                           help="running SUT as host:data_port[:mgmt_port]")
        stage.add_argument("--untested-reason", choices=UNTESTED_REASONS,
                           default="other")
        if name == "demo":
            stage.add_argument("--vulns", choices=["on", "off"], default="on",
                               help="run the simulator with or without its seeded defects")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if not args.run_dir:
        print(
            f"error: no run directory; pass --run-dir or set ${RUN_DIR_ENV}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    try:
        store = RunStore(args.run_dir)
        return _STAGES[args.stage](store, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfraError, ExecutorError, FingerprintError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFRA


if __name__ == "__main__":
    raise SystemExit(main())
