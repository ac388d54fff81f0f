"""Run the whole pipeline end to end and print the final report.

Boots a throwaway virtual ECU, then chains every stage: item intake,
active fingerprinting, threat and risk analysis, security concept,
test planning, test-case generation, execution with snapshot/restore,
and reporting. Exit code 1 means the campaign produced failed findings
-- which it will, because the default ECU build ships four seeded
defects.
"""

import sys
import tempfile
from pathlib import Path

from vecuforge.cli import main as run_stage


def main() -> int:
    run_dir = Path(tempfile.mkdtemp(prefix="vecuforge-pipeline-"))
    print(f"run store: {run_dir}\n")
    code = run_stage(["demo", "--run-dir", str(run_dir)])

    print((run_dir / "report.txt").read_text())
    artifacts = sorted(
        str(p.relative_to(run_dir)) for p in run_dir.rglob("*") if p.is_file()
    )
    print(f"{len(artifacts)} artifacts written:")
    for name in artifacts:
        print(f"  {name}")
    print(f"\nexit code {code} "
          f"({'failed findings exist' if code == 1 else 'clean'})")
    return code


if __name__ == "__main__":
    sys.exit(main())
