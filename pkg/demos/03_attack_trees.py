"""Turn attack trees into concrete penetration checklists.

An attack goal decomposes into AND/OR combinations of atomic actions;
every minimal leaf-set that satisfies the root is one attack vector,
and each vector becomes one penetration scenario in a test plan.
"""

from pathlib import Path

import vecuforge
from vecuforge.planner import (
    And,
    AttackTree,
    Leaf,
    Or,
    enumerate_attack_vectors,
    load_attack_trees,
)

SAMPLES = Path(vecuforge.__file__).parent / "samples"


def describe(vector) -> str:
    parts = []
    for leaf in vector:
        args = ", ".join(f"{k}={v}" for k, v in leaf.args)
        parts.append(f"{leaf.pattern}({args})" if args else leaf.pattern)
    return " AND ".join(parts)


def main() -> None:
    print("bundled attack trees:")
    for threat_class, tree in sorted(load_attack_trees(SAMPLES / "attack_trees.json").items()):
        vectors = enumerate_attack_vectors(tree)
        print(f"\n  goal: defeat protection against {threat_class!r} "
              f"(oracle fail condition: {tree.fail_condition})")
        for i, vector in enumerate(vectors):
            print(f"    vector {i}: {describe(vector)}")

    # Hand-built tree: the same unlock action appears alone and inside a
    # longer branch; the longer branch is not minimal, so it is pruned.
    unlock = Leaf("SECURITY_ACCESS_WEAK")
    tree = AttackTree(
        root=Or((
            unlock,
            And((unlock, Leaf("SET_SESSION", (("session", "0x03"),)))),
        )),
        fail_condition="unlock.achieved",
    )
    vectors = enumerate_attack_vectors(tree)
    print("\nminimality: 'weak unlock' OR 'weak unlock AND deep session'")
    print(f"  -> {len(vectors)} minimal vector: {describe(vectors[0])}")


if __name__ == "__main__":
    main()
