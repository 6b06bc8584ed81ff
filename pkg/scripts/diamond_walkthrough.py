"""Pass-by-pass trace of the solver on the four-node ring from the test suite.

V3 and V4 are good waiting spots; V1 and V2 each sit one lucrative road away
from one of them. The trace shows values settling after two passes.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from betweenride.cli import fmt  # noqa: E402
from betweenride.evaluation import baseline_values, policy_route  # noqa: E402
from betweenride.solver import solve  # noqa: E402

from instances import WAGE, fig2_diamond  # noqa: E402

NAMES = ["V1", "V2", "V3", "V4"]


def main():
    net = fig2_diamond()
    init, _ = solve(net, WAGE, max_passes=0)
    print("pass\t" + "\t".join(NAMES))
    print("init\t" + "\t".join(fmt(v) for v in init.values))
    passes = solve(net, WAGE)[1].passes
    for i in range(1, passes + 1):
        policy, _ = solve(net, WAGE, max_passes=i, tol=-1.0)
        print(f"{i}\t" + "\t".join(fmt(v) for v in policy.values))

    base, z = baseline_values(net, WAGE)
    print(f"\nshortest-route baseline target: {NAMES[z]}")
    for x in range(net.n):
        plan = policy_route(net, WAGE, policy, x)
        route = " -> ".join(NAMES[i] for i in plan.nodes)
        print(f"{NAMES[x]}: {route} then {plan.terminal}; value {fmt(plan.expected_profit)}, "
              f"baseline {fmt(base[x])}, survival {[round(s, 4) for s in plan.survival]}")


if __name__ == "__main__":
    main()
