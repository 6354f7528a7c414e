"""Commit views per slot with f silent consecutive leaders, for several leader offsets."""
import argparse

from autobahn.harness import build_scenario, run_scenario


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--f", type=int, default=3)
    ap.add_argument("--slots", type=int, default=10)
    ap.add_argument("--offsets", type=int, nargs="*")
    args = ap.parse_args()
    n, k = 3 * args.f + 1, args.f
    for off in args.offsets or [args.f, 1]:
        scn = build_scenario(
            {
                "n": n,
                "horizon": 150,
                "faults": {"silences": [{"replica": r, "start": 0} for r in range(1, args.f + 1)]},
                "load": {"rate": 8, "batch": 16, "stop": 145},
                "protocol": {"mode": "parallel", "k": k, "leader_offset": off},
            }
        )
        cv = run_scenario(scn).metrics.commit_view
        views = [cv.get(s, -1) for s in range(1, args.slots + 1)]
        worst = max(sum(views[i : i + k]) for i in range(len(views) - k + 1))
        print(f"offset={off}: views {views} worst {k}-slot window {worst}")


if __name__ == "__main__":
    main()
