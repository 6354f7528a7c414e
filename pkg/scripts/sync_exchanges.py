"""Sync exchanges needed by a replica that missed a lane suffix of length L."""
import argparse
import time

from autobahn.harness import build_scenario, run_scenario


def run(length: int):
    grow = 2 * length + 3
    scn = build_scenario(
        {
            "n": 4,
            "horizon": grow + 30,
            "faults": {"drops": [{"src": 3, "dst": 0, "probability": 1, "start": 0, "end": grow, "kinds": ["proposal"]}]},
            "load": {
                "rate": 0,
                "batch": 1,
                "injections": [
                    {"time": 0, "lane": 3, "count": length},
                    {"time": grow, "lane": 1, "count": 1},
                    {"time": grow, "lane": 2, "count": 1},
                ],
            },
            "protocol": {"view_timer": 100000, "standalone_poa": True},
        }
    )
    return run_scenario(scn)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("lengths", nargs="*", type=int, default=[1, 10, 100, 1000])
    args = ap.parse_args()
    print("L,exchanges,probes,not_servable,seconds")
    for L in args.lengths:
        t0 = time.time()
        m = run(L).metrics
        ex = sum(1 for s in m.sync if s["replica"] == 0)
        print(f"{L},{ex},{m.probes},{m.not_servable},{time.time() - t0:.2f}")


if __name__ == "__main__":
    main()
