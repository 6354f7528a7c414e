"""Message-delay latency of slot 1 and end-to-end tx latency, fast and slow path."""
import argparse

from autobahn.harness import build_scenario, run_scenario
from autobahn.sim_net import TICKS_PER_UNIT


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=4)
    args = ap.parse_args()
    for fast in (True, False):
        scn = build_scenario(
            {
                "n": args.n,
                "horizon": 30,
                "protocol": {"fast_path": fast, "leader_tips": False, "standalone_poa": True},
                "load": {"injections": [{"time": 0, "lane": l} for l in range(args.n)]},
            }
        )
        res = run_scenario(scn)
        recs = res.trace.records
        prop_t = next(t for t, _, k, f in recs if k == "propose" and f["slot"] == 1)
        commits = sorted((t - prop_t) / TICKS_PER_UNIT for t, _, k, f in recs if k == "commit" and f["slot"] == 1)
        lats = res.metrics.latencies()
        print(f"fast_path={fast}: commit after Prepare min {commits[0]} max {commits[-1]} md; tx latency min {min(lats)} md")


if __name__ == "__main__":
    main()
