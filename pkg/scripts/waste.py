"""Peak uncertified Byzantine-lane data held by correct replicas, per adversary mode."""
import argparse

from autobahn.harness import WasteMonitor, build_scenario, run_scenario
from autobahn.sim_net import BYZANTINE_MODES


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    print("n,mode,seed,max_waste,bound")
    for n, byz in ((4, [3]), (7, [5, 6])):
        f = (n - 1) // 3
        for mode in BYZANTINE_MODES:
            for seed in range(args.seeds):
                scn = build_scenario(
                    {
                        "n": n,
                        "horizon": 60,
                        "seed": seed,
                        "delay": {"base": 1, "jitter": 0.3},
                        "faults": {"byzantine": [{"replica": b, "mode": mode} for b in byz]},
                        "load": {"rate": 20, "batch": args.batch, "stop": 50},
                        "protocol": {"standalone_poa": True},
                    }
                )
                box = {}

                def setup(sim, reps, box=box, scn=scn):
                    box["m"] = WasteMonitor(reps, scn.byzantine)
                    sim.after_step.append(box["m"].after)

                run_scenario(scn, setup=setup)
                print(f"{n},{mode},{seed},{box['m'].max_waste},{f * args.batch}")


if __name__ == "__main__":
    main()
