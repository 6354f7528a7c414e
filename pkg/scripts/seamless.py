"""Hangover after consensus-silence blips of growing length."""
import argparse

from autobahn.harness import blip_scenario, measure_hangover, run_scenario


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("blips", nargs="*", type=float, default=[2, 5, 10, 20, 50, 100])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print("blip,backlog_md,excess_md,recovered_at")
    for b in args.blips:
        scn, s, e = blip_scenario(b, seed=args.seed)
        h = measure_hangover(run_scenario(scn).metrics, s, e)
        print(f"{b:g},{h.backlog / scn.delta:g},{h.excess / scn.delta:g},{h.recovered_at}")


if __name__ == "__main__":
    main()
