"""``autobahn`` command line: run scenarios, verification suites, trace diffs.

Exit codes: 0 success, 1 checker violation, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .harness import (
    ScenarioError,
    SuiteReport,
    check_liveness,
    load_scenario,
    run_scenario,
    verify_liveness,
    verify_safety,
    verify_seamless,
)

log = logging.getLogger("autobahn")

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _bool(v: str) -> bool:
    s = v.lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {v!r}")


def parse_seeds(seed: int | None, seeds: str | None) -> list[int]:
    if seeds is None:
        return [seed if seed is not None else 0]
    if ".." in seeds:
        a, b = seeds.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise UsageError(f"empty seed range {seeds}")
        return list(range(lo, hi + 1))
    n = int(seeds)
    if n < 1:
        raise UsageError("--seeds must be positive")
    return list(range(n))


def _overrides(scn, args) -> None:
    p = scn.protocol
    if args.mode is not None:
        p.mode = args.mode
    if args.k is not None:
        p.k = args.k
    if args.fast_path is not None:
        p.fast_path = args.fast_path
    if args.optimistic_tips is not None:
        p.optimistic_tips = args.optimistic_tips
    if args.timer is not None:
        p.view_timer = args.timer
    if args.trace_level is not None:
        scn.trace = args.trace_level
    try:
        p.__post_init__()
    except ValueError as e:
        raise ScenarioError("protocol", str(e)) from None


def _write_run(res, out: Path, fmt: str) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.ndjson", "w") as fp:
        res.trace.dump(fp)
    if fmt == "csv":
        with open(out / "metrics.csv", "w", newline="") as fp:
            res.metrics.write_csv(fp)
    else:
        with open(out / "metrics.json", "w") as fp:
            json.dump(res.metrics.rows(), fp)
    summary = res.summary()
    summary["liveness"] = dataclasses.asdict(check_liveness(res))
    with open(out / "summary.json", "w") as fp:
        json.dump(summary, fp, indent=2, sort_keys=True)
    for rep in res.replicas:
        with open(out / f"log_r{rep.me}.ndjson", "w") as fp:
            rep.log.export_ndjson(fp)
    return summary


def cmd_run(args) -> int:
    seeds = parse_seeds(args.seed, args.seeds)
    out = Path(args.out)
    results = []
    for seed in seeds:
        scn = load_scenario(args.scenario)
        scn.seed = seed
        _overrides(scn, args)
        res = run_scenario(scn, check=not args.no_check)
        target = out if len(seeds) == 1 else out / f"seed_{seed}"
        summary = _write_run(res, target, args.format)
        results.append(summary)
        log.info("seed %d: %d finalized, %d violations", seed, summary["finalized"], len(summary["violations"]))
        for v in res.violations:
            print(f"violation (seed {seed}): {v}", file=sys.stderr)
    if len(seeds) > 1:
        agg = {
            "runs": len(results),
            "violations": sum(len(r["violations"]) for r in results),
            "finalized": sum(r["finalized"] for r in results),
            "seeds": seeds,
        }
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "aggregate.json", "w") as fp:
            json.dump(agg, fp, indent=2)
    return EXIT_VIOLATION if any(r["violations"] for r in results) else EXIT_OK


def _report(rep: SuiteReport, out: Path | None) -> None:
    status = "PASS" if rep.ok else "FAIL"
    print(f"{rep.suite}: {status} ({rep.runs} runs, {len(rep.failures)} failures)")
    if rep.details:
        print(json.dumps(rep.details, sort_keys=True))
    for f in rep.failures[:5]:
        print("  " + json.dumps({k: v for k, v in f.items() if k != "scenario"}, sort_keys=True))
    if rep.failures and out is not None:
        out.mkdir(parents=True, exist_ok=True)
        first = rep.failures[0]
        if "scenario" in first:
            path = out / f"counterexample_{rep.suite}.json"
            with open(path, "w") as fp:
                json.dump(first["scenario"], fp, indent=2, sort_keys=True)
            print(f"  counterexample saved to {path}")


def cmd_verify(args) -> int:
    seeds = list(range(args.seeds))
    mutations = args.mutation or []
    suites = ["safety", "liveness", "seamless"] if args.suite == "all" else [args.suite]
    out = Path(args.out) if args.out else None
    ok = True
    for s in suites:
        if s == "safety":
            rep = verify_safety(seeds, mutations=mutations)
        elif s == "liveness":
            rep = verify_liveness(seeds[: max(1, min(len(seeds), 5))])
        else:
            rep = verify_seamless()
        _report(rep, out)
        ok &= rep.ok
    return EXIT_OK if ok else EXIT_VIOLATION


def _read_trace(path: str) -> list[dict]:
    try:
        with open(path) as fp:
            text = fp.read()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e}") from None
    if text and not text.endswith("\n"):
        raise UsageError(f"{path}: truncated (last record incomplete)")
    out = []
    for i, line in enumerate(text.splitlines(), 1):
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError:
            raise UsageError(f"{path}:{i}: not a trace record") from None
    return out


def cmd_trace_diff(args) -> int:
    a, b = _read_trace(args.a), _read_trace(args.b)
    if a == b:
        print(f"identical ({len(a)} records)")
        return EXIT_OK
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            print(f"first divergence at record {i}:")
            print(f"  a: {json.dumps(x, sort_keys=True)}")
            print(f"  b: {json.dumps(y, sort_keys=True)}")
            return EXIT_VIOLATION
    print(f"traces agree on {min(len(a), len(b))} records; lengths {len(a)} vs {len(b)}")
    return EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autobahn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a scenario (or a seed sweep)")
    r.add_argument("--scenario", required=True)
    g = r.add_mutually_exclusive_group()
    g.add_argument("--seed", type=int)
    g.add_argument("--seeds", help="A..B inclusive range, or a count")
    r.add_argument("--out", default="out")
    r.add_argument("--mode", choices=["sequential", "parallel"])
    r.add_argument("--k", type=int)
    r.add_argument("--fast-path", type=_bool)
    r.add_argument("--optimistic-tips", type=_bool)
    r.add_argument("--timer", type=float, help="view timer in delay units")
    r.add_argument("--trace-level", choices=["full", "events", "none"])
    r.add_argument("--format", choices=["csv", "json"], default="csv")
    r.add_argument("--no-check", action="store_true", help="disable the safety checker")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("verify", help="run a randomized verification suite")
    v.add_argument("suite", choices=["safety", "liveness", "seamless", "all"])
    v.add_argument("--seeds", type=int, default=50, help="seed budget per replica count")
    v.add_argument("--mutation", action="append", help="inject a known bug (mutation testing)")
    v.add_argument("--out", help="directory for counterexamples")
    v.set_defaults(fn=cmd_verify)

    d = sub.add_parser("trace-diff", help="compare two trace files")
    d.add_argument("a")
    d.add_argument("b")
    d.set_defaults(fn=cmd_trace_diff)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("AUTOBAHN_LOG", "WARNING").upper(), format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return args.fn(args)
    except ScenarioError as e:
        print(f"scenario error at {e.path}: {e.reason}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
