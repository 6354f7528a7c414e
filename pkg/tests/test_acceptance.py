"""Acceptance criteria; each test prints one PASS/FAIL line."""
import subprocess
import sys
from collections import defaultdict
from pathlib import Path

import pytest

from autobahn.harness import (
    LANE_SHIFT,
    WasteMonitor,
    build_scenario,
    commit_drop_scenario,
    random_faulty_scenario,
    run_scenario,
    verify_safety,
    verify_seamless,
)
from autobahn.sim_net import BYZANTINE_MODES, TICKS_PER_UNIT, to_ticks
from conftest import Kit

ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture
def report(capsys):
    def emit(num: int, title: str, ok: bool, detail: str = "") -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {num}: {title}" + (f" [{detail}]" if detail else ""))
        assert ok, detail

    return emit


def _events(res, kind):
    return [(t, r, f) for t, r, k, f in res.trace.records if k == kind]


# 1. consensus latency in message delays


def _slot1_timings(fast_path: bool):
    scn = build_scenario(
        {
            "n": 4,
            "horizon": 20,
            "protocol": {"fast_path": fast_path, "leader_tips": False, "standalone_poa": True},
            "load": {"injections": [{"time": 0, "lane": l} for l in range(4)]},
        }
    )
    res = run_scenario(scn)
    (prop_t, leader, _), = [e for e in _events(res, "propose") if e[2]["slot"] == 1]
    commits = {r: t for t, r, f in _events(res, "commit") if f["slot"] == 1}
    kinds = {f["kind"] for _, _, f in _events(res, "commit") if f["slot"] == 1}
    md = lambda t: (t - prop_t) / TICKS_PER_UNIT
    return md(commits[leader]), max(md(t) for t in commits.values()), kinds, len(commits)


def test_consensus_latency_md(report):
    lf, af, kf, nf = _slot1_timings(True)
    ls, as_, ks, ns = _slot1_timings(False)
    ok = (lf, af, kf, nf) == (2.0, 3.0, {"fast"}, 4) and (as_, ks, ns) == (5.0, {"slow"}, 4)
    report(1, "consensus latency", ok, f"fast: leader +{lf} all +{af}; slow: all +{as_}")


# 2. end-to-end latency


def _e2e(fast_path: bool):
    scn = build_scenario(
        {
            "n": 4,
            "horizon": 20,
            "protocol": {"fast_path": fast_path, "leader_tips": False, "standalone_poa": True},
            "load": {"injections": [{"time": 0, "lane": l} for l in range(4)]},
        }
    )
    seen = defaultdict(dict)

    def obs(t, r, kind, f):
        if kind == "finalize":
            for i in f["_txs"]:
                seen[i][r] = t

    res = run_scenario(scn, observers=[obs])
    (_, leader, _), = [e for e in _events(res, "propose") if e[2]["slot"] == 1]
    tx = (leader << LANE_SHIFT) | 1
    assert len(seen[tx]) == 4
    everywhere = max(seen[tx].values()) / TICKS_PER_UNIT
    other = (leader + 1) % 4
    at_injector = res.metrics.latency((other << LANE_SHIFT) | 1)
    return everywhere, at_injector


def test_end_to_end_latency_md(report):
    fe, fo = _e2e(True)
    se, so = _e2e(False)
    ok = (fe, fo, se, so) == (6.0, 6.0, 8.0, 8.0)
    report(2, "end-to-end latency", ok, f"fast {fe} md (leader tx, all replicas), {fo} md (peer tx); slow {se} / {so} md")


# 3. safety under adversarial schedules


def test_safety_500_seeds(report):
    rep = verify_safety(range(500), sizes=(4, 7))
    first = rep.failures[0]["violation"] if rep.failures else ""
    report(3, "safety over 500 seeds at n=4 and n=7", rep.ok and rep.runs == 1000, f"{rep.runs} runs, {len(rep.failures)} failures {first}")


# 4. seamlessness


def test_seamless_hangover(report):
    rep = verify_seamless(blips=(2.0, 10.0, 50.0), bound_md=7.0)
    h = {float(k): v for k, v in rep.details["hangover_md"].items()}
    ok = rep.ok and max(h.values()) <= 7.0 and h[50.0] <= h[2.0] + 1.0
    report(4, "seamlessness", ok, "hangover md " + ", ".join(f"{k:g}Δ: {v:g}" for k, v in sorted(h.items())))


# 5. one-exchange sync


def _sync_run(length: int):
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
    res = run_scenario(scn)
    mine = [s for s in res.metrics.sync if s["replica"] == 0]
    caught_up = any(e.lane == 3 and e.pos == length for e in res.replicas[0].log.entries)
    return res.ok and caught_up, mine, res.metrics.probes, res.metrics.not_servable


def test_one_exchange_sync(report):
    lines, ok = [], True
    for length in (1, 10, 1000):
        good, syncs, probes, ns = _sync_run(length)
        one = len(syncs) == 1 and syncs[0]["lane"] == 3 and syncs[0]["length"] == length
        ok &= good and one and probes - ns == 1 and ns <= 1
        lines.append(f"L={length}: {len(syncs)} exchange, {probes} probe, {ns} not-servable")
    report(5, "one-exchange sync", ok, "; ".join(lines))


# 6. reliable inclusion


def _inclusion_case(groups, seed, jitter):
    scn = build_scenario(
        {
            "n": 4,
            "horizon": 80,
            "seed": seed,
            "delay": {"base": 1, "jitter": jitter},
            "faults": {"partitions": [{"groups": groups, "start": 10, "end": 30}]},
            "load": {"rate": 4, "batch": 16, "stop": 60},
            "protocol": {"standalone_poa": True},
        }
    )
    res = run_scenario(scn)
    delta = to_ticks(scn.delta)
    start = to_ticks(30) + delta
    prop_t, leader, prop = min((e for e in _events(res, "propose") if e[2]["view"] == 0 and e[0] > start), key=lambda e: e[0])
    s = prop["slot"]
    held = {}
    for t, _, f in _events(res, "poa"):
        if t < prop_t - delta:
            held[f["lane"]] = max(held.get(f["lane"], 0), f["pos"])
    commits = [f for _, _, f in _events(res, "commit") if f["slot"] == s]
    votes = [f for _, r, f in _events(res, "prep_vote") if f["slot"] == s and f["view"] == 0 and r == leader]
    if not res.ok or not commits or not votes:
        return False
    c = commits[0]
    return c["view"] == 0 and c["value"] == votes[0]["value"] and all(c["tips"][l] >= p for l, p in held.items())


def test_reliable_inclusion(report):
    runs = bad = 0
    for groups in ([[0, 1], [2, 3]], [[0], [1, 2, 3]], [[0, 1, 2], [3]]):
        for seed in range(20):
            for jitter in (0.0, 0.3):
                runs += 1
                bad += not _inclusion_case(groups, seed, jitter)
    report(6, "reliable inclusion", bad == 0, f"{runs} partition-heal runs, {bad} misses")


# 7. bounded waste


def test_bounded_waste(report):
    batch = 16
    lines, ok = [], True
    for n, byz in ((4, [3]), (7, [5, 6])):
        f = (n - 1) // 3
        for mode in BYZANTINE_MODES:
            scn = build_scenario(
                {
                    "n": n,
                    "horizon": 60,
                    "delay": {"base": 1, "jitter": 0.3},
                    "faults": {"byzantine": [{"replica": b, "mode": mode} for b in byz]},
                    "load": {"rate": 20, "batch": batch, "stop": 50},
                    "protocol": {"standalone_poa": True},
                }
            )
            box = {}

            def setup(sim, reps, box=box, scn=scn):
                box["mon"] = WasteMonitor(reps, scn.byzantine)
                sim.after_step.append(box["mon"].after)

            res = run_scenario(scn, setup=setup)
            worst = box["mon"].max_waste
            ok &= res.ok and worst <= f * batch
            lines.append(f"n={n} {mode}: {worst}/{f * batch}")
    report(7, "bounded waste", ok, "; ".join(lines))


# 8. view-change recovery rule


def _rule_vectors() -> dict[str, bool]:
    from autobahn.consensus import winning_proposal

    k = Kit(4)
    out = {}
    # (a) fast commit at view 0: every replica holds the prepare; any TC has >= f+1 copies
    p = k.prepare(1, 0)
    tc = k.tc(1, 0, [(0, None, p), (1, None, p), (3, None, None)])
    out["a"] = winning_proposal(tc, k.f) == p.cut
    # (b) slow commit at view 0: the PrepareQC reaches any TC, possibly once
    other = k.prepare(1, 1, k.genesis_tips()[:3] + (k.tip(k.grow(3, 1)[1][0]),))
    qc = k.prepare_qc(p)
    tc = k.tc(1, 0, [(0, qc, p), (1, None, None), (3, None, None)])
    rules = {r: winning_proposal(tc, k.f, r) for r in ("correct", "winner_ignore_qc", "winner_none")}
    out["b"] = rules["correct"] == p.cut and rules["winner_ignore_qc"] != p.cut and rules["winner_none"] is None
    # (c) tie in view: highQC wins
    newer = k.prepare(1, 1)
    qc1 = k.prepare_qc(newer)
    alt = k.prepare(1, 1, other.cut.tips)
    tc = k.tc(1, 1, [(0, qc1, newer), (1, None, alt), (2, None, alt)])
    out["c"] = winning_proposal(tc, k.f) == newer.cut and winning_proposal(tc, k.f, "winner_prefer_prop") == alt.cut
    return out


def test_view_change_rule(report):
    vec = _rule_vectors()
    clean = 0
    for seed in range(100):
        clean += run_scenario(commit_drop_scenario(seed)).ok
        clean += run_scenario(random_faulty_scenario(4 if seed % 2 else 7, 10_000 + seed)).ok
    caught = sum(not run_scenario(commit_drop_scenario(seed, ["winner_none"])).ok for seed in range(40))
    ok = all(vec.values()) and clean == 200 and caught > 0
    vs = " ".join(f"({k}) {'ok' if v else 'bad'}" for k, v in vec.items())
    report(8, "view-change recovery rule", ok, f"{vs}; fuzz {clean}/200 clean; broken rule caught in {caught}/40")


# 9. offset leader schedule


def _offset_worst(offset: int, k: int = 3, slots: int = 10) -> tuple[int, list[int]]:
    scn = build_scenario(
        {
            "n": 10,
            "horizon": 150,
            "faults": {"silences": [{"replica": r, "start": 0} for r in (1, 2, 3)]},
            "load": {"rate": 8, "batch": 16, "stop": 145},
            "protocol": {"mode": "parallel", "k": k, "leader_offset": offset},
        }
    )
    res = run_scenario(scn)
    views = [res.metrics.commit_view.get(s) for s in range(1, slots + 1)]
    assert res.ok and None not in views, views
    return max(sum(views[i : i + k]) for i in range(slots - k + 1)), views


def test_offset_leader_schedule(report):
    f = k = 3
    shifted, vs = _offset_worst(offset=f, k=k)
    unshifted, vu = _offset_worst(offset=1, k=k)
    ok = shifted <= f + 1 and unshifted == k * (f + 1) // 2
    report(9, "offset leader schedule", ok, f"offset f: {shifted} <= {f + 1} {vs}; offset 1: {unshifted} {vu}")


# 10. determinism across processes


def test_trace_determinism(report, tmp_path):
    scn = str(ROOT / "scenarios" / "base4.json")
    for d in ("a", "b"):
        subprocess.run(
            [sys.executable, "-m", "autobahn.cli", "run", "--scenario", scn, "--seed", "11", "--out", str(tmp_path / d)],
            check=True,
        )
    a, b = (tmp_path / d / "trace.ndjson" for d in "ab")
    diff = subprocess.run([sys.executable, "-m", "autobahn.cli", "trace-diff", str(a), str(b)], capture_output=True, text=True)
    same = a.read_bytes() == b.read_bytes() and a.stat().st_size > 0
    report(10, "determinism", diff.returncode == 0 and same, diff.stdout.strip())
