"""Acceptance criteria, one PASS/FAIL line each.

The lines go to the terminal through pytest's reporter, so they show whatever
the capture setting, and to ``acceptance_results.txt`` next to this package.  Campaigns are cached so
the safety and exactly-once checks reuse the failover runs instead of paying
for them twice.  Expect roughly half an hour on one core, most of it in the
mitigation trend.
"""
from __future__ import annotations

import functools
import os
import random
import statistics
import sys
import time

import pytest

from hybridrep.harness import CampaignConfig, run_campaign

sys.path.insert(0, os.path.dirname(__file__))

RESULTS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "acceptance_results.txt")
SEED = 7


_terminal = None


def emit(line: str) -> None:
    if _terminal is not None:
        _terminal.write_line(line)
    else:
        sys.stdout.write(line + "\n")
    with open(RESULTS, "a") as f:
        f.write(line + "\n")


def report(n: int, ok: bool, text: str) -> None:
    emit(f"{'PASS' if ok else 'FAIL'} criterion {n}: {text}")


@pytest.fixture(scope="module", autouse=True)
def _fresh_results(request):
    global _terminal
    # the terminal reporter writes past pytest's output capture
    _terminal = request.config.pluginmanager.get_plugin("terminalreporter")
    with open(RESULTS, "w") as f:
        f.write(f"# acceptance run {time.strftime('%Y-%m-%d %H:%M:%S')}\n")
    yield
    _terminal = None


@functools.lru_cache(maxsize=None)
def campaign(**kw):
    return run_campaign(CampaignConfig(seed=SEED, **kw))


def primary_kills():
    return campaign(kill="primary", runs=200, epoch_ms=100)


def backup_kills():
    return campaign(kill="backup", runs=50, epoch_ms=100)


TREND = [("off", 100), ("order_only", 100), ("order_plus_timing", 100), ("off", 1000)]


def trend(mitigation, epoch):
    return campaign(kill="primary", runs=300, epoch_ms=epoch, mitigation=mitigation, race_rate=1.0)


def latency(replicated, epoch):
    return campaign(kill="none", runs=3, epoch_ms=epoch, replicated=replicated)


def failures(rep):
    out = {}
    for r in rep.runs:
        if not r.recovered:
            key = (r.infra_fault or r.reason or "unknown")[:70]
            out[key] = out.get(key, 0) + 1
    return out


def test_criterion_1_replay_oracle():
    rep = primary_kills()
    n = len(rep.runs)
    ok_runs = [r for r in rep.runs if r.recovered and not r.mismatches and not r.violations]
    prefix = sum(1 for r in rep.runs for v in r.violations if "different bytes" in v)
    ok = n == 200 and len(ok_runs) == n and prefix == 0
    report(1, ok, f"{len(ok_runs)}/{n} primary kills recovered with verifier ok, "
                  f"{prefix} released-prefix mismatches {failures(rep) or ''}")
    assert ok


def test_criterion_2_backup_failure():
    rep = backup_kills()
    ints = [r.interruption_ms for r in rep.runs if r.interruption_ms is not None]
    rec = sum(1 for r in rep.runs if r.recovered)
    in_band = all(200 <= x <= 250 for x in ints) and len(ints) == len(rep.runs)
    ok = len(rep.runs) == 50 and rec == 50 and in_band
    span = f"{min(ints):.2f}-{max(ints):.2f}ms" if ints else "n/a"
    report(2, ok, f"{rec}/{len(rep.runs)} backup kills recovered, interruption {span} (band 200-250ms)")
    assert ok


def test_criterion_3_mitigation_trend():
    rates = {}
    for mit, ep in TREND:
        rep = trend(mit, ep)
        s = rep.summary()
        rates[(mit, ep)] = s["recovery_rate"]
        lo, hi = s["ci_low"], s["ci_high"]
        emit(f"  {mit:>17} @ {ep:>4}ms: recovery {s['recovery_rate']:.3f} "
             f"[{lo:.3f}, {hi:.3f}] over {s['graded']} runs")
    off, oo, opt, le = (rates[k] for k in TREND)
    strict = off < opt
    monotone = off <= oo <= opt
    epoch_effect = le < off
    ok = strict and epoch_effect
    report(3, ok, f"off {off:.3f} < order_plus_timing {opt:.3f}: {strict}; "
                  f"off <= order_only {oo:.3f} <= order_plus_timing: {monotone}; "
                  f"1s-epoch off {le:.3f} < 100ms off: {epoch_effect}")
    assert ok


def test_criterion_5_exactly_once():
    reps = [primary_kills(), backup_kills()]
    runs = [r for rep in reps for r in rep.runs]
    ops = sum(r.ops for r in runs)
    failovers = sum(1 for r in runs if r.kill_at_ms is not None and r.infra_fault is None)
    lost = sum(1 for r in runs for m in r.mismatches if m.get("kind") == "lost")
    dup = sum(1 for r in runs for m in r.mismatches if m.get("kind") in ("duplicate", "unsolicited"))
    other = sum(len(r.mismatches) for r in runs) - lost - dup
    ok = ops >= 100_000 and failovers >= 50 and lost == dup == other == 0
    report(5, ok, f"{ops} verified ops over {failovers} failovers: {lost} lost, {dup} duplicated, "
                  f"{other} other mismatches")
    assert ok


def test_criterion_6_counting_equivalence():
    from interleavings import check_interleaving
    rng = random.Random(SEED)
    n, bad = 10_000, []
    for _ in range(n):
        bad += check_interleaving(rng)
    ok = not bad
    report(6, ok, f"{n} randomized append/collect interleavings, {len(bad)} mismatches "
                  f"{bad[:3] if bad else ''}")
    assert ok


def test_criterion_7_scenario_two():
    import test_checkpoint as tc
    cases = [
        ("state-mutating, pause before execution", lambda: tc.test_checkpoint_between_hooks_state_mutating(3000, "kernel", True)),
        ("state-mutating, pause after execution", lambda: tc.test_checkpoint_between_hooks_state_mutating(4000, "after", False)),
        ("consumable, pause before execution", lambda: tc.test_checkpoint_between_hooks_consumable(3000, "kernel")),
        ("consumable, pause after execution", lambda: tc.test_checkpoint_between_hooks_consumable(4000, "after")),
        ("blocked in recv at checkpoint", tc.test_checkpoint_with_thread_blocked_in_recv),
        ("inverted syscall_skipped diverges", tc.test_wrong_polarity_would_diverge),
    ]
    failed = []
    for name, fn in cases:
        try:
            fn()
        except AssertionError as exc:
            failed.append(f"{name}: {exc}")
    ok = not failed
    report(7, ok, f"{len(cases) - len(failed)}/{len(cases)} checkpoint-between-hooks cases pass {failed or ''}")
    assert ok


def test_criterion_8_latency_shape():
    added = {}
    for ep in (100, 1000):
        rep_on, rep_off = latency(True, ep), latency(False, ep)
        on = statistics.mean(r.mean_latency_us for r in rep_on.runs)
        off = statistics.mean(r.mean_latency_us for r in rep_off.runs)
        added[ep] = on - off
    short, long_ = added[100], added[1000]
    ok = short > 0 and long_ > 0 and long_ <= 2 * short
    report(8, ok, f"mean added delay {short:.1f}us at 100ms epoch, {long_:.1f}us at 1s epoch "
                  f"(ratio {long_ / short:.2f}, limit 2)")
    assert ok


def test_criterion_4_output_release_safety():
    # runs last so it sees every campaign above (cached, so nothing is re-run)
    reps = [primary_kills(), backup_kills()] + [trend(*k) for k in TREND] + \
           [latency(rp, ep) for rp in (True, False) for ep in (100, 1000)]
    runs = [r for rep in reps for r in rep.runs]
    viol = [v for r in runs for v in r.violations]
    ok = not viol
    report(4, ok, f"{len(viol)} output-release violations across {len(runs)} runs "
                  f"{viol[:3] if viol else ''}")
    assert ok
