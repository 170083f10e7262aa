"""Command-line front end: ``hybridrep run | report | replay-trace``."""
from __future__ import annotations

import json
import logging
import sys
from dataclasses import fields

import click

from .harness import CampaignConfig, ConfigError, load_report, parse_config_text, report_emit, run_campaign, run_one
from .net import read_trace


def _pair(ctx, param, value):
    if value is None:
        return None
    try:
        a, b = (float(x) for x in value.split(","))
    except ValueError:
        raise click.BadParameter("expected LO,HI") from None
    return (a, b)


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose):
    """Fault-injection campaigns for the replicated service simulator."""
    logging.basicConfig(level=logging.WARNING - 10 * verbose, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
              help="key = value file with CampaignConfig fields; flags override it")
@click.option("--benchmark", type=click.Choice(["kv", "batch"]))
@click.option("--epoch-ms", type=float)
@click.option("--mitigation", type=click.Choice(["off", "order_only", "order_plus_timing"]))
@click.option("--runs", type=int)
@click.option("--kill", type=click.Choice(["primary", "backup", "none"]))
@click.option("--kill-window", type=float)
@click.option("--perturbation/--no-perturbation", default=None)
@click.option("--busy-ms", callback=_pair, help="LO,HI")
@click.option("--sleep-ms", callback=_pair, help="LO,HI")
@click.option("--seed", type=int)
@click.option("--race-rate", type=float, help="racy shared-counter writes per second")
@click.option("--run-ms", type=float)
@click.option("--drain-ms", type=float)
@click.option("--workers", type=int)
@click.option("--client-threads", type=int)
@click.option("--rate", type=float, help="aggregate client requests per second")
@click.option("--chunks", type=int)
@click.option("--replicated/--unreplicated", default=None)
@click.option("--incremental/--full", default=None)
@click.option("--parallel", type=int)
@click.option("--out", "outdir", default="campaign-out", show_default=True, type=click.Path(file_okay=False))
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False),
              help="capture the wire trace of run 0 to this file")
def run(config_file, outdir, trace_path, **flags):
    """Run a campaign and write runs.json and summary.csv."""
    try:
        base = {}
        if config_file:
            with open(config_file) as f:
                base = parse_config_text(f.read())
        base.update({k: v for k, v in flags.items() if v is not None})
        cfg = CampaignConfig(**base)
    except (ConfigError, TypeError) as exc:
        raise click.UsageError(str(exc)) from None

    def progress(r):
        state = "infra" if r.infra_fault else {True: "ok", False: "FAIL", None: "-"}[r.recovered]
        click.echo(f"run {r.index:4d} {state:5s} kill={r.kill_at_ms} interruption={r.interruption_ms} "
                   f"ops={r.ops} {r.reason}", err=True)

    if trace_path:
        run_one(cfg, 0, trace_path=trace_path)
    rep = run_campaign(cfg, progress=progress)
    paths = report_emit(rep, outdir)
    click.echo(json.dumps(rep.summary(), indent=1))
    click.echo(f"wrote {paths['json']} and {paths['csv']}")


@main.command()
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--csv", "as_csv", is_flag=True, help="print the aggregate as CSV instead of JSON")
def report(path, as_csv):
    """Summarize a runs.json file."""
    try:
        rep = load_report(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise click.UsageError(f"{path}: not a campaign report ({exc})") from None
    s = rep.summary()
    if as_csv:
        click.echo(",".join(s))
        click.echo(",".join("" if v is None else str(v) for v in s.values()))
    else:
        click.echo(json.dumps(s, indent=1))


@main.command("replay-trace")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def replay_trace(path):
    """Re-read a wire trace and rebuild what each client stream received.

    Reports segments, bytes and retransmissions per stream and flags any
    retransmitted byte that differs from what was delivered first.
    """
    try:
        with open(path) as f:
            recs = read_trace(f)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    streams: dict[int, dict] = {}
    bad = 0
    for rec, seg in recs:
        if rec["dst"] != "client" or not seg.data:
            continue
        s = streams.setdefault(seg.stream, {"segments": 0, "bytes": bytearray(), "retransmitted": 0})
        s["segments"] += 1
        buf = s["bytes"]
        if seg.seq < len(buf):
            s["retransmitted"] += 1
            if bytes(buf[seg.seq:seg.end]) != seg.data[:len(buf) - seg.seq]:
                bad += 1
                click.echo(f"stream {seg.stream}: bytes at {seg.seq} differ on retransmission")
        if seg.seq <= len(buf) < seg.end:
            buf += seg.data[len(buf) - seg.seq:]
    for sid in sorted(streams):
        s = streams[sid]
        click.echo(f"stream {sid}: {s['segments']} segments, {len(s['bytes'])} bytes, "
                   f"{s['retransmitted']} retransmitted")
    click.echo(f"{len(recs)} records, {bad} inconsistent retransmissions")
    sys.exit(1 if bad else 0)
