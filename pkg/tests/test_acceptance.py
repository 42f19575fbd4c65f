"""Acceptance criteria. Each test prints one PASS/FAIL line with what it measured."""

import ipaddress
import random
import socket
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import VERDICTS
from fakes import Probe
from gridloop import ip as iplib
from gridloop.addressing import PLAN, ROOT, UNALLOCATED, AddressRegistry, AreaKind, allocate_subnet, area_block
from gridloop.bench.outputs import emit_outputs
from gridloop.bench.runner import run_scenario
from gridloop.bench.scenario import bundled_scenario, load_scenario
from gridloop.kernel.world import CycleError, World
from gridloop.netsim.delay import Dedicated, HighImpairment, Shared, sample_delay
from gridloop.vif.framing import FrameBuffer
from gridloop.vif.transport import TransportViolation, assert_datagram_only
from worlds import pair_scenario


@pytest.fixture
def verdict(capsys):
    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}"
        VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    t0 = time.monotonic()
    report = run_scenario(bundled_scenario("sweep"))
    elapsed = time.monotonic() - t0
    emit_outputs(report, out)
    return report, elapsed, (out / "report.csv").read_bytes()


def test_1_delay_statistics(verdict):
    t0 = time.monotonic()
    n = 100_000
    rng = np.random.default_rng(20240501)
    ded = np.array([sample_delay(Dedicated(), rng) for _ in range(n)])
    sh = np.array([sample_delay(Shared(), rng) for _ in range(n)])
    hi_model = HighImpairment()
    hi = np.array([sample_delay(hi_model, rng) for _ in range(n)])
    elapsed = time.monotonic() - t0
    finite = hi[np.isfinite(hi)]
    brk = float(np.mean(~np.isfinite(hi)))
    checks = [
        abs(ded.mean() - 60.0) <= 1.0,
        abs(sh.mean() - 250.0) <= 0.5,
        abs(sh.std(ddof=1) - 20.0) <= 0.5,
        finite.min() >= 100.0,
        abs(brk - hi_model.p_break) <= 0.01,
        elapsed < 5.0,
    ]
    verdict(1, "delay-model statistics", all(checks),
            f"dedicated mean {ded.mean():.3f} ms, shared mean {sh.mean():.3f} sd {sh.std(ddof=1):.3f}, "
            f"high-impairment min {finite.min():.2f} ms break {brk:.4f}, {elapsed:.2f} s")


def test_2_subnet_plan(verdict):
    table = {AreaKind.DEDICATED: "10.64.0.0/12", AreaKind.SHARED_LINKS: "10.80.0.0/12",
             AreaKind.HIGH_IMPAIRMENT: "10.96.0.0/12", UNALLOCATED: "10.112.0.0/12"}
    blocks_ok = all(str(area_block(PLAN, a)) == b for a, b in table.items())
    # exhaustive tiling: every /12 of the /10 is exactly one area block
    blocks = sorted(area_block(PLAN, a) for a in table)
    tiling_ok = blocks == list(ROOT.subnets(new_prefix=12)) and sum(b.num_addresses for b in blocks) == 2 ** 22
    rng = random.Random(7)
    violations = 0
    for _ in range(1000):
        reg = AddressRegistry()
        nets = [allocate_subnet(PLAN, rng.choice(list(AreaKind)), rng.randrange(4096)) for _ in range(3)]
        got = {n: ([], []) for n in nets}
        for n in nets:
            for _ in range(rng.randrange(4)):
                got[n][0].append(int(reg.allocate_host(n, "router")))
        order = [rng.choice(nets) for _ in range(rng.randrange(1, 20))]
        for n in order:
            got[n][1].append(int(reg.allocate_host(n, rng.choice(["host", "app-gateway"]))))
        for n, (routers, hosts) in got.items():
            base = int(n.network_address)
            if routers and hosts and max(routers) >= min(hosts):
                violations += 1
            if sorted(routers + hosts) != list(range(base + 1, base + 1 + len(routers) + len(hosts))):
                violations += 1
            if not all(ipaddress.IPv4Address(a) in n for a in routers + hosts):
                violations += 1
    verdict(2, "subnet plan", blocks_ok and tiling_ok and violations == 0,
            f"blocks match table: {blocks_ok}, /10 tiled exactly: {tiling_ok}, "
            f"router-first violations in 1000 sequences: {violations}")


def _random_packet(rng):
    size = rng.choice([0, 1, rng.randrange(2, 200), rng.randrange(200, 2000)])
    body = rng.randbytes(size)
    if rng.random() < 0.5:
        return iplib.ipv4_packet(f"10.64.0.{rng.randrange(1, 255)}", f"10.80.0.{rng.randrange(1, 255)}",
                                 rng.randrange(256), body)
    return iplib.ipv6_packet(f"fd00::{rng.randrange(1, 65535):x}", f"fd00::{rng.randrange(1, 65535):x}",
                             rng.randrange(256), body)


def test_3_reassembly_fuzz(verdict):
    rng = random.Random(3)
    t0 = time.monotonic()
    failures = 0
    kinds = {"one_byte": 0, "multi_packet_chunk": 0, "mixed_versions": 0}
    for case in range(1000):
        packets = [_random_packet(rng) for _ in range(rng.randrange(1, 12))]
        stream = b"".join(packets)
        mode = case % 3
        if mode == 0:
            cuts = list(range(1, len(stream)))  # every chunk is one byte
            kinds["one_byte"] += 1
        elif mode == 1:
            cuts = []  # the whole list in one chunk
        else:
            cuts = sorted(rng.sample(range(1, max(2, len(stream))), min(len(stream) - 1, rng.randrange(1, 30))))
        if len(packets) > 1 and (not cuts or mode == 1):
            kinds["multi_packet_chunk"] += 1
        if len({p[0] >> 4 for p in packets}) == 2:
            kinds["mixed_versions"] += 1
        bounds = [0] + cuts + [len(stream)]
        fb = FrameBuffer()
        out = []
        for a, b in zip(bounds, bounds[1:]):
            out.extend(fb.feed(stream[a:b]))
        if out != packets or fb.pending:
            failures += 1
    elapsed = time.monotonic() - t0
    ok = failures == 0 and elapsed < 10.0 and all(kinds.values())
    verdict(3, "reassembly fuzz", ok, f"1000 cases, {failures} mismatches, coverage {kinds}, {elapsed:.2f} s")


def test_4_end_to_end_echo(verdict):
    spec = load_scenario(bundled_scenario("echo"))
    t0 = time.monotonic()
    report = run_scenario(spec, keep_worlds=True)
    elapsed = time.monotonic() - t0
    (run,) = report.extras["worlds"]
    topo = run.topology
    repeats = spec.measurements[0]["repeats"]
    events = run.handles["client"].events
    replies = [e for e in events if e["event"] == "echo_reply"]
    intact = len(replies) == repeats and all(e["intact"] for e in replies)
    requests = {iplib.parse_icmp_echo(r.data).seq: r for r in topo.records if not iplib.parse_icmp_echo(r.data).reply}
    answers = {iplib.parse_icmp_echo(r.data).seq: r for r in topo.records if iplib.parse_icmp_echo(r.data).reply}
    same_payload = all(iplib.parse_icmp_echo(requests[k].data).data == iplib.parse_icmp_echo(answers[k].data).data
                       for k in requests)
    losses = sum(r.status != "delivered" for r in topo.records) + sum(
        c["lost"] + c["failed"] for c in report.accounting().values())

    # oracle 1: replay the seeded generator over the hops in the order they were taken
    hops = []
    for rec in topo.records:
        t = rec.ingress_time
        for h in rec.hops:
            hops.append((t, rec.id, h))
            t += h.queue_wait + h.serialization + h.delay + h.hold
    hops.sort(key=lambda x: (x[0], x[1]))
    rng = np.random.default_rng(spec.seed)
    replay_ok = all(h.delay == sample_delay(topo.adjacency[h.src][h.dst].model, rng) for _, _, h in hops)

    # oracle 2: RTT = sum over both directions of sampled delay + size * 8 / rate
    def path_sum(rec):
        total = 0.0
        for h in rec.hops:
            assert h.queue_wait == 0 and h.hold == 0
            total += rec.size * 8 / topo.adjacency[h.src][h.dst].data_rate * 1000 + h.delay
        return total

    measured = [v for _, _, _, v, _ in report.rows()]
    expected = [path_sum(requests[k]) + path_sum(answers[k]) for k in sorted(requests)]
    exact = measured == expected
    ok = intact and same_payload and losses == 0 and replay_ok and exact and elapsed < 30
    verdict(4, "end-to-end echo", ok,
            f"{len(replies)}/{repeats} replies bit-identical, {losses} losses, delays replay the seed: {replay_ok}, "
            f"event-log RTT == per-hop delay + serialization exactly: {exact} "
            f"(first {measured[0]:.6f} ms), {elapsed:.2f} s")


def test_5_prestart_buffering(verdict):
    spec = pair_scenario(clocked=False, measurements=[
        {"type": "rtt", "pairs": [["client", "server"]], "repeats": 5, "interval": 50, "start": 10}])
    report = run_scenario(spec, start_delay_s=2.0, keep_worlds=True)
    (run,) = report.extras["worlds"]
    sent = [e for e in run.handles["client"].events if e["event"] == "echo_request"]
    injected = [r for r in run.topology.records if not iplib.parse_icmp_echo(r.data).reply]
    acct = report.accounting()[("rtt", 1)]
    # every request was issued by the app long before vif-sim existed
    ok = len(sent) == 5 and len(injected) == 5 and acct == {"ok": 5, "lost": 0, "failed": 0}
    verdict(5, "pre-start buffering", ok,
            f"vif up 2 s before vif-sim: {len(sent)} requests sent, {len(injected)} reached the network, "
            f"samples {acct}")


def test_6_datagram_only(verdict):
    reports = [run_scenario(pair_scenario()), run_scenario(pair_scenario(), mux=True)]
    runner_ok = all(r.self_checks["datagram_only"] for r in reports)
    # the instrument itself flags a stream socket
    listener = socket.create_server(("127.0.0.1", 0))
    proc = subprocess.Popen([sys.executable, "-c",
                             "import socket,sys,time; s=socket.create_connection(('127.0.0.1', int(sys.argv[1]))); "
                             "time.sleep(30)", str(listener.getsockname()[1])])
    conn, _ = listener.accept()
    try:
        try:
            assert_datagram_only([proc.pid])
            flagged = False
        except TransportViolation:
            flagged = True
    finally:
        proc.kill()
        proc.wait()
        conn.close()
        listener.close()
    verdict(6, "datagram-only tunnel", runner_ok and flagged,
            f"no stream socket on any vif/vif-sim tunnel (per-container and mux runs): {runner_ok}; "
            f"a TCP-holding process is flagged: {flagged}")


def test_7_scaling_trends(verdict, sweep):
    report, elapsed, _ = sweep
    agg = report.aggregates()
    counts = sorted({n for _, n in agg})
    rtt = [agg[("rtt", n)]["mean"] for n in counts]
    thr = [agg[("bulk_throughput", n)]["mean"] for n in counts]
    n_ok = all(agg[(m, n)]["n"] == 20 for m, n in agg)
    rtt_up = all(b >= a for a, b in zip(rtt, rtt[1:]))
    thr_down = all(b <= a for a, b in zip(thr, thr[1:]))
    sub_exp = all(b / a <= n2 / n1 for a, b, n1, n2 in zip(rtt, rtt[1:], counts, counts[1:]))
    ok = counts == [2, 4, 8, 16] and n_ok and rtt_up and thr_down and sub_exp and elapsed < 300
    verdict(7, "scaling trends", ok,
            f"pairs {counts}, RTT ms {[round(x, 6) for x in rtt]}, throughput kB/s {[round(x, 1) for x in thr]}, "
            f"20 repeats each: {n_ok}, {elapsed:.1f} s")


def test_8_kernel_semantics(verdict):
    # time-shifted delivery
    world = World()
    a = world.register_simulator("a", Probe(scale=3)).create(1, "Node", offset=1)[0]
    b_sim = Probe()
    b = world.register_simulator("b", b_sim).create(1, "Node")[0]
    world.connect(a, b, ("value", "in"), time_shifted=True, initial_data={"value": "init"})
    world.step(25)
    got = [inp["n0"]["in"]["a.n0"] for _, inp in b_sim.seen]
    shifted_ok = got == ["init"] + [3 * (t - 1) + 1 for t in range(1, 25)]
    # acyclicity of the non-shifted subgraph: a -> b direct, b -> a only when shifted
    loop = World()
    x = loop.register_simulator("x", Probe()).create(1, "Node")[0]
    y = loop.register_simulator("y", Probe()).create(1, "Node")[0]
    loop.connect(x, y, ("value", "in"))
    loop.connect(y, x, ("value", "in"), time_shifted=True, initial_data={"value": 0})
    try:
        loop.connect(y, x, ("value", "in"))
        cycle_ok = False
    except CycleError:
        cycle_ok = True
    cycle_ok = cycle_ok and loop.step(3).steps == 3
    # one poll per vif-sim per step, counted by the kernel against real vif-sim processes
    report = run_scenario(pair_scenario(), keep_worlds=True)
    (run,) = report.extras["worlds"]
    polls = run.world.report.polls
    steps = run.world.report.steps
    vifsims = {n: p for n, p in polls.items() if n.startswith("vifsim")}
    poll_ok = len(vifsims) == 2 and all(p == steps for p in vifsims.values()) and b_sim.polls == 25
    verdict(8, "kernel semantics", shifted_ok and cycle_ok and poll_ok,
            f"shifted value == source at t-1 (initial at t=0): {shifted_ok}; direct cycle rejected: {cycle_ok}; "
            f"vif-sim polls {vifsims} over {steps} steps")


def test_9_reproducibility(verdict, sweep, tmp_path):
    _, _, first = sweep
    again = run_scenario(bundled_scenario("sweep"))
    emit_outputs(again, tmp_path)
    second = (tmp_path / "report.csv").read_bytes()
    echo_a, echo_b = tmp_path / "ea", tmp_path / "eb"
    emit_outputs(run_scenario(bundled_scenario("echo")), echo_a)
    emit_outputs(run_scenario(bundled_scenario("echo"), mux=True), echo_b)
    echo_same = (echo_a / "report.csv").read_bytes() == (echo_b / "report.csv").read_bytes()
    verdict(9, "reproducibility", first == second and echo_same,
            f"sweep CSV ({len(first)} bytes) identical across two runs: {first == second}; "
            f"echo CSV identical across per-container and mux runs: {echo_same}")
