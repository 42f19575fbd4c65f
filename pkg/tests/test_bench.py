import csv
import subprocess
import sys

import pytest

from gridloop.bench.cli import main
from gridloop.bench.runner import RunFailed, WorldRun, run_scenario
from gridloop.bench.scenario import bundled_scenario, parse_scenario
from worlds import pair_doc, pair_scenario

pytestmark = [pytest.mark.integration, pytest.mark.usefixtures("no_leaked_children")]

PAIR = [["client", "server"]]


def test_echo_zero_loss_and_checks():
    report = run_scenario(pair_scenario())
    assert report.accounting() == {("rtt", 1): {"ok": 5, "lost": 0, "failed": 0}}
    assert report.passed, report.self_checks
    assert set(report.self_checks) >= {"one_to_one", "conservation", "one_poll_per_step", "datagram_only",
                                       "no_orphans", "sample_accounting"}


def test_mux_gives_same_samples():
    per = run_scenario(pair_scenario())
    mux = run_scenario(pair_scenario(), mux=True)
    assert mux.rows() == per.rows() and mux.passed


def test_broken_area_loses_everything():
    spec = pair_scenario(area="high_impairment", params={"p_break": 1.0},
                         measurements=[{"type": "rtt", "pairs": PAIR, "repeats": 3, "timeout": 500}])
    report = run_scenario(spec)
    assert report.accounting() == {("rtt", 1): {"ok": 0, "lost": 3, "failed": 0}}
    assert report.rows() == []
    assert report.worlds[0].area_counters["high_impairment"]["lost"] == 3


@pytest.mark.parametrize("area,rate,nbytes,cap_kBps", [
    ("dedicated", 1_000_000_000, 200_000, 125_000.0),
    ("high_impairment", 50_000, 3_000, 6.25),
])
def test_throughput_never_exceeds_link_capacity(area, rate, nbytes, cap_kBps):
    spec = pair_scenario(area=area, data_rate=rate, delay=False, duration=20_000, measurements=[
        {"type": "bulk_throughput", "pairs": PAIR, "repeats": 2, "bytes": nbytes, "segment": 1000,
         "window": 8, "rto": 5000, "stall": 20000, "start": 1}])
    report = run_scenario(spec)
    values = [v for _, _, _, v, _ in report.rows()]
    assert len(values) == 2
    assert all(0 < v <= cap_kBps for v in values)
    assert report.self_checks["capacity_bound"]


def test_hundred_repeats_hundred_samples():
    spec = pair_scenario(delay=False, measurements=[{"type": "rtt", "pairs": PAIR, "repeats": 100, "interval": 2}])
    report = run_scenario(spec)
    assert report.accounting()[("rtt", 1)]["ok"] == 100
    assert len(report.rows()) == 100


def test_dead_app_aborts_run():
    doc = pair_doc()
    doc["apps"][1] = {"name": "server", "node": "hs", "kind": "command", "clocked": False,
                      "command": [sys.executable, "-c", "import time; time.sleep(0.3)"]}
    with pytest.raises(RunFailed, match="server"):
        run_scenario(parse_scenario(doc))


def test_world_run_keeps_one_vifsim_entity_per_app():
    run = WorldRun(pair_scenario(), None, 42)
    try:
        run.setup()
        assert run.checks["one_to_one"]
        assert sorted(n for n in run.world.simulators if n.startswith("vifsim")) == ["vifsim-client", "vifsim-server"]
    finally:
        run.teardown()


def test_cli_validate(tmp_path, capsys):
    assert main(["validate", "echo"]) == 0
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: x\nmeasurements: []\n")
    assert main(["validate", str(bad)]) == 1
    assert "seed" in capsys.readouterr().err


def test_cli_run_writes_outputs(tmp_path):
    out = tmp_path / "out"
    proc = subprocess.run([sys.executable, "-m", "gridloop.bench.cli", "run", "echo", "--out", str(out)],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert {p.name for p in out.iterdir()} == {"report.csv", "report.json", "rtt.svg", "throughput.svg"}
    with open(out / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 and {r["unit"] for r in rows} == {"ms"}
    assert "check datagram_only: ok" in proc.stdout


def test_cli_missing_file(tmp_path):
    assert main(["run", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == 1


def test_grid_scenario_closes_the_loop():
    report = run_scenario(bundled_scenario("grid"))
    assert report.passed
    (history,) = report.extras["grid_history"]
    v = [volts["b2"] for _, volts in history]
    # the droop controller sheds load while b2 sags, so b2 recovers toward 1.0
    assert v[-1] > v[0]
