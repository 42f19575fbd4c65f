import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridloop.bench.outputs import CSV_COLUMNS, aggregate_rows, aggregates_from_csv, emit_outputs, read_csv, write_csv
from gridloop.bench.runner import BenchReport, Sample


def test_empty_report(tmp_path):
    files = emit_outputs(BenchReport("empty", 0, False), tmp_path)
    assert files["csv"].read_text() == ",".join(CSV_COLUMNS) + "\n"
    svg = files["rtt"].read_text()
    assert svg.startswith("<?xml") and "<svg" in svg
    assert "Average RTT" in svg


def test_rows_are_per_repeat_means_over_ok_pairs():
    r = BenchReport("x", 0, False, measurements=["rtt"])
    r.samples = [Sample("rtt", 2, 0, 0, 1.0), Sample("rtt", 2, 0, 1, 3.0),
                 Sample("rtt", 2, 1, 0, None, "lost"), Sample("rtt", 2, 1, 1, 5.0),
                 Sample("rtt", 2, 2, 0, None, "lost"), Sample("rtt", 2, 2, 1, None, "lost")]
    assert r.rows() == [("rtt", 2, 0, 2.0, "ms"), ("rtt", 2, 1, 5.0, "ms")]
    assert r.accounting() == {("rtt", 2): {"ok": 3, "lost": 3, "failed": 0}}


def test_large_report_row_count(tmp_path):
    r = BenchReport("big", 0, False, measurements=["rtt", "bulk_throughput"])
    rng = random.Random(0)
    for m in ("rtt", "bulk_throughput"):
        for n in (2, 4, 8):
            for k in range(100):
                r.samples.extend(Sample(m, n, k, p, rng.random()) for p in range(n))
    emit_outputs(r, tmp_path)
    assert len(read_csv(tmp_path / "report.csv")) == 600


@given(st.lists(st.tuples(st.sampled_from(["rtt", "bulk_throughput"]), st.sampled_from([2, 4, 8, 16]),
                          st.integers(0, 50), st.floats(0, 1e9, allow_nan=False), st.just("ms")), max_size=40))
def test_csv_roundtrip_preserves_aggregates(rows):
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as d:
        path = write_csv(rows, Path(d) / "r.csv")
        assert read_csv(path) == [(m, n, k, float(v), u) for m, n, k, v, u in rows]
        assert aggregates_from_csv(path) == aggregate_rows(rows)


def test_aggregate_values():
    agg = aggregate_rows([("rtt", 2, 0, 1.0, "ms"), ("rtt", 2, 1, 3.0, "ms")])
    assert agg[("rtt", 2)] == {"mean": 2.0, "sd": pytest.approx(2 ** 0.5), "min": 1.0, "max": 3.0, "n": 2}


def test_wrong_header_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(p)


def test_svg_is_deterministic(tmp_path):
    r = BenchReport("x", 0, False, measurements=["rtt"])
    r.samples = [Sample("rtt", n, k, 0, float(n * k + 1)) for n in (2, 4) for k in range(3)]
    a = emit_outputs(r, tmp_path / "a")
    b = emit_outputs(r, tmp_path / "b")
    assert a["rtt"].read_bytes() == b["rtt"].read_bytes()
