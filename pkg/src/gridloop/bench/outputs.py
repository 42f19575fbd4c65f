"""report.csv, report.json and the two SVG plots."""

from __future__ import annotations

import csv
import json
import math
import statistics
from pathlib import Path

CSV_COLUMNS = ("measurement", "node_count", "repeat", "value", "unit")
PLOTS = {"rtt": ("rtt.svg", "Average RTT", "RTT [ms]"),
         "bulk_throughput": ("throughput.svg", "Bulk throughput", "throughput [kB/s]")}


def aggregate_rows(rows) -> dict[tuple[str, int], dict[str, float]]:
    """mean, sd (sample), min, max and n of the values per (measurement, node_count)."""
    groups: dict[tuple[str, int], list[float]] = {}
    for m, n, _r, value, _unit in rows:
        groups.setdefault((m, int(n)), []).append(float(value))
    out = {}
    for key, values in sorted(groups.items()):
        out[key] = {
            "mean": math.fsum(values) / len(values),
            "sd": statistics.stdev(values) if len(values) > 1 else 0.0,
            "min": min(values),
            "max": max(values),
            "n": len(values),
        }
    return out


def write_csv(rows, path: Path) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for m, n, r, value, unit in rows:
            writer.writerow([m, n, r, repr(float(value)), unit])
    return path


def read_csv(path) -> list[tuple[str, int, int, float, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: expected columns {','.join(CSV_COLUMNS)}")
        return [(r["measurement"], int(r["node_count"]), int(r["repeat"]), float(r["value"]), r["unit"]) for r in reader]


def aggregates_from_csv(path) -> dict[tuple[str, int], dict[str, float]]:
    return aggregate_rows(read_csv(path))


def plot(aggregates, measurement: str, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    _, title, ylabel = PLOTS[measurement]
    points = sorted((n, a) for (m, n), a in aggregates.items() if m == measurement)
    with matplotlib.rc_context({"svg.hashsalt": "gridloop", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        if points:
            xs = [n for n, _ in points]
            ax.errorbar(xs, [a["mean"] for _, a in points], yerr=[a["sd"] for _, a in points],
                        marker="o", capsize=3)
            ax.set_xticks(xs)
        ax.set_title(title)
        ax.set_xlabel("number of node pairs")
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return path


def emit_outputs(report, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = report.rows()
    files = {"csv": write_csv(rows, out / "report.csv")}
    aggregates = aggregate_rows(rows)
    for measurement, (name, _, _) in PLOTS.items():
        files[measurement] = plot(aggregates, measurement, out / name)
    summary = out / "report.json"
    summary.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    files["json"] = summary
    return files
