"""gridloop run <scenario> --out <dir> | gridloop validate <scenario>"""

from __future__ import annotations

import argparse
import logging
import sys

from gridloop.bench.scenario import ScenarioError, bundled_scenario, load_scenario


def _resolve(name: str):
    # bare names refer to bundled scenarios ("echo", "sweep", "grid")
    if "/" not in name and not name.endswith((".yaml", ".yml")):
        return bundled_scenario(name)
    return name


def cmd_validate(args) -> int:
    try:
        spec = load_scenario(_resolve(args.scenario))
    except (ScenarioError, OSError) as exc:
        print(exc, file=sys.stderr)
        return 1
    counts = ", ".join(str(c) for c in spec.node_counts if c is not None) or "explicit"
    print(f"{spec.name}: ok (seed {spec.seed}, worlds: {counts}, measurements: "
          f"{', '.join(m['type'] for m in spec.measurements)})")
    return 0


def cmd_run(args) -> int:
    from gridloop.bench.outputs import emit_outputs
    from gridloop.bench.runner import RunFailed, run_scenario

    try:
        spec = load_scenario(_resolve(args.scenario))
    except (ScenarioError, OSError) as exc:
        print(exc, file=sys.stderr)
        return 1
    launcher = None
    if args.real_tun:
        from gridloop.apps.harness import NamespaceLauncher, namespaces_available

        if not namespaces_available():
            print("--real-tun needs root, /dev/net/tun and the unshare/nsenter tools", file=sys.stderr)
            return 2
        launcher = NamespaceLauncher()
    try:
        report = run_scenario(spec, seed=args.seed, mux=args.mux or None, launcher=launcher)
    except RunFailed as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 1
    files = emit_outputs(report, args.out)
    for (m, n), a in sorted(report.aggregates().items()):
        print(f"{m:16s} pairs={n:<3d} mean={a['mean']:.6g} sd={a['sd']:.3g} n={a['n']}")
    for w in report.worlds:
        print(f"world pairs={w.node_count}: {w.sim_ms} sim ms in {w.wall_s:.2f} s "
              f"({w.wall_ms_per_sim_ms:.3f} wall ms per sim ms)")
    for name, ok in sorted(report.self_checks.items()):
        print(f"check {name}: {'ok' if ok else 'FAILED'}")
    for note in report.notes:
        print(f"note: {note}")
    print(f"wrote {', '.join(str(p) for p in files.values())}")
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gridloop", description="Software-in-the-loop co-simulation test bed.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario and write report.csv and plots")
    run.add_argument("scenario", help="scenario file, or the name of a bundled one")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--mux", action="store_true", help="one multiplexing vif-sim for all containers")
    run.add_argument("--real-tun", action="store_true", help="give each app its own network namespace and tun device")
    run.set_defaults(func=cmd_run)
    val = sub.add_parser("validate", help="check a scenario file and list every problem")
    val.add_argument("scenario")
    val.set_defaults(func=cmd_validate)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
