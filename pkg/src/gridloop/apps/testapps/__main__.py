"""``python -m gridloop.apps.testapps <kind> [--config JSON]``

Kinds: echo, ping, bulk-send, bulk-recv, droop, and the container-style
bundles ``client`` (ping and/or bulk sender) and ``server`` (echo plus bulk
receiver). ``--config`` holds the constructor keywords, e.g.
``ping --config '{"target": "10.64.1.2", "count": 3}'`` or
``client --config '{"ping": {...}, "bulk": {...}}'``.
"""

import argparse
import json
import os
import sys

from gridloop.apps.testapps.apps import (
    BulkReceiver,
    BulkSender,
    Composite,
    DroopController,
    EchoResponder,
    Pinger,
)
from gridloop.apps.testapps.runtime import Runtime

KINDS = ("echo", "ping", "bulk-send", "bulk-recv", "droop", "client", "server")


def make_app(kind: str, config: dict):
    if kind == "echo":
        return EchoResponder()
    if kind == "bulk-recv":
        return BulkReceiver()
    if kind == "server":
        return Composite(EchoResponder(), BulkReceiver())
    if kind == "ping":
        return Pinger(**config)
    if kind == "bulk-send":
        return BulkSender(**config)
    if kind == "droop":
        return DroopController(**config)
    if kind == "client":
        parts = []
        if config.get("ping"):
            parts.append(Pinger(**config["ping"]))
        if config.get("bulk"):
            parts.append(BulkSender(**config["bulk"]))
        return Composite(*parts)
    raise ValueError(f"unknown app kind {kind!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m gridloop.apps.testapps", description=__doc__.split("\n")[0])
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--config", default="{}", help="JSON object of app parameters")
    parser.add_argument("--ip", default=os.environ.get("GRIDLOOP_APP_IP"), help="own address (default $GRIDLOOP_APP_IP)")
    parser.add_argument("--free-run", action="store_true", help="wall-clock time instead of clock ticks")
    args = parser.parse_args(argv)
    if not args.ip:
        parser.error("--ip or $GRIDLOOP_APP_IP is required")
    app = make_app(args.kind, json.loads(args.config))
    Runtime(args.ip, clocked=not args.free_run).run(app)
    return 0


if __name__ == "__main__":
    sys.exit(main())
