"""Deterministic stand-ins for the real applications (ping, iperf, controllers).

They speak raw IP through the loopback device and use only the standard
library, so starting one costs little more than the interpreter itself.
Run with ``python -m gridloop.apps.testapps <kind> [options]``.
"""
