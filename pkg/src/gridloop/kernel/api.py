"""Simulator interface the kernel drives, in-process or over the wire.

The method set mirrors the remote protocol: ``init``, ``create``,
``setup_done``, ``step``, ``get_data`` and ``stop``. Models are declared in
``meta``::

    {"models": {"NetworkNode": {"params": ["node"], "inputs": ["rx"], "outputs": ["tx"]}}}
"""

from __future__ import annotations

from typing import Any

Inputs = dict[str, dict[str, dict[str, Any]]]
Outputs = dict[str, list[str]]


class Simulator:
    meta: dict[str, Any] = {"models": {}}

    def init(self, sid: str, **params) -> dict:
        self.sid = sid
        return self.meta

    def create(self, num: int, model: str, **params) -> list[dict]:
        raise NotImplementedError

    def setup_done(self) -> None:
        pass

    def step(self, time: int, inputs: Inputs) -> None:
        raise NotImplementedError

    def get_data(self, outputs: Outputs) -> dict[str, dict[str, Any]]:
        raise NotImplementedError

    def stop(self) -> None:
        pass


def model_attrs(meta: dict, model: str) -> tuple[list[str], list[str]]:
    decl = meta["models"][model]
    return list(decl.get("inputs", [])), list(decl.get("outputs", []))
