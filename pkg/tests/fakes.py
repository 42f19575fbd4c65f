"""Small in-process simulators for kernel tests."""

from gridloop.kernel.api import Simulator


class Probe(Simulator):
    """``Node`` entities output ``value = scale * t + offset`` and log what they receive."""

    meta = {"models": {"Node": {"params": ["offset"], "inputs": ["in"], "outputs": ["value"]}}}

    def __init__(self, scale=1, fail_at=None):
        self.scale = scale
        self.fail_at = fail_at
        self.offsets = {}
        self.seen = []
        self.polls = 0
        self.t = None

    def create(self, num, model, offset=0):
        out = []
        for _ in range(num):
            eid = f"n{len(self.offsets)}"
            self.offsets[eid] = offset
            out.append({"eid": eid, "type": model})
        return out

    def step(self, time, inputs):
        if self.fail_at is not None and time >= self.fail_at:
            raise RuntimeError(f"boom at {time}")
        self.t = time
        self.seen.append((time, inputs))

    def get_data(self, outputs):
        self.polls += 1
        return {eid: {"value": self.scale * self.t + self.offsets[eid]} for eid in outputs}
