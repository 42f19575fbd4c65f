"""Per-area stochastic delay laws.

* Dedicated:        d = base + scale * X,  X ~ Exp(rate)        (defaults 10, 50, 1)
* Shared links:     d ~ Normal(mean, sd), clamped at 0          (defaults 250, 20)
* High impairment:  broken with probability p_break, otherwise
                    d ~ Uniform[min, max]                       (defaults 100, 2000, 0.05)

A broken link is reported as an infinite delay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gridloop.addressing import AreaKind

BROKEN = math.inf

GBIT = 1_000_000_000
# Allowed link data rates in bit/s, per area.
RATE_LIMITS = {
    AreaKind.DEDICATED: (GBIT, GBIT),
    AreaKind.SHARED_LINKS: (GBIT, GBIT),
    AreaKind.HIGH_IMPAIRMENT: (50_000, 100_000_000),
}
DEFAULT_RATES = {
    AreaKind.DEDICATED: GBIT,
    AreaKind.SHARED_LINKS: GBIT,
    AreaKind.HIGH_IMPAIRMENT: 1_000_000,
}


@dataclass(frozen=True)
class Dedicated:
    base_ms: float = 10.0
    scale_ms: float = 50.0
    rate: float = 1.0
    kind = AreaKind.DEDICATED

    def __post_init__(self):
        _positive(self, "base_ms", "scale_ms", "rate")

    @property
    def mean(self) -> float:
        return self.base_ms + self.scale_ms / self.rate


@dataclass(frozen=True)
class Shared:
    mean_ms: float = 250.0
    sd_ms: float = 20.0
    kind = AreaKind.SHARED_LINKS

    def __post_init__(self):
        _positive(self, "mean_ms", "sd_ms")


@dataclass(frozen=True)
class HighImpairment:
    min_ms: float = 100.0
    max_ms: float = 2000.0
    p_break: float = 0.05
    kind = AreaKind.HIGH_IMPAIRMENT

    def __post_init__(self):
        _positive(self, "min_ms", "max_ms")
        if self.max_ms < self.min_ms:
            raise ValueError(f"max_ms {self.max_ms} < min_ms {self.min_ms}")
        # p_break == 1 models a permanently broken link.
        if not 0 <= self.p_break <= 1:
            raise ValueError(f"p_break must be in [0, 1], got {self.p_break}")

    @property
    def finite_mean(self) -> float:
        return (self.min_ms + self.max_ms) / 2


DelayModel = Dedicated | Shared | HighImpairment

_MODELS = {AreaKind.DEDICATED: Dedicated, AreaKind.SHARED_LINKS: Shared, AreaKind.HIGH_IMPAIRMENT: HighImpairment}


def _positive(model, *names):
    for name in names:
        value = getattr(model, name)
        if not (value > 0 and math.isfinite(value)):
            raise ValueError(f"{type(model).__name__}.{name} must be a positive finite number, got {value}")


def default_model(area: AreaKind) -> DelayModel:
    return _MODELS[area]()


def model_for(area: AreaKind | str, **params) -> DelayModel:
    return _MODELS[AreaKind.parse(area)](**params)


def sample_delay(model: DelayModel, rng: np.random.Generator) -> float:
    """Draw one per-hop delay in ms; ``math.inf`` means the link is broken."""
    if isinstance(model, Dedicated):
        u = rng.random()
        x = -math.log1p(-u) / model.rate
        return model.base_ms + model.scale_ms * x
    if isinstance(model, Shared):
        return max(0.0, float(rng.normal(model.mean_ms, model.sd_ms)))
    if isinstance(model, HighImpairment):
        if model.p_break > 0 and rng.random() < model.p_break:
            return BROKEN
        if model.max_ms == model.min_ms:
            return float(model.min_ms)
        return float(rng.uniform(model.min_ms, model.max_ms))
    raise TypeError(f"not a delay model: {model!r}")

