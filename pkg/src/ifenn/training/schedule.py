"""Learning-rate schedules defined by (epoch, rate) breakpoints."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError

SCHEDULE_KINDS = ("constant", "warm-hold-decay")


@dataclass(frozen=True)
class LrSchedule:
    """Piecewise log-linear rate between breakpoints, held flat outside them.

    A ``constant`` schedule has a single breakpoint.  Rates must be
    non-negative; zero is accepted so a run can be frozen deliberately.
    """

    kind: str
    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise InvalidArgumentError(f"unknown schedule {self.kind!r}; choose from {SCHEDULE_KINDS}")
        if not self.breakpoints:
            raise InvalidArgumentError("schedule needs at least one breakpoint")
        epochs = [e for e, _ in self.breakpoints]
        rates = [r for _, r in self.breakpoints]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise InvalidArgumentError("schedule breakpoints must be strictly increasing in epoch")
        if any(not np.isfinite(r) or r < 0 for r in rates):
            raise InvalidArgumentError("learning rates must be finite and non-negative")
        if self.kind == "warm-hold-decay" and min(rates) <= 0:
            raise InvalidArgumentError("warm-hold-decay rates must be positive")

    def rate(self, epoch: float) -> float:
        if len(self.breakpoints) == 1:
            return float(self.breakpoints[0][1])
        e = np.array([b[0] for b in self.breakpoints], dtype=float)
        r = np.array([b[1] for b in self.breakpoints], dtype=float)
        return float(np.exp(np.interp(float(epoch), e, np.log(r))))


def constant(rate: float) -> LrSchedule:
    return LrSchedule("constant", ((0.0, float(rate)),))


def warm_hold_decay(peak: float, epochs: int, warm: float = 0.05, hold: float = 0.25,
                    start_factor: float = 0.1, end_factor: float = 0.01) -> LrSchedule:
    """Ramp from ``start_factor*peak`` to ``peak`` over the first ``warm`` fraction of
    the epochs, hold until ``warm + hold``, then decay to ``end_factor*peak`` at the end."""
    if warm < 0 or hold < 0 or warm + hold >= 1:
        raise InvalidArgumentError("need warm, hold >= 0 and warm + hold < 1")
    n = max(int(epochs) - 1, 1)
    pts = [(0.0, start_factor * peak), (warm * n, peak), ((warm + hold) * n, peak), (float(n), end_factor * peak)]
    dedup = []
    for e, r in pts:
        if dedup and e <= dedup[-1][0]:
            dedup[-1] = (dedup[-1][0], r)
        else:
            dedup.append((e, r))
    return LrSchedule("warm-hold-decay", tuple(dedup))
