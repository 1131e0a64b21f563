"""Fixed-point time, hardware clocks with bounded drift, and logical clocks.

All times and clock values are integers counting 1e-9 units. Rates are
floats; every clock is piecewise linear with constant rate between
scheduled changes, so advancing and inverting a clock is closed form.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

RESOLUTION = 1_000_000_000


class ContractViolation(ValueError):
    """Raised when an operation is called outside its precondition."""


def to_fixed(x: float) -> int:
    return int(round(x * RESOLUTION))


def from_fixed(v: int) -> float:
    return v / RESOLUTION


def fmt_fixed(v: int) -> str:
    """Exact decimal rendering of a fixed-point value."""
    sign = "-" if v < 0 else ""
    whole, frac = divmod(abs(v), RESOLUTION)
    return f"{sign}{whole}.{frac:09d}"


def parse_fixed(s: str) -> int:
    s = s.strip()
    neg = s.startswith("-")
    if neg:
        s = s[1:]
    whole, _, frac = s.partition(".")
    frac = (frac + "0" * 9)[:9]
    v = int(whole or "0") * RESOLUTION + int(frac or "0")
    return -v if neg else v


@dataclass
class RateSchedule:
    """Piecewise-constant rate: ``rates[i]`` applies from ``starts[i]`` on."""

    starts: list[int] = field(default_factory=lambda: [0])
    rates: list[float] = field(default_factory=lambda: [1.0])

    def __post_init__(self) -> None:
        if not self.starts or self.starts[0] != 0:
            raise ContractViolation("rate schedule must start at time 0")
        if len(self.starts) != len(self.rates):
            raise ContractViolation("starts and rates differ in length")
        if any(b <= a for a, b in zip(self.starts, self.starts[1:])):
            raise ContractViolation("rate change times must be increasing")

    @classmethod
    def constant(cls, rate: float) -> RateSchedule:
        return cls([0], [rate])

    def rate_at(self, t: int) -> float:
        return self.rates[bisect.bisect_right(self.starts, t) - 1]

    def check_bounds(self, rho: float) -> None:
        lo, hi = 1.0 - rho, 1.0 + rho
        for r in self.rates:
            if not lo - 1e-12 <= r <= hi + 1e-12:
                raise ContractViolation(f"hardware rate {r} outside [{lo}, {hi}]")

    def integrate(self, start: int, end: int) -> int:
        """Exact (to one unit) integral of the rate over [start, end]."""
        if end < start:
            raise ContractViolation(f"reversed interval [{start}, {end}]")
        total = 0.0
        i = bisect.bisect_right(self.starts, start) - 1
        t = start
        while t < end:
            seg_end = self.starts[i + 1] if i + 1 < len(self.starts) else end
            seg_end = min(seg_end, end)
            total += self.rates[i] * (seg_end - t)
            t = seg_end
            i += 1
        return int(round(total))


@dataclass
class HardwareClock:
    schedule: RateSchedule = field(default_factory=RateSchedule)
    current_value: int = 0

    def rate_at(self, t: int) -> float:
        return self.schedule.rate_at(t)


@dataclass
class LogicalClock:
    hardware: HardwareClock = field(default_factory=HardwareClock)
    current_value: int = 0
    multiplier: float = 1.0

    def rate_at(self, t: int) -> float:
        return self.hardware.rate_at(t) * self.multiplier


def advance(clock: HardwareClock | LogicalClock, start: int, end: int) -> int:
    """Value of ``clock`` at ``end`` given its ``current_value`` at ``start``."""
    if end < start:
        raise ContractViolation(f"reversed interval [{start}, {end}]")
    if isinstance(clock, LogicalClock):
        sched = clock.hardware.schedule
        scaled = RateSchedule(sched.starts, [r * clock.multiplier for r in sched.rates])
        return clock.current_value + scaled.integrate(start, end)
    return clock.current_value + clock.schedule.integrate(start, end)


def solve_crossing(
    clock: LogicalClock,
    hardware_rate: float,
    multiplier: float,
    now: int,
    target: int,
) -> int | None:
    """Earliest time at which the clock reaches ``target`` under constant rate."""
    rate = hardware_rate * multiplier
    if rate <= 0:
        raise ContractViolation("combined clock rate must be positive")
    gap = target - clock.current_value
    if gap < 0:
        return None
    # float error in gap / rate stays far below one unit at simulated horizons
    return now + math.ceil(gap / rate - 1e-3)
