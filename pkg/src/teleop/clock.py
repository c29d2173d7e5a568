"""Session clocks. Timestamps are integer microseconds since session epoch.

The virtual clock is the default: it is advanced only by the session driver,
so every run of the same (seed, config) produces identical timestamps. The
wall clock exists for split-role deployments over real sockets.
"""

from __future__ import annotations

import time


class VirtualClock:
    """Deterministic clock owned by the session driver.

    ``now()`` returns ``step * tick_us`` plus any exact offset set by the
    driver; only the single owner may advance it.
    """

    def __init__(self, tick_us: int = 1000):
        if tick_us <= 0:
            raise ValueError("tick_us must be positive")
        self.tick_us = tick_us
        self._now_us = 0

    def now(self) -> int:
        return self._now_us

    def advance_to(self, ts_us: int) -> None:
        if ts_us < self._now_us:
            raise ValueError(f"clock cannot move backwards: {self._now_us} -> {ts_us}")
        self._now_us = ts_us

    def step(self, n: int = 1) -> int:
        """Advance by n ticks and return the new time."""
        self._now_us += n * self.tick_us
        return self._now_us


class WallClock:
    """Elapsed real microseconds since construction (or a shared epoch)."""

    def __init__(self, epoch_ns: int | None = None):
        self._epoch_ns = time.time_ns() if epoch_ns is None else epoch_ns

    @property
    def epoch_ns(self) -> int:
        return self._epoch_ns

    def now(self) -> int:
        return (time.time_ns() - self._epoch_ns) // 1000
