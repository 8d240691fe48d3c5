"""Clocks used for stage timing and injected backend delays."""

from __future__ import annotations

import threading
import time


class MonotonicClock:
    def now(self) -> float:
        return time.perf_counter()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class VirtualClock:
    """Real monotonic time plus a virtual offset advanced by ``sleep``.

    Work done between sleeps is still measured for real, so stage shares stay
    honest while injected delays cost nothing. Sleeps from concurrent threads
    accumulate, i.e. the clock models sequential execution.
    """

    def __init__(self):
        self._offset = 0.0
        self._lock = threading.Lock()

    def now(self) -> float:
        return time.perf_counter() + self._offset

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            with self._lock:
                self._offset += seconds

    @property
    def virtual_elapsed(self) -> float:
        return self._offset
