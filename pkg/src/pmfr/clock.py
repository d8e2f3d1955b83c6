"""Real and virtual clocks.

Both expose the same three calls: ``now_ms``, ``sleep`` and ``spawn``.
Background work (refinement tasks) is started through ``spawn`` so the same
orchestration code runs live against wall-clock time or deterministically
under simulated time.

The virtual clock is single-driver: exactly one controller thread advances
time (every ``sleep`` it performs is an advance), while spawned background
threads block on their deadlines and are released one at a time, in
(deadline, registration) order. After releasing a thread the driver waits
until it parks again (next sleep) or exits before touching the timeline, so
any interleaving of compute between sleeps is fully serialized and replays
are byte-identical.
"""

from __future__ import annotations

import heapq
import threading
import time
from typing import Callable


class RealClock:
    """Wall-clock time; ``spawn`` starts a daemon thread."""

    def now_ms(self) -> float:
        return time.time() * 1000.0

    def sleep(self, ms: float) -> None:
        if ms < 0:
            raise ValueError("cannot sleep a negative duration")
        if ms:
            time.sleep(ms / 1000.0)

    def spawn(self, fn: Callable[[], None], name: str | None = None) -> threading.Thread:
        t = threading.Thread(target=fn, name=name, daemon=True)
        t.start()
        return t


class _Waiter:
    __slots__ = ("ready",)

    def __init__(self) -> None:
        self.ready = False


class VirtualClock:
    """Deterministic simulated time in milliseconds.

    Driver thread: any thread not registered via ``spawn``. Its ``sleep(ms)``
    advances simulated time by ``ms``, firing due background waiters along
    the way. Background threads' ``sleep`` parks them until the driver's
    timeline reaches their deadline. Background threads must only block on
    this clock; blocking on anything the driver holds would deadlock the
    advance protocol.
    """

    def __init__(self, start_ms: float = 0.0):
        self._cond = threading.Condition()
        self._now = float(start_ms)
        self._seq = 0
        self._heap: list[tuple[float, int, _Waiter]] = []
        self._running = 0  # released background threads not yet parked/finished
        self._bg_idents: set[int] = set()

    def now_ms(self) -> float:
        return self._now

    def sleep(self, ms: float) -> None:
        if ms < 0:
            raise ValueError("cannot sleep a negative duration")
        if threading.get_ident() in self._bg_idents:
            self._sleep_background(ms)
        else:
            self.advance_to(self._now + ms)

    def advance_to(self, target_ms: float) -> None:
        """Drive simulated time forward, running due background work in order."""
        with self._cond:
            if target_ms < self._now:
                raise ValueError("cannot advance the clock backwards")
            self._wait_quiescent()
            while self._heap and self._heap[0][0] <= target_ms:
                deadline, _, waiter = heapq.heappop(self._heap)
                if deadline > self._now:
                    self._now = deadline
                waiter.ready = True
                self._running += 1
                self._cond.notify_all()
                self._wait_quiescent()
            self._now = target_ms

    def spawn(self, fn: Callable[[], None], name: str | None = None) -> threading.Thread:
        """Register a background thread; it first runs at the next advance."""
        with self._cond:
            self._seq += 1
            start = _Waiter()
            heapq.heappush(self._heap, (self._now, self._seq, start))
        t = threading.Thread(target=self._bg_main, args=(fn, start), name=name, daemon=True)
        t.start()
        return t

    # internals

    def _wait_quiescent(self) -> None:
        while self._running > 0:
            self._cond.wait()

    def _bg_main(self, fn: Callable[[], None], start: _Waiter) -> None:
        ident = threading.get_ident()
        with self._cond:
            self._bg_idents.add(ident)
            while not start.ready:
                self._cond.wait()
        try:
            fn()
        finally:
            with self._cond:
                self._bg_idents.discard(ident)
                self._running -= 1
                self._cond.notify_all()

    def _sleep_background(self, ms: float) -> None:
        with self._cond:
            self._seq += 1
            waiter = _Waiter()
            heapq.heappush(self._heap, (self._now + ms, self._seq, waiter))
            self._running -= 1
            self._cond.notify_all()
            while not waiter.ready:
                self._cond.wait()


Clock = RealClock | VirtualClock
