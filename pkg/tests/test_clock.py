"""Virtual-clock semantics: deterministic time, ordered background wakeups."""

from __future__ import annotations

import threading
import time

import pytest

from pmfr.clock import RealClock, VirtualClock


def test_virtual_sleep_advances_simulated_time_instantly():
    clock = VirtualClock()
    wall_start = time.monotonic()
    clock.sleep(10_000)
    assert clock.now_ms() == 10_000.0
    assert time.monotonic() - wall_start < 1.0


def test_virtual_clock_starts_at_configured_origin():
    assert VirtualClock(start_ms=500.0).now_ms() == 500.0


def test_negative_sleep_rejected():
    with pytest.raises(ValueError):
        VirtualClock().sleep(-1)
    with pytest.raises(ValueError):
        RealClock().sleep(-1)


def test_advance_backwards_rejected():
    clock = VirtualClock()
    clock.sleep(100)
    with pytest.raises(ValueError):
        clock.advance_to(50)


def test_background_thread_wakes_at_its_deadline():
    clock = VirtualClock()
    seen = []

    def worker():
        clock.sleep(300)
        seen.append(clock.now_ms())

    clock.spawn(worker)
    clock.sleep(1000)
    assert seen == [300.0]
    assert clock.now_ms() == 1000.0


def test_background_wakeups_fire_in_deadline_order():
    clock = VirtualClock()
    order = []

    def worker(delay, tag):
        def run():
            clock.sleep(delay)
            order.append((tag, clock.now_ms()))
        return run

    clock.spawn(worker(500, "b"))
    clock.spawn(worker(200, "a"))
    clock.spawn(worker(900, "c"))
    clock.sleep(1000)
    assert order == [("a", 200.0), ("b", 500.0), ("c", 900.0)]


def test_ties_break_by_registration_order():
    clock = VirtualClock()
    order = []

    def make(tag):
        def run():
            clock.sleep(100)
            order.append(tag)
        return run

    clock.spawn(make("first"))
    clock.spawn(make("second"))
    clock.sleep(100)
    assert order == ["first", "second"]


def test_background_thread_can_sleep_repeatedly():
    clock = VirtualClock()
    ticks = []

    def worker():
        for _ in range(3):
            clock.sleep(100)
            ticks.append(clock.now_ms())

    clock.spawn(worker)
    clock.sleep(250)
    assert ticks == [100.0, 200.0]
    clock.sleep(100)
    assert ticks == [100.0, 200.0, 300.0]


def test_driver_waits_for_spawned_work_between_steps():
    """Work scheduled inside one advance is fully serialized: the driver's
    next statement runs only after the background thread parks or exits."""
    clock = VirtualClock()
    log = []

    def worker():
        log.append("bg-start")
        clock.sleep(50)
        log.append("bg-end")

    clock.spawn(worker)
    clock.sleep(10)  # releases the start waiter, then the 50 ms sleep parks
    log.append("driver-10")
    clock.sleep(100)
    log.append("driver-110")
    assert log == ["bg-start", "driver-10", "bg-end", "driver-110"]


def test_two_replays_interleave_identically():
    def run_once():
        clock = VirtualClock()
        trace = []

        def worker(tag, delay):
            def run():
                clock.sleep(delay)
                trace.append((tag, clock.now_ms()))
                clock.sleep(delay)
                trace.append((tag, clock.now_ms()))
            return run

        clock.spawn(worker("x", 120))
        clock.spawn(worker("y", 120))
        clock.spawn(worker("z", 30))
        for _ in range(10):
            clock.sleep(40)
        return trace

    assert run_once() == run_once()


def test_real_clock_basis():
    clock = RealClock()
    before = time.time() * 1000.0
    now = clock.now_ms()
    after = time.time() * 1000.0
    assert before <= now <= after
    start = time.monotonic()
    clock.sleep(20)
    assert time.monotonic() - start >= 0.019


def test_real_clock_spawn_runs_function():
    clock = RealClock()
    done = threading.Event()
    t = clock.spawn(done.set)
    assert done.wait(timeout=2.0)
    t.join(timeout=2.0)
