"""Collects one line per acceptance criterion for the terminal summary."""

import time
from contextlib import contextmanager

RESULTS: dict[int, str] = {}


@contextmanager
def criterion(number: int, title: str, budget_s: float, spent_s: float = 0.0):
    """Time a criterion body; record PASS/FAIL with the details it reports.

    ``spent_s`` adds work done earlier on the criterion's behalf (shared fixtures).
    """
    details: list[str] = []
    t0 = time.perf_counter()
    ok = False
    try:
        yield details
        ok = True
    finally:
        elapsed = time.perf_counter() - t0 + spent_s
        within = elapsed < budget_s
        status = "PASS" if ok and within else "FAIL"
        extra = "; ".join(details)
        line = f"criterion {number:2d} {status}  {title}  [{elapsed:.1f}s / {budget_s:g}s]  {extra}"
        RESULTS[number] = line
        print(line)
    assert within, f"criterion {number} took {elapsed:.1f}s, budget {budget_s}s"
