"""Hot numeric kernels with numba-compiled and pure-numpy backends.

The numba backend is used when numba imports cleanly; set the environment
variable ``SNOOPSHIELD_NO_NUMBA=1`` before import to force the numpy path.
Both backends are exported so tests and benchmarks can compare them.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_disabled() -> bool:
    return os.environ.get("SNOOPSHIELD_NO_NUMBA", "").strip().lower() in (
        "1", "true", "yes", "on",
    )


# ---------------------------------------------------------------------------
# slot assignment: map queued cells to departure opportunities
# ---------------------------------------------------------------------------

def assign_slots_numpy(arrivals: np.ndarray, slots: np.ndarray) -> np.ndarray:
    """Assign each arrival (sorted, int64 us) to the earliest free slot.

    A cell may depart at the first slot whose time is >= its arrival and
    that is not taken by an earlier cell (FIFO, one cell per slot).
    Returns the slot index per arrival, -1 for cells that never fit.

    The recurrence d[i] = max(first_free[i], d[i-1] + 1) unrolls to a
    running maximum, which keeps this backend fully vectorized.
    """
    n = arrivals.shape[0]
    m = slots.shape[0]
    if n == 0:
        return np.empty(0, np.int64)
    first = np.searchsorted(slots, arrivals, side="left")
    offsets = np.arange(n, dtype=np.int64)
    idx = np.maximum.accumulate(first - offsets) + offsets
    idx[idx >= m] = -1
    return idx


def _assign_slots_loop(arrivals: np.ndarray, slots: np.ndarray) -> np.ndarray:
    out = np.full(arrivals.shape[0], -1, np.int64)
    j = 0
    for i in range(arrivals.shape[0]):
        a = arrivals[i]
        while j < slots.shape[0] and slots[j] < a:
            j += 1
        if j == slots.shape[0]:
            break
        out[i] = j
        j += 1
    return out


# ---------------------------------------------------------------------------
# rolling median baseline for spike detection
# ---------------------------------------------------------------------------

def rolling_baseline_numpy(x: np.ndarray, window: int) -> np.ndarray:
    """Median of the `window` samples preceding each position.

    Positions inside the warm-up region (index < window) use the median of
    the first `window` samples.
    """
    n = x.shape[0]
    out = np.empty(n, np.float64)
    out[:window] = np.median(x[:window])
    if n > window:
        view = np.lib.stride_tricks.sliding_window_view(x, window)
        out[window:] = np.median(view, axis=1)[: n - window]
    return out


def _rolling_baseline_loop(x: np.ndarray, window: int) -> np.ndarray:
    n = x.shape[0]
    out = np.empty(n, np.float64)
    seed = np.median(x[:window])
    for i in range(window):
        out[i] = seed
    for i in range(window, n):
        out[i] = np.median(x[i - window:i])
    return out


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

assign_slots_numba = None
rolling_baseline_numba = None

if not _numba_disabled():
    try:
        from numba import njit

        assign_slots_numba = njit(cache=True)(_assign_slots_loop)
        rolling_baseline_numba = njit(cache=True)(_rolling_baseline_loop)
    except ImportError:  # pragma: no cover - numba is an install-time dep
        pass

if assign_slots_numba is not None:
    BACKEND = "numba"
    assign_slots = assign_slots_numba
    rolling_baseline = rolling_baseline_numba
else:
    BACKEND = "numpy"
    assign_slots = assign_slots_numpy
    rolling_baseline = rolling_baseline_numpy
