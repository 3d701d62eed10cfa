"""Deliberately naive reference computations, independent of the kernels."""

import math

import numpy as np


def naive_log_pl(x, times, events, b, ties="efron"):
    """Straight-line partial likelihood: loop over distinct event times and records."""
    x = np.asarray(x, dtype=float).reshape(len(times), -1)
    b = np.asarray(b, dtype=float)
    total = 0.0
    for t in sorted(set(t for t, e in zip(times, events) if e)):
        risk = [i for i in range(len(times)) if times[i] >= t]
        dead = [i for i in risk if times[i] == t and events[i]]
        eta = {i: sum(x[i, k] * b[k] for k in range(len(b))) for i in risk}
        r_sum = sum(math.exp(eta[i]) for i in risk)
        d_sum = sum(math.exp(eta[i]) for i in dead)
        for i in dead:
            total += eta[i]
        for k in range(len(dead)):
            frac = k / len(dead) if ties == "efron" else 0.0
            total -= math.log(r_sum - frac * d_sum)
    return total


def grid_log_pl(x, times, events, grid):
    """Single-covariate, tie-free log partial likelihood evaluated over a grid of b."""
    x = np.asarray(x, dtype=float)
    times = np.asarray(times)
    out = np.zeros_like(grid)
    for i in np.flatnonzero(events):
        risk = times >= times[i]
        out += grid * x[i] - np.log(np.exp(np.outer(grid, x[risk])).sum(axis=1))
    return out
