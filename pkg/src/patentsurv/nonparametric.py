"""Kaplan-Meier curves with Greenwood bands, and the log-rank test."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from statistics import NormalDist
from typing import IO, NamedTuple, Sequence

import numpy as np

from .coxph import TestUndefinedError
from .dataset import TECH_LABELS, Dataset
from .numerics import SingularMatrixError, chi_square_sf, solve_spd

CURVE_HEADER = ("group", "time", "n_risk", "n_events", "survival", "se", "ci_low", "ci_high")


class EmptyGroupError(ValueError):
    def __init__(self, group: str):
        super().__init__(f"group {group!r} has no records")
        self.group = group


def km_estimate(times, events):
    """Product-limit estimate at the distinct event times.

    Returns ``(t, n_risk, n_events, survival)``. A record censored at ``t``
    is still at risk for events at ``t``.
    """
    times = np.asarray(times)
    events = np.asarray(events) != 0
    t_event, d = np.unique(times[events], return_counts=True)
    sorted_times = np.sort(times)
    n_risk = len(times) - np.searchsorted(sorted_times, t_event, side="left")
    s = np.cumprod(1.0 - d / n_risk)
    return t_event, n_risk, d, s


@dataclass(frozen=True)
class SurvivalCurve:
    event_times: np.ndarray
    n_risk: np.ndarray
    n_events: np.ndarray
    estimate: np.ndarray
    n_total: int
    greenwood_se: np.ndarray | None = None
    ci_low: np.ndarray | None = None
    ci_high: np.ndarray | None = None
    level: float | None = None
    group_label: str | None = None

    def at(self, t) -> np.ndarray:
        """Right-continuous step function value S(t)."""
        idx = np.searchsorted(self.event_times, np.asarray(t, dtype=np.float64), side="right")
        return np.concatenate(([1.0], self.estimate))[idx]

    def median(self) -> int | None:
        """Smallest event time with S(t) <= 0.5, or None when not reached."""
        hit = np.flatnonzero(self.estimate <= 0.5)
        return int(self.event_times[hit[0]]) if hit.size else None


def greenwood_band(curve: SurvivalCurve, level: float = 0.95) -> SurvivalCurve:
    """Greenwood standard errors and a log(-log) confidence band.

    Where the curve reaches zero (n_j == d_j) the variance is undefined; the
    band is reported up to that point and NaN from there on.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    n = curve.n_risk.astype(np.float64)
    d = curve.n_events.astype(np.float64)
    s = curve.estimate
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(n > d, d / (n * (n - d)), np.inf)
    cum = np.cumsum(terms)
    defined = np.isfinite(cum)
    se = np.full_like(s, np.nan)
    se[defined] = s[defined] * np.sqrt(cum[defined])

    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    lo = np.full_like(s, np.nan)
    hi = np.full_like(s, np.nan)
    for j in np.flatnonzero(defined):
        if s[j] >= 1.0:
            lo[j] = hi[j] = 1.0
            continue
        log_s = math.log(s[j])
        # delta method on log(-log S)
        half = z * math.sqrt(cum[j]) / abs(log_s)
        lo[j] = s[j] ** math.exp(half)
        hi[j] = s[j] ** math.exp(-half)
    return replace(curve, greenwood_se=se, ci_low=lo, ci_high=hi, level=level)


class Grouping(NamedTuple):
    labels: tuple[str, ...]
    members: np.ndarray  # per-record index into labels


def group_records(d: Dataset, group_by: str) -> Grouping:
    """Split records by a 0/1 covariate (``dsir``, ``ow``) or by ``tech``."""
    key = group_by.lower()
    if key in ("dsir", "ow"):
        vals = d.columns[key]
        labels = (f"{key.upper()}=0", f"{key.upper()}=1")
        members = np.asarray(vals, dtype=np.int64)
        if np.any((members != 0) & (members != 1)):
            raise ValueError(f"{key} is not a 0/1 covariate")
        return Grouping(labels, members)
    if key == "tech":
        codes = d.columns["tech"]
        labels = tuple(sorted(set(codes.tolist())))
        unknown = set(labels) - set(TECH_LABELS)
        if unknown:
            raise ValueError(f"unknown technology codes {sorted(unknown)}")
        index = {c: i for i, c in enumerate(labels)}
        return Grouping(labels, np.array([index[c] for c in codes], dtype=np.int64))
    raise KeyError(f"cannot group by {group_by!r}; expected dsir, ow or tech")


def fit_km(d: Dataset, group_by: str | None = None, level: float | None = 0.95) -> list[SurvivalCurve]:
    """One Kaplan-Meier curve per group (a single pooled curve when ungrouped)."""
    if len(d) == 0:
        raise ValueError("empty dataset")
    times, events = d.times, d.events
    if group_by is None:
        parts = [("all", np.ones(len(d), dtype=bool))]
    else:
        g = group_records(d, group_by)
        parts = [(label, g.members == i) for i, label in enumerate(g.labels)]
    curves = []
    for label, mask in parts:
        if not mask.any():
            raise EmptyGroupError(label)
        t, n, dd, s = km_estimate(times[mask], events[mask])
        curve = SurvivalCurve(t, n, dd, s, int(mask.sum()), group_label=label)
        if level is not None:
            curve = greenwood_band(curve, level)
        curves.append(curve)
    return curves


def write_curves(curves: Sequence[SurvivalCurve], sink: IO[str] | None = None) -> str:
    """Plot-ready CSV; each curve starts with a time-0 row at S = 1."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)

    def fmt(v) -> str:
        return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))

    for c in curves:
        label = c.group_label or "all"
        w.writerow([label, 0, c.n_total, 0, fmt(1.0), fmt(0.0), fmt(1.0), fmt(1.0)])
        for j in range(len(c.event_times)):
            se = c.greenwood_se[j] if c.greenwood_se is not None else None
            lo = c.ci_low[j] if c.ci_low is not None else None
            hi = c.ci_high[j] if c.ci_high is not None else None
            w.writerow([label, int(c.event_times[j]), int(c.n_risk[j]), int(c.n_events[j]), fmt(c.estimate[j]), fmt(se), fmt(lo), fmt(hi)])
    text = buf.getvalue()
    if sink is not None:
        sink.write(text)
    return text


class GroupCount(NamedTuple):
    label: str
    observed: float
    expected: float


@dataclass(frozen=True)
class LogRankResult:
    chi_square: float
    df: int
    p_value: float
    per_group: tuple[GroupCount, ...]


def log_rank(times, events, groups, labels: Sequence[str] | None = None) -> LogRankResult:
    """k-sample log-rank test on raw arrays; ``groups`` holds 0..k-1 per record."""
    times = np.asarray(times)
    events = np.asarray(events) != 0
    groups = np.asarray(groups, dtype=np.int64)
    k = int(groups.max()) + 1 if groups.size else 0
    if labels is None:
        labels = [str(i) for i in range(k)]
    sizes = np.bincount(groups, minlength=k)
    present = np.flatnonzero(sizes)
    if len(present) < 2:
        raise TestUndefinedError("log-rank test needs at least two non-empty groups")
    if not events.any():
        raise TestUndefinedError("log-rank test needs at least one event")
    # drop empty groups so the covariance stays non-singular
    remap = -np.ones(k, dtype=np.int64)
    remap[present] = np.arange(len(present))
    groups = remap[groups]
    labels = [labels[i] for i in present]
    k = len(present)

    t_event = np.unique(times[events])
    nt = len(t_event)
    # per-group risk counts and deaths at each event time
    n_gj = np.empty((k, nt))
    d_gj = np.empty((k, nt))
    for g in range(k):
        tg = np.sort(times[groups == g])
        n_gj[g] = len(tg) - np.searchsorted(tg, t_event, side="left")
        dead = np.sort(times[(groups == g) & events])
        d_gj[g] = np.searchsorted(dead, t_event, side="right") - np.searchsorted(dead, t_event, side="left")
    n_j = n_gj.sum(axis=0)
    d_j = d_gj.sum(axis=0)

    frac = n_gj / n_j
    observed = d_gj.sum(axis=1)
    expected = (d_j * frac).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(n_j > 1, d_j * (n_j - d_j) / (n_j - 1), 0.0)
    cov = np.einsum("j,gj->g", factor, frac)
    cov = np.diag(cov) - np.einsum("j,gj,hj->gh", factor, frac, frac)

    diff = (observed - expected)[:-1]
    try:
        stat = float(diff @ solve_spd(cov[:-1, :-1], diff))
    except SingularMatrixError:
        raise TestUndefinedError("log-rank variance is singular") from None
    stat = max(stat, 0.0)
    df = k - 1
    per_group = tuple(GroupCount(lab, float(o), float(e)) for lab, o, e in zip(labels, observed, expected))
    return LogRankResult(stat, df, chi_square_sf(stat, df), per_group)


def log_rank_test(d: Dataset, group_by: str) -> LogRankResult:
    g = group_records(d, group_by)
    return log_rank(d.times, d.events, g.members, g.labels)
