"""Cox proportional-hazards regression.

Partial likelihood with Breslow or Efron handling of tied years, Newton-Raphson
fitting with step halving, the Breslow baseline hazard, and the
Grambsch-Therneau proportional-hazards test on Schoenfeld residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .dataset import DesignMatrix, IdentifiabilityError
from .numerics import SingularMatrixError, chi_square_sf, inverse_spd, solve_spd, symmetrize

TIES = ("efron", "breslow")
_LL_RESOLUTION = 1e-12


class TestUndefinedError(ValueError):
    """A hypothesis test has no defined statistic on the given data."""

    __test__ = False  # keep pytest from collecting it


@dataclass(frozen=True)
class _RiskSets:
    """Design rows sorted by descending time, grouped into tied-time blocks."""

    x: np.ndarray
    events: np.ndarray
    times: np.ndarray  # distinct times, descending, one per block
    bounds: np.ndarray
    order: np.ndarray


def _risk_sets(m: DesignMatrix) -> _RiskSets:
    # Canonical order: time descending, then row content. Makes every result
    # bit-identical under permutation of the input records.
    keys = [m.rows[:, j] for j in range(m.p - 1, -1, -1)]
    keys.append(m.events)
    keys.append(-m.times)
    order = np.lexsort(keys)
    x = np.ascontiguousarray(m.rows[order], dtype=np.float64)
    times = m.times[order]
    events = np.ascontiguousarray(m.events[order], dtype=np.int64)
    starts = np.flatnonzero(np.diff(times)) + 1
    bounds = np.concatenate(([0], starts, [len(times)])).astype(np.int64)
    return _RiskSets(x, events, times[bounds[:-1]], bounds, order)


def _check_ties(ties: str) -> bool:
    if ties not in TIES:
        raise ValueError(f"ties must be one of {TIES}, got {ties!r}")
    return ties == "efron"


def _evaluate(rs: _RiskSets, b: np.ndarray, efron: bool, detail: bool = False):
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (rs.x.shape[1],):
        raise ValueError(f"coefficient vector has length {b.size}, design has {rs.x.shape[1]} columns")
    eta = np.ascontiguousarray(rs.x @ b) if b.size else np.zeros(rs.x.shape[0])
    out = _kernels.accumulate(rs.x, eta, rs.events, rs.bounds, efron, detail)
    if not math.isfinite(out[0]):
        raise FloatingPointError("log partial likelihood is not finite")
    return out


def log_partial_likelihood(m: DesignMatrix, b, ties: str = "efron") -> float:
    efron = _check_ties(ties)
    return float(_evaluate(_risk_sets(m), b, efron)[0])


def score_and_information(m: DesignMatrix, b, ties: str = "efron") -> tuple[np.ndarray, np.ndarray]:
    """Gradient and negative Hessian of the log partial likelihood at ``b``."""
    efron = _check_ties(ties)
    _, score, info, _, _ = _evaluate(_risk_sets(m), b, efron)
    return score, info


@dataclass(frozen=True)
class BaselineHazard:
    times: np.ndarray
    increments: np.ndarray
    cumulative: np.ndarray

    def cumulative_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.times, t, side="right")
        padded = np.concatenate(([0.0], self.cumulative))
        return padded[idx]

    def survival(self, t, linear_predictor: float = 0.0) -> np.ndarray:
        """S(t | x) = exp(-H0(t) exp(x.b)) for a record with the given x.b."""
        return np.exp(-self.cumulative_at(t) * math.exp(linear_predictor))


@dataclass(frozen=True)
class CoxFit:
    column_names: tuple[str, ...]
    coefficients: np.ndarray
    covariance: np.ndarray
    standard_errors: np.ndarray
    hazard_ratios: np.ndarray
    log_pl_fit: float
    log_pl_null: float
    lr_stat: float
    lr_df: int
    lr_p: float
    iterations: int
    converged: bool
    ties: str
    n: int
    n_events: int
    score: np.ndarray
    baseline: BaselineHazard | None = None
    loglik_history: tuple[float, ...] = ()
    spec: object = None

    def predict_survival(self, t, x) -> np.ndarray:
        eta = float(np.dot(np.asarray(x, dtype=np.float64), self.coefficients))
        return self.baseline.survival(t, eta)


def fit_cox(
    m: DesignMatrix,
    ties: str = "efron",
    tol: float = 1e-9,
    max_iter: int = 100,
    spec=None,
) -> CoxFit:
    """Maximize the partial likelihood by Newton-Raphson from b = 0.

    A step that lowers the log partial likelihood (beyond its rounding
    resolution) is halved until it does not.
    Convergence needs both a relative log-PL change below ``tol`` and a score
    norm below ``tol * (1 + |log PL|)``. Hitting ``max_iter`` returns a fit
    with ``converged=False`` rather than raising.
    """
    efron = _check_ties(ties)
    if m.n == 0:
        raise ValueError("design matrix has no rows")
    n_events = int(np.count_nonzero(m.events))
    if n_events == 0:
        raise ValueError("no events: partial likelihood is degenerate")
    for j, name in enumerate(m.column_names):
        col = m.rows[:, j]
        if np.all(col == col[0]):
            raise IdentifiabilityError(f"column {name!r} is constant across all records", column=name)

    rs = _risk_sets(m)
    p = m.p
    b = np.zeros(p)
    ll, score, info, _, _ = _evaluate(rs, b, efron)
    ll_null = ll
    history = [ll]
    converged = p == 0 or float(np.linalg.norm(score)) < tol * (1.0 + abs(ll))
    it = 0
    while not converged and it < max_iter:
        it += 1
        try:
            step = solve_spd(info, score)
        except SingularMatrixError as exc:
            raise IdentifiabilityError(f"information matrix is singular: {exc}") from None
        # near the optimum the gain falls below the rounding noise of the
        # log-PL sum; a step within that noise still counts as ascent
        slack = _LL_RESOLUTION * (1.0 + abs(ll))
        for _ in range(60):
            b_new = b + step
            try:
                ll_new, score_new, info_new, _, _ = _evaluate(rs, b_new, efron)
            except FloatingPointError:
                ll_new = -math.inf
            if ll_new >= ll - slack:
                break
            step = 0.5 * step
        else:
            # no ascent direction left at machine precision
            break
        rel = abs(ll_new - ll) / max(abs(ll_new), 1e-300)
        b, ll, score, info = b_new, ll_new, score_new, info_new
        history.append(ll)
        converged = rel < tol and float(np.linalg.norm(score)) < tol * (1.0 + abs(ll))

    if p:
        try:
            cov = inverse_spd(info)
        except SingularMatrixError as exc:
            raise IdentifiabilityError(f"information matrix is singular at the optimum: {exc}") from None
        se = np.sqrt(np.diag(cov))
    else:
        cov = np.zeros((0, 0))
        se = np.zeros(0)

    lr_stat = 2.0 * (ll - ll_null)
    lr_p = chi_square_sf(max(lr_stat, 0.0), p) if p else 1.0
    fit = CoxFit(
        column_names=tuple(m.column_names),
        coefficients=b,
        covariance=cov,
        standard_errors=se,
        hazard_ratios=_safe_exp(b),
        log_pl_fit=float(ll),
        log_pl_null=float(ll_null),
        lr_stat=float(lr_stat),
        lr_df=p,
        lr_p=float(lr_p),
        iterations=it,
        converged=bool(converged),
        ties=ties,
        n=m.n,
        n_events=n_events,
        score=score,
        loglik_history=tuple(history),
        spec=spec,
    )
    object.__setattr__(fit, "baseline", breslow_baseline(fit, m))
    return fit


class HazardRatioRow(NamedTuple):
    label: str
    coef: float
    se: float
    hr: float
    wald_p: float


def wald_p(coef: float, se: float) -> float:
    if not se > 0:
        return math.nan
    return chi_square_sf((coef / se) ** 2, 1)


def hazard_ratio_table(fit: CoxFit) -> list[HazardRatioRow]:
    return [
        HazardRatioRow(name, float(c), float(s), math.exp(c), wald_p(c, s))
        for name, c, s in zip(fit.column_names, fit.coefficients, fit.standard_errors)
    ]


def _safe_exp(v):
    # divergent fits may legitimately give infinite hazard ratios
    with np.errstate(over="ignore"):
        return np.exp(v)


def breslow_baseline(fit: CoxFit, m: DesignMatrix) -> BaselineHazard:
    """Breslow increments d_j / sum over the risk set of exp(x.b)."""
    rs = _risk_sets(m)
    eta = rs.x @ fit.coefficients if m.p else np.zeros(m.n)
    times, deaths = np.unique(m.times[m.events != 0], return_counts=True)
    # risk-set sums as a running sum down the canonical descending-time order
    t_desc = m.times[rs.order]
    shift = max(float(eta.max()), 0.0) if eta.size else 0.0
    cum = np.cumsum(np.exp(eta - shift))
    last = len(t_desc) - np.searchsorted(t_desc[::-1], times, side="left") - 1
    # rescaled to avoid overflow; shift is 0 unless some exp(x.b) exceeds 1
    inc = deaths / cum[last] * math.exp(-shift)
    return BaselineHazard(times.astype(np.int64), inc, np.cumsum(inc))


@dataclass(frozen=True)
class SchoenfeldResiduals:
    times: np.ndarray  # one entry per event record
    residuals: np.ndarray  # (events, p)


def schoenfeld_residuals(fit: CoxFit, m: DesignMatrix, scaled: bool = False) -> SchoenfeldResiduals:
    """Per-event residuals x_i minus the (tie-corrected) risk-set mean.

    ``scaled`` applies the Grambsch-Therneau scaling ``b + D * r @ cov`` whose
    smoothed trend against time estimates the time-varying coefficient.
    """
    rs = _risk_sets(m)
    _, _, _, u_by_time, _ = _evaluate(rs, fit.coefficients, fit.ties == "efron", detail=True)
    times, rows = [], []
    for g in range(len(rs.times)):
        lo, hi = rs.bounds[g], rs.bounds[g + 1]
        dead = rs.events[lo:hi] != 0
        nd = int(dead.sum())
        if not nd:
            continue
        xd = rs.x[lo:hi][dead]
        mean = (xd.sum(axis=0) - u_by_time[g]) / nd
        rows.append(xd - mean)
        times.extend([rs.times[g]] * nd)
    res = np.vstack(rows) if rows else np.zeros((0, m.p))
    if scaled:
        res = fit.coefficients + len(res) * res @ fit.covariance
    return SchoenfeldResiduals(np.asarray(times, dtype=np.float64), res)


class PhRow(NamedTuple):
    label: str
    chi_square: float
    df: int
    p_value: float


@dataclass(frozen=True)
class PhTestResult:
    per_covariate: tuple[PhRow, ...]
    global_test: PhRow
    transform: str


def _time_transform(times: np.ndarray, deaths: np.ndarray, m: DesignMatrix, transform: str) -> np.ndarray:
    if transform == "identity":
        return times.astype(np.float64)
    if transform == "log":
        return np.log(times.astype(np.float64))
    if transform == "rank":
        # cumulative event count, the rank of each tied block
        return np.cumsum(deaths) - (deaths - 1) / 2.0
    if transform == "km":
        from .nonparametric import km_estimate

        t, _, _, s = km_estimate(m.times, m.events)
        s_before = np.concatenate(([1.0], s[:-1]))
        return 1.0 - s_before[np.searchsorted(t, times)]
    raise ValueError(f"unknown time transform {transform!r}")


def ph_test(fit: CoxFit, m: DesignMatrix, transform: str = "identity") -> PhTestResult:
    """Grambsch-Therneau test of proportional hazards.

    Score test, at the fitted coefficients, for adding ``x * g(t)`` terms;
    per covariate with df 1 and jointly with df equal to the covariate count.
    ``g`` is event time by default.
    """
    if m.p == 0:
        raise TestUndefinedError("model has no covariates")
    rs = _risk_sets(m)
    _, score, _, u_by_time, i_by_time = _evaluate(rs, fit.coefficients, fit.ties == "efron", detail=True)
    # blocks with deaths, in ascending time
    deaths = np.array(
        [np.count_nonzero(rs.events[rs.bounds[g] : rs.bounds[g + 1]]) for g in range(len(rs.times))]
    )
    keep = np.flatnonzero(deaths)[::-1]
    if len(keep) < 2:
        raise TestUndefinedError("fewer than 2 distinct event times")
    times = rs.times[keep]
    d = deaths[keep].astype(np.float64)
    u = u_by_time[keep]
    inf = i_by_time[keep]
    g = _time_transform(times, d, m, transform)
    g = g - np.sum(d * g) / d.sum()

    p = m.p
    u_gamma = g @ u
    i_bb = inf.sum(axis=0)
    i_bg = np.einsum("k,kij->ij", g, inf)
    i_gg = np.einsum("k,kij->ij", g * g, inf)

    def quad(idx: np.ndarray) -> float:
        uu = np.concatenate((score, u_gamma[idx]))
        top = np.hstack((i_bb, i_bg[:, idx]))
        bottom = np.hstack((i_bg[idx, :], i_gg[np.ix_(idx, idx)]))
        full = symmetrize(np.vstack((top, bottom)))
        try:
            return float(uu @ solve_spd(full, uu))
        except SingularMatrixError:
            raise TestUndefinedError("augmented information matrix is singular") from None

    rows = []
    for j, name in enumerate(m.column_names):
        stat = max(quad(np.array([j])), 0.0)
        rows.append(PhRow(name, stat, 1, chi_square_sf(stat, 1)))
    stat = max(quad(np.arange(p)), 0.0)
    return PhTestResult(tuple(rows), PhRow("GLOBAL", stat, p, chi_square_sf(stat, p)), transform)


def fit_to_dict(fit: CoxFit, ph: PhTestResult | None = None) -> dict:
    """JSON-ready fit export."""
    table = hazard_ratio_table(fit)
    out = {
        "covariates": list(fit.column_names),
        "coefficients": [r.coef for r in table],
        "standard_errors": [r.se for r in table],
        "hazard_ratios": [r.hr for r in table],
        "p_values": [r.wald_p for r in table],
        "lr": {"stat": fit.lr_stat, "df": fit.lr_df, "p": fit.lr_p},
        "log_pl_fit": fit.log_pl_fit,
        "log_pl_null": fit.log_pl_null,
        "n": fit.n,
        "n_events": fit.n_events,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "ties": fit.ties,
    }
    if ph is not None:
        out["ph_test"] = {
            "transform": ph.transform,
            "per_covariate": [
                {"covariate": r.label, "chi_square": r.chi_square, "df": r.df, "p": r.p_value} for r in ph.per_covariate
            ],
            "global": {"chi_square": ph.global_test.chi_square, "df": ph.global_test.df, "p": ph.global_test.p_value},
        }
    else:
        out["ph_test"] = None
    if fit.baseline is not None:
        out["baseline"] = {
            "time": fit.baseline.times.tolist(),
            "increment": fit.baseline.increments.tolist(),
            "cumulative": fit.baseline.cumulative.tolist(),
        }
    return out
