"""Model specifications and the seven-model coefficient grid."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .coxph import CoxFit, PhTestResult, TestUndefinedError, fit_cox, fit_to_dict, ph_test, wald_p
from .dataset import (
    BASE_COVARIATES,
    TECH_DUMMIES,
    Dataset,
    IdentifiabilityError,
    SpecError,
    encode_design,
)

ALL_WITH_REFERENCE = "all_with_reference"
REFERENCE_DUMMY = "Instrument"

# fixed row order of the grid
ROW_ORDER = BASE_COVARIATES + TECH_DUMMIES + ("OW*DSIR",)

DEFAULT_STARS = ((0.001, "***"), (0.05, "**"), (0.01, "*"))
CONVENTIONAL_STARS = ((0.01, "***"), (0.05, "**"), (0.10, "*"))

_ALIASES = {name.lower(): name for name in BASE_COVARIATES + TECH_DUMMIES}
_ALIASES.update({"instruments": "Instrument", "other": "OtherField", "otherfield": "OtherField"})


def canonical_label(label: str) -> str:
    try:
        return _ALIASES[label.strip().lower()]
    except KeyError:
        raise SpecError(f"unknown covariate {label!r}") from None


@dataclass(frozen=True)
class CoxModelSpec:
    name: str
    covariates: tuple[str, ...] = ()
    tech_dummies: tuple[str, ...] | str = ()
    interactions: tuple[tuple[str, str], ...] = ()
    ties: str = "efron"

    def __post_init__(self):
        for c in self.covariates:
            if c not in BASE_COVARIATES:
                raise SpecError(f"unknown covariate {c!r}")
        if isinstance(self.tech_dummies, str):
            if self.tech_dummies != ALL_WITH_REFERENCE:
                raise SpecError(f"tech_dummies must be a tuple or {ALL_WITH_REFERENCE!r}")
        else:
            for t in self.tech_dummies:
                if t not in TECH_DUMMIES:
                    raise SpecError(f"unknown technology dummy {t!r}")
        for a, b in self.interactions:
            for parent in (a, b):
                if parent not in BASE_COVARIATES + TECH_DUMMIES:
                    raise SpecError(f"unknown interaction parent {parent!r}")
        names = self.column_names()
        if len(set(names)) != len(names):
            raise SpecError(f"duplicate covariate labels in {names}")

    def dummies(self) -> tuple[str, ...]:
        if self.tech_dummies == ALL_WITH_REFERENCE:
            return tuple(t for t in TECH_DUMMIES if t != REFERENCE_DUMMY)
        return tuple(self.tech_dummies)

    def column_names(self) -> tuple[str, ...]:
        names = list(self.covariates) + list(self.dummies())
        names += [f"{a}*{b}" for a, b in self.interactions]
        return tuple(names)


def builtin_suite(ties: str = "efron") -> list[CoxModelSpec]:
    full = ("DSIR", "NC", "NI", "FS", "TS", "OW")
    specs = [CoxModelSpec("Model 1", ("DSIR",), ties=ties)]
    for i, tech in enumerate(TECH_DUMMIES, start=2):
        specs.append(CoxModelSpec(f"Model {i}", full, (tech,), ties=ties))
    specs.append(CoxModelSpec("Model 7", full, ALL_WITH_REFERENCE, (("OW", "DSIR"),), ties=ties))
    return specs


def stars(p: float, ladder=DEFAULT_STARS) -> str:
    """Most stars whose threshold the p-value clears."""
    if p is None or math.isnan(p):
        return ""
    for threshold, mark in sorted(ladder, key=lambda t: -len(t[1])):
        if p < threshold:
            return mark
    return ""


@dataclass(frozen=True)
class ModelOutcome:
    spec: CoxModelSpec
    fit: CoxFit | None = None
    ph: PhTestResult | None = None
    error: str | None = None
    failed_column: str | None = None


@dataclass(frozen=True)
class SuiteResult:
    outcomes: tuple[ModelOutcome, ...]
    n: int
    ladder: tuple = DEFAULT_STARS
    decimals: int = 4

    def cell(self, row: str, outcome: ModelOutcome) -> str:
        cols = outcome.spec.column_names()
        if row not in cols:
            return ""
        if outcome.fit is None:
            return "constant" if row == outcome.failed_column else "n/a"
        j = cols.index(row)
        c = outcome.fit.coefficients[j]
        s = outcome.fit.standard_errors[j]
        return f"{c:.{self.decimals}f}{stars(wald_p(c, s), self.ladder)} ({s:.{self.decimals}f})"

    def grid(self) -> list[list[str]]:
        rows_present = [r for r in ROW_ORDER if any(r in o.spec.column_names() for o in self.outcomes)]
        head = ["Variable"] + [o.spec.name for o in self.outcomes]
        out = [head]
        for r in rows_present:
            out.append([r] + [self.cell(r, o) for o in self.outcomes])
        lr = ["LR chi2(df)"]
        ph = ["PH chi2(df)"]
        nobs = ["No. of observations"]
        status = ["Status"]
        for o in self.outcomes:
            if o.fit is None:
                lr.append("")
                ph.append("")
                nobs.append("")
                status.append(f"failed: {o.error}")
                continue
            f = o.fit
            lr.append(f"{f.lr_stat:.2f}{stars(f.lr_p, self.ladder)} ({f.lr_df})")
            ph.append(f"{o.ph.global_test.chi_square:.2f} ({o.ph.global_test.df})" if o.ph else "")
            nobs.append(f"{f.n:,}")
            status.append("ok" if f.converged else "not converged")
        out += [lr, nobs, ph, status]
        return out

    def render_text(self) -> str:
        g = self.grid()
        widths = [max(len(r[i]) for r in g) for i in range(len(g[0]))]
        lines = []
        for k, r in enumerate(g):
            lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip())
            if k == 0 or k == len(g) - 5:
                lines.append("-" * len(lines[0]))
        ladder = ", ".join(f"{m} p < {t}" for t, m in self.ladder)
        lines.append(f"Standard errors in parentheses; Wald stars: {ladder}.")
        return "\n".join(lines) + "\n"

    def render_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("covariate", "model", "coef", "se", "stars"))
        for r in ROW_ORDER:
            for o in self.outcomes:
                cols = o.spec.column_names()
                if r not in cols or o.fit is None:
                    continue
                j = cols.index(r)
                c = float(o.fit.coefficients[j])
                s = float(o.fit.standard_errors[j])
                w.writerow((r, o.spec.name, repr(c), repr(s), stars(wald_p(c, s), self.ladder)))
        return buf.getvalue()

    def to_dict(self) -> dict:
        models = []
        for o in self.outcomes:
            entry = {"model": o.spec.name, "columns": list(o.spec.column_names())}
            if o.fit is None:
                entry.update({"error": o.error, "failed_column": o.failed_column})
            else:
                entry["fit"] = fit_to_dict(o.fit, o.ph)
            models.append(entry)
        return {"n": self.n, "models": models}


def _run_one(d: Dataset, spec: CoxModelSpec) -> ModelOutcome:
    try:
        m = encode_design(d, spec)
        fit = fit_cox(m, ties=spec.ties, spec=spec)
    except IdentifiabilityError as exc:
        return ModelOutcome(spec, error=str(exc), failed_column=exc.column)
    try:
        ph = ph_test(fit, m)
    except TestUndefinedError:
        ph = None
    return ModelOutcome(spec, fit, ph)


def run_suite(
    d: Dataset,
    specs: Sequence[CoxModelSpec] | None = None,
    ladder=DEFAULT_STARS,
    workers: int = 1,
) -> SuiteResult:
    """Fit every spec independently; identifiability failures stay in their column."""
    if len(d) == 0:
        raise ValueError("empty dataset")
    specs = list(builtin_suite() if specs is None else specs)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(lambda s: _run_one(d, s), specs))
    else:
        outcomes = [_run_one(d, s) for s in specs]
    return SuiteResult(tuple(outcomes), len(d), tuple(ladder))
