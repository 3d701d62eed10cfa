"""Synthetic right-censored patent cohorts drawn from a known Cox model.

Latent durations come from inverse-transform sampling of
``S(t | x) = exp(-H0(t) exp(x.b))`` and are rounded up to whole years.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .dataset import (
    BASE_COVARIATES,
    MAX_YEARS,
    TECH_CODES,
    TECH_DUMMIES,
    TECH_LABELS,
    Dataset,
    PatentRecord,
)

RNG_ALGORITHM = "numpy.PCG64"

MODEL1_TRUTH = {"DSIR": 0.330}
MODEL7_TRUTH = {
    "DSIR": 0.305,
    "NC": 0.001,
    "NI": 0.017,
    "FS": 0.000,
    "TS": -0.014,
    "OW": 0.344,
    "Electrical": -0.348,
    "Chemistry": 0.044,
    "Mechanical": -0.294,
    "OtherField": -0.263,
    "OW*DSIR": -0.633,
}

# draw order is part of the reproducibility contract
GENERATOR_ORDER = ("DSIR", "OW", "NC", "NI", "FS", "TS", "tech")

DEFAULT_GENERATORS: dict[str, dict[str, Any]] = {
    "DSIR": {"dist": "bernoulli", "p": 0.5},
    "OW": {"dist": "bernoulli", "p": 0.15},
    "NC": {"dist": "poisson", "mean": 14.0, "offset": 1},
    "NI": {"dist": "poisson", "mean": 2.5, "offset": 1},
    "FS": {"dist": "poisson", "mean": 3.0, "offset": 1},
    "TS": {"dist": "poisson", "mean": 1.2, "offset": 1},
    "tech": {
        "dist": "categorical",
        "probs": {"chemistry": 0.40, "electrical": 0.12, "mechanical": 0.18, "instruments": 0.18, "other": 0.12},
    },
}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class Baseline:
    """Baseline cumulative hazard ``H0(t) = (rate * t) ** shape``.

    ``kind="exponential"`` fixes ``shape = 1``. For Weibull the JSON field
    ``scale`` carries the rate.
    """

    kind: str = "exponential"
    rate: float = 0.08
    shape: float = 1.0

    def cumulative(self, t):
        return (self.rate * np.asarray(t, dtype=np.float64)) ** self.shape

    def inverse(self, h):
        return np.asarray(h, dtype=np.float64) ** (1.0 / self.shape) / self.rate

    def to_dict(self) -> dict:
        if self.kind == "exponential":
            return {"kind": "exponential", "rate": self.rate}
        return {"kind": "weibull", "shape": self.shape, "scale": self.rate}


@dataclass(frozen=True)
class TimeVaryingEffect:
    """Coefficient of ``label`` switches to ``after`` once ``change_year`` is passed."""

    change_year: float
    after: float


@dataclass(frozen=True)
class SimConfig:
    n: int = 2025
    true_coefficients: dict[str, float] = field(default_factory=lambda: dict(MODEL1_TRUTH))
    baseline: Baseline = Baseline()
    covariate_generators: dict[str, dict[str, Any]] = field(default_factory=dict)
    admin_censor_year: int = MAX_YEARS
    collection_year: int | None = None
    filing_year_range: tuple[int, int] = (1995, 2005)
    n_firms: int = 266
    time_varying: dict[str, TimeVaryingEffect] = field(default_factory=dict)
    seed: int = 0

    def generators(self) -> dict[str, dict[str, Any]]:
        merged = {k: dict(v) for k, v in DEFAULT_GENERATORS.items()}
        for k, v in self.covariate_generators.items():
            merged[k] = dict(v)
        return merged

    def validate(self) -> "SimConfig":
        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigError("n", "must be a positive integer")
        b = self.baseline
        if b.kind not in ("exponential", "weibull"):
            raise ConfigError("baseline.kind", "must be 'exponential' or 'weibull'")
        if not (isinstance(b.rate, (int, float)) and b.rate > 0 and math.isfinite(b.rate)):
            raise ConfigError("baseline.rate" if b.kind == "exponential" else "baseline.scale", "must be > 0")
        if not b.shape > 0:
            raise ConfigError("baseline.shape", "must be > 0")
        if b.kind == "exponential" and b.shape != 1.0:
            raise ConfigError("baseline.shape", "exponential baseline has shape 1")
        if not 1 <= self.admin_censor_year <= MAX_YEARS:
            raise ConfigError("admin_censor_year", f"must lie in [1,{MAX_YEARS}]")
        lo, hi = self.filing_year_range
        if lo > hi:
            raise ConfigError("filing_year_range", "start after end")
        if self.collection_year is not None and self.collection_year <= hi:
            raise ConfigError("collection_year", "must be after the last filing year")
        if self.n_firms < 1:
            raise ConfigError("n_firms", "must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")

        gens = self.generators()
        for label in GENERATOR_ORDER:
            _check_generator(label, gens[label])
        for label in gens:
            if label not in GENERATOR_ORDER:
                raise ConfigError(f"covariate_generators.{label}", "unknown covariate")
        for label, value in self.true_coefficients.items():
            _coefficient_parents(label)
            if not math.isfinite(value):
                raise ConfigError(f"true_coefficients.{label}", "must be finite")
        for label, tv in self.time_varying.items():
            _coefficient_parents(label)
            if not tv.change_year > 0:
                raise ConfigError(f"time_varying.{label}.change_year", "must be > 0")
        return self

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "true_coefficients": dict(self.true_coefficients),
            "baseline": self.baseline.to_dict(),
            "covariate_generators": self.generators(),
            "admin_censor_year": self.admin_censor_year,
            "collection_year": self.collection_year,
            "filing_year_range": list(self.filing_year_range),
            "n_firms": self.n_firms,
            "time_varying": {k: asdict(v) for k, v in self.time_varying.items()},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        known = {
            "n",
            "true_coefficients",
            "baseline",
            "covariate_generators",
            "admin_censor_year",
            "collection_year",
            "filing_year_range",
            "n_firms",
            "time_varying",
            "seed",
        }
        for key in raw:
            if key not in known:
                raise ConfigError(key, "unknown field")
        kwargs: dict[str, Any] = {}
        for key in ("n", "admin_censor_year", "collection_year", "n_firms", "seed"):
            if key in raw:
                v = raw[key]
                if v is not None and (not isinstance(v, int) or isinstance(v, bool)):
                    raise ConfigError(key, "must be an integer")
                kwargs[key] = v
        if "true_coefficients" in raw:
            tc = raw["true_coefficients"]
            if not isinstance(tc, dict):
                raise ConfigError("true_coefficients", "must be an object")
            try:
                kwargs["true_coefficients"] = {str(k): float(v) for k, v in tc.items()}
            except (TypeError, ValueError):
                raise ConfigError("true_coefficients", "values must be numbers") from None
        if "baseline" in raw:
            kwargs["baseline"] = _parse_baseline(raw["baseline"])
        if "covariate_generators" in raw:
            if not isinstance(raw["covariate_generators"], dict):
                raise ConfigError("covariate_generators", "must be an object")
            kwargs["covariate_generators"] = raw["covariate_generators"]
        if "filing_year_range" in raw:
            fy = raw["filing_year_range"]
            if not (isinstance(fy, list) and len(fy) == 2 and all(isinstance(v, int) for v in fy)):
                raise ConfigError("filing_year_range", "must be [first, last] integers")
            kwargs["filing_year_range"] = (fy[0], fy[1])
        if "time_varying" in raw:
            tv = {}
            for label, spec in (raw["time_varying"] or {}).items():
                try:
                    tv[label] = TimeVaryingEffect(float(spec["change_year"]), float(spec["after"]))
                except (KeyError, TypeError, ValueError):
                    raise ConfigError(f"time_varying.{label}", "needs numeric change_year and after") from None
            kwargs["time_varying"] = tv
        return cls(**kwargs).validate()

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<document>", f"invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("<document>", "must be a JSON object")
        return cls.from_dict(raw)


def _parse_baseline(raw) -> Baseline:
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError("baseline", "must be an object with a 'kind'")
    kind = raw["kind"]
    try:
        if kind == "exponential":
            return Baseline("exponential", float(raw["rate"]), 1.0)
        if kind == "weibull":
            return Baseline("weibull", float(raw["scale"]), float(raw["shape"]))
    except KeyError as exc:
        raise ConfigError(f"baseline.{exc.args[0]}", "missing") from None
    except (TypeError, ValueError):
        raise ConfigError("baseline", "parameters must be numbers") from None
    raise ConfigError("baseline.kind", "must be 'exponential' or 'weibull'")


def _check_generator(label: str, g: dict) -> None:
    where = f"covariate_generators.{label}"
    dist = g.get("dist")
    if label in ("DSIR", "OW"):
        if dist != "bernoulli" or not 0.0 <= float(g.get("p", -1)) <= 1.0:
            raise ConfigError(where, "expected bernoulli with p in [0,1]")
    elif label == "tech":
        probs = g.get("probs")
        if dist != "categorical" or not isinstance(probs, dict):
            raise ConfigError(where, "expected categorical with a probs object")
        for code, p in probs.items():
            if code not in TECH_LABELS:
                raise ConfigError(where, f"unknown technology {code!r}")
            if not 0.0 <= float(p) <= 1.0:
                raise ConfigError(where, "probabilities must lie in [0,1]")
        if abs(sum(float(p) for p in probs.values()) - 1.0) > 1e-9:
            raise ConfigError(where, "probabilities must sum to 1")
    else:
        if dist != "poisson" or not float(g.get("mean", -1)) >= 0:
            raise ConfigError(where, "expected poisson with mean >= 0")
        offset = int(g.get("offset", 0))
        if offset < 0 or (label == "TS" and offset < 1):
            raise ConfigError(where, "offset must be >= 0 (>= 1 for TS)")


def _coefficient_parents(label: str) -> tuple[str, ...]:
    """Generator variables a coefficient label depends on."""
    if "*" in label:
        parts = label.split("*")
        if len(parts) != 2:
            raise ConfigError(f"true_coefficients.{label}", "interactions have exactly two parents")
        return tuple(p for part in parts for p in _coefficient_parents(part))
    if label in BASE_COVARIATES:
        return (label,)
    if label in TECH_DUMMIES:
        return ("tech",)
    raise ConfigError(f"true_coefficients.{label}", "no generator for this covariate")


def _label_value(label: str, draws: dict[str, np.ndarray]) -> np.ndarray:
    if "*" in label:
        a, b = label.split("*")
        return _label_value(a, draws) * _label_value(b, draws)
    if label in TECH_DUMMIES:
        return (draws["tech"] == TECH_CODES[label]).astype(np.float64)
    return draws[label].astype(np.float64)


def _predictors(cfg: SimConfig, draws: dict[str, np.ndarray], n: int) -> tuple[np.ndarray, np.ndarray]:
    """Linear predictors before and after any coefficient change."""
    before = np.zeros(n)
    after = np.zeros(n)
    for label, b in cfg.true_coefficients.items():
        v = _label_value(label, draws)
        before += b * v
        tv = cfg.time_varying.get(label)
        after += (tv.after if tv else b) * v
    for label, tv in cfg.time_varying.items():
        if label not in cfg.true_coefficients:
            after += tv.after * _label_value(label, draws)
    return before, after


def _change_year(cfg: SimConfig) -> float:
    years = {tv.change_year for tv in cfg.time_varying.values()}
    if len(years) > 1:
        raise ConfigError("time_varying", "all effects must share one change_year")
    return years.pop() if years else math.inf


def latent_durations(cfg: SimConfig, unit_exp: np.ndarray, before: np.ndarray, after: np.ndarray) -> np.ndarray:
    """Invert the piecewise cumulative hazard at Exp(1) draws."""
    base = cfg.baseline
    tau = _change_year(cfg)
    target = unit_exp * np.exp(-before)
    if math.isinf(tau):
        return base.inverse(target)
    h_tau = float(base.cumulative(tau))
    late = target > h_tau
    out = base.inverse(target)
    h_late = h_tau + (unit_exp[late] - h_tau * np.exp(before[late])) * np.exp(-after[late])
    out[late] = base.inverse(h_late)
    return out


def _draw_covariates(cfg: SimConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    gens = cfg.generators()
    n = cfg.n
    draws = {}
    for label in GENERATOR_ORDER:
        g = gens[label]
        if g["dist"] == "bernoulli":
            draws[label] = (rng.random(n) < float(g["p"])).astype(np.int64)
        elif g["dist"] == "poisson":
            draws[label] = int(g.get("offset", 0)) + rng.poisson(float(g["mean"]), n).astype(np.int64)
        else:
            codes = list(TECH_LABELS)
            probs = np.array([float(g["probs"].get(c, 0.0)) for c in codes])
            idx = rng.choice(len(codes), size=n, p=probs / probs.sum())
            draws[label] = np.array(codes, dtype=object)[idx]
    return draws


def simulate(cfg: SimConfig) -> Dataset:
    """Draw a cohort; identical configs (including seed) give identical datasets."""
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n = cfg.n
    draws = _draw_covariates(cfg, rng)
    lo, hi = cfg.filing_year_range
    filing = rng.integers(lo, hi + 1, size=n)
    firms = rng.integers(0, cfg.n_firms, size=n)
    unit_exp = rng.standard_exponential(n)

    before, after = _predictors(cfg, draws, n)
    latent = latent_durations(cfg, unit_exp, before, after)
    years = np.maximum(np.ceil(latent), 1).astype(np.int64)
    cap = np.full(n, cfg.admin_censor_year, dtype=np.int64)
    if cfg.collection_year is not None:
        cap = np.clip(cfg.collection_year - filing, 1, cfg.admin_censor_year)
    censored = years > cap
    survival = np.where(censored, cap, years)
    event = (~censored).astype(np.int64)

    width = max(6, len(str(n)))
    records = tuple(
        PatentRecord(
            id=f"P{i + 1:0{width}d}",
            filing_year=int(filing[i]),
            survival_years=int(survival[i]),
            event=int(event[i]),
            nc=int(draws["NC"][i]),
            ni=int(draws["NI"][i]),
            fs=int(draws["FS"][i]),
            ts=int(draws["TS"][i]),
            dsir=int(draws["DSIR"][i]),
            ow=int(draws["OW"][i]),
            tech=str(draws["tech"][i]),
            firm_id=f"F{int(firms[i]) + 1:04d}",
        )
        for i in range(n)
    )
    return Dataset(records, f"simulated:{RNG_ALGORITHM}:seed={cfg.seed}")


def _support(label: str, g: dict, tail: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    """Values and probabilities of one generator; Poisson support is truncated at ``tail``."""
    if g["dist"] == "bernoulli":
        p = float(g["p"])
        return np.array([0, 1], dtype=object), np.array([1.0 - p, p])
    if g["dist"] == "categorical":
        codes = list(TECH_LABELS)
        return np.array(codes, dtype=object), np.array([float(g["probs"].get(c, 0.0)) for c in codes])
    mean = float(g["mean"])
    offset = int(g.get("offset", 0))
    if mean == 0:
        return np.array([offset], dtype=object), np.array([1.0])
    pmf = [math.exp(-mean)]
    k = 0
    while True:
        k += 1
        pmf.append(pmf[-1] * mean / k)
        if k > mean and 1.0 - sum(pmf) < tail:
            break
    probs = np.array(pmf)
    return np.array([offset + i for i in range(len(pmf))], dtype=object), probs / probs.sum()


def predictor_distribution(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact law of the (before, after) linear predictors over the covariate generators.

    Generator variables linked through an interaction are enumerated jointly;
    independent blocks are convolved. Returns ``(before, after, prob)``.
    """
    gens = cfg.generators()
    labels = set(cfg.true_coefficients) | set(cfg.time_varying)
    parents = {lab: _coefficient_parents(lab) for lab in labels}

    # union-find over generator variables
    root = {v: v for v in GENERATOR_ORDER}

    def find(v):
        while root[v] != v:
            v = root[v]
        return v

    for ps in parents.values():
        for a in ps[1:]:
            root[find(a)] = find(ps[0])
    blocks: dict[str, list[str]] = {}
    for v in GENERATOR_ORDER:
        if any(v in ps for ps in parents.values()):
            blocks.setdefault(find(v), []).append(v)

    vals_b = np.zeros(1)
    vals_a = np.zeros(1)
    prob = np.ones(1)
    for members in blocks.values():
        supports = [_support(v, gens[v]) for v in members]
        grids = np.meshgrid(*[np.arange(len(s[0])) for s in supports], indexing="ij")
        flat = [g.ravel() for g in grids]
        draws = {v: s[0][idx] for v, s, idx in zip(members, supports, flat)}
        p_block = np.prod([s[1][idx] for s, idx in zip(supports, flat)], axis=0)
        draws = {v: (a if v == "tech" else a.astype(np.float64)) for v, a in draws.items()}
        m = len(p_block)
        blk_b = np.zeros(m)
        blk_a = np.zeros(m)
        for lab in labels:
            if not set(parents[lab]) <= set(members):
                continue
            v = _label_value(lab, draws)
            b = cfg.true_coefficients.get(lab, 0.0)
            tv = cfg.time_varying.get(lab)
            blk_b += b * v
            blk_a += (tv.after if tv else b) * v
        keep = p_block > 0
        blk_b, blk_a, p_block = blk_b[keep], blk_a[keep], p_block[keep]
        vals_b = (vals_b[:, None] + blk_b[None, :]).ravel()
        vals_a = (vals_a[:, None] + blk_a[None, :]).ravel()
        prob = (prob[:, None] * p_block[None, :]).ravel()
        # merge identical predictor pairs to keep the support small
        key = np.round(np.column_stack((vals_b, vals_a)), 12)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        prob = np.bincount(inv.ravel(), weights=prob, minlength=len(uniq))
        vals_b, vals_a = uniq[:, 0], uniq[:, 1]
    return vals_b, vals_a, prob


def survival_probability(cfg: SimConfig, t, before, after) -> np.ndarray:
    """P(T > t) for records with the given predictors."""
    base = cfg.baseline
    tau = _change_year(cfg)
    t = np.asarray(t, dtype=np.float64)
    before = np.asarray(before, dtype=np.float64)
    after = np.asarray(after, dtype=np.float64)
    h = base.cumulative(t)
    if math.isinf(tau):
        return np.exp(-h * np.exp(before))
    h_tau = float(base.cumulative(tau))
    early = t <= tau
    cum = np.where(early, h * np.exp(before), h_tau * np.exp(before) + (h - h_tau) * np.exp(after))
    return np.exp(-cum)


def truth_report(cfg: SimConfig) -> dict:
    """Ground truth for a config: coefficients, S(t) at x = 0, expected censoring fraction."""
    cfg.validate()
    years = np.arange(1, cfg.admin_censor_year + 1)
    s0 = np.exp(-cfg.baseline.cumulative(years))
    before, after, prob = predictor_distribution(cfg)
    lo, hi = cfg.filing_year_range
    if cfg.collection_year is None:
        caps = np.array([cfg.admin_censor_year])
    else:
        caps = np.clip(cfg.collection_year - np.arange(lo, hi + 1), 1, cfg.admin_censor_year)
    censor = float(np.mean([np.sum(prob * survival_probability(cfg, c, before, after)) for c in caps]))
    return {
        "true_coefficients": dict(cfg.true_coefficients),
        "time_varying": {k: asdict(v) for k, v in cfg.time_varying.items()},
        "baseline": cfg.baseline.to_dict(),
        "baseline_survival": {int(t): float(s) for t, s in zip(years, s0)},
        "expected_censoring_fraction": censor,
        "n": cfg.n,
        "seed": cfg.seed,
        "rng": RNG_ALGORITHM,
    }
