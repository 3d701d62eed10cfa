"""Command-line interface: ``patentsurv validate|km|logrank|cox|suite|simulate``.

Human-readable summaries go to stdout (stderr with ``--quiet``); CSV and JSON
only ever go to files, or to stdout under ``--quiet`` when no path is given.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .coxph import TestUndefinedError, fit_cox, fit_to_dict, hazard_ratio_table, ph_test
from .dataset import (
    TECH_DUMMIES,
    DatasetError,
    IdentifiabilityError,
    SpecError,
    dump_dataset,
    encode_design,
    load_dataset,
    validate,
)
from .model_suite import (
    ALL_WITH_REFERENCE,
    CONVENTIONAL_STARS,
    DEFAULT_STARS,
    CoxModelSpec,
    builtin_suite,
    canonical_label,
    run_suite,
)
from .nonparametric import EmptyGroupError, fit_km, log_rank_test, write_curves
from .simulator import ConfigError, SimConfig, simulate, truth_report

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class CommandOutcome:
    exit_code: int = EXIT_OK
    artifacts: list[str] = field(default_factory=list)
    summary: str = ""
    payload: str | None = None  # machine-readable text destined for stdout under --quiet


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def to_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2) + "\n"


def _write(path: str | Path, text: str, outcome: CommandOutcome) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    outcome.artifacts.append(str(path))


def _read_dataset(path: str):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    with p.open("rb") as fh:
        return load_dataset(fh, provenance=str(p))


def cmd_validate(input: str) -> CommandOutcome:
    p = Path(input)
    if not p.is_file():
        raise UsageError(f"no such file: {input}")
    try:
        with p.open("rb") as fh:
            d = load_dataset(fh, strict=False, provenance=str(p))
    except DatasetError as exc:
        return CommandOutcome(EXIT_FAIL, summary=f"INVALID: {exc}")
    report = validate(d)
    if report.ok:
        return CommandOutcome(EXIT_OK, summary=f"OK: {len(d)} records")
    lines = [f"INVALID: {len(report)} problem(s) in {len(d)} records"] + [str(i) for i in report]
    return CommandOutcome(EXIT_FAIL, summary="\n".join(lines))


def cmd_km(input: str, group_by: str | None = None, level: float = 0.95, out: str | None = None) -> CommandOutcome:
    d = _read_dataset(input)
    if group_by is not None and group_by.lower() not in ("dsir", "ow", "tech"):
        raise UsageError(f"unknown group label {group_by!r}; expected dsir, ow or tech")
    if not 0 < level < 1:
        raise UsageError("--level must lie in (0, 1)")
    try:
        curves = fit_km(d, group_by, level)
    except EmptyGroupError as exc:
        return CommandOutcome(EXIT_FAIL, summary=str(exc))
    outcome = CommandOutcome()
    text = write_curves(curves)
    if out:
        _write(out, text, outcome)
    else:
        outcome.payload = text
    lines = []
    for c in curves:
        med = c.median()
        lines.append(f"{c.group_label}: n = {c.n_total}, events = {int(c.n_events.sum())}, "
                     f"median survival = {'not reached' if med is None else f'{med} years'}")
    outcome.summary = "\n".join(lines)
    return outcome


def cmd_logrank(input: str, group_by: str) -> CommandOutcome:
    d = _read_dataset(input)
    if group_by.lower() not in ("dsir", "ow", "tech"):
        raise UsageError(f"unknown group label {group_by!r}; expected dsir, ow or tech")
    try:
        res = log_rank_test(d, group_by)
    except TestUndefinedError as exc:
        return CommandOutcome(EXIT_FAIL, summary=f"test undefined: {exc}")
    lines = [f"{g.label}: observed = {g.observed:.0f}, expected = {g.expected:.4f}" for g in res.per_group]
    lines.append(f"chi2({res.df}) = {res.chi_square:.4f}, p = {res.p_value:.4f}")
    payload = to_json({
        "chi_square": res.chi_square,
        "df": res.df,
        "p_value": res.p_value,
        "per_group": [g._asdict() for g in res.per_group],
    })
    return CommandOutcome(EXIT_OK, summary="\n".join(lines), payload=payload)


def _split(items: list[str] | None) -> list[str]:
    out = []
    for item in items or []:
        out.extend(s for s in item.split(",") if s.strip())
    return out


def build_spec(covariates: list[str], interactions: list[str], ties: str, name: str = "cli") -> CoxModelSpec:
    base, dummies = [], []
    use_all = False
    for c in covariates:
        if c.strip().lower() == "tech":
            use_all = True
            continue
        label = canonical_label(c)
        (dummies if label in TECH_DUMMIES else base).append(label)
    pairs = []
    for term in interactions:
        parts = term.split("*")
        if len(parts) != 2:
            raise SpecError(f"interaction {term!r} must look like a*b")
        pairs.append((canonical_label(parts[0]), canonical_label(parts[1])))
    if use_all and dummies:
        raise SpecError("give either 'tech' or individual technology dummies, not both")
    tech = ALL_WITH_REFERENCE if use_all else tuple(dummies)
    return CoxModelSpec(name, tuple(base), tech, tuple(pairs), ties)


def cmd_cox(
    input: str,
    covariates: list[str],
    interactions: list[str] | None = None,
    ties: str = "efron",
    json_path: str | None = None,
    tol: float = 1e-9,
    max_iter: int = 100,
) -> CommandOutcome:
    d = _read_dataset(input)
    try:
        spec = build_spec(_split(covariates), _split(interactions), ties)
    except SpecError as exc:
        raise UsageError(str(exc)) from None
    if not spec.column_names():
        raise UsageError("no covariates given")
    try:
        m = encode_design(d, spec)
        fit = fit_cox(m, ties=ties, tol=tol, max_iter=max_iter, spec=spec)
    except IdentifiabilityError as exc:
        return CommandOutcome(EXIT_FAIL, summary=f"not identifiable: {exc}")
    try:
        ph = ph_test(fit, m)
    except TestUndefinedError:
        ph = None

    rows = hazard_ratio_table(fit)
    width = max(len("covariate"), *(len(r.label) for r in rows))
    lines = [f"{'covariate'.ljust(width)}  {'coef':>9}  {'se':>9}  {'HR':>9}  {'p':>9}"]
    for r in rows:
        lines.append(f"{r.label.ljust(width)}  {r.coef:9.4f}  {r.se:9.4f}  {r.hr:9.4f}  {r.wald_p:9.4f}")
    lines.append(f"LR chi2({fit.lr_df}) = {fit.lr_stat:.4f}, p = {fit.lr_p:.4g}; n = {fit.n}, events = {fit.n_events}, "
                 f"ties = {fit.ties}, iterations = {fit.iterations}{'' if fit.converged else ' (NOT CONVERGED)'}")
    if ph is not None:
        lines.append(f"PH test (global) chi2({ph.global_test.df}) = {ph.global_test.chi_square:.4f}, p = {ph.global_test.p_value:.4f}")
    outcome = CommandOutcome(EXIT_OK if fit.converged else EXIT_FAIL, summary="\n".join(lines))
    text = to_json(fit_to_dict(fit, ph))
    if json_path:
        _write(json_path, text, outcome)
    else:
        outcome.payload = text
    return outcome


def cmd_suite(input: str, out_dir: str | None = None, conventional: bool = False, ties: str = "efron") -> CommandOutcome:
    d = _read_dataset(input)
    result = run_suite(d, builtin_suite(ties), CONVENTIONAL_STARS if conventional else DEFAULT_STARS)
    text = result.render_text()
    outcome = CommandOutcome(summary=text.rstrip("\n"))
    if out_dir:
        od = Path(out_dir)
        _write(od / "suite.txt", text, outcome)
        _write(od / "suite.csv", result.render_csv(), outcome)
        full = result.to_dict()
        _write(od / "suite.json", to_json(full), outcome)
        for i, entry in enumerate(full["models"], start=1):
            _write(od / f"model_{i}.json", to_json(entry), outcome)
    else:
        outcome.payload = result.render_csv()
    if not any(o.fit is not None for o in result.outcomes):
        outcome.exit_code = EXIT_FAIL
    return outcome


def cmd_simulate(config: str | None = None, out: str | None = None, seed: int | None = None) -> CommandOutcome:
    if config is not None:
        p = Path(config)
        if not p.is_file():
            raise UsageError(f"no such file: {config}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config: invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config: must be a JSON object")
    else:
        raw = {}
    if seed is not None:
        raw["seed"] = seed
    try:
        cfg = SimConfig.from_dict(raw)
    except ConfigError as exc:
        raise UsageError(f"config error: {exc}") from None
    d = simulate(cfg)
    text = dump_dataset(d)
    truth = truth_report(cfg)
    outcome = CommandOutcome(
        summary=f"simulated {len(d)} records ({int(d.events.sum())} events), seed {cfg.seed}, "
                f"expected censoring {truth['expected_censoring_fraction']:.4f}"
    )
    if out:
        _write(out, text, outcome)
        truth_path = Path(out).with_suffix(".truth.json")
        _write(truth_path, to_json(truth), outcome)
    else:
        outcome.payload = text
    return outcome


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patentsurv", description=__doc__.splitlines()[0])
    parser.add_argument("--quiet", action="store_true", help="prose to stderr; CSV/JSON to stdout when no output path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a cohort CSV")
    p.add_argument("input")

    p = sub.add_parser("km", help="Kaplan-Meier curves")
    p.add_argument("input")
    p.add_argument("--group-by")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out")

    p = sub.add_parser("logrank", help="log-rank test between groups")
    p.add_argument("input")
    p.add_argument("--group-by", required=True)

    p = sub.add_parser("cox", help="fit a Cox proportional-hazards model")
    p.add_argument("input")
    p.add_argument("--covariates", action="append", required=True, help="comma-separated; 'tech' adds all dummies vs Instruments")
    p.add_argument("--interactions", action="append", help="comma-separated a*b terms")
    p.add_argument("--ties", choices=("efron", "breslow"), default="efron")
    p.add_argument("--json", dest="json_path")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=100)

    p = sub.add_parser("suite", help="fit Models 1-7 and render the coefficient grid")
    p.add_argument("input")
    p.add_argument("--out-dir")
    p.add_argument("--conventional-stars", action="store_true", help="use the 0.01/0.05/0.10 ladder")
    p.add_argument("--ties", choices=("efron", "breslow"), default="efron")

    p = sub.add_parser("simulate", help="draw a synthetic cohort")
    p.add_argument("config", nargs="?")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    return parser


def run(args: argparse.Namespace) -> CommandOutcome:
    if args.command == "validate":
        return cmd_validate(args.input)
    if args.command == "km":
        return cmd_km(args.input, args.group_by, args.level, args.out)
    if args.command == "logrank":
        return cmd_logrank(args.input, args.group_by)
    if args.command == "cox":
        return cmd_cox(args.input, args.covariates, args.interactions, args.ties, args.json_path, args.tol, args.max_iter)
    if args.command == "suite":
        return cmd_suite(args.input, args.out_dir, args.conventional_stars, args.ties)
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, args.seed)
    raise UsageError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    prose = sys.stderr if args.quiet else sys.stdout
    try:
        outcome = run(args)
    except UsageError as exc:
        print(f"patentsurv {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FloatingPointError) as exc:
        print(f"patentsurv {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if outcome.summary:
        print(outcome.summary, file=prose)
    for path in outcome.artifacts:
        print(f"wrote {path}", file=prose)
    if args.quiet and outcome.payload is not None:
        sys.stdout.write(outcome.payload)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
