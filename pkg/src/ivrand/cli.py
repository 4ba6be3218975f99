"""Command-line entry point: ``analyze``, ``simulate`` and ``sensitivity``.

Exit codes: 0 success (empty or unbounded intervals included), 2 invalid
input or config, 3 column names that do not resolve. Reports go to stdout,
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ivrand.almost_exact import almost_exact_ci
from ivrand.asymptotic import bloom_ci, tsls_ci
from ivrand.core import InferenceResult, IvDataset, validate_dataset
from ivrand.covariate_adjust import adjusted_dataset
from ivrand.errors import EnumerationTooLarge, IVError
from ivrand.exact import exact_ci
from ivrand.permutation import PermutationEngine
from ivrand.rank import rank_ci
from ivrand.sensitivity import gamma_sweep, sensitivity_value
from ivrand.sim_harness import SimulationConfig, correction_sweep, coverage_experiment, sweep_csv

__all__ = ["main", "build_parser", "read_columns", "result_to_json", "parse_config"]

EXIT_OK, EXIT_INVALID, EXIT_COLUMNS = 0, 2, 3
DEFAULT_METHODS = ("almost_exact", "tsls", "bloom", "rank", "exact")


class ColumnError(Exception):
    """A requested column is not in the CSV header."""


class InputError(Exception):
    """Unreadable file or malformed content."""


def read_columns(path: str, names: Sequence[str]) -> dict[str, np.ndarray]:
    """Read the named numeric columns from a CSV file with a header row."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise InputError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    missing = [n for n in names if n not in header]
    if missing:
        raise ColumnError(f"columns not found in {path}: {', '.join(missing)} (have: {', '.join(header)})")
    idx = {n: header.index(n) for n in names}
    out: dict[str, list[float]] = {n: [] for n in names}
    for lineno, row in enumerate(rows[1:], start=2):
        if not any(cell.strip() for cell in row):
            continue
        for n, j in idx.items():
            cell = row[j].strip() if j < len(row) else ""
            if cell == "":
                raise InputError(f"line {lineno}: empty cell in column {n!r}")
            try:
                out[n].append(float(cell))
            except ValueError:
                raise InputError(f"line {lineno}: non-numeric value {cell!r} in column {n!r}") from None
    return {n: np.asarray(v, dtype=float) for n, v in out.items()}


def _enc(x: Optional[float]):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


def result_to_json(res: InferenceResult, runtime_ms: float) -> dict:
    d = res.diagnostics
    a, b, c = d.abc if d.abc is not None else (None, None, None)
    return {
        "method": res.method,
        "point": _enc(res.point),
        "interval": res.interval.to_dict(),
        "alpha": res.alpha,
        "diagnostics": {
            "t_stat": _enc(d.instrument_t),
            "c_factor": _enc(d.c_factor),
            "a": _enc(a),
            "b": _enc(b),
            "c": _enc(c),
            "delta_hat": _enc(d.delta_hat),
        },
        "runtime_ms": round(runtime_ms, 3),
    }


def _fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, str):
        return x
    return f"{x:.4g}"


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()  # noqa: E731
    return "\n".join([line(header), line(["-" * w for w in widths]), *(line(r) for r in rows)])


def _footnote(res: InferenceResult) -> Optional[str]:
    iv = res.interval
    t = res.diagnostics.instrument_t
    t_txt = "NA" if t is None or math.isnan(t) else f"{t:.3g}"
    if iv.is_infinite:
        return (
            f"{res.method}: unbounded set ({iv.kind}); instrument t = {t_txt}. "
            "The data carry little information about the effect."
        )
    if iv.kind == "empty":
        return f"{res.method}: empty set; no effect value is compatible with the data at this alpha (instrument t = {t_txt})."
    return None


# ---------------------------------------------------------------- analyze


def _engine(args, forced_mc: bool = False) -> PermutationEngine:
    return PermutationEngine(
        mode="monte_carlo" if forced_mc else "auto",
        draws=args.draws,
        seed=args.seed,
        enumeration_cap=args.enum_cap,
    )


def _load_dataset(args) -> IvDataset:
    covs = [c.strip() for c in args.covariates.split(",") if c.strip()] if args.covariates else []
    cols = read_columns(args.csv, [args.outcome, args.treatment, args.instrument, *covs])
    ds = validate_dataset(cols[args.outcome], cols[args.treatment], cols[args.instrument])
    if covs:
        ds = adjusted_dataset(ds, np.column_stack([cols[c] for c in covs]))
    return ds


def _method_runners(args, ds: IvDataset) -> list[tuple[str, Callable[[], InferenceResult]]]:
    wanted = [m.strip() for m in args.method.split(",")] if args.method else list(DEFAULT_METHODS)
    unknown = [m for m in wanted if m not in DEFAULT_METHODS]
    if unknown:
        raise InputError(f"unknown method(s): {', '.join(unknown)}")
    eng = _engine(args)
    runners = []
    for m in wanted:
        if m == "almost_exact":
            runners.append((m, lambda: almost_exact_ci(ds, args.alpha)))
        elif m == "tsls":
            runners.append((m, lambda: tsls_ci(ds, args.alpha)))
        elif m == "bloom":
            runners.append((m, lambda: bloom_ci(ds, args.alpha)))
        elif m == "rank":
            runners.append((m, lambda: rank_ci(ds, args.alpha, eng)))
        elif m == "exact":
            if args.exact:
                runners.append((m, lambda: exact_ci(ds, args.alpha, _engine(args, forced_mc=True))))
            elif math.comb(ds.n, ds.n1) <= args.enum_cap:
                runners.append((m, lambda: exact_ci(ds, args.alpha, eng)))
            elif args.method:
                raise EnumerationTooLarge(
                    f"C({ds.n},{ds.n1}) exceeds --enum-cap {args.enum_cap}; pass --exact for Monte Carlo"
                )
            else:
                print(f"exact: skipped, C({ds.n},{ds.n1}) exceeds --enum-cap; pass --exact for Monte Carlo",
                      file=sys.stderr)
    return runners


def cmd_analyze(args) -> int:
    ds = _load_dataset(args)
    results = []
    for name, run in _method_runners(args, ds):
        start = time.perf_counter()
        try:
            res = run()
        except IVError as exc:
            print(f"{name}: not available ({exc})", file=sys.stderr)
            continue
        results.append((res, 1000.0 * (time.perf_counter() - start)))
    payload = [result_to_json(r, ms) for r, ms in results]
    compliance = float(ds.d[ds.treated].mean() - ds.d[~ds.treated].mean())

    if args.json_out:
        Path(args.json_out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    if args.format == "json":
        print(json.dumps(payload, indent=2))
    elif args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "point", "kind", "lo", "hi", "alpha", "t_stat", "runtime_ms"])
        for r, ms in results:
            w.writerow([r.method, _enc(r.point), r.interval.kind, _enc(r.interval.lo), _enc(r.interval.hi),
                        r.alpha, _enc(r.diagnostics.instrument_t), round(ms, 3)])
        sys.stdout.write(buf.getvalue())
    else:
        print(f"n = {ds.n} (n1 = {ds.n1}, n0 = {ds.n0}); compliance (first stage) = {compliance:.4g}; alpha = {args.alpha}")
        rows = [[r.method, _fmt(r.point), str(r.interval), f"{ms:.1f}"] for r, ms in results]
        print(_table(["method", "estimate", f"{100 * (1 - args.alpha):.4g}% set", "ms"], rows))
        notes = [f for f in (_footnote(r) for r, _ in results) if f]
        for i, note in enumerate(notes, 1):
            print(f"  [{i}] {note}")
    return EXIT_OK


# ---------------------------------------------------------------- simulate


def parse_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def _sim_config(args) -> SimulationConfig:
    raw = parse_config(args.config) if args.config else {}
    for key in ("n", "replications", "seed", "alpha", "workers", "n_interpretation", "zero_compliers"):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = str(value)
    if args.rates:
        raw["compliance_rates"] = args.rates
    if args.methods:
        raw["methods"] = args.methods
    try:
        return SimulationConfig.from_mapping(raw)
    except (ValueError, TypeError) as exc:
        raise InputError(f"bad simulation config: {exc}") from None


def cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    table = coverage_experiment(cfg)
    outputs = {"coverage.csv": table.to_csv(), "coverage.json": table.to_json() + "\n"}
    if args.sweep:
        rows = correction_sweep(cfg, args.sweep_lo, args.sweep_hi, args.sweep_step, args.sweep_reps)
        outputs["sweep.csv"] = sweep_csv(rows)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in outputs.items():
            (out / name).write_text(text, encoding="utf-8")
    if args.format == "json":
        sys.stdout.write(outputs["coverage.json"])
    elif args.format == "csv":
        sys.stdout.write(outputs["coverage.csv"])
    else:
        rows = [
            [c.method, f"{c.compliance:g}", f"{c.coverage:.3f}", f"{c.coverage_se:.3f}", _fmt(c.median_length),
             f"{c.infinite_fraction:.3f}", _fmt(c.relative_bias), str(c.undefined)]
            for c in table.cells
        ]
        print(f"n = {cfg.total_n}, replications = {cfg.replications}, alpha = {cfg.alpha}, seed = {cfg.seed}")
        print(_table(["method", "pi", "coverage", "mc_se", "median_len", "inf_frac", "rel_bias", "undefined"], rows))
    return EXIT_OK


# ------------------------------------------------------------- sensitivity


def cmd_sensitivity(args) -> int:
    ds = _load_dataset(args)
    try:
        gammas = sorted({float(g) for g in args.gammas.split(",") if g.strip()})
    except ValueError:
        raise InputError(f"bad --gammas list {args.gammas!r}") from None
    eng = PermutationEngine(mode="monte_carlo" if args.exact else "auto", draws=args.draws,
                            seed=args.seed, enumeration_cap=args.enum_cap)
    rows = gamma_sweep(ds, args.tau0, gammas, args.stat, eng)
    g_star = sensitivity_value(ds, args.tau0, args.alpha, args.stat, eng)
    payload = {
        "tau0": args.tau0,
        "statistic": args.stat,
        "alpha": args.alpha,
        "rows": [{"gamma": r.gamma, "p_low": r.p_low, "p_high": r.p_high} for r in rows],
        "gamma_star": _enc(g_star),
    }
    if args.format == "json":
        print(json.dumps(payload, indent=2))
    elif args.format == "csv":
        print("gamma,p_low,p_high")
        for r in rows:
            print(f"{r.gamma},{r.p_low},{r.p_high}")
    else:
        print(_table(["gamma", "p_low", "p_high"], [[f"{r.gamma:g}", f"{r.p_low:.4g}", f"{r.p_high:.4g}"] for r in rows]))
        if g_star == 1.0:
            print(f"Gamma* = 1.0: the test does not reject tau = {args.tau0:g} at alpha = {args.alpha} even under randomization.")
        else:
            print(f"Gamma* = {_fmt(_enc(g_star))}: smallest Gamma at which the upper p-value bound exceeds {args.alpha}.")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("csv", help="input CSV with a header row")
    p.add_argument("--outcome", required=True)
    p.add_argument("--treatment", required=True)
    p.add_argument("--instrument", required=True)
    p.add_argument("--covariates", help="comma-separated covariate columns; the outcome is residualized on them")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=10_000, help="Monte Carlo draws")
    p.add_argument("--enum-cap", type=int, default=2_000_000, help="largest assignment count to enumerate")
    p.add_argument("--exact", action="store_true", help="force the permutation methods to Monte Carlo")
    p.add_argument("--format", choices=("json", "csv", "table"), default="table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ivrand", description="Randomization inference for instrumental variables.")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="confidence sets for the complier effect")
    _add_data_args(a)
    _add_common(a)
    a.add_argument("--method", help=f"comma-separated subset of {','.join(DEFAULT_METHODS)}")
    a.add_argument("--json-out", help="also write the JSON report here")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="coverage study under one-sided noncompliance")
    s.add_argument("--config", help="key = value file with SimulationConfig fields")
    s.add_argument("--n", type=int)
    s.add_argument("--replications", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--workers", type=int)
    s.add_argument("--rates", help="comma-separated compliance rates")
    s.add_argument("--methods", help="comma-separated method names")
    s.add_argument("--n-interpretation", dest="n_interpretation", choices=("total", "per_arm"))
    s.add_argument("--zero-compliers", dest="zero_compliers", choices=("keep", "redraw"))
    s.add_argument("--sweep", action="store_true", help="also run the correction-factor sweep")
    s.add_argument("--sweep-lo", type=float, default=0.01)
    s.add_argument("--sweep-hi", type=float, default=0.10)
    s.add_argument("--sweep-step", type=float, default=0.001)
    s.add_argument("--sweep-reps", type=int, default=1000)
    s.add_argument("--out-dir", help="write coverage.csv, coverage.json and sweep.csv here")
    s.add_argument("--format", choices=("json", "csv", "table"), default="table")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("sensitivity", help="p-value bounds under biased assignment")
    _add_data_args(g)
    _add_common(g)
    g.add_argument("--tau0", type=float, default=0.0, help="hypothesised effect")
    g.add_argument("--gammas", default="1,1.5,2,3,4")
    g.add_argument("--stat", choices=("studentized", "rank_sum"), default="studentized")
    g.set_defaults(func=cmd_sensitivity)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        if getattr(args, "alpha", None) is not None and not 0.0 < args.alpha < 1.0:
            raise InputError("--alpha must lie in (0, 1)")
        return args.func(args)
    except ColumnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COLUMNS
    except (InputError, IVError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
