"""Monte Carlo study of interval estimators under one-sided noncompliance.

Units are assigned by independent fair coins. A unit is a complier with
probability ``pi`` and a never-taker otherwise; only assigned compliers take
treatment. Outcomes are normal with mean ``kappa + gamma * D`` and variance
``sigma2``, so the complier effect is ``gamma``.

Every replicate draws from its own generator seeded by
``(seed, rate index, replicate index)``. Tables are therefore identical
for a fixed config whatever the number of worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from ivrand.almost_exact import almost_exact_ci
from ivrand.asymptotic import bloom_ci, tsls_ci
from ivrand.core import InferenceResult, IvDataset, interval_contains, interval_length, validate_dataset
from ivrand.errors import IVError
from ivrand.exact import exact_ci
from ivrand.normal import z_crit
from ivrand.permutation import PermutationEngine
from ivrand.rank import rank_ci

__all__ = [
    "SimulationConfig",
    "CoverageCell",
    "CoverageTable",
    "SweepRow",
    "generate_onesided",
    "coverage_experiment",
    "correction_sweep",
    "register_method",
    "available_methods",
    "crossing_point",
]

Method = Callable[[IvDataset, float], InferenceResult]

DEFAULT_RATES = (0.019, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90)


def _exact(ds: IvDataset, alpha: float) -> InferenceResult:
    return exact_ci(ds, alpha, PermutationEngine(mode="auto", draws=2000))


def _rank(ds: IvDataset, alpha: float) -> InferenceResult:
    return rank_ci(ds, alpha, PermutationEngine(mode="auto", draws=2000))


_METHODS: dict[str, Method] = {
    "almost_exact": almost_exact_ci,
    "bloom": bloom_ci,
    "tsls": tsls_ci,
    "exact": _exact,
    "rank": _rank,
}


def register_method(name: str, fn: Method) -> None:
    """Add an interval procedure ``fn(ds, alpha) -> InferenceResult`` to the registry.

    Registered callables only reach worker processes if they can be pickled
    by reference (module-level functions).
    """
    if name in _METHODS:
        raise ValueError(f"method {name!r} is already registered")
    _METHODS[name] = fn


def available_methods() -> list[str]:
    return sorted(_METHODS)


@dataclass(frozen=True)
class SimulationConfig:
    """Settings for the coverage study and the correction-factor sweep.

    ``n_interpretation`` decides whether ``n`` is the total sample size or
    the expected size of each arm (total 2n). ``zero_compliers`` says what
    to do with a replicate that contains no complier at all: keep it (the
    treatment is then constant and tau unidentified) or redraw it.
    """

    n: int = 100
    compliance_rates: tuple[float, ...] = DEFAULT_RATES
    kappa: float = 1.0
    gamma: float = 1.0
    sigma2: float = 1.0
    replications: int = 5000
    alpha: float = 0.05
    seed: int = 20240607
    methods: tuple[str, ...] = ("almost_exact", "bloom", "tsls")
    n_interpretation: Literal["total", "per_arm"] = "total"
    zero_compliers: Literal["keep", "redraw"] = "keep"
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "compliance_rates", tuple(float(p) for p in self.compliance_rates))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.n < 4:
            raise ValueError("n must be at least 4")
        if self.replications < 100:
            raise ValueError("replications must be at least 100")
        if not all(0.0 < p < 1.0 for p in self.compliance_rates):
            raise ValueError("compliance rates must lie in (0, 1)")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.sigma2 > 0.0:
            raise ValueError("sigma2 must be positive")
        if self.n_interpretation not in ("total", "per_arm"):
            raise ValueError("n_interpretation must be 'total' or 'per_arm'")
        if self.zero_compliers not in ("keep", "redraw"):
            raise ValueError("zero_compliers must be 'keep' or 'redraw'")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        unknown = [m for m in self.methods if m not in _METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; available: {available_methods()}")

    @property
    def total_n(self) -> int:
        return self.n if self.n_interpretation == "total" else 2 * self.n

    @classmethod
    def from_mapping(cls, raw: dict[str, str]) -> "SimulationConfig":
        """Build from string values, e.g. parsed ``key = value`` lines."""
        known = {f.name: f for f in fields(cls)}
        kwargs: dict[str, object] = {}
        for key, value in raw.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            value = value.strip()
            if key in ("n", "replications", "seed", "workers"):
                kwargs[key] = int(value)
            elif key in ("kappa", "gamma", "sigma2", "alpha"):
                kwargs[key] = float(value)
            elif key == "compliance_rates":
                kwargs[key] = tuple(float(v) for v in value.split(",") if v.strip())
            elif key == "methods":
                kwargs[key] = tuple(v.strip() for v in value.split(",") if v.strip())
            else:
                kwargs[key] = value
        return cls(**kwargs)


def _draw(cfg: SimulationConfig, pi: float, rng: np.random.Generator) -> tuple[IvDataset, int]:
    n = cfg.total_n
    sd = math.sqrt(cfg.sigma2)
    redraws = 0
    while True:
        z = (rng.random(n) < 0.5).astype(float)
        complier = rng.random(n) < pi
        d = z * complier
        y = rng.normal(cfg.kappa + cfg.gamma * d, sd)
        n1 = int(z.sum())
        degenerate = n1 < 2 or n - n1 < 2
        if not degenerate and (cfg.zero_compliers == "keep" or complier.any()):
            return validate_dataset(y, d, z), redraws
        redraws += 1


def generate_onesided(cfg: SimulationConfig, pi: float, rep_seed) -> IvDataset:
    """One replicate of the one-sided noncompliance design.

    Arms with fewer than two units are redrawn, as are complier-free
    samples when ``cfg.zero_compliers == "redraw"``.
    """
    if not 0.0 < pi <= 1.0:
        raise ValueError("pi must lie in (0, 1]")
    return _draw(cfg, pi, np.random.default_rng(rep_seed))[0]


@dataclass(frozen=True)
class CoverageCell:
    method: str
    compliance: float
    replications: int
    coverage: float
    coverage_se: float
    median_length: float
    infinite_fraction: float
    mean_point_bias: float
    relative_bias: float
    undefined: int
    redraws: int


@dataclass(frozen=True)
class CoverageTable:
    cells: tuple[CoverageCell, ...]
    config: SimulationConfig = field(repr=False, default=None)

    def cell(self, method: str, compliance: float) -> CoverageCell:
        for c in self.cells:
            if c.method == method and math.isclose(c.compliance, compliance):
                return c
        raise KeyError((method, compliance))

    def to_records(self) -> list[dict]:
        return [asdict(c) for c in self.cells]

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = [f.name for f in fields(CoverageCell)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for c in self.cells:
            w.writerow([_num(getattr(c, k)) for k in names])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [{k: _num(v) for k, v in rec.items()} for rec in self.to_records()]
        return json.dumps(rows, indent=2)


def _num(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


@dataclass
class _Tally:
    covered: int = 0
    infinite: int = 0
    undefined: int = 0
    lengths: list = field(default_factory=list)
    errors: list = field(default_factory=list)


def _run_block(cfg: SimulationConfig, rate_index: int, start: int, stop: int) -> tuple[dict, int]:
    pi = cfg.compliance_rates[rate_index]
    tallies = {m: _Tally() for m in cfg.methods}
    redraws = 0
    for rep in range(start, stop):
        rng = np.random.default_rng([cfg.seed, rate_index, rep])
        ds, extra = _draw(cfg, pi, rng)
        redraws += extra
        for m in cfg.methods:
            t = tallies[m]
            try:
                res = _METHODS[m](ds, cfg.alpha)
            except IVError:
                t.undefined += 1
                continue
            t.covered += interval_contains(res.interval, cfg.gamma)
            t.infinite += res.interval.is_infinite
            t.lengths.append(interval_length(res.interval))
            if res.point is not None and math.isfinite(res.point):
                t.errors.append(res.point - cfg.gamma)
    return tallies, redraws


def _merge(parts: list[dict]) -> dict:
    out = {m: _Tally() for m in parts[0]}
    for part in parts:
        for m, t in part.items():
            o = out[m]
            o.covered += t.covered
            o.infinite += t.infinite
            o.undefined += t.undefined
            o.lengths += t.lengths
            o.errors += t.errors
    return out


def coverage_experiment(cfg: SimulationConfig, block: int = 500) -> CoverageTable:
    """Coverage, median length, infinite fraction and bias per method and compliance rate.

    A replicate where a method cannot produce an interval (zero first stage
    for the asymptotic methods) counts as not covering and is left out of
    the length and bias summaries; ``undefined`` records how often.
    """
    jobs = [
        (i, s, min(s + block, cfg.replications))
        for i in range(len(cfg.compliance_rates))
        for s in range(0, cfg.replications, block)
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_block, [cfg] * len(jobs), *zip(*jobs)))
    else:
        results = [_run_block(cfg, *job) for job in jobs]

    R = cfg.replications
    cells = []
    for m in cfg.methods:
        for i, pi in enumerate(cfg.compliance_rates):
            mine = [res for job, res in zip(jobs, results) if job[0] == i]
            t = _merge([tallies for tallies, _ in mine])[m]
            redraws = sum(r for _, r in mine)
            cov = t.covered / R
            bias = float(np.mean(t.errors)) if t.errors else math.nan
            cells.append(
                CoverageCell(
                    method=m,
                    compliance=pi,
                    replications=R,
                    coverage=cov,
                    coverage_se=math.sqrt(cov * (1.0 - cov) / R),
                    median_length=float(np.median(t.lengths)) if t.lengths else math.nan,
                    infinite_fraction=t.infinite / R,
                    mean_point_bias=bias,
                    relative_bias=bias / cfg.gamma if cfg.gamma != 0.0 else math.nan,
                    undefined=t.undefined,
                    redraws=redraws,
                )
            )
    return CoverageTable(tuple(cells), cfg)


@dataclass(frozen=True)
class SweepRow:
    pi: float
    mean_a: float
    mean_b: float
    mean_c: float
    mean_disc: float


def _sweep_batch(cfg: SimulationConfig, pi: float, reps: int, rng: np.random.Generator):
    """``reps`` valid replicates stacked as (reps, n) arrays of y, d, z."""
    n = cfg.total_n
    sd = math.sqrt(cfg.sigma2)
    Y = np.empty((reps, n))
    D = np.empty((reps, n))
    Z = np.empty((reps, n))
    todo = np.arange(reps)
    while len(todo):
        k = len(todo)
        z = (rng.random((k, n)) < 0.5).astype(float)
        complier = rng.random((k, n)) < pi
        d = z * complier
        y = cfg.kappa + cfg.gamma * d + sd * rng.standard_normal((k, n))
        n1 = z.sum(axis=1)
        ok = (n1 >= 2) & (n - n1 >= 2)
        if cfg.zero_compliers == "redraw":
            ok &= complier.any(axis=1)
        Y[todo[ok]], D[todo[ok]], Z[todo[ok]] = y[ok], d[ok], z[ok]
        todo = todo[~ok]
    return Y, D, Z


def _batch_abc(Y: np.ndarray, D: np.ndarray, Z: np.ndarray, alpha: float):
    """Quadratic coefficients for every row, vectorised over replicates."""
    t = Z == 1.0
    parts = []
    for mask in (t, ~t):
        k = mask.sum(axis=1)
        my = np.where(mask, Y, 0.0).sum(axis=1) / k
        md = np.where(mask, D, 0.0).sum(axis=1) / k
        ry = np.where(mask, Y - my[:, None], 0.0)
        rd = np.where(mask, D - md[:, None], 0.0)
        den = (k - 1) * k
        parts.append((my, md, (ry * ry).sum(1) / den, (rd * rd).sum(1) / den, (ry * rd).sum(1) / den))
    (my1, md1, vy1, vd1, c1), (my0, md0, vy0, vd0, c0) = parts
    tY, tD = my1 - my0, md1 - md0
    vY, vD, cv = vy1 + vy0, vd1 + vd0, c1 + c0
    z2 = z_crit(alpha) ** 2
    a = tD * tD - z2 * vD
    b = -2.0 * (tD * tY - z2 * cv)
    c = tY * tY - z2 * vY
    return a, b, c


def correction_sweep(
    cfg: SimulationConfig,
    pi_lo: float = 0.01,
    pi_hi: float = 0.10,
    step: float = 0.001,
    reps_per_pi: int = 1000,
) -> list[SweepRow]:
    """Average quadratic coefficients and discriminant over a grid of compliance rates."""
    if not 0.0 < pi_lo < pi_hi < 1.0:
        raise ValueError("need 0 < pi_lo < pi_hi < 1")
    if not step > 0.0 or reps_per_pi < 1:
        raise ValueError("step and reps_per_pi must be positive")
    count = int(math.floor((pi_hi - pi_lo) / step + 1e-9)) + 1
    rows = []
    for i in range(count):
        pi = round(pi_lo + i * step, 12)
        rng = np.random.default_rng([cfg.seed, 0xF1, i])
        a, b, c = _batch_abc(*_sweep_batch(cfg, pi, reps_per_pi, rng), cfg.alpha)
        rows.append(SweepRow(pi, float(a.mean()), float(b.mean()), float(c.mean()), float((b * b - 4 * a * c).mean())))
    return rows


def crossing_point(rows: Sequence[SweepRow], attr: str) -> Optional[float]:
    """Compliance rate where ``attr`` last turns from non-positive to positive.

    Linear interpolation between the bracketing grid points; ``None`` if the
    series never turns positive.
    """
    xs = [r.pi for r in rows]
    vs = [getattr(r, attr) for r in rows]
    for j in range(len(vs) - 1, 0, -1):
        if vs[j] > 0.0 and vs[j - 1] <= 0.0:
            x0, x1, v0, v1 = xs[j - 1], xs[j], vs[j - 1], vs[j]
            return x0 + (x1 - x0) * (-v0) / (v1 - v0)
    if vs and vs[0] > 0.0:
        return xs[0]
    return None


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pi", "mean_a", "mean_b", "mean_c", "mean_disc"])
    for r in rows:
        w.writerow([r.pi, r.mean_a, r.mean_b, r.mean_c, r.mean_disc])
    return buf.getvalue()
