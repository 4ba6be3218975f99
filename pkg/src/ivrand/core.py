"""Domain types, dataset validation and interval-set algebra."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from ivrand.errors import (
    DegenerateArm,
    LengthMismatch,
    NonBinaryInstrument,
    NonFiniteValue,
    TooFewUnits,
)

__all__ = [
    "IvDataset",
    "IntervalSet",
    "MomentSummary",
    "Diagnostics",
    "InferenceResult",
    "validate_dataset",
    "interval_contains",
    "interval_length",
]

MIN_UNITS = 4

IntervalKind = Literal["empty", "point", "bounded", "left_ray", "right_ray", "two_rays", "full_line"]
MethodTag = Literal["exact", "almost_exact", "tsls_delta", "bloom", "rank"]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class IvDataset:
    """Observed (outcome, treatment received, instrument) triples.

    Build through :func:`validate_dataset`; the constructor assumes the
    arrays are already checked. ``d`` is real-valued so multi-valued doses
    need no special handling.
    """

    y: np.ndarray
    d: np.ndarray
    z: np.ndarray
    n1: int
    n0: int

    @property
    def n(self) -> int:
        return self.n1 + self.n0

    @property
    def treated(self) -> np.ndarray:
        return self.z == 1.0

    def with_outcome(self, y: Sequence[float]) -> "IvDataset":
        return validate_dataset(y, self.d, self.z)

    def with_treatment(self, d: Sequence[float]) -> "IvDataset":
        return validate_dataset(self.y, d, self.z)


def validate_dataset(y: Sequence[float], d: Sequence[float], z: Sequence[float]) -> IvDataset:
    """Check raw sequences and return an :class:`IvDataset`.

    Raises exactly one of :class:`LengthMismatch`, :class:`NonFiniteValue`,
    :class:`NonBinaryInstrument`, :class:`DegenerateArm` or
    :class:`TooFewUnits`, checked in that order.
    """
    try:
        ya = np.asarray(y, dtype=float).ravel()
        da = np.asarray(d, dtype=float).ravel()
        za = np.asarray(z, dtype=float).ravel()
    except (TypeError, ValueError) as exc:
        raise NonFiniteValue(f"non-numeric entry: {exc}") from None
    if not (len(ya) == len(da) == len(za)):
        raise LengthMismatch(f"lengths differ: y={len(ya)}, d={len(da)}, z={len(za)}")
    for name, arr in (("y", ya), ("d", da), ("z", za)):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"{name} contains non-finite values")
    if not np.all((za == 0.0) | (za == 1.0)):
        bad = sorted(set(za[(za != 0.0) & (za != 1.0)].tolist()))[:5]
        raise NonBinaryInstrument(f"instrument must be 0/1, found {bad}")
    n1 = int(za.sum())
    n0 = len(za) - n1
    if n1 == 0 or n0 == 0:
        raise DegenerateArm(f"both arms must be non-empty (n1={n1}, n0={n0})")
    if len(za) < MIN_UNITS:
        raise TooFewUnits(f"need at least {MIN_UNITS} units, got {len(za)}")
    return IvDataset(_frozen(ya), _frozen(da), _frozen(za), n1, n0)


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6g}"


@dataclass(frozen=True)
class IntervalSet:
    """A closed solution set on the real line.

    ``lo``/``hi`` are read according to ``kind``; for ``two_rays`` the set is
    ``(-inf, lo] U [hi, inf)``.
    """

    kind: IntervalKind
    lo: float = math.nan
    hi: float = math.nan

    def __post_init__(self) -> None:
        if self.kind == "bounded" and not self.lo <= self.hi:
            raise ValueError(f"bounded interval needs lo <= hi, got [{self.lo}, {self.hi}]")
        if self.kind == "two_rays" and not self.lo < self.hi:
            raise ValueError(f"two rays need hi_left < lo_right, got {self.lo}, {self.hi}")

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls("empty")

    @classmethod
    def point(cls, x: float) -> "IntervalSet":
        return cls("point", x, x)

    @classmethod
    def bounded(cls, lo: float, hi: float) -> "IntervalSet":
        if lo == hi:
            return cls.point(lo)
        return cls("bounded", lo, hi)

    @classmethod
    def left_ray(cls, hi: float) -> "IntervalSet":
        return cls("left_ray", -math.inf, hi)

    @classmethod
    def right_ray(cls, lo: float) -> "IntervalSet":
        return cls("right_ray", lo, math.inf)

    @classmethod
    def two_rays(cls, hi_left: float, lo_right: float) -> "IntervalSet":
        return cls("two_rays", hi_left, lo_right)

    @classmethod
    def full_line(cls) -> "IntervalSet":
        return cls("full_line", -math.inf, math.inf)

    @property
    def hi_left(self) -> float:
        return self.lo

    @property
    def lo_right(self) -> float:
        return self.hi

    @property
    def is_infinite(self) -> bool:
        return self.kind in ("left_ray", "right_ray", "two_rays", "full_line")

    @property
    def length(self) -> float:
        return interval_length(self)

    def contains(self, x: float) -> bool:
        return interval_contains(self, x)

    def to_dict(self) -> dict:
        """JSON-ready encoding; infinite endpoints become ``"inf"``/``"-inf"``."""
        out: dict = {"kind": self.kind}
        if self.kind in ("point", "bounded"):
            out["lo"], out["hi"] = self.lo, self.hi
        elif self.kind == "left_ray":
            out["lo"], out["hi"] = "-inf", self.hi
        elif self.kind == "right_ray":
            out["lo"], out["hi"] = self.lo, "inf"
        elif self.kind == "two_rays":
            out["hi_left"], out["lo_right"] = self.lo, self.hi
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "IntervalSet":
        kind = data["kind"]
        f = lambda key: float(data[key])  # noqa: E731  float("inf") parses the string form
        if kind == "empty":
            return cls.empty()
        if kind == "full_line":
            return cls.full_line()
        if kind == "point":
            return cls.point(f("lo"))
        if kind == "bounded":
            return cls("bounded", f("lo"), f("hi"))
        if kind == "left_ray":
            return cls.left_ray(f("hi"))
        if kind == "right_ray":
            return cls.right_ray(f("lo"))
        if kind == "two_rays":
            return cls.two_rays(f("hi_left"), f("lo_right"))
        raise ValueError(f"unknown interval kind {kind!r}")

    def __str__(self) -> str:
        if self.kind == "empty":
            return "{}"
        if self.kind == "point":
            return f"{{{_fmt(self.lo)}}}"
        if self.kind == "two_rays":
            return f"[-inf, {_fmt(self.lo)}] U [{_fmt(self.hi)}, inf]"
        return f"[{_fmt(self.lo)}, {_fmt(self.hi)}]"


def interval_contains(s: IntervalSet, x: float) -> bool:
    """Membership with closed endpoints."""
    k = s.kind
    if k == "empty":
        return False
    if k == "full_line":
        return True
    if k == "two_rays":
        return x <= s.lo or x >= s.hi
    if k == "left_ray":
        return x <= s.hi
    if k == "right_ray":
        return x >= s.lo
    return s.lo <= x <= s.hi


def interval_length(s: IntervalSet) -> float:
    if s.kind in ("empty", "point"):
        return 0.0
    if s.kind == "bounded":
        return s.hi - s.lo
    return math.inf


@dataclass(frozen=True)
class MomentSummary:
    """ITT estimates for outcome and treatment with their sampling (co)variances."""

    tauY_hat: float
    tauD_hat: float
    varY_hat: float
    varD_hat: float
    cov_hat: float


@dataclass(frozen=True)
class Diagnostics:
    instrument_t: float = math.nan
    c_factor: Optional[float] = None
    abc: Optional[tuple[float, float, float]] = None
    delta_hat: Optional[float] = None
    n_permutations: Optional[int] = None
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class InferenceResult:
    method: MethodTag
    point: Optional[float]
    interval: IntervalSet
    alpha: float
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
