"""Domain types shared across the package, CSV ingestion and cohort validation."""

from __future__ import annotations

import csv
import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class CohortError(ValueError):
    """Raised when a cohort fails ingestion-level validation."""


class EmptyCohortError(CohortError):
    pass


class NoEventsError(ValueError):
    pass


class TiesError(ValueError):
    """Observed times or predictions contain ties where distinct values are required."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SurvivalRecord:
    """One cohort member.

    ``covariates`` may contain ``None``/NaN for missing values; such records are
    dropped by :func:`validate_cohort`.
    """

    id: str
    observed_time: float
    event_flag: bool
    covariates: tuple
    group_label: str = "all"
    origin_time: float | None = None


@dataclass(frozen=True, eq=False)
class Cohort:
    """Column-oriented, read-only cohort.

    Arrays are aligned by position; ``ids[k]`` identifies row ``k``.
    """

    ids: tuple[str, ...]
    time: np.ndarray
    event: np.ndarray
    covariates: np.ndarray
    group: np.ndarray
    covariate_names: tuple[str, ...]
    group_levels: tuple[str, ...]
    origin_time: np.ndarray | None = None
    time_unit: str = ""
    dropped: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        m = len(self.ids)
        time = np.asarray(self.time, dtype=float).reshape(-1)
        event = np.asarray(self.event, dtype=bool).reshape(-1)
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(m, -1) if m else cov.reshape(0, len(self.covariate_names))
        group = np.asarray(self.group, dtype=object).reshape(-1)
        if not (len(time) == len(event) == len(group) == cov.shape[0] == m):
            raise CohortError("cohort columns have inconsistent lengths")
        if cov.shape[1] != len(self.covariate_names):
            raise CohortError(
                f"covariate matrix has {cov.shape[1]} columns but "
                f"{len(self.covariate_names)} names"
            )
        if len(set(self.ids)) != m:
            dup = [k for k, c in Counter(self.ids).items() if c > 1]
            raise CohortError(f"duplicate ids: {dup[:5]}")
        if m and not (np.all(np.isfinite(time)) and np.all(time > 0)):
            raise CohortError("observed times must be positive and finite")
        levels = tuple(self.group_levels)
        unknown = set(group.tolist()) - set(levels)
        if unknown:
            raise CohortError(f"group labels not in group_levels: {sorted(unknown)}")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "time", _frozen(time))
        object.__setattr__(self, "event", _frozen(event))
        object.__setattr__(self, "covariates", _frozen(cov))
        object.__setattr__(self, "group", _frozen(group))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "group_levels", levels)
        object.__setattr__(self, "dropped", dict(self.dropped))
        if self.origin_time is not None:
            object.__setattr__(
                self, "origin_time", _frozen(np.asarray(self.origin_time, dtype=float))
            )

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def m(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return len(self.covariate_names)

    @property
    def records(self) -> list[SurvivalRecord]:
        origin = self.origin_time
        return [
            SurvivalRecord(
                id=self.ids[k],
                observed_time=float(self.time[k]),
                event_flag=bool(self.event[k]),
                covariates=tuple(float(v) for v in self.covariates[k]),
                group_label=str(self.group[k]),
                origin_time=None if origin is None or np.isnan(origin[k]) else float(origin[k]),
            )
            for k in range(self.m)
        ]

    def group_codes(self) -> np.ndarray:
        """Integer code per row, indexing into ``group_levels``."""
        lookup = {g: i for i, g in enumerate(self.group_levels)}
        return np.fromiter((lookup[g] for g in self.group), dtype=np.int64, count=self.m)

    def subset(self, index) -> "Cohort":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return Cohort(
            ids=tuple(self.ids[k] for k in index),
            time=self.time[index],
            event=self.event[index],
            covariates=self.covariates[index],
            group=self.group[index],
            covariate_names=self.covariate_names,
            group_levels=self.group_levels,
            origin_time=None if self.origin_time is None else self.origin_time[index],
            time_unit=self.time_unit,
        )

    def replace(self, *, time=None, event=None) -> "Cohort":
        return Cohort(
            ids=self.ids,
            time=self.time if time is None else time,
            event=self.event if event is None else event,
            covariates=self.covariates,
            group=self.group,
            covariate_names=self.covariate_names,
            group_levels=self.group_levels,
            origin_time=self.origin_time,
            time_unit=self.time_unit,
        )

    def index_of(self, ids: Sequence[str]) -> np.ndarray:
        lookup = {k: i for i, k in enumerate(self.ids)}
        try:
            return np.fromiter((lookup[k] for k in ids), dtype=np.int64, count=len(ids))
        except KeyError as exc:
            raise KeyError(f"id {exc.args[0]!r} not in cohort") from None


class Provenance(str, enum.Enum):
    OBSERVED_INVERTED = "observed_inverted"
    MODEL_FITTED = "model_fitted"
    TRUE_SYNTHETIC = "true_synthetic"


@dataclass(frozen=True, eq=False)
class BaselineSurvival:
    """Right-continuous step survival function restricted to ``[0, horizon]``.

    S(t) = 1 before the first knot, ``values[j]`` on ``[knot_times[j], knot_times[j+1])``
    and ``tail_value`` on ``[knot_times[-1], horizon]``.
    """

    knot_times: np.ndarray
    values: np.ndarray
    horizon: float
    tail_value: float | None = None

    def __post_init__(self):
        t = np.asarray(self.knot_times, dtype=float).reshape(-1)
        s = np.asarray(self.values, dtype=float).reshape(-1)
        if len(t) != len(s) or len(t) == 0:
            raise ValueError("knot_times and values must be non-empty and equal length")
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("knot times must be positive and strictly increasing")
        if np.any(s < 0) or np.any(s > 1) or np.any(np.diff(s) > 0):
            raise ValueError("survival values must be non-increasing within [0, 1]")
        tail = s[-1] if self.tail_value is None else float(self.tail_value)
        if not 0 <= tail <= s[-1]:
            raise ValueError("tail_value must lie in [0, last value]")
        if not self.horizon >= t[-1]:
            raise ValueError("horizon must be at least the last knot time")
        object.__setattr__(self, "knot_times", _frozen(t))
        object.__setattr__(self, "values", _frozen(s))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "tail_value", float(tail))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knot_times, t, side="right") - 1
        vals = np.concatenate([[1.0], self.values[:-1], [self.tail_value]])
        return vals[idx + 1]

    def segments(self) -> tuple[float, np.ndarray, np.ndarray]:
        """Leading length where S = 1, then per-segment (value, length) on ``[t_1, horizon]``."""
        t = self.knot_times
        ends = np.append(t[1:], self.horizon)
        vals = np.append(self.values[:-1], self.tail_value)
        return float(t[0]), vals, ends - t

    def to_dict(self) -> dict:
        return {
            "knot_times": self.knot_times.tolist(),
            "values": self.values.tolist(),
            "horizon": self.horizon,
            "tail_value": self.tail_value,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BaselineSurvival":
        return cls(d["knot_times"], d["values"], d["horizon"], d.get("tail_value"))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "survival"])
            for t, s in zip(self.knot_times, self.values):
                w.writerow([repr(float(t)), repr(float(s))])

    @classmethod
    def from_csv(cls, path, horizon: float | None = None) -> "BaselineSurvival":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        t = [float(r["time"]) for r in rows]
        s = [float(r["survival"]) for r in rows]
        return cls(t, s, t[-1] if horizon is None else horizon)


@dataclass(frozen=True, eq=False)
class HazardAssignment:
    """Positive hazard rate per member id."""

    ids: tuple[str, ...]
    rates: np.ndarray
    provenance: Provenance
    clamp_counts: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float).reshape(-1)
        if len(r) != len(self.ids):
            raise ValueError("ids and rates differ in length")
        if not (np.all(np.isfinite(r)) and np.all(r > 0)):
            raise ValueError("hazard rates must be positive and finite")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "rates", _frozen(r))
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        object.__setattr__(self, "clamp_counts", dict(self.clamp_counts))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.ids, self.rates.tolist()))

    def aligned(self, cohort: Cohort) -> np.ndarray:
        return _align(self.ids, self.rates, cohort, "hazard")


@dataclass(frozen=True, eq=False)
class PredictionModel:
    """Predicted survival per id; larger means longer predicted survival."""

    ids: tuple[str, ...]
    predicted_survival: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.predicted_survival, dtype=float).reshape(-1)
        if len(v) != len(self.ids):
            raise ValueError("ids and predictions differ in length")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "predicted_survival", _frozen(v))

    def aligned(self, cohort: Cohort) -> np.ndarray:
        return _align(self.ids, self.predicted_survival, cohort, "prediction")

    def reversed(self) -> "PredictionModel":
        return PredictionModel(self.ids, -self.predicted_survival)


def _align(ids, values, cohort: Cohort, what: str) -> np.ndarray:
    if ids == cohort.ids:
        return values
    lookup = dict(zip(ids, values))
    try:
        return np.array([lookup[k] for k in cohort.ids], dtype=float)
    except KeyError as exc:
        raise ValueError(f"missing {what} for id {exc.args[0]!r}") from None


@dataclass
class GroupMetrics:
    subci: float
    subeci: float
    subdr: float | None
    within_subci: float | None
    pair_count: int
    within_pair_count: int = 0


@dataclass
class ConcordanceReport:
    ci: float
    eci: float
    dr: float | None
    pair_count: int
    per_group: dict[str, GroupMetrics] = field(default_factory=dict)
    scenario: str = ""
    replicate: int | None = None
    extras: dict = field(default_factory=dict)

    def weighted_ci(self) -> float:
        """Sum of K_l / 2K * SUBCI_l; equals ``ci`` when groups partition the cohort."""
        return sum(g.pair_count / (2 * self.pair_count) * g.subci for g in self.per_group.values())

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "replicate": self.replicate,
            "ci": self.ci,
            "eci": self.eci,
            "dr": self.dr,
            "pair_count": self.pair_count,
            "per_group": {k: vars(v).copy() for k, v in self.per_group.items()},
            "extras": self.extras,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConcordanceReport":
        return cls(
            ci=d["ci"],
            eci=d["eci"],
            dr=d["dr"],
            pair_count=d["pair_count"],
            per_group={k: GroupMetrics(**v) for k, v in d["per_group"].items()},
            scenario=d.get("scenario", ""),
            replicate=d.get("replicate"),
            extras=d.get("extras", {}),
        )


def _missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def validate_cohort(
    raw_records: Iterable[SurvivalRecord],
    covariate_dim: int,
    covariate_names: Sequence[str] | None = None,
    range_filters: Mapping[str, tuple[float | None, float | None]] | None = None,
    group_levels: Sequence[str] | None = None,
    time_unit: str = "",
) -> Cohort:
    """Filter raw records into a :class:`Cohort`.

    Drops records with a missing covariate, a non-positive or non-finite time,
    or a covariate outside its configured ``(min, max)`` range. Drop counts per
    reason end up in ``Cohort.dropped``. Duplicate ids and a wrong covariate
    length are errors, as is an empty result.
    """
    names = tuple(covariate_names) if covariate_names is not None else tuple(
        f"x{k}" for k in range(covariate_dim)
    )
    if len(names) != covariate_dim:
        raise CohortError("covariate_names length differs from covariate_dim")
    ranges = {}
    for name, (lo, hi) in (range_filters or {}).items():
        if name not in names:
            raise CohortError(f"range filter on unknown column {name!r}")
        ranges[names.index(name)] = (lo, hi, name)

    kept: list[SurvivalRecord] = []
    drops: Counter = Counter()
    seen: set[str] = set()
    for rec in raw_records:
        if rec.id in seen:
            raise CohortError(f"duplicate id {rec.id!r}")
        seen.add(rec.id)
        if len(rec.covariates) != covariate_dim:
            raise CohortError(
                f"record {rec.id!r} has {len(rec.covariates)} covariates, expected {covariate_dim}"
            )
        if any(_missing(v) for v in rec.covariates):
            drops["missing predictor"] += 1
            continue
        t = rec.observed_time
        if _missing(t) or not math.isfinite(t) or t <= 0:
            drops["non-positive time"] += 1
            continue
        bad = None
        for k, (lo, hi, name) in ranges.items():
            v = rec.covariates[k]
            if (lo is not None and v < lo) or (hi is not None and v > hi):
                bad = name
                break
        if bad is not None:
            drops[f"out of range: {bad}"] += 1
            continue
        kept.append(rec)

    if not kept:
        raise EmptyCohortError("empty cohort after filtering")
    levels = list(group_levels) if group_levels is not None else []
    for rec in kept:
        if rec.group_label not in levels:
            if group_levels is not None:
                raise CohortError(f"unknown group label {rec.group_label!r}")
            levels.append(rec.group_label)
    origin = None
    if any(r.origin_time is not None for r in kept):
        origin = [np.nan if r.origin_time is None else r.origin_time for r in kept]
    return Cohort(
        ids=tuple(r.id for r in kept),
        time=[r.observed_time for r in kept],
        event=[bool(r.event_flag) for r in kept],
        covariates=np.array([r.covariates for r in kept], dtype=float).reshape(len(kept), covariate_dim),
        group=[r.group_label for r in kept],
        covariate_names=names,
        group_levels=tuple(levels),
        origin_time=origin,
        time_unit=time_unit,
        dropped=dict(drops),
    )


# --- CSV ---------------------------------------------------------------------

RESERVED = ("id", "time", "event", "group", "origin_time")


class CsvSchemaError(CohortError):
    pass


def _parse_float(s: str):
    try:
        return float(s)
    except ValueError:
        return None


def read_cohort_csv(
    path,
    range_filters: Mapping[str, tuple[float | None, float | None]] | None = None,
    time_unit: str = "",
) -> Cohort:
    """Read the cohort CSV schema ``id,time,event,group,<covariates...>[,origin_time]``.

    Empty cells are missing values. A covariate column containing any
    non-numeric value is treated as categorical and one-hot encoded with the
    first-appearing level dropped. Range filters refer to raw (numeric) column
    names and are applied before encoding.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvSchemaError(f"{path}: empty file, header row required") from None
        rows = list(reader)
    if header[:4] != ["id", "time", "event", "group"]:
        raise CsvSchemaError(f"{path}: header must start with id,time,event,group; got {header[:4]}")
    has_origin = header[-1] == "origin_time"
    cov_cols = header[4:-1] if has_origin else header[4:]
    for name in cov_cols:
        if name in RESERVED or not name:
            raise CsvSchemaError(f"{path}: invalid covariate column name {name!r}")
    if len(set(cov_cols)) != len(cov_cols):
        raise CsvSchemaError(f"{path}: duplicate covariate columns")

    categorical: dict[int, list[str]] = {}
    for k, name in enumerate(cov_cols):
        levels: list[str] = []
        numeric = True
        for row in rows:
            if len(row) != len(header):
                continue
            cell = row[4 + k].strip()
            if cell == "":
                continue
            if numeric and _parse_float(cell) is None:
                numeric = False
            if cell not in levels:
                levels.append(cell)
        if not numeric:
            categorical[k] = levels
    for name in range_filters or {}:
        if name not in cov_cols:
            raise CsvSchemaError(f"range filter on unknown column {name!r}")
        if cov_cols.index(name) in categorical:
            raise CsvSchemaError(f"range filter on categorical column {name!r}")

    names: list[str] = []
    for k, name in enumerate(cov_cols):
        if k in categorical:
            names.extend(f"{name}={lvl}" for lvl in categorical[k][1:])
        else:
            names.append(name)

    records = []
    drops: Counter = Counter()
    for lineno, row in enumerate(rows, start=2):
        if not row or all(c.strip() == "" for c in row):
            continue
        if len(row) != len(header):
            raise CsvSchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        rid, ts, es, grp = (c.strip() for c in row[:4])
        if not rid:
            raise CsvSchemaError(f"{path}:{lineno}: empty id")
        if es not in ("0", "1"):
            raise CsvSchemaError(f"{path}:{lineno}: event must be 0 or 1, got {es!r}")
        t = _parse_float(ts) if ts else None
        if ts and t is None:
            raise CsvSchemaError(f"{path}:{lineno}: time {ts!r} is not a number")
        if t is None:
            drops["missing time"] += 1
            continue
        if not grp:
            drops["missing group"] += 1
            continue
        raw = [c.strip() for c in row[4:4 + len(cov_cols)]]
        if any(c == "" for c in raw):
            drops["missing predictor"] += 1
            continue
        bad = None
        for name, (lo, hi) in (range_filters or {}).items():
            v = float(raw[cov_cols.index(name)])
            if (lo is not None and v < lo) or (hi is not None and v > hi):
                bad = name
                break
        if bad:
            drops[f"out of range: {bad}"] += 1
            continue
        cov: list[float] = []
        for k, cell in enumerate(raw):
            if k in categorical:
                cov.extend(1.0 if cell == lvl else 0.0 for lvl in categorical[k][1:])
            else:
                cov.append(float(cell))
        origin = None
        if has_origin and row[-1].strip():
            origin = _parse_float(row[-1].strip())
            if origin is None:
                raise CsvSchemaError(f"{path}:{lineno}: origin_time is not a number")
        records.append(SurvivalRecord(rid, t, es == "1", tuple(cov), grp, origin))

    cohort = validate_cohort(records, len(names), names, time_unit=time_unit)
    merged = Counter(drops)
    merged.update(cohort.dropped)
    object.__setattr__(cohort, "dropped", dict(merged))
    return cohort


def write_cohort_csv(cohort: Cohort, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["id", "time", "event", "group", *cohort.covariate_names]
        if cohort.origin_time is not None:
            header.append("origin_time")
        w.writerow(header)
        for k in range(cohort.m):
            row = [cohort.ids[k], repr(float(cohort.time[k])), int(cohort.event[k]), cohort.group[k]]
            row.extend(repr(float(v)) for v in cohort.covariates[k])
            if cohort.origin_time is not None:
                o = cohort.origin_time[k]
                row.append("" if np.isnan(o) else repr(float(o)))
            w.writerow(row)


def cohort_from_arrays(
    time,
    event,
    covariates=None,
    group=None,
    ids=None,
    covariate_names=None,
) -> Cohort:
    """Convenience constructor used by tests and scripts."""
    time = np.asarray(time, dtype=float)
    m = len(time)
    cov = np.zeros((m, 0)) if covariates is None else np.asarray(covariates, dtype=float).reshape(m, -1)
    names = covariate_names or tuple(f"x{k}" for k in range(cov.shape[1]))
    group = ["all"] * m if group is None else list(group)
    levels = tuple(dict.fromkeys(group))
    return Cohort(
        ids=tuple(ids) if ids is not None else tuple(str(k) for k in range(m)),
        time=time,
        event=np.asarray(event, dtype=bool),
        covariates=cov,
        group=group,
        covariate_names=tuple(names),
        group_levels=levels,
    )
