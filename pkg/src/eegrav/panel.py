"""Count panels, spatial structure, covariates and calendar handling.

All containers are frozen dataclasses holding read-only numpy arrays, so
they can be shared between fits without copying.
"""
from __future__ import annotations

import calendar
import datetime as dt
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DAILY = "daily"
MONTHLY = "monthly"


class PanelError(ValueError):
    """Raised for malformed panels, axes or spatial inputs."""


def _frozen(a, dtype=None) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _add_months(d: dt.date, n: int) -> dt.date:
    m = d.month - 1 + n
    return dt.date(d.year + m // 12, m % 12 + 1, 1)


@dataclass(frozen=True)
class TimeAxis:
    resolution: str
    origin: dt.date
    length: int

    def __post_init__(self):
        if self.resolution not in (DAILY, MONTHLY):
            raise PanelError(f"unknown resolution {self.resolution!r}")
        if self.length < 1:
            raise PanelError("a time axis needs at least one point")
        if not isinstance(self.origin, dt.date):
            raise PanelError("origin must be a calendar date")
        if self.resolution == MONTHLY and self.origin.day != 1:
            object.__setattr__(self, "origin", self.origin.replace(day=1))

    def dates(self) -> list[dt.date]:
        if self.resolution == DAILY:
            return [self.origin + dt.timedelta(days=t) for t in range(self.length)]
        return [_add_months(self.origin, t) for t in range(self.length)]

    def labels(self) -> list[str]:
        if self.resolution == DAILY:
            return [d.isoformat() for d in self.dates()]
        return [f"{d.year:04d}-{d.month:02d}" for d in self.dates()]

    def calendar_months(self) -> np.ndarray:
        """Calendar month (1..12) of every time point."""
        return np.array([d.month for d in self.dates()], dtype=np.int64)

    def month_keys(self) -> list[tuple[int, int]]:
        return [(d.year, d.month) for d in self.dates()]

    def index_of(self, d: dt.date) -> int:
        if self.resolution == DAILY:
            t = (d - self.origin).days
        else:
            t = (d.year - self.origin.year) * 12 + d.month - self.origin.month
        if not 0 <= t < self.length:
            raise PanelError(f"{d} outside the time axis")
        return t


@dataclass(frozen=True)
class UnitIndex:
    """Units (districts or regions) with their region membership."""

    unit_ids: tuple
    unit_regions: tuple

    def __post_init__(self):
        ids = tuple(str(u) for u in self.unit_ids)
        regs = tuple(str(r) for r in self.unit_regions)
        if len(ids) != len(regs):
            raise PanelError("every unit needs exactly one region")
        if len(set(ids)) != len(ids):
            raise PanelError("unit ids must be unique")
        if not ids:
            raise PanelError("empty unit index")
        object.__setattr__(self, "unit_ids", ids)
        object.__setattr__(self, "unit_regions", regs)

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def regions(self) -> tuple:
        return tuple(dict.fromkeys(self.unit_regions))

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    def region_index(self) -> np.ndarray:
        lookup = {r: k for k, r in enumerate(self.regions)}
        return np.array([lookup[r] for r in self.unit_regions], dtype=np.int64)

    def region_sizes(self) -> np.ndarray:
        return np.bincount(self.region_index(), minlength=self.n_regions)

    def position(self, unit_id) -> int:
        try:
            return self.unit_ids.index(str(unit_id))
        except ValueError:
            raise PanelError(f"unknown unit id {unit_id!r}") from None


@dataclass(frozen=True)
class CountPanel:
    axis: TimeAxis
    units: UnitIndex
    counts: np.ndarray
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (self.units.n_units, self.axis.length):
            raise PanelError(
                f"counts shape {c.shape} does not match "
                f"{self.units.n_units} units x {self.axis.length} times"
            )
        if not np.all(np.isfinite(c)) or np.any(c < 0) or np.any(c != np.round(c)):
            raise PanelError("counts must be finite nonnegative integers")
        object.__setattr__(self, "counts", _frozen(c, np.int64))

    def __eq__(self, other):
        if not isinstance(other, CountPanel):
            return NotImplemented
        return (self.axis == other.axis and self.units == other.units
                and np.array_equal(self.counts, other.counts))

    @property
    def n_units(self) -> int:
        return self.units.n_units

    @property
    def n_times(self) -> int:
        return self.axis.length


def path_distances(adjacency: np.ndarray) -> np.ndarray:
    """Hop counts between units by breadth-first search (inf if unreachable)."""
    adj = np.asarray(adjacency, dtype=bool)
    n = adj.shape[0]
    out = np.full((n, n), np.inf)
    nbrs = [np.flatnonzero(adj[i]) for i in range(n)]
    for s in range(n):
        out[s, s] = 0.0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if out[s, v] == np.inf:
                    out[s, v] = out[s, u] + 1
                    queue.append(v)
    return out


@dataclass(frozen=True)
class SpatialStructure:
    """Adjacency, hop distances and district-to-airport distances.

    ``path_distance`` is float so unreachable pairs can be ``inf``;
    ``airport_distance`` is km with ``nan`` for pairs that were not supplied.
    """

    adjacency: np.ndarray
    path_distance: np.ndarray
    airport_ids: tuple = ()
    airport_regions: tuple = ()
    airport_distance: np.ndarray | None = None

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        n = adj.shape[0]
        if adj.shape != (n, n) or not np.array_equal(adj, adj.T):
            raise PanelError("adjacency must be a symmetric square matrix")
        if np.any(np.diag(adj)):
            raise PanelError("a unit cannot be adjacent to itself")
        o = np.asarray(self.path_distance, dtype=float)
        if o.shape != (n, n) or np.any(np.diag(o) != 0) or not np.array_equal(o, o.T):
            raise PanelError("path distances must be symmetric with zero diagonal")
        if not np.array_equal(adj, o == 1):
            raise PanelError("adjacency must coincide with path distance 1")
        object.__setattr__(self, "adjacency", _frozen(adj))
        object.__setattr__(self, "path_distance", _frozen(o))
        ids = tuple(str(a) for a in self.airport_ids)
        regs = tuple(str(r) for r in self.airport_regions)
        if len(ids) != len(regs) or len(set(ids)) != len(ids):
            raise PanelError("airport ids must be unique with one region each")
        object.__setattr__(self, "airport_ids", ids)
        object.__setattr__(self, "airport_regions", regs)
        if self.airport_distance is None:
            d = np.full((n, len(ids)), np.nan)
        else:
            d = np.asarray(self.airport_distance, dtype=float)
        if d.shape != (n, len(ids)):
            raise PanelError("airport distance matrix must be units x airports")
        if np.any(d[~np.isnan(d)] < 0):
            raise PanelError("airport distances must be nonnegative")
        object.__setattr__(self, "airport_distance", _frozen(d))

    @classmethod
    def from_adjacency(cls, adjacency, **airports) -> "SpatialStructure":
        adj = np.asarray(adjacency, dtype=bool)
        return cls(adj, path_distances(adj), **airports)

    @property
    def n_units(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_airports(self) -> int:
        return len(self.airport_ids)

    def airports_in(self, region) -> np.ndarray:
        return np.array([k for k, r in enumerate(self.airport_regions) if r == str(region)],
                        dtype=np.int64)

    def airports_per_region(self, regions: Sequence) -> np.ndarray:
        return np.array([len(self.airports_in(r)) for r in regions], dtype=np.int64)


IDENTITY = "identity"
LOG1P = "log1p"


@dataclass(frozen=True)
class CovariateCube:
    """Monthly air-passenger counts, one row per airport."""

    airport_ids: tuple
    months: tuple
    raw: np.ndarray
    transform: str = LOG1P

    def __post_init__(self):
        ids = tuple(str(a) for a in self.airport_ids)
        months = tuple((int(y), int(m)) for y, m in self.months)
        raw = np.asarray(self.raw, dtype=float)
        if raw.shape != (len(ids), len(months)):
            raise PanelError("covariate values must be airports x months")
        if np.any(~np.isfinite(raw)) or np.any(raw < 0):
            raise PanelError("passenger counts must be finite and nonnegative")
        if self.transform not in (IDENTITY, LOG1P):
            raise PanelError(f"unknown covariate transform {self.transform!r}")
        object.__setattr__(self, "airport_ids", ids)
        object.__setattr__(self, "months", months)
        object.__setattr__(self, "raw", _frozen(raw))

    @property
    def values(self) -> np.ndarray:
        return np.log1p(self.raw) if self.transform == LOG1P else self.raw.copy()

    def aligned(self, axis: TimeAxis, airport_ids: Sequence) -> np.ndarray:
        """Transformed covariate as (airports, T) on a monthly axis."""
        if axis.resolution != MONTHLY:
            raise PanelError("covariates align only with a monthly axis")
        col = {m: k for k, m in enumerate(self.months)}
        row = {a: k for k, a in enumerate(self.airport_ids)}
        missing = [m for m in axis.month_keys() if m not in col]
        if missing:
            raise PanelError(f"covariate cube lacks months {missing[:3]}")
        absent = [a for a in airport_ids if str(a) not in row]
        if absent:
            raise PanelError(f"covariate cube lacks airports {absent}")
        vals = self.values
        return vals[np.ix_([row[str(a)] for a in airport_ids],
                           [col[m] for m in axis.month_keys()])]


def _complete_months(axis: TimeAxis) -> list[tuple[int, int]]:
    """(start index, n days) of every complete calendar month on a daily axis."""
    first = axis.origin
    last = axis.origin + dt.timedelta(days=axis.length - 1)
    start = first if first.day == 1 else _add_months(first, 1)
    out = []
    while True:
        ndays = calendar.monthrange(start.year, start.month)[1]
        end = start + dt.timedelta(days=ndays - 1)
        if end > last:
            break
        out.append(((start - first).days, ndays))
        start = _add_months(start, 1)
    return out


def aggregate_to_monthly(panel: CountPanel) -> CountPanel:
    """Sum daily counts over complete calendar months; partial months are dropped."""
    if panel.axis.resolution != DAILY:
        raise PanelError("aggregate_to_monthly needs a daily panel")
    months = _complete_months(panel.axis)
    if not months:
        raise PanelError("insufficient span: no complete calendar month")
    out = np.stack([panel.counts[:, s:s + n].sum(axis=1) for s, n in months], axis=1)
    origin = panel.axis.origin + dt.timedelta(days=months[0][0])
    prov = dict(panel.provenance, aggregated_from="daily")
    return CountPanel(TimeAxis(MONTHLY, origin, len(months)), panel.units, out, prov)


def mid_month_slice(axis: TimeAxis, values) -> tuple[TimeAxis, np.ndarray]:
    """Pick the value at day ceil(days_in_month / 2) of every complete month.

    ``values`` is indexed by ``axis`` along its last dimension. Returns the
    monthly axis of the complete months and the slice.
    """
    v = np.asarray(values)
    if v.size == 0:
        raise PanelError("empty series")
    if axis.resolution != DAILY:
        raise PanelError("mid_month_slice needs a daily series")
    if v.shape[-1] != axis.length:
        raise PanelError("series length does not match the time axis")
    months = _complete_months(axis)
    if not months:
        raise PanelError("series spans no complete month")
    idx = [s + (n + 1) // 2 - 1 for s, n in months]
    origin = axis.origin + dt.timedelta(days=months[0][0])
    return TimeAxis(MONTHLY, origin, len(months)), v[..., idx]
