"""Panel data model for daily security returns and market capitalizations.

A panel is a dense date-by-security matrix pair (returns, caps) where NaN
marks a security absent on a day. A finite cap with a NaN return is a
"missing return" record, which must be resolved by `missing_return_policy`
before ranking or backtesting. Ingestion accepts CRSP-shaped CSV exports
through a configurable column mapping; `clean_panel` applies the -100%
return floor so log-returns stay finite downstream.
"""

from __future__ import annotations

import csv
import datetime
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

DEFAULT_SCHEMA = {"date": "date", "id": "id", "return": "return", "cap": "cap"}
DEFAULT_CLEAN_FLOOR = -0.95
MISSING_POLICIES = ("drop", "zero", "carry-flag")

_MISSING_TOKENS = {"", "na", "nan", "null", ".", "none"}


class PanelError(ValueError):
    """Raised for malformed input data or violated panel preconditions."""


class IngestWarning(UserWarning):
    """Non-fatal data-quality issue found while reading a CSV file."""


def _as_day(value) -> np.datetime64:
    try:
        if isinstance(value, np.datetime64):
            return value.astype("datetime64[D]")
        return np.datetime64(datetime.date.fromisoformat(str(value)), "D")
    except ValueError as exc:
        raise PanelError(f"invalid date {value!r}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class ReturnPanel:
    """Immutable daily panel of total returns and market caps.

    ``returns[t, i]`` is the total return earned during day ``t`` by security
    ``security_ids[i]``; ``caps[t, i]`` is its capitalization entering day
    ``t`` (the value used to rank that day). NaN in ``caps`` means the
    security is not in the panel that day.
    """

    dates: np.ndarray            # (n_days,) datetime64[D], strictly increasing
    security_ids: tuple[str, ...]  # sorted ascending, unique
    returns: np.ndarray          # (n_days, n_securities) float64
    caps: np.ndarray             # (n_days, n_securities) float64
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        returns = np.ascontiguousarray(self.returns, dtype=np.float64)
        caps = np.ascontiguousarray(self.caps, dtype=np.float64)
        ids = tuple(str(s) for s in self.security_ids)
        if dates.ndim != 1 or dates.size == 0:
            raise PanelError("panel needs at least one trading day")
        if np.any(dates[1:] <= dates[:-1]):
            raise PanelError("trading days must be strictly increasing")
        if not ids or any(not s for s in ids):
            raise PanelError("security ids must be non-empty strings")
        if len(set(ids)) != len(ids):
            raise PanelError("security ids must be unique")
        if list(ids) != sorted(ids):
            raise PanelError("security ids must be sorted ascending")
        shape = (dates.size, len(ids))
        if returns.shape != shape or caps.shape != shape:
            raise PanelError(f"matrix shapes must be {shape}")
        if np.any(caps[np.isfinite(caps)] <= 0.0):
            raise PanelError("market caps must be positive")
        finite_ret = returns[np.isfinite(returns)]
        if np.any(finite_ret < -1.0):
            raise PanelError("total returns below -100% are not allowed")
        # an absent security has neither a cap nor a return
        if np.any(np.isfinite(returns) & ~np.isfinite(caps)):
            raise PanelError("return present for a (date, id) with no cap record")
        for arr in (dates, returns, caps):
            arr.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "returns", returns)
        object.__setattr__(self, "caps", caps)
        object.__setattr__(self, "security_ids", ids)

    @property
    def n_days(self) -> int:
        return self.dates.size

    @property
    def n_securities(self) -> int:
        return len(self.security_ids)

    @cached_property
    def _id_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.security_ids)}

    @cached_property
    def _month_table(self) -> tuple[tuple[str, ...], np.ndarray]:
        months = self.dates.astype("datetime64[M]")
        is_first = np.r_[True, months[1:] != months[:-1]]
        starts = np.flatnonzero(is_first)
        labels = tuple(str(m) for m in months[starts])
        return labels, starts

    @property
    def month_labels(self) -> tuple[str, ...]:
        """Calendar months present in the panel, as 'YYYY-MM' strings."""
        return self._month_table[0]

    @property
    def month_start_indices(self) -> np.ndarray:
        """Day index of the first trading day of each month."""
        return self._month_table[1]

    def day_index(self, date) -> int:
        d = _as_day(date)
        i = int(np.searchsorted(self.dates, d))
        if i >= self.n_days or self.dates[i] != d:
            raise PanelError(f"date {d} not in panel")
        return i

    def column_indices(self, ids) -> np.ndarray:
        idx = self._id_index
        try:
            return np.array([idx[s] for s in ids], dtype=np.intp)
        except KeyError as exc:
            raise PanelError(f"unknown security id {exc.args[0]!r}") from exc

    def with_meta(self, **extra) -> "ReturnPanel":
        return ReturnPanel(self.dates, self.security_ids, self.returns,
                           self.caps, {**self.meta, **extra})


def panel_equal(a: ReturnPanel, b: ReturnPanel) -> bool:
    """Data equality of two panels (metadata is not compared)."""
    if a.security_ids != b.security_ids or not np.array_equal(a.dates, b.dates):
        return False
    same = lambda x, y: np.array_equal(x, y, equal_nan=True)
    return same(a.returns, b.returns) and same(a.caps, b.caps)


def panel_from_records(records, meta: dict | None = None) -> ReturnPanel:
    """Build a panel from (date, id, return-or-None, cap) tuples.

    Later records win on duplicate (date, id) keys.
    """
    store: dict[tuple[str, str], tuple[float | None, float]] = {}
    for date, sec, ret, cap in records:
        day = str(_as_day(date))
        store[(day, str(sec))] = (None if ret is None else float(ret), float(cap))
    if not store:
        raise PanelError("no records")
    days = sorted({k[0] for k in store})
    ids = sorted({k[1] for k in store})
    day_pos = {d: i for i, d in enumerate(days)}
    id_pos = {s: j for j, s in enumerate(ids)}
    shape = (len(days), len(ids))
    returns = np.full(shape, np.nan)
    caps = np.full(shape, np.nan)
    for (day, sec), (ret, cap) in store.items():
        t, j = day_pos[day], id_pos[sec]
        caps[t, j] = cap
        if ret is not None:
            returns[t, j] = ret
    dates = np.array(days, dtype="datetime64[D]")
    return ReturnPanel(dates, tuple(ids), returns, caps, meta or {})


def _data_rows(path):
    """Yield (line_number, row) from a CSV file, skipping comments/blanks."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        for row in reader:
            if not row or not "".join(row).strip():
                continue
            if row[0].lstrip().startswith("#"):
                continue
            yield reader.line_num, row


def ingest_csv(path, schema: dict[str, str] | None = None) -> ReturnPanel:
    """Read a returns/caps panel from a CSV file.

    ``schema`` maps the canonical column names ("date", "id", "return",
    "cap") to the file's actual header names; omitted keys use the canonical
    name itself. Returns exactly equal to -100% are accepted here and left
    for `clean_panel`; anything below -100% is rejected with its line
    number. Duplicate (date, id) rows keep the last occurrence and emit an
    `IngestWarning`. An empty return field marks a missing return.
    """
    path = Path(path)
    if not path.exists():
        raise PanelError(f"input file not found: {path}")
    if schema:
        unknown = set(schema) - set(DEFAULT_SCHEMA)
        if unknown:
            raise PanelError(f"unknown schema key(s): {sorted(unknown)}")
    mapping = {**DEFAULT_SCHEMA, **(schema or {})}

    rows = _data_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise PanelError(f"{path}: file has no header row") from None
    positions = {}
    for canon, actual in mapping.items():
        if actual not in header:
            raise PanelError(f"{path}: missing required column {actual!r}")
        positions[canon] = header.index(actual)
    width = max(positions.values()) + 1

    store: dict[tuple[str, str], tuple[float | None, float]] = {}
    duplicates = 0
    count = 0
    for line_num, row in rows:
        if len(row) < width:
            raise PanelError(f"{path} line {line_num}: expected at least "
                             f"{width} columns, found {len(row)}")
        raw_date = row[positions["date"]].strip()
        try:
            day = datetime.date.fromisoformat(raw_date).isoformat()
        except ValueError:
            raise PanelError(f"{path} line {line_num}: invalid date {raw_date!r}") from None
        sec = row[positions["id"]].strip()
        if not sec:
            raise PanelError(f"{path} line {line_num}: empty security id")

        raw_ret = row[positions["return"]].strip()
        if raw_ret.lower() in _MISSING_TOKENS:
            ret: float | None = None
        else:
            try:
                ret = float(raw_ret)
            except ValueError:
                raise PanelError(f"{path} line {line_num}: invalid return {raw_ret!r}") from None
            if not np.isfinite(ret):
                raise PanelError(f"{path} line {line_num}: non-finite return {raw_ret!r}")
            if ret < -1.0:
                raise PanelError(f"{path} line {line_num}: return {ret} is below -100%")

        raw_cap = row[positions["cap"]].strip()
        try:
            cap = float(raw_cap)
        except ValueError:
            raise PanelError(f"{path} line {line_num}: invalid cap {raw_cap!r}") from None
        if not np.isfinite(cap) or cap <= 0.0:
            raise PanelError(f"{path} line {line_num}: cap must be positive, got {raw_cap!r}")

        key = (day, sec)
        if key in store:
            duplicates += 1
            warnings.warn(f"{path} line {line_num}: duplicate record for "
                          f"{key}; keeping the later row", IngestWarning, stacklevel=2)
        store[key] = (ret, cap)
        count += 1

    panel = panel_from_records(
        ((d, s, ret, cap) for (d, s), (ret, cap) in store.items()),
        meta={"source": str(path), "rows_ingested": count, "duplicate_rows": duplicates},
    )
    return panel


def clean_panel(panel: ReturnPanel, floor: float = DEFAULT_CLEAN_FLOOR) -> ReturnPanel:
    """Replace every -100% return with ``floor`` (default -95%).

    Idempotent; the replacement count is recorded in the panel metadata as
    ``clean_replacements``.
    """
    if not (-1.0 < floor <= 0.0):
        raise PanelError(f"floor must be in (-1, 0], got {floor}")
    mask = panel.returns == -1.0
    count = int(mask.sum())
    returns = panel.returns.copy()
    returns[mask] = floor
    return ReturnPanel(panel.dates, panel.security_ids, returns, panel.caps,
                       {**panel.meta, "clean_floor": floor, "clean_replacements": count})


def missing_return_policy(panel: ReturnPanel, policy: str = "drop") -> ReturnPanel:
    """Resolve missing-return records so every remaining record has a return.

    drop        exclude the security from that day's universe
    zero        keep the record with a return of 0
    carry-flag  same as zero, but the imputed (date, id) pairs are listed in
                the panel metadata under ``imputed_records``
    """
    if policy not in MISSING_POLICIES:
        raise PanelError(f"unknown missing-return policy {policy!r}; "
                         f"choose one of {MISSING_POLICIES}")
    missing = np.isfinite(panel.caps) & ~np.isfinite(panel.returns)
    meta = {**panel.meta, "missing_policy": policy,
            "missing_returns": int(missing.sum())}
    returns = panel.returns.copy()
    caps = panel.caps.copy()
    if policy == "drop":
        caps[missing] = np.nan
    else:
        returns[missing] = 0.0
        if policy == "carry-flag":
            t_idx, j_idx = np.nonzero(missing)
            meta["imputed_records"] = [
                (str(panel.dates[t]), panel.security_ids[j])
                for t, j in zip(t_idx.tolist(), j_idx.tolist())
            ]
    return ReturnPanel(panel.dates, panel.security_ids, returns, caps, meta)


def write_panel_csv(panel: ReturnPanel, path, provenance: dict | None = None) -> int:
    """Write a panel in the canonical four-column layout; returns row count.

    Provenance entries are emitted as leading ``# key=value`` comment lines,
    which `ingest_csv` skips, so write -> ingest round-trips the data.
    """
    present = np.isfinite(panel.caps)
    lines = []
    for key in sorted(provenance or {}):
        lines.append(f"# {key}={provenance[key]}")
    lines.append("date,id,return,cap")
    rows = 0
    for t in range(panel.n_days):
        day = str(panel.dates[t])
        for j in np.flatnonzero(present[t]):
            ret = panel.returns[t, j]
            ret_text = "" if not np.isfinite(ret) else repr(float(ret))
            lines.append(f"{day},{panel.security_ids[j]},{ret_text},{repr(float(panel.caps[t, j]))}")
            rows += 1
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows


@dataclass(frozen=True, eq=False)
class RiskFreeCurve:
    """Step curve of annualized one-year risk-free yields.

    ``yield_at(date)`` returns the most recent observation on or before the
    date, which is the yield in force when a window starts.
    """

    dates: np.ndarray   # (n,) datetime64[D], strictly increasing
    yields: np.ndarray  # (n,) float64, decimal fractions per year

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        values = np.ascontiguousarray(self.yields, dtype=np.float64)
        if dates.ndim != 1 or dates.size == 0 or values.shape != dates.shape:
            raise PanelError("risk-free curve needs matching date/yield arrays")
        if np.any(dates[1:] <= dates[:-1]):
            raise PanelError("risk-free dates must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise PanelError("risk-free yields must be finite")
        for arr in (dates, values):
            arr.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "yields", values)

    @classmethod
    def from_csv(cls, path) -> "RiskFreeCurve":
        """Read a two-column (date, yield) CSV; a header row is optional."""
        path = Path(path)
        if not path.exists():
            raise PanelError(f"risk-free file not found: {path}")
        days, values = [], []
        for line_num, row in _data_rows(path):
            if len(row) < 2:
                raise PanelError(f"{path} line {line_num}: expected 2 columns")
            try:
                value = float(row[1])
            except ValueError:
                if not days:  # header row
                    continue
                raise PanelError(f"{path} line {line_num}: invalid yield {row[1]!r}") from None
            days.append(_as_day(row[0].strip()))
            values.append(value)
        if not days:
            raise PanelError(f"{path}: no risk-free observations")
        return cls(np.array(days, dtype="datetime64[D]"), np.array(values))

    def yield_at(self, date) -> float:
        d = _as_day(date)
        i = int(np.searchsorted(self.dates, d, side="right")) - 1
        if i < 0:
            raise PanelError(f"no risk-free observation on or before {d}")
        return float(self.yields[i])
