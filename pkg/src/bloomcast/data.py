"""Daily-temperature and bloom-date ingestion, cleaning, and window samples.

Input files are plain UTF-8 CSV (LF or CRLF):

* temperature: header ``date,tmax_c,tmin_c,tavg_c``; ISO-8601 dates; an empty
  or unparseable temperature cell is a missing observation.
* bloom: header ``year,bloom_date``; one full-flowering date per year.

Dates are converted to a 1-based day-of-year so that leap years are handled
by exact calendar arithmetic instead of a fixed 365-day assumption.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

TEMPERATURE_SCHEMA = {"date": "date", "tmax": "tmax_c", "tmin": "tmin_c", "tavg": "tavg_c"}
BLOOM_COLUMNS = ("year", "bloom_date")
CHANNELS = ("tavg", "tmin", "tmax")


class DataFormatError(ValueError):
    """An input CSV violates the documented format contract."""


class ImputationError(ValueError):
    """A record has no average temperature and no extremes to derive one."""


def to_day_of_year(year: int, month: int, day: int) -> int:
    """1-based ordinal of a calendar date within its year.

    Raises ValueError for dates that do not exist (e.g. Feb 30, or Feb 29
    outside leap years).
    """
    return dt.date(year, month, day).timetuple().tm_yday


def from_day_of_year(year: int, doy: int) -> tuple[int, int]:
    """Inverse of :func:`to_day_of_year`; returns ``(month, day)``."""
    date = dt.date(year, 1, 1) + dt.timedelta(days=doy - 1)
    if date.year != year:
        raise ValueError(f"day-of-year {doy} does not exist in {year}")
    return date.month, date.day


@dataclass(frozen=True)
class DailyRecord:
    """One day's temperature observations for one site (°C)."""

    year: int
    doy: int
    tmax: float | None = None
    tmin: float | None = None
    tavg: float | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.doy <= 366:
            raise ValueError(f"doy {self.doy} outside 1..366")
        if self.tmax is not None and self.tmin is not None and self.tmax < self.tmin:
            raise ValueError(
                f"tmax {self.tmax} < tmin {self.tmin} at {self.year} doy {self.doy}"
            )


@dataclass(frozen=True)
class BloomEvent:
    """Full-flowering (peak bloom) day-of-year for one year."""

    year: int
    bloom_doy: int

    def __post_init__(self) -> None:
        if not 1 <= self.bloom_doy <= 366:
            raise ValueError(f"bloom_doy {self.bloom_doy} outside 1..366")


@dataclass(eq=False)
class WindowSample:
    """Feature vector for one anchor day plus its class label.

    ``label`` is in ``{0..k}``: label i in 1..k means bloom is i days after
    the anchor, label 0 means bloom is more than k days away. Anchors on or
    after the bloom date are never emitted.
    """

    features: np.ndarray
    label: int
    year: int
    anchor_doy: int


@dataclass
class Dataset:
    samples: list[WindowSample]
    k: int
    feature_len: int
    class_counts: dict[int, int] = field(default_factory=dict)

    @classmethod
    def build(cls, samples: list[WindowSample], k: int, feature_len: int) -> "Dataset":
        for s in samples:
            if not 0 <= s.label <= k:
                raise ValueError(f"label {s.label} outside 0..{k}")
            if s.features.shape != (feature_len,):
                raise ValueError(
                    f"feature length {s.features.shape} != ({feature_len},)"
                )
            if not np.all(np.isfinite(s.features)):
                raise ValueError(f"non-finite features at {s.year} doy {s.anchor_doy}")
        counts = dict(sorted(Counter(s.label for s in samples).items()))
        return cls(samples=samples, k=k, feature_len=feature_len, class_counts=counts)

    @property
    def n(self) -> int:
        return len(self.samples)

    def feature_matrix(self) -> np.ndarray:
        if not self.samples:
            return np.empty((0, self.feature_len))
        return np.stack([s.features for s in self.samples]).astype(float)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=int)

    def subset_by_years(self, first: int, last: int) -> "Dataset":
        kept = [s for s in self.samples if first <= s.year <= last]
        return Dataset.build(kept, k=self.k, feature_len=self.feature_len)


def _parse_temp(cell: str) -> float | None:
    cell = cell.strip()
    if not cell:
        return None
    try:
        return float(cell)
    except ValueError:
        return None


def _read_rows(path: str | Path, required: tuple[str, ...]):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None or any(col not in header for col in required):
            raise DataFormatError(
                f"{path}: header must contain columns {','.join(required)}, got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def parse_temperature_csv(
    path: str | Path, schema: dict[str, str] | None = None
) -> list[DailyRecord]:
    """Read a temperature CSV into records sorted by (year, doy).

    ``schema`` maps the logical fields date/tmax/tmin/tavg to column names;
    defaults to the documented ``date,tmax_c,tmin_c,tavg_c`` header.
    Unparseable temperature cells become missing values; duplicate dates are
    an error.
    """
    cols = dict(TEMPERATURE_SCHEMA if schema is None else schema)
    records: dict[tuple[int, int], DailyRecord] = {}
    for lineno, row in _read_rows(path, tuple(cols.values())):
        raw_date = (row[cols["date"]] or "").strip()
        try:
            date = dt.date.fromisoformat(raw_date)
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: bad date {raw_date!r}") from exc
        key = (date.year, date.timetuple().tm_yday)
        if key in records:
            raise DataFormatError(f"{path}:{lineno}: duplicate row for {raw_date}")
        try:
            records[key] = DailyRecord(
                year=key[0],
                doy=key[1],
                tmax=_parse_temp(row[cols["tmax"]] or ""),
                tmin=_parse_temp(row[cols["tmin"]] or ""),
                tavg=_parse_temp(row[cols["tavg"]] or ""),
            )
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    return [records[key] for key in sorted(records)]


def parse_bloom_csv(path: str | Path) -> list[BloomEvent]:
    """Read a bloom CSV (``year,bloom_date``) into events sorted by year."""
    events: dict[int, BloomEvent] = {}
    for lineno, row in _read_rows(path, BLOOM_COLUMNS):
        try:
            year = int((row["year"] or "").strip())
            date = dt.date.fromisoformat((row["bloom_date"] or "").strip())
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
        if date.year != year:
            raise DataFormatError(
                f"{path}:{lineno}: bloom_date {date} not in year {year}"
            )
        if year in events:
            raise DataFormatError(f"{path}:{lineno}: duplicate bloom event for {year}")
        events[year] = BloomEvent(year=year, bloom_doy=date.timetuple().tm_yday)
    return [events[y] for y in sorted(events)]


def impute_tavg(record: DailyRecord) -> DailyRecord:
    """Fill a missing daily average as the mean of the daily extremes."""
    if record.tavg is not None:
        return record
    if record.tmax is None or record.tmin is None:
        raise ImputationError(
            f"cannot impute tavg at {record.year} doy {record.doy}: extremes missing"
        )
    return replace(record, tavg=(record.tmax + record.tmin) / 2.0)


def impute_all(
    records: list[DailyRecord], on_unimputable: str = "error"
) -> list[DailyRecord]:
    """Impute every record; ``on_unimputable`` is ``error`` or ``drop``.

    Dropping turns an unusable record into a plain missing day, which the
    window builder then skips over.
    """
    if on_unimputable not in ("error", "drop"):
        raise ValueError(f"on_unimputable must be error|drop, got {on_unimputable!r}")
    out = []
    dropped = 0
    for rec in records:
        try:
            out.append(impute_tavg(rec))
        except ImputationError:
            if on_unimputable == "error":
                raise
            dropped += 1
    if dropped:
        logger.warning("dropped %d records with no usable temperature", dropped)
    return out


def label_for_anchor(anchor_doy: int, bloom_doy: int, k: int) -> int | None:
    """Class for an anchor day given that year's bloom day.

    Returns d = bloom - anchor when 1 <= d <= k, 0 when bloom is more than
    k days away, and None when the anchor falls on or after the bloom date
    (no forward prediction exists there).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    d = bloom_doy - anchor_doy
    if d <= 0:
        return None
    return d if d <= k else 0


def stats_features(window) -> np.ndarray:
    """[min, max, mean, population variance] of a temperature window."""
    values = np.asarray(window, dtype=float)
    if values.size == 0:
        raise ValueError("empty window")
    return np.array(
        [values.min(), values.max(), values.mean(), values.var()], dtype=float
    )


def build_windows(
    records: list[DailyRecord],
    events: list[BloomEvent],
    window_len: int,
    k: int,
    mode: str = "raw",
    channels: tuple[str, ...] = ("tavg",),
) -> Dataset:
    """Construct labeled sliding-window samples from imputed daily records.

    For each year with a bloom event and each anchor day whose trailing
    ``window_len``-day window (anchor inclusive) is fully observed, emits one
    sample. Raw mode concatenates the windowed readings of each requested
    channel day by day in chronological order; stats mode reduces the tavg
    window to [min, max, mean, variance]. Anchors whose window straddles a
    missing day are skipped; years without temperature records are skipped
    with a warning.
    """
    if window_len < 1:
        raise ValueError(f"window_len must be >= 1, got {window_len}")
    if mode not in ("raw", "stats"):
        raise ValueError(f"mode must be raw|stats, got {mode!r}")
    if not channels or any(ch not in CHANNELS for ch in channels):
        raise ValueError(f"channels must be a nonempty subset of {CHANNELS}")
    need = channels if mode == "raw" else ("tavg",)
    feature_len = window_len * len(channels) if mode == "raw" else 4

    by_year: dict[int, dict[int, DailyRecord]] = {}
    for rec in records:
        by_year.setdefault(rec.year, {})[rec.doy] = rec

    samples: list[WindowSample] = []
    for event in sorted(events, key=lambda e: e.year):
        days = by_year.get(event.year)
        if days is None:
            logger.warning("no temperature records for %d; year skipped", event.year)
            continue
        for anchor in range(window_len, max(days) + 1):
            label = label_for_anchor(anchor, event.bloom_doy, k)
            if label is None:
                continue
            window = [days.get(d) for d in range(anchor - window_len + 1, anchor + 1)]
            if any(
                rec is None or any(getattr(rec, ch) is None for ch in need)
                for rec in window
            ):
                continue
            if mode == "raw":
                feats = np.array(
                    [getattr(rec, ch) for rec in window for ch in channels],
                    dtype=float,
                )
            else:
                feats = stats_features([rec.tavg for rec in window])
            samples.append(
                WindowSample(features=feats, label=label, year=event.year, anchor_doy=anchor)
            )
    return Dataset.build(samples, k=k, feature_len=feature_len)
