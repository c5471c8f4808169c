"""Sensor log ingestion: typed time series with gap and quality annotations.

Raw monitoring files arrive as CSV exports (one file per sensor, header row
naming the timestamp plus channel columns). Parsing turns each declared
channel into a :class:`TimeSeries` of quality-flagged readings; gap detection
and grid alignment prepare those series for event statistics downstream.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .errors import (
    ConfigError,
    EmptyFile,
    IncompatibleUnits,
    MalformedHeader,
    NonMonotonicTimestamps,
)


class Quantity(str, Enum):
    AIR_TEMP = "air_temp"
    REL_HUMIDITY = "rel_humidity"
    SURFACE_TEMP = "surface_temp"
    WATER_CONTENT = "water_content"
    CRACK_WIDTH = "crack_width"


UNITS: dict[Quantity, str] = {
    Quantity.AIR_TEMP: "degC",
    Quantity.REL_HUMIDITY: "pct",
    Quantity.SURFACE_TEMP: "degC",
    Quantity.WATER_CONTENT: "pct",
    Quantity.CRACK_WIDTH: "mm",
}

# Instrument resolution defaults, one per measured quantity.
DEFAULT_RESOLUTIONS: dict[Quantity, float] = {
    Quantity.AIR_TEMP: 0.1,
    Quantity.REL_HUMIDITY: 1.5,
    Quantity.SURFACE_TEMP: 0.1,
    Quantity.WATER_CONTENT: 1.0,
    Quantity.CRACK_WIDTH: 0.1,
}

DEFAULT_VALID_RANGES: dict[Quantity, tuple[float, float]] = {
    Quantity.AIR_TEMP: (-40.0, 60.0),
    Quantity.REL_HUMIDITY: (0.0, 100.0),
    Quantity.SURFACE_TEMP: (-40.0, 80.0),
    Quantity.WATER_CONTENT: (0.0, 100.0),
    Quantity.CRACK_WIDTH: (0.0, 100.0),
}


class SensorKind(str, Enum):
    THERMO_HYGROMETER = "thermo_hygrometer"
    SURFACE_PROBE = "surface_probe"
    TDR_MOISTURE = "tdr_moisture"
    FISSUROMETER = "fissurometer"


PERMITTED_CHANNELS: dict[SensorKind, frozenset[Quantity]] = {
    SensorKind.THERMO_HYGROMETER: frozenset({Quantity.AIR_TEMP, Quantity.REL_HUMIDITY}),
    SensorKind.SURFACE_PROBE: frozenset({Quantity.SURFACE_TEMP}),
    SensorKind.TDR_MOISTURE: frozenset({Quantity.WATER_CONTENT}),
    SensorKind.FISSUROMETER: frozenset(
        {Quantity.CRACK_WIDTH, Quantity.AIR_TEMP, Quantity.REL_HUMIDITY}
    ),
}


class Quality(str, Enum):
    OK = "ok"
    OUT_OF_RANGE = "out_of_range"
    INTERPOLATED = "interpolated"


@dataclass(frozen=True)
class ChannelSpec:
    quantity: Quantity
    resolution: float = 0.0  # 0 selects the per-quantity default
    valid_range: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.resolution == 0.0:
            object.__setattr__(self, "resolution", DEFAULT_RESOLUTIONS[self.quantity])
        if self.valid_range == (0.0, 0.0):
            object.__setattr__(self, "valid_range", DEFAULT_VALID_RANGES[self.quantity])
        if self.resolution <= 0:
            raise ConfigError(f"resolution must be positive, got {self.resolution}")
        lo, hi = self.valid_range
        if not lo < hi:
            raise ConfigError(f"valid_range must satisfy min < max, got {self.valid_range}")

    @property
    def unit(self) -> str:
        return UNITS[self.quantity]


@dataclass(frozen=True)
class SensorSpec:
    sensor_id: str
    kind: SensorKind
    channels: tuple[ChannelSpec, ...]
    expected_interval: timedelta
    face: str = "NE"
    position: str = ""
    associated_block_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.expected_interval <= timedelta(0):
            raise ConfigError("expected_interval must be positive")
        if not self.channels:
            raise ConfigError(f"sensor {self.sensor_id}: channels must be non-empty")
        permitted = PERMITTED_CHANNELS[self.kind]
        for ch in self.channels:
            if ch.quantity not in permitted:
                raise ConfigError(
                    f"sensor {self.sensor_id}: channel {ch.quantity.value} "
                    f"not permitted for kind {self.kind.value}"
                )
        seen = [ch.quantity for ch in self.channels]
        if len(seen) != len(set(seen)):
            raise ConfigError(f"sensor {self.sensor_id}: duplicate channel quantity")

    def channel(self, quantity: Quantity) -> ChannelSpec:
        for ch in self.channels:
            if ch.quantity == quantity:
                return ch
        raise KeyError(quantity)


@dataclass(frozen=True)
class Reading:
    timestamp: datetime  # UTC
    value: float
    quality: Quality = Quality.OK


@dataclass(frozen=True)
class TimeSeries:
    """Time-ordered readings of one sensor channel.

    Timestamps are strictly increasing UTC instants. ``gaps`` lists
    [start, end] intervals between consecutive ok readings whose spacing
    exceeded the configured gap threshold (see :func:`detect_gaps`).
    """

    sensor_id: str
    quantity: Quantity
    readings: tuple[Reading, ...]
    gaps: tuple[tuple[datetime, datetime], ...] = ()
    unit: str = ""

    def __post_init__(self):
        if not self.unit:
            object.__setattr__(self, "unit", UNITS[self.quantity])
        for a, b in zip(self.readings, self.readings[1:]):
            if b.timestamp <= a.timestamp:
                raise ValueError(
                    f"timestamps not strictly increasing at {b.timestamp.isoformat()}"
                )

    @property
    def label(self) -> str:
        return f"{self.sensor_id}:{self.quantity.value}"

    def ok_readings(self) -> tuple[Reading, ...]:
        return tuple(r for r in self.readings if r.quality is Quality.OK)


@dataclass(frozen=True)
class RejectedRow:
    row: int  # 1-based data-row number (header excluded)
    reason: str


@dataclass(frozen=True)
class ParseResult:
    series: tuple[TimeSeries, ...]
    rejected: tuple[RejectedRow, ...]

    def by_quantity(self, quantity: Quantity) -> TimeSeries:
        for s in self.series:
            if s.quantity == quantity:
                return s
        raise KeyError(quantity)


def parse_timestamp(text: str, default_tz=timezone.utc) -> datetime:
    """Parse an ISO-8601 timestamp and normalize it to UTC.

    A trailing ``Z`` is accepted; timestamps without an offset are
    interpreted in ``default_tz`` (the per-site timezone).
    """
    cleaned = text.strip()
    if cleaned.endswith(("Z", "z")):
        cleaned = cleaned[:-1] + "+00:00"
    ts = datetime.fromisoformat(cleaned)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=default_tz)
    return ts.astimezone(timezone.utc)


def parse_number(text: str) -> float:
    """Parse a numeric field, accepting decimal comma as well as point."""
    s = text.strip()
    if not s:
        raise ValueError("empty numeric field")
    try:
        return float(s)
    except ValueError:
        return float(s.replace(",", ".", 1))


def _detect_delimiter(header_line: str) -> str:
    # Semicolons win when present: semicolon-delimited exports use the
    # decimal comma inside fields, so commas are not a reliable split.
    return ";" if ";" in header_line else ","


def parse_sensor_csv(raw_text: str, spec: SensorSpec, *, default_tz=timezone.utc) -> ParseResult:
    """Parse one sensor's CSV export into one TimeSeries per declared channel.

    The header row must name ``timestamp`` plus every channel declared in
    ``spec``; extra columns are ignored. Rows whose timestamp or any declared
    value fails to parse are rejected and reported by 1-based data-row
    number. Values outside a channel's valid range are kept with quality
    ``out_of_range``.

    Raises MalformedHeader, EmptyFile, or NonMonotonicTimestamps (duplicate
    or decreasing timestamps are file-level errors, not rejections).
    """
    stripped = raw_text.lstrip("﻿")
    if not stripped.strip():
        raise EmptyFile(f"sensor {spec.sensor_id}: no content")

    first_line = stripped.splitlines()[0]
    delimiter = _detect_delimiter(first_line)
    reader = csv.reader(io.StringIO(stripped), delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:  # pragma: no cover - guarded by the blank check
        raise EmptyFile(f"sensor {spec.sensor_id}: no header row")

    names = [h.strip().lstrip("﻿") for h in header]
    if "timestamp" not in names:
        raise MalformedHeader(f"sensor {spec.sensor_id}: header lacks 'timestamp' column")
    ts_col = names.index("timestamp")
    columns: dict[Quantity, int] = {}
    for ch in spec.channels:
        if ch.quantity.value not in names:
            raise MalformedHeader(
                f"sensor {spec.sensor_id}: header lacks declared column "
                f"'{ch.quantity.value}'"
            )
        columns[ch.quantity] = names.index(ch.quantity.value)

    readings: dict[Quantity, list[Reading]] = {q: [] for q in columns}
    rejected: list[RejectedRow] = []
    last_ts: Optional[datetime] = None
    n_cols_needed = max([ts_col, *columns.values()]) + 1

    for row_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue  # blank line, not a data row
        if len(row) < n_cols_needed:
            rejected.append(RejectedRow(row_no, "wrong field count"))
            continue
        try:
            ts = parse_timestamp(row[ts_col], default_tz)
        except ValueError:
            rejected.append(RejectedRow(row_no, f"unparseable timestamp {row[ts_col]!r}"))
            continue
        try:
            values = {q: parse_number(row[i]) for q, i in columns.items()}
        except ValueError:
            rejected.append(RejectedRow(row_no, "unparseable value"))
            continue
        if last_ts is not None and ts <= last_ts:
            raise NonMonotonicTimestamps(
                row_no,
                f"sensor {spec.sensor_id}: non-monotonic timestamp at data row "
                f"{row_no} ({row[ts_col].strip()})",
            )
        last_ts = ts
        for q, v in values.items():
            lo, hi = spec.channel(q).valid_range
            quality = Quality.OK if lo <= v <= hi else Quality.OUT_OF_RANGE
            readings[q].append(Reading(ts, v, quality))

    series = tuple(
        TimeSeries(spec.sensor_id, q, tuple(rs)) for q, rs in readings.items()
    )
    return ParseResult(series, tuple(rejected))


def series_to_csv(series: TimeSeries) -> str:
    """Serialize one series back to sensor-CSV form.

    Output uses UTC ISO-8601 timestamps and repr floats, so re-parsing with
    the same SensorSpec restores timestamps, values, and qualities exactly.
    """
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["timestamp", series.quantity.value])
    for r in series.readings:
        writer.writerow([r.timestamp.isoformat(), repr(r.value)])
    return out.getvalue()


def detect_gaps(
    series: TimeSeries, expected_interval: timedelta, gap_factor: float = 1.5
) -> TimeSeries:
    """Return a copy of ``series`` with the gaps field populated.

    A gap is any interval between consecutive ok readings longer than
    ``gap_factor * expected_interval``. Readings are never modified.
    """
    if gap_factor < 1:
        raise ConfigError(f"gap_factor must be >= 1, got {gap_factor}")
    threshold = expected_interval * gap_factor
    ok = series.ok_readings()
    gaps = [
        (a.timestamp, b.timestamp)
        for a, b in zip(ok, ok[1:])
        if b.timestamp - a.timestamp > threshold
    ]
    return replace(series, gaps=tuple(gaps))


@dataclass(frozen=True)
class GridSeries:
    """One column of an aligned frame: values on a shared regular grid.

    ``values[i]`` is the source reading value nearest to ``grid[i]`` within
    the alignment tolerance, or None for a missing cell. ``interpolated``
    holds cell indices that were filled by explicit opt-in interpolation.
    """

    label: str
    quantity: Quantity
    unit: str
    grid: tuple[datetime, ...]
    values: tuple[Optional[float], ...]
    interpolated: frozenset[int] = frozenset()

    def __post_init__(self):
        if len(self.values) != len(self.grid):
            raise ValueError("values and grid lengths differ")


@dataclass(frozen=True)
class AlignedFrame:
    grid: tuple[datetime, ...]
    columns: tuple[GridSeries, ...]

    def column(self, label: str) -> GridSeries:
        for col in self.columns:
            if col.label == label:
                return col
        raise KeyError(label)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(c.label for c in self.columns)


def _build_grid(start: datetime, end: datetime, interval: timedelta) -> tuple[datetime, ...]:
    points = []
    t = start
    while t <= end:
        points.append(t)
        t = t + interval
    return tuple(points)


def align_series(
    series_list: Sequence[TimeSeries],
    grid_interval: timedelta,
    tolerance: timedelta,
    *,
    start: Optional[datetime] = None,
    end: Optional[datetime] = None,
    interpolate: bool = False,
    qualities: Iterable[Quality] = (Quality.OK,),
) -> AlignedFrame:
    """Align series of mixed cadence onto a shared regular grid.

    Each cell takes the nearest accepted reading within ``tolerance``, else
    stays missing; no reading fills more than one cell. The grid anchors at
    the earliest accepted reading unless ``start`` is given, so aligning a
    series to its own cadence is the identity. Interpolation of interior
    missing cells is off by default and marks filled cells explicitly.
    """
    if tolerance >= grid_interval / 2:
        raise ConfigError("tolerance must be < grid_interval / 2")
    if grid_interval <= timedelta(0):
        raise ConfigError("grid_interval must be positive")

    accepted = set(qualities)
    per_series: list[tuple[TimeSeries, list[Reading]]] = [
        (s, [r for r in s.readings if r.quality in accepted]) for s in series_list
    ]

    units_by_quantity: dict[Quantity, str] = {}
    for s, _ in per_series:
        known = units_by_quantity.setdefault(s.quantity, s.unit)
        if known != s.unit:
            raise IncompatibleUnits(
                f"{s.quantity.value}: unit {s.unit!r} conflicts with {known!r}"
            )
    labels = [s.label for s, _ in per_series]
    if len(labels) != len(set(labels)):
        raise ConfigError("duplicate series label in alignment input")

    all_ts = [r.timestamp for _, rs in per_series for r in rs]
    if not all_ts:
        return AlignedFrame((), tuple(
            GridSeries(s.label, s.quantity, s.unit, (), ()) for s, _ in per_series
        ))
    grid = _build_grid(start or min(all_ts), end or max(all_ts), grid_interval)

    columns = []
    for s, readings in per_series:
        values: list[Optional[float]] = [None] * len(grid)
        filled: set[int] = set()
        j = 0
        for i, g in enumerate(grid):
            # advance to the reading nearest g; tolerance < interval/2
            # guarantees a reading is claimed by at most one grid point
            while j + 1 < len(readings) and abs(readings[j + 1].timestamp - g) <= abs(
                readings[j].timestamp - g
            ):
                j += 1
            if readings and abs(readings[j].timestamp - g) <= tolerance:
                values[i] = readings[j].value
        if interpolate:
            filled = _interpolate_interior(grid, values)
        columns.append(
            GridSeries(s.label, s.quantity, s.unit, grid, tuple(values), frozenset(filled))
        )
    return AlignedFrame(grid, tuple(columns))


def _interpolate_interior(
    grid: Sequence[datetime], values: list[Optional[float]]
) -> set[int]:
    """Linearly fill interior missing cells in place; return filled indices."""
    filled: set[int] = set()
    known = [i for i, v in enumerate(values) if v is not None]
    for a, b in zip(known, known[1:]):
        if b - a == 1:
            continue
        va, vb = values[a], values[b]
        span = (grid[b] - grid[a]).total_seconds()
        for i in range(a + 1, b):
            frac = (grid[i] - grid[a]).total_seconds() / span
            values[i] = va + (vb - va) * frac
            filled.add(i)
    return filled


def grid_series_from_timeseries(series: TimeSeries) -> GridSeries:
    """View a series as a grid column on its own native timestamps."""
    ok = series.ok_readings()
    return GridSeries(
        series.label,
        series.quantity,
        series.unit,
        tuple(r.timestamp for r in ok),
        tuple(r.value for r in ok),
    )


def load_sensor_registry(path: str | Path) -> dict[str, SensorSpec]:
    """Load the per-site sensor registry JSON into SensorSpec objects."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    specs: dict[str, SensorSpec] = {}
    for entry in doc.get("sensors", []):
        channels = []
        for ch in entry["channels"]:
            q = Quantity(ch["quantity"])
            channels.append(
                ChannelSpec(
                    quantity=q,
                    resolution=ch.get("resolution", 0.0),
                    valid_range=tuple(ch.get("valid_range", (0.0, 0.0))),
                )
            )
        spec = SensorSpec(
            sensor_id=entry["sensor_id"],
            kind=SensorKind(entry["kind"]),
            channels=tuple(channels),
            expected_interval=timedelta(minutes=entry["expected_interval_minutes"]),
            face=entry.get("face", "NE"),
            position=entry.get("position", ""),
            associated_block_ids=tuple(entry.get("blocks", ())),
        )
        if spec.sensor_id in specs:
            raise ConfigError(f"duplicate sensor_id {spec.sensor_id!r} in registry")
        specs[spec.sensor_id] = spec
    if not specs:
        raise ConfigError(f"sensor registry {path} declares no sensors")
    return specs


def sensor_block_map(specs: Mapping[str, SensorSpec]) -> dict[str, tuple[str, ...]]:
    """Invert the registry: block id -> ids of its associated sensors."""
    out: dict[str, list[str]] = {}
    for spec in specs.values():
        for block_id in spec.associated_block_ids:
            out.setdefault(block_id, []).append(spec.sensor_id)
    return {b: tuple(sorted(ids)) for b, ids in out.items()}
