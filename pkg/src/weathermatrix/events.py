"""Climate statistics and event counting over sensor series.

Covers dew-point evaluation, condensation event detection, day counting
against thresholds, freeze-thaw and soaking/drying cycle counting, period
summaries, face comparison, and crack-vs-climate lag correlation. All
counters record the parameters they ran with so results are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone, tzinfo
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DomainError,
    InsufficientOverlap,
    MisalignedInput,
    NoData,
    NoOverlap,
)
from .ingest import GridSeries, Quality, Quantity, SensorKind, SensorSpec, TimeSeries

# Magnus-form saturation curve coefficients (recorded in outputs so an
# alternate coefficient set remains comparable).
MAGNUS_A = 17.62
MAGNUS_B = 243.12  # degC
DEW_POINT_T_RANGE = (-45.0, 60.0)

DEFAULT_CONDENSATION_HYSTERESIS = 0.2  # degC, above sensor resolution
DEFAULT_FREEZE_THRESHOLD = 0.0  # degC
DEFAULT_FREEZE_HYSTERESIS = 0.5  # degC


def dew_point(t: float, rh: float) -> float:
    """Dew-point temperature in degC from air temperature and RH percent.

    Magnus form: gamma = ln(RH/100) + a*T/(b+T); Td = b*gamma/(a - gamma)
    with a = 17.62 and b = 243.12 degC. Valid for T in [-45, 60] degC and
    0 < RH <= 100; Td <= T with equality exactly at saturation.
    """
    if not (0.0 < rh <= 100.0):
        raise DomainError(f"relative humidity {rh} outside (0, 100]")
    if not (DEW_POINT_T_RANGE[0] <= t <= DEW_POINT_T_RANGE[1]):
        raise DomainError(f"temperature {t} outside {DEW_POINT_T_RANGE}")
    gamma = math.log(rh / 100.0) + MAGNUS_A * t / (MAGNUS_B + t)
    return MAGNUS_B * gamma / (MAGNUS_A - gamma)


def _dew_point_cells(t: Sequence[Optional[float]], rh: Sequence[Optional[float]]) -> np.ndarray:
    """Vectorized dew point over grid cells; NaN where missing or out of domain."""
    tv = np.array([np.nan if v is None else v for v in t], dtype=float)
    rv = np.array([np.nan if v is None else v for v in rh], dtype=float)
    valid = (
        ~np.isnan(tv)
        & ~np.isnan(rv)
        & (rv > 0.0)
        & (rv <= 100.0)
        & (tv >= DEW_POINT_T_RANGE[0])
        & (tv <= DEW_POINT_T_RANGE[1])
    )
    td = np.full(tv.shape, np.nan)
    if valid.any():
        gamma = np.log(rv[valid] / 100.0) + MAGNUS_A * tv[valid] / (MAGNUS_B + tv[valid])
        td[valid] = MAGNUS_B * gamma / (MAGNUS_A - gamma)
    return td


@dataclass(frozen=True)
class CondensationEvent:
    """One surface-condensation episode: surface at or below dew point."""

    onset: datetime
    end: Optional[datetime]  # None while still open at series end
    min_margin: float  # most negative Ts - Td during the event, <= 0

    def __post_init__(self):
        if self.end is not None and not self.onset < self.end:
            raise ValueError("onset must precede end")
        if self.min_margin > 0:
            raise ValueError("min_margin must be <= 0")


class CycleKind(str, Enum):
    FREEZE_THAW = "freeze_thaw"
    SOAKING_DRYING = "soaking_drying"
    CONDENSATION = "condensation"


@dataclass(frozen=True)
class CycleCount:
    kind: CycleKind
    count: int
    period: Optional[tuple[datetime, datetime]]
    parameters: Mapping[str, object]

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be non-negative")


def _require_same_grid(*series: GridSeries) -> tuple[datetime, ...]:
    grid = series[0].grid
    for s in series[1:]:
        if s.grid != grid:
            raise MisalignedInput(
                f"series {s.label} is not on the same grid as {series[0].label}"
            )
    return grid


def detect_condensation_events(
    ts_series: GridSeries,
    t_series: GridSeries,
    rh_series: GridSeries,
    hysteresis: float = DEFAULT_CONDENSATION_HYSTERESIS,
) -> list[CondensationEvent]:
    """Detect condensation events on a common grid.

    An event opens at a cell where Ts <= Td(T, RH) and closes at the first
    later cell where Ts >= Td + hysteresis. Cells missing any input (or
    outside the dew-point domain) neither open nor close an event; the last
    event stays open (end None) if the series ends inside it.
    """
    if hysteresis < 0:
        raise ConfigError(f"hysteresis must be >= 0, got {hysteresis}")
    grid = _require_same_grid(ts_series, t_series, rh_series)
    if not grid:
        return []

    ts = np.array([np.nan if v is None else v for v in ts_series.values], dtype=float)
    td = _dew_point_cells(t_series.values, rh_series.values)
    valid = ~np.isnan(ts) & ~np.isnan(td)
    margin = np.where(valid, ts - td, np.inf)

    open_mask = valid & (ts <= td)
    close_mask = valid & (ts >= td + hysteresis) & ~open_mask
    sig = np.zeros(len(grid), dtype=np.int8)
    sig[open_mask] = 1
    sig[close_mask] = -1

    nz = np.flatnonzero(sig)
    if nz.size == 0:
        return []
    states = sig[nz]
    prev = np.concatenate(([-1], states[:-1]))
    rise = (states == 1) & (prev == -1)
    fall = (states == -1) & (prev == 1)
    onsets = nz[rise]
    closes = nz[fall]

    events: list[CondensationEvent] = []
    for k, a in enumerate(onsets):
        b = int(closes[k]) if k < len(closes) else None
        seg = margin[a:b] if b is not None else margin[a:]
        events.append(
            CondensationEvent(
                onset=grid[a],
                end=grid[b] if b is not None else None,
                min_margin=float(seg.min()),
            )
        )
    return events


def condensation_sample_count(
    ts_series: GridSeries, t_series: GridSeries, rh_series: GridSeries
) -> int:
    """Number of grid cells with the surface at or below dew point.

    Sample-based companion to event counting; scales with sensor cadence,
    so event onsets stay the headline number.
    """
    _require_same_grid(ts_series, t_series, rh_series)
    ts = np.array([np.nan if v is None else v for v in ts_series.values], dtype=float)
    td = _dew_point_cells(t_series.values, rh_series.values)
    valid = ~np.isnan(ts) & ~np.isnan(td)
    return int(np.count_nonzero(valid & (ts <= td)))


def _double_threshold_count(values: np.ndarray, hi: float, lo: float) -> int:
    """Cycles = confirmed excursions below ``lo`` followed by recovery above ``hi``."""
    sig = np.zeros(values.shape, dtype=np.int8)
    sig[values > hi] = 1
    sig[values < lo] = -1
    states = sig[sig != 0]
    if states.size < 2:
        return 0
    return int(np.count_nonzero((states[:-1] == -1) & (states[1:] == 1)))


def _ok_values_in_period(
    series: TimeSeries, period: Optional[tuple[datetime, datetime]]
) -> np.ndarray:
    ok = series.ok_readings()
    if period is not None:
        start, end = period
        ok = tuple(r for r in ok if start <= r.timestamp < end)
    return np.array([r.value for r in ok], dtype=float)


def count_freeze_thaw_cycles(
    t_series: TimeSeries,
    threshold: float = DEFAULT_FREEZE_THRESHOLD,
    hysteresis: float = DEFAULT_FREEZE_HYSTERESIS,
    period: Optional[tuple[datetime, datetime]] = None,
) -> CycleCount:
    """Count freeze-thaw cycles on ok readings with a two-threshold automaton.

    One cycle per excursion below threshold - hysteresis followed by recovery
    above threshold + hysteresis; oscillation inside the band never counts.
    """
    if hysteresis < 0:
        raise ConfigError(f"hysteresis must be >= 0, got {hysteresis}")
    values = _ok_values_in_period(t_series, period)
    count = _double_threshold_count(values, threshold + hysteresis, threshold - hysteresis)
    return CycleCount(
        kind=CycleKind.FREEZE_THAW,
        count=count,
        period=period,
        parameters={"threshold": threshold, "hysteresis": hysteresis},
    )


def count_soaking_drying_cycles(
    water_content_series: TimeSeries,
    wet_threshold: Optional[float],
    dry_threshold: Optional[float],
    period: Optional[tuple[datetime, datetime]] = None,
) -> CycleCount:
    """Count wet -> dry -> wet traversals of masonry water content.

    Thresholds are mandatory configuration: no instrument-independent
    default exists for TDR water content.
    """
    if wet_threshold is None or dry_threshold is None:
        raise ConfigError("soaking/drying thresholds are mandatory configuration")
    if not dry_threshold < wet_threshold:
        raise ConfigError(
            f"dry_threshold {dry_threshold} must be below wet_threshold {wet_threshold}"
        )
    values = _ok_values_in_period(water_content_series, period)
    count = _double_threshold_count(values, wet_threshold, dry_threshold)
    return CycleCount(
        kind=CycleKind.SOAKING_DRYING,
        count=count,
        period=period,
        parameters={"wet_threshold": wet_threshold, "dry_threshold": dry_threshold},
    )


@dataclass(frozen=True)
class ThresholdDays:
    qualifying_days: int
    evaluable_days: int

    def __iter__(self):
        return iter((self.qualifying_days, self.evaluable_days))


def count_threshold_days(
    series: TimeSeries,
    threshold: float,
    direction: str = "above",
    min_samples_per_day: int = 1,
    tz: tzinfo = timezone.utc,
    period: Optional[tuple[datetime, datetime]] = None,
) -> ThresholdDays:
    """Count days qualifying against a threshold, and days evaluable at all.

    A day is evaluable with at least ``min_samples_per_day`` ok readings and
    qualifies when any of them satisfies the predicate, so results read like
    "94 out of 118". Day boundaries follow the site's civil timezone ``tz``.
    """
    if min_samples_per_day < 1:
        raise ConfigError("min_samples_per_day must be >= 1")
    if direction not in ("above", "below"):
        raise ConfigError(f"direction must be 'above' or 'below', got {direction!r}")

    by_day: dict[object, list[float]] = {}
    ok = series.ok_readings()
    if period is not None:
        start, end = period
        ok = tuple(r for r in ok if start <= r.timestamp < end)
    for r in ok:
        by_day.setdefault(r.timestamp.astimezone(tz).date(), []).append(r.value)

    evaluable = qualifying = 0
    for values in by_day.values():
        if len(values) < min_samples_per_day:
            continue
        evaluable += 1
        if direction == "above":
            hit = any(v > threshold for v in values)
        else:
            hit = any(v < threshold for v in values)
        if hit:
            qualifying += 1
    return ThresholdDays(qualifying, evaluable)


@dataclass(frozen=True)
class ChannelStats:
    avg: float
    vmin: float
    vmax: float
    n: int

    def __post_init__(self):
        if not (self.vmin <= self.avg <= self.vmax):
            raise ValueError("mean must lie between min and max")
        if self.n < 1:
            raise ValueError("stats need at least one sample")


def channel_stats(
    series: TimeSeries, period: Optional[tuple[datetime, datetime]] = None
) -> Optional[ChannelStats]:
    values = _ok_values_in_period(series, period)
    if values.size == 0:
        return None
    return ChannelStats(
        avg=float(values.mean()),
        vmin=float(values.min()),
        vmax=float(values.max()),
        n=int(values.size),
    )


@dataclass(frozen=True)
class PeriodSummary:
    """Per-period climate summary mirroring the monitoring report row."""

    period: tuple[datetime, datetime]
    avg_t: Optional[float]
    avg_ts: Optional[float]
    avg_rh: Optional[float]
    t_max: Optional[float]
    t_min: Optional[float]
    rh_max: Optional[float]
    rh_min: Optional[float]
    sample_counts: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.avg_t is not None and not (self.t_min <= self.avg_t <= self.t_max):
            raise ValueError("avg_t must lie between t_min and t_max")
        if self.avg_rh is not None:
            if not (self.rh_min <= self.avg_rh <= self.rh_max):
                raise ValueError("avg_rh must lie between rh_min and rh_max")
            if not (0.0 <= self.rh_min and self.rh_max <= 100.0):
                raise ValueError("RH values must lie in [0, 100]")

    def display_row(self) -> str:
        """Render avg T / avg Ts / avg RH / Tmax / Tmin / RHmax / RHmin
        with one decimal and decimal commas, report style."""
        cells = (
            self.avg_t, self.avg_ts, self.avg_rh,
            self.t_max, self.t_min, self.rh_max, self.rh_min,
        )
        return " / ".join(
            "-" if v is None else f"{v:.1f}".replace(".", ",") for v in cells
        )


def period_summary(
    t_series: Optional[TimeSeries],
    ts_series: Optional[TimeSeries],
    rh_series: Optional[TimeSeries],
    period: tuple[datetime, datetime],
) -> PeriodSummary:
    """Summarize ok readings of air, surface, and humidity channels in a period.

    Channels not supplied or empty in the period yield None fields, never
    zeros; raises NoData when every supplied channel is empty.
    """
    start, end = period
    if not start < end:
        raise ConfigError("period must be non-empty")
    t = channel_stats(t_series, period) if t_series is not None else None
    ts = channel_stats(ts_series, period) if ts_series is not None else None
    rh = channel_stats(rh_series, period) if rh_series is not None else None
    supplied = [s is not None for s in (t_series, ts_series, rh_series)]
    if any(supplied) and t is None and ts is None and rh is None:
        raise NoData(f"no ok reading in {start.isoformat()} .. {end.isoformat()}")

    counts: dict[str, int] = {}
    for name, stats in (("air_temp", t), ("surface_temp", ts), ("rel_humidity", rh)):
        if stats is not None:
            counts[name] = stats.n
    return PeriodSummary(
        period=period,
        avg_t=t.avg if t else None,
        avg_ts=ts.avg if ts else None,
        avg_rh=rh.avg if rh else None,
        t_max=t.vmax if t else None,
        t_min=t.vmin if t else None,
        rh_max=rh.vmax if rh else None,
        rh_min=rh.vmin if rh else None,
        sample_counts=counts,
    )


@dataclass(frozen=True)
class FaceComparison:
    face_a: str
    face_b: str
    delta_avg_t: Optional[float]  # mean of (b - a) over shared timestamps
    delta_avg_rh: Optional[float]
    period: tuple[datetime, datetime]
    n_shared: Mapping[str, int] = field(default_factory=dict)


def _paired_delta(
    a: Optional[TimeSeries], b: Optional[TimeSeries]
) -> Optional[tuple[float, int, datetime, datetime]]:
    if a is None or b is None:
        return None
    va = {r.timestamp: r.value for r in a.ok_readings()}
    vb = {r.timestamp: r.value for r in b.ok_readings()}
    shared = sorted(va.keys() & vb.keys())
    if not shared:
        return None
    deltas = [vb[t] - va[t] for t in shared]
    return sum(deltas) / len(deltas), len(shared), shared[0], shared[-1]


def compare_faces(
    temp_a: Optional[TimeSeries],
    temp_b: Optional[TimeSeries],
    rh_a: Optional[TimeSeries] = None,
    rh_b: Optional[TimeSeries] = None,
    face_a: str = "NE",
    face_b: str = "SW",
) -> FaceComparison:
    """Compare two faces over the timestamps where both have ok readings.

    Deltas are face_b minus face_a averaged over the shared timestamps only.
    Raises NoOverlap when no channel has any shared timestamp.
    """
    dt = _paired_delta(temp_a, temp_b)
    drh = _paired_delta(rh_a, rh_b)
    if dt is None and drh is None:
        raise NoOverlap(f"faces {face_a} and {face_b} share no timestamps")
    bounds = [x for x in (dt, drh) if x is not None]
    period = (min(b[2] for b in bounds), max(b[3] for b in bounds))
    n_shared = {}
    if dt is not None:
        n_shared["air_temp"] = dt[1]
    if drh is not None:
        n_shared["rel_humidity"] = drh[1]
    return FaceComparison(
        face_a=face_a,
        face_b=face_b,
        delta_avg_t=dt[0] if dt else None,
        delta_avg_rh=drh[0] if drh else None,
        period=period,
        n_shared=n_shared,
    )


@dataclass(frozen=True)
class LagCorrelation:
    lag: timedelta
    r: float
    n: int


def crack_climate_correlation(
    crack_series: GridSeries,
    climate_series: GridSeries,
    max_lag: timedelta,
    lag_step: timedelta,
) -> list[LagCorrelation]:
    """Pearson correlation of crack width against a climate series per lag.

    Positive lag means the crack trails the climate signal by that amount.
    Both series must share one regular grid; the lag step must be a multiple
    of the grid spacing. Lags with fewer than 3 overlapping pairs (or an
    undefined correlation) are omitted; raises InsufficientOverlap if none
    survive.
    """
    grid = _require_same_grid(crack_series, climate_series)
    if len(grid) < 2:
        raise InsufficientOverlap("grid too short for correlation")
    spacing = grid[1] - grid[0]
    for a, b in zip(grid, grid[1:]):
        if b - a != spacing:
            raise ConfigError("correlation requires a regular grid")
    if lag_step <= timedelta(0) or max_lag < timedelta(0):
        raise ConfigError("lag_step must be positive and max_lag non-negative")
    step_cells, rem = divmod(lag_step, spacing)
    if rem != timedelta(0):
        raise ConfigError("lag_step must be an integer multiple of the grid spacing")

    x = np.array([np.nan if v is None else v for v in crack_series.values], dtype=float)
    y = np.array([np.nan if v is None else v for v in climate_series.values], dtype=float)
    n_cells = len(grid)
    k_max = int(max_lag // lag_step)

    results: list[LagCorrelation] = []
    for k in range(-k_max, k_max + 1):
        shift = k * int(step_cells)
        # pair crack[i] with climate[i - shift]
        if shift >= 0:
            xs, ys = x[shift:], y[: n_cells - shift]
        else:
            xs, ys = x[: n_cells + shift], y[-shift:]
        mask = ~np.isnan(xs) & ~np.isnan(ys)
        n = int(mask.sum())
        if n < 3:
            continue
        xv, yv = xs[mask], ys[mask]
        sx, sy = xv.std(), yv.std()
        if sx == 0.0 or sy == 0.0:
            continue  # correlation undefined for a constant side
        r = float(np.corrcoef(xv, yv)[0, 1])
        results.append(LagCorrelation(lag=k * lag_step, r=r, n=n))
    if not results:
        raise InsufficientOverlap("no lag with at least 3 overlapping pairs")
    return results


@dataclass(frozen=True)
class SensorClimateSummary:
    """Everything one sensor contributes to a block's climate columns."""

    sensor_id: str
    period: tuple[datetime, datetime]
    t: Optional[ChannelStats] = None
    ts: Optional[ChannelStats] = None
    rh: Optional[ChannelStats] = None
    rh_days: Optional[ThresholdDays] = None
    freeze_thaw_cycles: Optional[int] = None
    condensation_events: Optional[int] = None
    condensation_samples: Optional[int] = None
    soaking_drying_cycles: Optional[int] = None


@dataclass(frozen=True)
class ClimateEventConfig:
    """Thresholds and cadence settings for the site-level event sweep."""

    rh_day_threshold: float = 90.0
    min_samples_per_day: int = 1
    freeze_threshold: float = DEFAULT_FREEZE_THRESHOLD
    freeze_hysteresis: float = DEFAULT_FREEZE_HYSTERESIS
    condensation_hysteresis: float = DEFAULT_CONDENSATION_HYSTERESIS
    soaking_wet: Optional[float] = None
    soaking_dry: Optional[float] = None


def summarize_site_climate(
    specs: Mapping[str, SensorSpec],
    series_store: Mapping[str, Mapping[Quantity, TimeSeries]],
    period: tuple[datetime, datetime],
    config: ClimateEventConfig = ClimateEventConfig(),
    tz: tzinfo = timezone.utc,
) -> dict[str, SensorClimateSummary]:
    """Build one climate summary per sensor over a period.

    Surface probes borrow air temperature and humidity from a
    thermo-hygrometer on the same face to evaluate condensation; the event
    count lands on the surface probe (owner of Ts). TDR cycle counts are
    skipped (left missing) when soaking thresholds are not configured.
    """
    from .ingest import align_series  # late import to avoid cycle at module load

    summaries: dict[str, SensorClimateSummary] = {}
    companions: dict[str, str] = {}
    for sid, spec in specs.items():
        if spec.kind is SensorKind.SURFACE_PROBE:
            mate = _companion_hygrometer(spec, specs)
            if mate:
                companions[sid] = mate

    for sid in sorted(specs):
        spec = specs[sid]
        series = series_store.get(sid, {})
        t_series = series.get(Quantity.AIR_TEMP)
        ts_series = series.get(Quantity.SURFACE_TEMP)
        rh_series = series.get(Quantity.REL_HUMIDITY)
        wc_series = series.get(Quantity.WATER_CONTENT)

        rh_days = None
        if rh_series is not None:
            rh_days = count_threshold_days(
                rh_series,
                config.rh_day_threshold,
                "above",
                config.min_samples_per_day,
                tz,
                period,
            )
            if rh_days.evaluable_days == 0:
                rh_days = None
        freeze = None
        if t_series is not None and channel_stats(t_series, period) is not None:
            freeze = count_freeze_thaw_cycles(
                t_series, config.freeze_threshold, config.freeze_hysteresis, period
            ).count
        soaking = None
        if (
            wc_series is not None
            and config.soaking_wet is not None
            and config.soaking_dry is not None
            and channel_stats(wc_series, period) is not None
        ):
            soaking = count_soaking_drying_cycles(
                wc_series, config.soaking_wet, config.soaking_dry, period
            ).count

        cond_events = cond_samples = None
        if ts_series is not None and sid in companions:
            mate = series_store.get(companions[sid], {})
            mate_t, mate_rh = mate.get(Quantity.AIR_TEMP), mate.get(Quantity.REL_HUMIDITY)
            if mate_t is not None and mate_rh is not None:
                grid_interval = min(
                    spec.expected_interval, specs[companions[sid]].expected_interval
                )
                frame = align_series(
                    [ts_series, mate_t, mate_rh],
                    grid_interval,
                    grid_interval / 4,
                    start=period[0],
                    end=period[1],
                )
                cols = [frame.column(s.label) for s in (ts_series, mate_t, mate_rh)]
                events = detect_condensation_events(*cols, config.condensation_hysteresis)
                cond_events = len(events)
                cond_samples = condensation_sample_count(*cols)

        summaries[sid] = SensorClimateSummary(
            sensor_id=sid,
            period=period,
            t=channel_stats(t_series, period) if t_series is not None else None,
            ts=channel_stats(ts_series, period) if ts_series is not None else None,
            rh=channel_stats(rh_series, period) if rh_series is not None else None,
            rh_days=rh_days,
            freeze_thaw_cycles=freeze,
            condensation_events=cond_events,
            condensation_samples=cond_samples,
            soaking_drying_cycles=soaking,
        )
    return summaries


def _companion_hygrometer(
    probe: SensorSpec, specs: Mapping[str, SensorSpec]
) -> Optional[str]:
    candidates = sorted(
        sid
        for sid, s in specs.items()
        if s.kind is SensorKind.THERMO_HYGROMETER and s.face == probe.face
    )
    return candidates[0] if candidates else None
