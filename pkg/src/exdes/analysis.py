"""Offline analysis of collected feedback.

Power consumption is the backbone of the usage history: energy, mean draw
and the work/idle duty-cycle series all derive from it. Door statistics
come from the door channels per chamber. Refrigerant leakage is estimated
indirectly: the duty ratio is regressed on ambient temperature over a
healthy baseline period, and a positive trend in the residuals afterwards
marks a suspected leak. Co-occurrence patterns between event streams
("main door opened, freezer door follows") are mined with a windowed
support count.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

from .abstraction import DutyCycleTracker, EnergyIntegrator
from .errors import EmptyPeriod, InsufficientData, NoFeasibleCandidate
from .sim import FridgeModel, FridgeSimulator, Scenario
from .telemetry import NS_PER_S

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class DoorStats:
    open_count: int
    total_open_s: float
    histogram: dict  # bin lower bound (s) -> openings in [bin, bin+width)


@dataclass(frozen=True)
class UsageSummary:
    energy_wh: float
    mean_power_w: float
    duty_series: tuple  # ((t_ns, ratio), ...) one point per completed pair
    doors: dict  # chamber -> DoorStats
    first_ns: int
    last_ns: int


def usage_summary(samples, from_ns=None, to_ns=None, duty_window=5,
                  p_on_w=35.0, bin_width_s=10.0) -> UsageSummary:
    """Fold a sample stream (time-ordered) into a usage summary.

    Openings are attributed to the period containing their start, so
    summaries add up across period splits that fall while doors are closed;
    an opening still in progress at the end of the stream is closed at its
    last sample. Energy is additive across splits that share the boundary
    power sample.
    """
    energy = EnergyIntegrator()
    duty = DutyCycleTracker(p_on_w, duty_window)
    duty_series = []
    last_pair = (0, None)
    power_first_ns = None
    power_last_ns = None
    first_ns = None
    last_ns = None
    door_state = {}  # chamber -> opened_at_ns | None
    openings = {}  # chamber -> [(opened_at_ns, duration_s), ...]

    for sample in samples:
        t_ns = sample.at.to_ns()
        if from_ns is not None and t_ns < from_ns:
            continue
        if to_ns is not None and t_ns > to_ns:
            continue
        if first_ns is None:
            first_ns = t_ns
        last_ns = t_ns
        param = sample.parameter
        if param == "power_w":
            energy.update(sample.value, t_ns)
            ratio = duty.update(sample.value, t_ns)
            key = (len(duty.pairs), duty.pairs[-1] if duty.pairs else None)
            if ratio is not None and key != last_pair:
                duty_series.append((t_ns, ratio))
                last_pair = key
            if power_first_ns is None:
                power_first_ns = t_ns
            power_last_ns = t_ns
        elif param.startswith("door_open."):
            chamber = param[len("door_open."):]
            openings.setdefault(chamber, [])
            opened = door_state.get(chamber)
            if sample.value == 1.0 and opened is None:
                door_state[chamber] = t_ns
            elif sample.value == 0.0 and opened is not None:
                openings[chamber].append((opened, (t_ns - opened) / NS_PER_S))
                door_state[chamber] = None
    if first_ns is None:
        raise EmptyPeriod("no samples in the requested period")
    for chamber, opened in door_state.items():
        if opened is not None and last_ns > opened:
            openings[chamber].append((opened, (last_ns - opened) / NS_PER_S))

    doors = {}
    for chamber, entries in sorted(openings.items()):
        histogram = {}
        total = 0.0
        for _, duration in entries:
            total += duration
            bin_start = int(duration // bin_width_s) * int(bin_width_s)
            histogram[bin_start] = histogram.get(bin_start, 0) + 1
        doors[chamber] = DoorStats(len(entries), total, histogram)

    span_s = ((power_last_ns - power_first_ns) / NS_PER_S
              if power_first_ns is not None else 0.0)
    mean_power = energy.energy_wh * 3600.0 / span_s if span_s > 0 else 0.0
    return UsageSummary(energy.energy_wh, mean_power, tuple(duty_series),
                        doors, first_ns, last_ns)


# -- leakage ---------------------------------------------------------------------

@dataclass(frozen=True)
class LeakageReport:
    baseline_slope: float  # duty ratio per degC of ambient
    baseline_intercept: float
    residual_trend_per_day: float
    leak_suspected: bool


def _ols(xs, ys):
    n = len(xs)
    x_mean = sum(xs) / n
    y_mean = sum(ys) / n
    sxx = sum((x - x_mean) ** 2 for x in xs)
    if sxx == 0.0:
        return 0.0, y_mean  # constant regressor: intercept-only fit
    sxy = sum((x - x_mean) * (y - y_mean) for x, y in zip(xs, ys))
    slope = sxy / sxx
    return slope, y_mean - slope * x_mean


def _in_period(series, period):
    lo, hi = period
    return [(t, v) for t, v in series if lo <= t <= hi]


def leakage_score(duty_series, ambient_series, baseline, eval_period,
                  threshold_per_day=0.005) -> LeakageReport:
    """Ambient-adjusted duty-ratio drift as a leak indicator.

    `duty_series` and `ambient_series` are time-ordered (t_ns, value) pairs;
    ambient is resampled to duty timestamps by previous-value hold. Periods
    are inclusive (t0_ns, t1_ns) bounds and need at least two duty points
    each.
    """
    if not ambient_series:
        raise InsufficientData("no ambient points")
    amb_times = [t for t, _ in ambient_series]
    amb_values = [v for _, v in ambient_series]

    def ambient_at(t_ns):
        idx = bisect_right(amb_times, t_ns) - 1
        return amb_values[max(idx, 0)]

    base = _in_period(duty_series, baseline)
    evalp = _in_period(duty_series, eval_period)
    if len(base) < 2 or len(evalp) < 2:
        raise InsufficientData(
            f"need >= 2 duty points per period, got {len(base)} and {len(evalp)}")
    slope, intercept = _ols([ambient_at(t) for t, _ in base], [v for _, v in base])
    t_days = [t / NS_PER_S / SECONDS_PER_DAY for t, _ in evalp]
    residuals = [v - (slope * ambient_at(t) + intercept) for t, v in evalp]
    trend, _ = _ols(t_days, residuals)
    return LeakageReport(slope, intercept, trend, trend > threshold_per_day)


# -- duty optimization --------------------------------------------------------------

@dataclass(frozen=True)
class BandCandidate:
    band_c: float
    energy_wh: float
    max_internal_c: float
    feasible: bool


@dataclass(frozen=True)
class OptimizationResult:
    best_band_c: float
    best_energy_wh: float
    candidates: tuple


def standard_day_scenario(dt_s: float = 1.0) -> Scenario:
    """24 h at constant 25 degC / 50 %RH with no door traffic."""
    dt_ns = int(round(dt_s * NS_PER_S))
    return Scenario(86400 * NS_PER_S, dt_ns, ((0, 25.0, 50.0),), {}, ())


def duty_optimization(model: FridgeModel, band_grid, t_limit_c,
                      scenario: Scenario = None) -> OptimizationResult:
    """Grid search over hysteresis bands, minimizing simulated daily energy
    subject to every internal temperature staying at or below `t_limit_c`.
    Ties break toward the smaller band."""
    if not band_grid:
        raise NoFeasibleCandidate("empty candidate grid")
    if scenario is None:
        scenario = standard_day_scenario()
    candidates = []
    best = None
    for band in sorted(band_grid):
        if band <= 0:
            raise ValueError("hysteresis band must be positive")
        sim = FridgeSimulator(model.with_band(band), scenario)
        for _ in sim.rows():
            pass
        result = sim.result()
        feasible = result.max_internal_c <= t_limit_c
        candidates.append(BandCandidate(band, result.energy_wh,
                                        result.max_internal_c, feasible))
        if feasible and (best is None or result.energy_wh < best.energy_wh):
            best = candidates[-1]
    if best is None:
        raise NoFeasibleCandidate(f"no band keeps T <= {t_limit_c}")
    return OptimizationResult(best.band_c, best.energy_wh, tuple(candidates))


# -- co-occurrence patterns ------------------------------------------------------------

@dataclass(frozen=True)
class CoPattern:
    first: str
    second: str
    co_count: int
    first_count: int
    support: float


def copattern_detect(occurrences, window_s, min_support) -> list:
    """Windowed co-occurrence mining over a time-ordered event stream.

    `occurrences` is an iterable of (t_ns, label). For every ordered pair of
    distinct labels, an occurrence of the first co-occurs if some occurrence
    of the second falls within (t, t + window] after it; support is the
    fraction of first-label occurrences that do. Pairs with support >=
    `min_support` (and at least one co-occurrence) are returned sorted by
    support descending, then lexicographically.
    """
    window_ns = int(round(window_s * NS_PER_S))
    by_label = {}
    for t_ns, label in occurrences:
        by_label.setdefault(label, []).append(t_ns)
    for times in by_label.values():
        times.sort()
    patterns = []
    for first, first_times in by_label.items():
        for second, second_times in by_label.items():
            if first == second:
                continue
            co = 0
            for t in first_times:
                idx = bisect_right(second_times, t)
                if idx < len(second_times) and second_times[idx] <= t + window_ns:
                    co += 1
            if co == 0:
                continue
            support = co / len(first_times)
            if support >= min_support:
                patterns.append(CoPattern(first, second, co, len(first_times), support))
    patterns.sort(key=lambda p: (-p.support, p.first, p.second))
    return patterns


def door_occurrences(samples):
    """Rising edges of every door channel, as (t_ns, channel) occurrences."""
    state = {}
    out = []
    for sample in samples:
        if not sample.parameter.startswith("door_open."):
            continue
        previous = state.get(sample.parameter, 0.0)
        if sample.value == 1.0 and previous == 0.0:
            out.append((sample.at.to_ns(), sample.parameter))
        state[sample.parameter] = sample.value
    return out
