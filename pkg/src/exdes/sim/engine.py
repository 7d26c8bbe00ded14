"""Deterministic run loop around the thermal kernel.

Emits one sample per active channel per step, in a fixed order:
ambient temperature, humidity, door flags (model chamber order), internal
temperatures, power, current, vibration, sound. There is no randomness
anywhere; reruns of the same model and scenario are byte-identical.

Channels beyond the thermal core are synthesized deterministically: RMS
current is power/voltage, vibration and sound are flat base levels plus a
compressor-on delta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..abstraction import EnergyIntegrator
from ..telemetry import NS_PER_S, SensorSample, Timestamp, decode_sample_line
from . import kernel
from .model import FaultKind, FridgeModel, Scenario

SECONDS_PER_DAY = 86400.0
DEFAULT_CHUNK_STEPS = 8192


def _step_of(t_ns: int, dt_ns: int, round_up: bool) -> int:
    if round_up:
        return -(-t_ns // dt_ns)
    return t_ns // dt_ns


@dataclass
class SimResult:
    """Final state of a run."""

    temps_c: dict  # chamber -> final temperature
    compressor_on: bool
    energy_wh: float
    max_internal_c: float
    n_steps: int


class FridgeSimulator:
    """Stateful stepping of one model through one scenario.

    The hysteresis band is the one externally adjustable setpoint
    (`set_band`); changes take effect from the next processed chunk, so live
    runs that need tight control latency use small chunks.
    """

    def __init__(self, model: FridgeModel, scenario: Scenario):
        self.model = model
        self.scenario = scenario
        self.n_steps = scenario.n_steps
        self.dt_ns = scenario.dt_ns
        self.dt_s = scenario.dt_s
        names = model.chamber_names()
        self.channels = (
            ("temp_ambient_c", "humidity_pct")
            + tuple(f"door_open.{c}" for c in names)
            + tuple(f"temp_internal_c.{c}" for c in names)
            + ("power_w", "current_a", "vibration_mm_s", "sound_db")
        )
        self._names = names
        self._build_inputs()
        self._temps = np.array([c.setpoint_c for c in model.chambers], dtype=np.float64)
        self._comp_on = 0
        self._idx = 0
        self._bands = {c.name: c.band_c for c in model.chambers}
        self._refresh_limits()
        self._caps = np.array([c.capacity_j for c in model.chambers])
        self._k_doors = np.array([c.k_door_w for c in model.chambers])
        self._shares = np.array([c.cool_share for c in model.chambers])
        self._out_temps = np.zeros((len(names), self.n_steps))
        self._out_on = np.zeros(self.n_steps, dtype=np.uint8)
        self._energy = EnergyIntegrator()
        self._max_internal = max(c.setpoint_c for c in model.chambers)

    def _refresh_limits(self):
        highs, lows = [], []
        for chamber in self.model.chambers:
            band = self._bands[chamber.name]
            highs.append(chamber.setpoint_c + band / 2.0)
            lows.append(chamber.setpoint_c - band / 2.0)
        self._t_high = np.array(highs)
        self._t_low = np.array(lows)

    def _build_inputs(self):
        n, dt_ns = self.n_steps, self.dt_ns
        scenario, model = self.scenario, self.model
        self._amb = np.empty(n)
        self._hum = np.empty(n)
        for t_ns, temp, hum in scenario.ambient:  # time-ordered; first at 0
            i = _step_of(t_ns, dt_ns, round_up=True)
            self._amb[i:] = temp
            self._hum[i:] = hum
        self._door = np.zeros((len(model.chambers), n), dtype=np.uint8)
        for c, chamber in enumerate(model.chambers):
            for open_ns, close_ns in scenario.doors.get(chamber.name, ()):
                i0 = _step_of(open_ns, dt_ns, round_up=True)
                i1 = _step_of(close_ns, dt_ns, round_up=False) + 1  # closed interval
                self._door[c, i0:min(i1, n)] = 1
        self._cool_mult = np.ones(n)
        self._p_mult = np.ones(n)
        t_days = (np.arange(n, dtype=np.int64) * dt_ns) / NS_PER_S / SECONDS_PER_DAY
        for fault in scenario.faults:
            i0 = _step_of(fault.onset_ns, dt_ns, round_up=True)
            if fault.kind is FaultKind.LEAK:
                onset_days = fault.onset_ns / NS_PER_S / SECONDS_PER_DAY
                factor = 1.0 - fault.rate_per_day * (t_days[i0:] - onset_days)
                self._cool_mult[i0:] *= np.maximum(factor, 0.0)
            elif fault.kind is FaultKind.COMPRESSOR:
                onset_days = fault.onset_ns / NS_PER_S / SECONDS_PER_DAY
                self._p_mult[i0:] *= 1.0 + fault.rate_per_day * (t_days[i0:] - onset_days)
            elif fault.kind is FaultKind.DOOR_STUCK:
                if fault.chamber not in self._names:
                    raise ValueError(f"door_stuck fault: unknown chamber {fault.chamber!r}")
                self._door[self._names.index(fault.chamber), i0:] = 1

    @property
    def done(self) -> bool:
        return self._idx >= self.n_steps

    def set_band(self, chamber: str, band_c: float) -> None:
        if chamber not in self._bands:
            raise ValueError(f"unknown chamber {chamber!r}")
        if band_c <= 0:
            raise ValueError("band must be positive")
        self._bands[chamber] = band_c
        self._refresh_limits()

    def band(self, chamber: str) -> float:
        return self._bands[chamber]

    def process_chunk(self, max_steps: int):
        """Advance up to `max_steps`; returns per-step rows for the chunk.

        Each row is (t_ns, v_0, .., v_k) with values aligned to `channels`.
        """
        if self.done:
            return []
        start = self._idx
        stop = min(start + max_steps, self.n_steps)
        self._comp_on = kernel.run_thermal(
            start, stop, self.dt_s, self._temps, self._comp_on,
            self._amb, self._door, self._cool_mult,
            self._caps, self._k_doors, self._shares,
            self.model.k_leak_w, self.model.k_cool_w,
            self._t_high, self._t_low, self._out_temps, self._out_on,
        )
        self._idx = stop
        model = self.model
        on = self._out_on[start:stop]
        on_f = on.astype(np.float64)
        power = np.where(on == 1, model.p_work_w * self._p_mult[start:stop], model.p_idle_w)
        current = power / model.voltage_v
        vib = model.vib_base + model.vib_delta * on_f
        sound = model.sound_base + model.sound_delta * on_f
        self._max_internal = max(
            self._max_internal, float(self._out_temps[:, start:stop].max()))

        t_ns_col = [i * self.dt_ns for i in range(start, stop)]
        power_l = power.tolist()
        for p, t in zip(power_l, t_ns_col):
            self._energy.update(p, t)
        columns = [t_ns_col, self._amb[start:stop].tolist(), self._hum[start:stop].tolist()]
        columns.extend(self._door[c, start:stop].astype(np.float64).tolist()
                       for c in range(len(self._names)))
        columns.extend(self._out_temps[c, start:stop].tolist()
                       for c in range(len(self._names)))
        columns.extend((power_l, current.tolist(), vib.tolist(), sound.tolist()))
        return list(zip(*columns))

    def rows(self, chunk_steps: int = DEFAULT_CHUNK_STEPS):
        """Generate all remaining rows in time order."""
        while not self.done:
            yield from self.process_chunk(chunk_steps)

    def result(self) -> SimResult:
        return SimResult(
            temps_c={name: float(t) for name, t in zip(self._names, self._temps)},
            compressor_on=bool(self._comp_on),
            energy_wh=self._energy.energy_wh,
            max_internal_c=self._max_internal,
            n_steps=self._idx,
        )


def run(model: FridgeModel, scenario: Scenario, sink=None) -> SimResult:
    """Run a whole scenario, feeding every sample to `sink` in time order."""
    sim = FridgeSimulator(model, scenario)
    for row in sim.rows():
        if sink is not None:
            at = Timestamp.from_ns(row[0])
            for name, value in zip(sim.channels, row[1:]):
                sink(SensorSample(name, value, at))
    return sim.result()


def write_trace(model: FridgeModel, scenario: Scenario, path) -> SimResult:
    """Run a scenario and export the sample stream as canonical trace lines."""
    sim = FridgeSimulator(model, scenario)
    channels = sim.channels
    with open(path, "w", encoding="utf-8") as fh:
        for row in sim.rows():
            t_ns = row[0]
            t_text = f"{t_ns // NS_PER_S}.{t_ns % NS_PER_S:09d}"
            fh.write("".join(
                f"t={t_text} {name}={value!r}\n"
                for name, value in zip(channels, row[1:])
            ))
    return sim.result()


def read_trace(path):
    """Yield SensorSamples from an exported trace file."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                yield decode_sample_line(line)
