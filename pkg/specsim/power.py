"""
Harvested-power side: voltage traces, the supply gate that turns a trace
into ON windows, the adaptive controller that fights stagnation, and the
nonvolatile-processor baseline.

Trace CSV format:

    time_us,voltage_v
    0.0,0.000
    500.0,0.412
    ...
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TraceError
from .ir import ReferenceInterpreter
from .results import COMPLETED, OUTAGE_LIMIT, TRACE_ENDED, SimResult
from .timing import TimingModel

logger = logging.getLogger(__name__)

TRACE_HEADER = "time_us,voltage_v"

ON = "ON"
OFF = "OFF"
WAKING = "WAKING"
SLEEPING = "SLEEPING"


class PowerTrace:
    """
    Voltage samples over time, linearly interpolated. A looped trace repeats
    with a period of its last timestamp plus one sample interval; otherwise
    the last sample holds forever.
    """

    def __init__(self, times_us, volts, loop=False):
        self.times = np.asarray(times_us, dtype=float)
        self.volts = np.asarray(volts, dtype=float)
        self.loop = loop
        self._check()

    def _check(self):
        if self.times.ndim != 1 or self.times.shape != self.volts.shape:
            raise TraceError("trace needs one voltage per timestamp")
        if len(self.times) == 0:
            raise TraceError("empty trace")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise TraceError("trace timestamps are not strictly increasing")
        if np.any(self.volts < 0):
            raise TraceError("negative voltage in trace")
        if self.times[0] < 0:
            raise TraceError("trace starts before time 0")

    @classmethod
    def constant(cls, volts, duration_us=1000.0):
        return cls([0.0, duration_us], [volts, volts])

    @classmethod
    def load(cls, path, loop=False):
        with open(path) as f:
            header = f.readline().strip()
            if header.replace(" ", "") != TRACE_HEADER:
                raise TraceError(path + ": expected header '" + TRACE_HEADER + "', got '" + header + "'")
            try:
                data = np.loadtxt(f, delimiter=",", ndmin=2)
            except ValueError as e:
                raise TraceError(path + ": " + str(e))
        if data.size == 0:
            raise TraceError(path + ": empty trace")
        if data.shape[1] != 2:
            raise TraceError(path + ": expected two columns")
        return cls(data[:, 0], data[:, 1], loop)

    def save(self, path):
        data = np.column_stack([self.times, self.volts])
        np.savetxt(path, data, delimiter=",", fmt=["%.3f", "%.4f"], header=TRACE_HEADER, comments="")

    @property
    def end(self):
        return float(self.times[-1])

    @property
    def period(self):
        if len(self.times) < 2:
            return max(self.end, 1.0)
        return self.end + float(self.times[-1] - self.times[-2])

    def voltage(self, t_us):
        if self.loop:
            t_us = math.fmod(t_us, self.period)
        return float(np.interp(t_us, self.times, self.volts))

    def _crossing_in_period(self, local, level, rising, check_start):
        """
        (time, settled) of the first crossing at or after local within one
        pass over the samples, or None. settled is the first sample time at
        which the voltage is already past the level.
        """
        if check_start:
            v_from = float(np.interp(local, self.times, self.volts))
            if (v_from >= level) if rising else (v_from < level):
                return local, local
        past = self.volts >= level if rising else self.volts < level
        hits = np.flatnonzero(past & (self.times > local))
        if len(hits) == 0:
            return None
        j = int(hits[0])
        if j == 0:
            return float(self.times[0]), float(self.times[0])
        t0, t1 = self.times[j - 1], self.times[j]
        v0, v1 = self.volts[j - 1], self.volts[j]
        if v0 == v1:
            return max(float(t0), local), float(t1)
        t = t0 + (level - v0) * (t1 - t0) / (v1 - v0)
        return min(max(float(t), local), float(t1)), float(t1)

    def crossing(self, t_from, level, rising, check_start=True):
        """
        Earliest time >= t_from at which the interpolated voltage is at or
        above level (rising) or below it (falling), and the first sample time
        from which it is past the level. None if it never happens.
        check_start=False skips the test at t_from itself, for a caller that
        knows the voltage there is on the other side.
        """
        if not self.loop:
            return self._crossing_in_period(t_from, level, rising, check_start)
        period = self.period
        k = math.floor(t_from / period)
        passes = ((k * period, t_from - k * period, check_start), ((k + 1) * period, 0.0, True))
        for base, local, check in passes:
            hit = self._crossing_in_period(local, level, rising, check)
            if hit is not None and hit[0] < period:
                return base + hit[0], base + hit[1]
        return None

    def count_dips(self, v_off, v_on=None):
        """
        Falling crossings below v_off after the trace first reached v_on.
        """
        v_on = v_off if v_on is None else v_on
        above = np.flatnonzero(self.volts >= v_on)
        if len(above) == 0:
            return 0
        below = self.volts[above[0]:] < v_off
        return int(np.count_nonzero(below[1:] & ~below[:-1]))


def gen_trace(outages_per_30s, mean_on_v, seed, duration_s=30.0, sample_us=500.0, v_off=1.8, ramp_us=5000.0):
    """
    Synthetic harvester trace: a charging ramp from 0 V, then a noisy
    baseline around mean_on_v that stays above v_off, broken by exactly
    outages_per_30s (scaled to duration_s) dips below v_off, one per equal
    time bin.
    """
    if outages_per_30s < 0 or mean_on_v <= 0 or duration_s <= 0 or sample_us <= 0:
        raise TraceError("trace parameters must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * 1e6 / sample_us)) + 1
    times = np.arange(n) * sample_us
    floor = v_off + 0.15

    noise = rng.normal(0.0, 0.08, n)
    baseline = np.empty(n)
    level = 0.0
    for i in range(n):
        level = 0.9 * level + noise[i]
        baseline[i] = mean_on_v + level
    volts = np.maximum(baseline, floor)

    ramp = times < ramp_us
    volts[ramp] = np.minimum(volts[ramp], mean_on_v * times[ramp] / ramp_us)

    dips = int(round(outages_per_30s * duration_s / 30.0))
    if dips:
        start = int(math.ceil(ramp_us / sample_us)) + 2
        edges = np.linspace(start, n - 1, dips + 1).astype(int)
        for lo, hi in zip(edges[:-1], edges[1:]):
            width = int(rng.integers(2, 9))
            if hi - lo <= width + 2:
                raise TraceError("too many outages for the trace resolution")
            at = int(rng.integers(lo + 1, hi - width))
            volts[at:at + width] = rng.uniform(0.2, v_off - 0.3, width)
    logger.debug("generated trace: %d samples, %d dips, seed %d", n, dips, seed)
    return PowerTrace(times, np.round(volts, 4))


@dataclass(frozen=True)
class SupplyGate:
    """
    Turns a trace into ON windows with hysteresis. Power comes up once the
    voltage reaches v_on and stays at or above v_off for the whole wakeup
    time; it goes down the moment it falls below v_off. After an outage the
    core sleeps for sleep_us before it looks at the voltage again.
    """

    trace: PowerTrace
    v_on: float
    v_off: float
    sleep_us: float
    wakeup_us: float

    @classmethod
    def core(cls, trace, config):
        return cls(trace, config.v_on, config.v_off, config.sleep_us, config.wakeup_us)

    @classmethod
    def nvp(cls, trace, config):
        return cls(trace, config.nvp_v_on, config.nvp_checkpoint_v, config.nvp_sleep_us, config.nvp_wakeup_us)

    def windows(self, start_us=0.0):
        """
        Yield (on_us, off_us) pairs; off_us is None for a window that never ends.
        Thresholds are crossed where the interpolated voltage reaches them.
        """
        look_from = start_us
        while True:
            while True:
                rise = self.trace.crossing(look_from, self.v_on, rising=True)
                if rise is None:
                    return
                t_on = rise[0]
                drop = self.trace.crossing(t_on, self.v_off, rising=False, check_start=False)
                if drop is not None and drop[0] < t_on + self.wakeup_us:
                    look_from = drop[1]
                    continue
                break
            if drop is None:
                yield t_on + self.wakeup_us, None
                return
            t_drop, settled = drop
            yield t_on + self.wakeup_us, t_drop
            look_from = max(t_drop + self.sleep_us, settled)

    def state(self, t_us):
        """
        ON, OFF, WAKING or SLEEPING at time t_us.
        """
        previous_off = None
        for on, off in self.windows():
            if t_us < on - self.wakeup_us:
                break
            if t_us < on:
                return WAKING
            if off is None or t_us < off:
                return ON
            previous_off = off
        if previous_off is not None and t_us < previous_off + self.sleep_us:
            return SLEEPING
        return OFF

    def on_time(self, horizon_us):
        total = 0.0
        for on, off in self.windows():
            if on >= horizon_us:
                break
            total += min(horizon_us if off is None else off, horizon_us) - on
        return total

    def on_time_fraction(self, horizon_us):
        return self.on_time(horizon_us) / horizon_us if horizon_us > 0 else 0.0


def supply_state(trace, t_us, config):
    return SupplyGate.core(trace, config).state(t_us)


@dataclass
class AdaptiveController:
    """
    Reacts to power failures. The first failure turns ILP off. A region
    that fails more than failure_threshold times arms the watchdog, and
    every further failure there halves its period down to the floor. After
    progress_regions region completions in a row the initial settings come
    back.
    """

    ilp_base: bool
    initial_period: int
    floor: int
    failure_threshold: int = 2
    progress_regions: int = 10
    watchdog_base: bool = False
    ilp_enabled: bool = True
    watchdog_armed: bool = False
    period_cycles: int = 0
    failures: dict = field(default_factory=dict)
    progress: int = 0
    changes: list = field(default_factory=list)

    @classmethod
    def from_config(cls, config):
        return cls(
            ilp_base=config.ilp,
            initial_period=config.watchdog_period_cycles,
            floor=config.watchdog_floor_cycles,
            failure_threshold=config.failure_threshold,
            progress_regions=config.progress_regions,
            watchdog_base=config.watchdog_armed,
            ilp_enabled=config.ilp,
            watchdog_armed=config.watchdog_armed,
            period_cycles=config.watchdog_period_cycles,
        )

    def _change(self, what, region):
        self.changes.append({"change": what, "region": region, "ilp": self.ilp_enabled, "watchdog": self.watchdog_armed, "period": self.period_cycles})
        logger.debug("controller: %s (region %d, period %d)", what, region, self.period_cycles)

    def power_failed(self, region):
        self.progress = 0
        if self.ilp_enabled:
            self.ilp_enabled = False
            self._change("ilp-off", region)
        count = self.failures.get(region, 0) + 1
        self.failures[region] = count
        if count <= self.failure_threshold:
            return
        if not self.watchdog_armed:
            self.watchdog_armed = True
            self._change("watchdog-armed", region)
            return
        halved = max(self.period_cycles // 2, self.floor)
        if halved != self.period_cycles:
            self.period_cycles = halved
            self._change("watchdog-halved", region)

    def region_completed(self, region):
        self.failures.pop(region, None)
        self.progress += 1
        if self.progress < self.progress_regions:
            return
        self.progress = 0
        if (self.ilp_enabled, self.watchdog_armed, self.period_cycles) != (self.ilp_base, self.watchdog_base, self.initial_period):
            self.ilp_enabled = self.ilp_base
            self.watchdog_armed = self.watchdog_base
            self.period_cycles = self.initial_period
            self.failures.clear()
            self._change("restored", region)


def adaptive_step(controller, event, region):
    """
    Feed one "failure" or "completion" event to the controller and return
    the mode changes it made.
    """
    before = len(controller.changes)
    if event == "failure":
        controller.power_failed(region)
    elif event == "completion":
        controller.region_completed(region)
    else:
        raise ValueError("unknown controller event " + str(event))
    return controller.changes[before:]


def _nvp_latency(insn, timing):
    if insn.opcode == "load":
        return timing.nvm_read_cycles
    if insn.opcode == "store":
        return timing.nvm_write_cycles
    return timing.alu_cycles


def _nvp_energy(insn, timing, cycles):
    pj = timing.compute_pj(cycles)
    if insn.opcode == "load":
        pj += timing.nvm_read_pj
    elif insn.opcode == "store" and not insn.checkpoint:
        pj += timing.nvm_write_pj
    return pj


def simulate_nvp_baseline(program, trace, config, timing=None, golden=None):
    """
    Nonvolatile-processor baseline: the unpartitioned program runs straight
    against NVM, the register state is saved instantly when the voltage
    drops below the checkpoint level and execution resumes in place once the
    supply is back. Nothing is ever re-executed.
    """
    timing = timing or TimingModel.from_config(config)
    gate = SupplyGate.nvp(trace, config)
    interp = ReferenceInterpreter(program, config.instruction_budget)
    result = SimResult("nvp", TRACE_ENDED)
    energy = result.energy
    now = 0
    on_cycles = 0
    for on_us, off_us in gate.windows():
        start = max(now, timing.us_to_cycles_ceil(on_us))
        energy["sleep_wakeup"] += timing.sleep_pj(config.nvp_wakeup_us)
        stop = None if off_us is None else timing.us_to_cycles(off_us)
        now = start
        while not interp.halted:
            insn = interp.current()
            cycles = _nvp_latency(insn, timing)
            if stop is not None and now + cycles > stop:
                break
            interp.step()
            now += cycles
            energy["no_ilp"] += _nvp_energy(insn, timing, cycles)
        on_cycles += now - start
        if interp.halted:
            result.status = COMPLETED
            break
        result.outages += 1
        energy["sleep_wakeup"] += timing.sleep_pj(config.nvp_sleep_us)
        now = max(now, stop)
        if result.outages >= config.max_outages:
            result.status = OUTAGE_LIMIT
            break

    result.completion_us = timing.cycles_to_us(now)
    result.on_us = timing.cycles_to_us(on_cycles)
    result.off_us = result.completion_us - result.on_us
    result.instructions = interp.count
    result.committed = interp.count
    result.output = interp.output()
    if golden is not None and result.completed:
        result.consistent = tuple(interp.memory) == golden.memory and result.output == golden.output
    if not result.completed:
        logger.warning("nvp baseline did not finish: %s after %d outages", result.status, result.outages)
    return result
