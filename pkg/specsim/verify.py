"""
Exhaustive power-failure injection.

A failure-free run is stepped event by event and every distinct NVM image
it passes through is recorded; volatile state is lost at a cut, so these
images are all a failure can leave behind. Each image is then recovered and
run to completion, and the result compared with the reference interpreter.
The double-failure sweep also cuts power after every step of that recovery.
"""
import logging

from .config import PROTOCOLS
from .errors import SimulationError
from .machine import EventLog, Machine, Mode
from .results import Counterexample, VerifyReport
from .timing import TimingModel

logger = logging.getLogger(__name__)

MAX_DIFFS = 5
# a watchdog period short enough to expire inside ordinary regions
WATCHDOG_VERIFY_CYCLES = 64


def variants(config, watchdog=True):
    """
    Yield (name, config) for every protocol, ILP on/off and DMA on/off,
    plus a watchdog variant per protocol.
    """
    for protocol in PROTOCOLS:
        for ilp in (True, False):
            for dma in (False, True):
                name = protocol + ("/ilp" if ilp else "/no-ilp") + ("/dma" if dma else "")
                yield name, config.replace(protocol=protocol, ilp=ilp, dma=dma, adaptive=False, watchdog_armed=False)
        if watchdog:
            period_us = WATCHDOG_VERIFY_CYCLES * config.clock_ns / 1000.0
            yield protocol + "/watchdog", config.replace(
                protocol=protocol,
                ilp=False,
                adaptive=False,
                watchdog_armed=True,
                watchdog_period_us=period_us,
                watchdog_floor_cycles=min(config.watchdog_floor_cycles, WATCHDOG_VERIFY_CYCLES),
            )


def diff_against(nvm, golden):
    diffs = []
    for addr, (got, want) in enumerate(zip(nvm.primary(), golden.memory)):
        if got != want:
            diffs.append(nvm.layout.describe(addr) + ": got " + str(got) + ", want " + str(want))
            if len(diffs) >= MAX_DIFFS:
                break
    return diffs


class Sweep:
    def __init__(self, prepared, config, name, double=True):
        self.prepared = prepared
        self.config = config
        self.timing = TimingModel.from_config(config)
        self.double = double
        self.report = VerifyReport(prepared.name, name)
        self._outcomes = {}

    def _machine(self, nvm=None):
        return Machine(self.prepared.exe, self.config, self.timing, nvm=nvm, log=EventLog(enabled=False))

    def images(self):
        """
        Distinct NVM images of a failure-free run, in order of first
        appearance, each with the event it followed.
        """
        m = self._machine()
        seen = {m.nvm.key(): ("boot", m.nvm.copy())}
        m.wake(0)
        events = 1
        while not m.done:
            kind = m.step()
            if kind is None:
                raise SimulationError("machine has no pending event in mode " + m.mode.value)
            events += 1
            key = m.nvm.key()
            if key not in seen:
                seen[key] = (kind + " #" + str(events - 1), m.nvm.copy())
        self.report.injection_points = events
        diffs = diff_against(m.nvm, self.prepared.golden)
        if diffs:
            self._fail("failure-free", diffs)
        return list(seen.values())

    def resume(self, image):
        """
        Recover from image and run to completion. Returns a diff list,
        empty when the final state matches.
        """
        key = image.key()
        if key in self._outcomes:
            return self._outcomes[key]
        m = self._machine(image.copy())
        try:
            m.run()
            diffs = diff_against(m.nvm, self.prepared.golden)
        except SimulationError as e:
            if "bypass violation" in str(e):
                self.report.bypass_violations += 1
            diffs = [str(e)]
        self._outcomes[key] = diffs
        return diffs

    def _fail(self, point, diffs):
        self.report.failures += 1
        self.report.counterexamples.append(Counterexample(self.report.variant, point, diffs))

    def _double(self, point, image):
        m = self._machine(image.copy())
        m.wake(0)
        n = 0
        while m.mode == Mode.RECOVERING:
            m.step()
            n += 1
            self.report.double_failure_points += 1
            if m.mode != Mode.RECOVERING:
                break
            diffs = self.resume(m.nvm)
            if diffs:
                self._fail(point + ", then during recovery step " + str(n), diffs)

    def run(self):
        images = self.images()
        self.report.images = len(images)
        for point, image in images:
            diffs = self.resume(image)
            if diffs:
                self._fail("after " + point, diffs)
            if self.double:
                self._double("after " + point, image)
        logger.info(
            "%s [%s]: %d points, %d images, %d failures",
            self.prepared.name,
            self.report.variant,
            self.report.injection_points,
            self.report.images,
            self.report.failures,
        )
        return self.report


def verify_variant(prepared, config, name="default", double=True):
    return Sweep(prepared, config, name, double).run()


def verify(prepared, config, double=True, watchdog=True, only=None):
    """
    Sweep every variant (or the ones named in only) and return the reports.
    """
    reports = []
    for name, variant in variants(config, watchdog):
        if only and name not in only:
            continue
        reports.append(verify_variant(prepared, variant, name, double))
    return reports


def run_with_cut(prepared, config, cut_after, naive=False):
    """
    Apply cut_after events of a failure-free run, cut power, then recover and
    run to completion. Returns the machine.
    """
    m = Machine(prepared.exe, config, naive=naive, log=EventLog(enabled=False))
    m.wake(0)
    for _ in range(cut_after):
        if m.done:
            break
        m.step()
    if not m.done:
        m.power_cut(m.core_time)
        m.wake(m.core_time)
        m.run()
    return m


def outputs_under_injection(prepared, config, naive=False):
    """
    Final output for a single cut after each event of the run.
    """
    clean = Machine(prepared.exe, config, naive=naive, log=EventLog(enabled=False))
    clean.wake(0)
    events = 0
    while not clean.done:
        clean.step()
        events += 1
    return [run_with_cut(prepared, config, k, naive).output() for k in range(events + 1)]
