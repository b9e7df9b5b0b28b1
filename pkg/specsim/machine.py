"""
Instruction-level simulator of the in-order, cache-less core with a split
store buffer.

Time is counted in cycles. The core and the background release are two
event sources; an event takes effect when it completes, and when both
complete on the same cycle the release step is applied first.
"""
import enum
import logging
from dataclasses import dataclass, field
from typing import List, Optional

from .config import FULL_CHECKPOINT_ENTRIES
from .errors import BudgetExceeded, SimulationError
from .ir import LINK_REG, NUM_REGS, PC_SLOT, alu_eval, alu_operands, branch_taken, decode_site, encode_site, wrap32
from .persistence import NvmImage, RecoveryProcess, begin_release, begin_release_full, restored_state
from .timing import TimingModel

logger = logging.getLogger(__name__)

CATEGORIES = (
    "phase1_success",
    "phase2_success",
    "compute_success",
    "phase1_misspec",
    "phase2_misspec",
    "compute_misspec",
    "no_ilp",
    "reexec",
    "sleep_wakeup",
    "search",
)


class HalfState(enum.Enum):
    FILLING = "filling"
    RELEASING = "releasing"
    DRAINED_VALID = "drained-valid"
    INVALID = "invalid"


class Mode(enum.Enum):
    OFF = "off"
    RECOVERING = "recovering"
    RUNNING = "running"
    WAIT_PREV = "wait-prev"
    WAIT_OWN = "wait-own"
    WAIT_FINAL = "wait-final"
    WAIT_WATCHDOG = "wait-watchdog"
    DONE = "done"


@dataclass(frozen=True)
class SbEntry:
    addr: int
    value: int
    checkpoint: bool = False


@dataclass
class SbHalf:
    entries: List[SbEntry] = field(default_factory=list)
    state: HalfState = HalfState.INVALID

    def newest(self, addr):
        for e in reversed(self.entries):
            if e.addr == addr:
                return e
        return None

    def clear(self):
        self.entries = []
        self.state = HalfState.INVALID


class StoreBuffer:
    """
    Two halves of sb_size // 2 entries. The active half takes the stores of
    the running region while the other one is released (or, once drained,
    stays readable until the running region ends).
    """

    def __init__(self, capacity):
        self.capacity = capacity
        self.halves = [SbHalf(), SbHalf()]
        self.active_index = 0
        self.halves[0].state = HalfState.FILLING

    @property
    def active(self):
        return self.halves[self.active_index]

    @property
    def other(self):
        return self.halves[1 - self.active_index]

    def commit(self, addr, value, checkpoint=False):
        half = self.active
        if len(half.entries) >= self.capacity:
            raise SimulationError("store buffer half overflow (" + str(self.capacity) + " entries)")
        half.entries.append(SbEntry(addr, value, checkpoint))

    def lookup(self, addr):
        """
        Newest matching entry: the active half first, then the other half
        if it still holds the previous region's stores. Returns
        (source, value) or None.
        """
        e = self.active.newest(addr)
        if e is not None:
            return "own", e.value
        if self.other.state in (HalfState.RELEASING, HalfState.DRAINED_VALID):
            e = self.other.newest(addr)
            if e is not None:
                return "previous", e.value
        return None

    def holds(self, addr):
        return any(h.state != HalfState.INVALID and h.newest(addr) is not None for h in self.halves)

    def seal(self):
        """
        Close the active half for release and return its entries in commit order.
        """
        self.active.state = HalfState.RELEASING
        return [(e.addr, e.value) for e in self.active.entries]

    def switch(self):
        self.active_index = 1 - self.active_index
        self.active.clear()
        self.active.state = HalfState.FILLING

    def drained(self):
        for h in self.halves:
            if h.state == HalfState.RELEASING:
                h.state = HalfState.DRAINED_VALID

    def commit_to_idle(self, entries):
        idle = self.other
        if len(entries) > self.capacity:
            raise SimulationError(
                "register checkpoint of " + str(len(entries)) + " entries does not fit a half of " + str(self.capacity)
            )
        idle.clear()
        idle.entries = [SbEntry(a, v, True) for a, v in entries]
        idle.state = HalfState.FILLING

    def clear(self):
        for h in self.halves:
            h.clear()
        self.active_index = 0
        self.halves[0].state = HalfState.FILLING

    def occupancy(self):
        return len(self.active.entries)


class EnergyMeter:
    def __init__(self):
        self.totals = dict.fromkeys(CATEGORIES, 0.0)

    def charge(self, category, pj):
        if pj < 0:
            raise SimulationError("negative energy charge for " + category)
        self.totals[category] += pj

    @property
    def total(self):
        return sum(self.totals.values())

    def as_dict(self):
        return dict(self.totals)


class EventLog:
    """
    Ordered simulator events as plain dicts, written out as JSON lines.
    """

    def __init__(self, enabled=True):
        self.enabled = enabled
        self.events = []

    def add(self, event, cycle, **fields):
        if self.enabled:
            record = {"event": event, "cycle": cycle}
            record.update(fields)
            self.events.append(record)

    def of(self, event):
        return [e for e in self.events if e["event"] == event]

    def energy_by_category(self):
        totals = dict.fromkeys(CATEGORIES, 0.0)
        for e in self.events:
            if e["event"] == "energy":
                totals[e["category"]] += e["pj"]
        return totals

    def __len__(self):
        return len(self.events)


@dataclass
class RegionInstance:
    """
    One dynamic execution of a region, with the energy it has spent so far.
    The energy is attributed once the instance's stores are durable or lost.
    """

    region: int
    start: int
    ilp: bool
    recovery: bool = False
    instructions: int = 0
    pending: dict = field(default_factory=lambda: {"compute": 0.0, "phase1": 0.0, "phase2": 0.0, "search": 0.0})
    resolved: bool = False

    def add(self, kind, pj):
        self.pending[kind] += pj

    def category(self, kind, success):
        if kind == "search":
            return "search"
        if self.recovery:
            return "reexec"
        if kind == "compute":
            if not self.ilp:
                return "no_ilp" if success else "reexec"
            return "compute_success" if success else "compute_misspec"
        return kind + ("_success" if success else "_misspec")


@dataclass
class ReleaseRecord:
    kind: str
    start: int
    entries: int
    instance: Optional[RegionInstance] = None
    stall: int = 0
    phase1_end: Optional[int] = None
    copy_cycles: int = 0
    end: Optional[int] = None


RELEASE_REGION = "region"
RELEASE_HALT = "halt"
RELEASE_WATCHDOG = "watchdog"


class Machine:
    """
    The core, its store buffer and the NVM it writes through releases.

    Drive it with wake(), then step() while next_event_time() is not None
    (or run() for a failure-free execution). power_cut() drops everything
    volatile. With naive set, stores go straight to NVM and no release
    ever happens.
    """

    def __init__(
        self,
        exe,
        config,
        timing=None,
        nvm=None,
        naive=False,
        record_loads=False,
        controller=None,
        log=None,
    ):
        self.exe = exe
        self.config = config
        self.timing = timing or TimingModel.from_config(config)
        self.layout = exe.layout
        self.nvm = nvm if nvm is not None else NvmImage.boot(exe.program, exe.layout, exe.entry_pc)
        self.naive = naive
        self.controller = controller
        self.log = log if log is not None else EventLog()
        self.meter = EnergyMeter()
        self.sb = StoreBuffer(config.half_capacity)

        self.regs = [0] * NUM_REGS
        self.pc = exe.entry_pc
        self.mode = Mode.OFF
        self.core_time = 0
        self.instance = None
        self.release = None
        self.release_record = None
        self.release_step_start = 0
        self.recovery = None
        self.recovery_instance = None
        self.wait_start = 0
        self.pending_exit = None
        self.finish_time = None

        self.ilp_enabled = config.ilp
        self.watchdog_armed = config.watchdog_armed
        self.watchdog_period = config.watchdog_period_cycles
        self.watchdog_countdown = self.watchdog_period
        self._sync_controller()

        self.releases = []
        self.instructions = 0
        self.reexecuted = 0
        self.committed = 0
        self.loads = 0
        self.bypassed_loads = 0
        self.forwarded_loads = 0
        self.stall_cycles = 0
        self.region_completions = 0
        self.watchdog_checkpoints = 0
        self.outages = 0
        self.max_occupancy = 0
        self.load_values = [] if record_loads else None

    @property
    def protocol(self):
        return self.config.protocol

    @property
    def done(self):
        return self.mode == Mode.DONE

    def _sync_controller(self, t=None):
        if self.controller is None:
            return
        before = (self.ilp_enabled, self.watchdog_armed, self.watchdog_period)
        self.ilp_enabled = self.controller.ilp_enabled
        self.watchdog_armed = self.controller.watchdog_armed
        self.watchdog_period = self.controller.period_cycles
        after = (self.ilp_enabled, self.watchdog_armed, self.watchdog_period)
        if t is not None and after != before:
            self.log.add("mode", t, ilp=after[0], watchdog=after[1], period=after[2])

    # ------------------------------------------------------------------
    # event scheduling

    def wake(self, at):
        """
        Power is back: run recovery (which on a fresh image is the boot).
        """
        if self.mode != Mode.OFF:
            raise SimulationError("wake while " + self.mode.value)
        self.core_time = at
        self.mode = Mode.RECOVERING
        self.recovery = RecoveryProcess(self.nvm, self.timing, self.protocol, self.config.corrupt_skip_redo)
        self.recovery_instance = RegionInstance(-1, at, False, recovery=True)
        self.log.add("recover", at, status=self.recovery.initial_status)

    def _release_time(self):
        if self.release is None:
            return None
        return self.release_step_start + self.release.current().cycles

    def _core_time(self):
        if self.mode == Mode.RECOVERING:
            return self.core_time + self.recovery.current().cycles
        if self.mode == Mode.RUNNING:
            return self.core_time + self._latency(self.exe.code[self.pc])
        if self.mode == Mode.WAIT_WATCHDOG and self.release is None:
            return self.core_time + FULL_CHECKPOINT_ENTRIES * self.timing.sb_commit_cycles
        return None

    def next_event_time(self):
        times = [t for t in (self._release_time(), self._core_time()) if t is not None]
        return min(times) if times else None

    def step(self):
        """
        Apply the next event and return its kind, or None if nothing is
        scheduled.
        """
        rt = self._release_time()
        ct = self._core_time()
        if rt is not None and (ct is None or rt <= ct):
            self._release_step(rt)
            return "release"
        if ct is None:
            return None
        if self.mode == Mode.RECOVERING:
            self._recovery_step(ct)
            return "recovery"
        if self.mode == Mode.WAIT_WATCHDOG:
            self.watchdog_checkpoint(ct)
            return "watchdog"
        self._execute(ct)
        return "instruction"

    def run_until(self, limit):
        """
        Apply every event completing at or before cycle limit.
        """
        while True:
            t = self.next_event_time()
            if t is None or t > limit:
                return
            self.step()

    def run(self, start=0):
        """
        Failure-free execution to completion. Returns the finishing cycle.
        """
        if self.mode == Mode.OFF:
            self.wake(start)
        while not self.done:
            if self.step() is None:
                raise SimulationError("machine has no pending event in mode " + self.mode.value)
        return self.finish_time

    # ------------------------------------------------------------------
    # recovery

    def _recovery_step(self, t):
        step = self.recovery.apply_next(self.nvm)
        self.recovery_instance.add("compute", step.energy)
        self.core_time = t
        if not self.recovery.done:
            return
        self._resolve(self.recovery_instance, True, t)
        self.recovery_instance = None
        self.recovery = None
        registers, pc_word = restored_state(self.nvm)
        self.regs = list(registers)
        self.pc = self.exe.decode_pc(pc_word)
        if not 0 <= self.pc < len(self.exe.code):
            raise SimulationError("recovery PC " + str(self.pc) + " outside the program")
        self.sb.clear()
        self.mode = Mode.RUNNING
        self._start_instance(t)
        self.log.add("resume", t, pc=self.pc, region=self.instance.region)

    def _start_instance(self, t):
        region = -1 if self.naive else self.exe.region(self.pc)
        self.instance = RegionInstance(region, t, self.ilp_enabled and not self.naive)
        self.watchdog_countdown = self.watchdog_period
        self.log.add("region_start", t, region=region, ilp=self.instance.ilp)

    # ------------------------------------------------------------------
    # core

    def _latency(self, insn):
        if insn.opcode == "load":
            return self.timing.nvm_read_cycles
        if insn.opcode == "store":
            return self.timing.nvm_write_cycles if self.naive else self.timing.sb_commit_cycles
        return self.timing.alu_cycles

    def _address(self, pc, insn):
        addr = self.exe.addrs[pc]
        if addr is None:
            addr = self.regs[insn.base] + insn.offset
            if not self.layout.is_primary(addr):
                raise SimulationError(
                    "invalid memory access at address " + str(addr) + " (line " + str(insn.line) + ")"
                )
        return addr

    def sb_lookup(self, addr):
        """
        Load through the store buffer: forwarded from either half, or read
        from primary memory. Every lookup is charged one search.
        """
        self.instance.add("search", self.timing.search_pj)
        hit = self.sb.lookup(addr)
        if hit is not None:
            self.forwarded_loads += 1
            return hit
        self.instance.add("compute", self.timing.nvm_read_pj)
        return "nvm", self.nvm.read(addr)

    def sb_bypass_load(self, addr):
        """
        Load marked as bypassing the store buffer: straight from primary
        memory, after checking no buffered store covers the address.
        """
        if self.sb.holds(addr):
            raise SimulationError("bypass violation: load of " + self.layout.describe(addr) + " has a buffered store")
        self.bypassed_loads += 1
        self.instance.add("compute", self.timing.nvm_read_pj)
        return self.nvm.read(addr)

    def _execute(self, t):
        exe = self.exe
        pc = self.pc
        insn = exe.code[pc]
        latency = self._latency(insn)
        if self.instructions >= self.config.instruction_budget:
            raise BudgetExceeded("instruction budget of " + str(self.config.instruction_budget) + " exceeded")
        self.instructions += 1
        self.instance.instructions += 1
        self.instance.add("compute", self.timing.compute_pj(latency))
        regs = self.regs
        next_pc = pc + 1
        op = insn.opcode

        if op == "alu":
            if insn.op == "la":
                regs[insn.dst] = exe.values[pc]
            else:
                regs[insn.dst] = alu_eval(insn.op, *alu_operands(insn, regs))
        elif op == "load":
            addr = self._address(pc, insn)
            self.loads += 1
            if self.naive:
                self.instance.add("compute", self.timing.nvm_read_pj)
                value = self.nvm.read(addr)
            elif insn.bypass:
                value = self.sb_bypass_load(addr)
            else:
                value = self.sb_lookup(addr)[1]
            regs[insn.dst] = value
            if self.load_values is not None:
                self.load_values.append(value)
        elif op == "store":
            addr = self._address(pc, insn)
            value = regs[insn.src] if insn.src is not None else wrap32(exe.values[pc])
            if self.naive:
                self.instance.add("compute", self.timing.nvm_write_pj)
                self.nvm.write(addr, value)
            else:
                self.sb.commit(addr, value, insn.checkpoint)
                self.max_occupancy = max(self.max_occupancy, self.sb.occupancy())
        elif op == "branch":
            if branch_taken(insn.op, regs[insn.src], regs[insn.src2]):
                next_pc = exe.targets[pc]
        elif op == "jump":
            next_pc = exe.targets[pc]
        elif op == "call":
            regs[LINK_REG] = encode_site(exe.site_of[pc])
            next_pc = exe.targets[pc]
        elif op == "ret":
            site = decode_site(regs[LINK_REG])
            if not 0 <= site < len(exe.sites):
                raise SimulationError("ret with no return site in r15 (line " + str(insn.line) + ")")
            next_pc = exe.sites[site]

        self.core_time = t
        self.watchdog_countdown -= latency
        if op == "halt":
            self._halt(t)
            return
        if next_pc == pc + 1 and (next_pc >= len(exe.code) or exe.owner[next_pc] != exe.owner[pc]):
            raise SimulationError("fell off the end of fn " + exe.owner[pc])
        self.pc = next_pc
        if self.naive:
            return
        if next_pc in exe.region_entries:
            self.end_of_region_wait(t, next_pc, False)
            return
        if (
            self.watchdog_armed
            and not self.instance.ilp
            and self.release is None
            and self.watchdog_countdown <= 0
        ):
            self.mode = Mode.WAIT_WATCHDOG
            self.log.add("watchdog_expired", t, region=self.instance.region, pc=self.pc)

    def _halt(self, t):
        if self.naive:
            self._resolve(self.instance, True, t)
            self.instance = None
            self._finish(t)
            return
        self.end_of_region_wait(t, None, True)

    def _finish(self, t):
        self.mode = Mode.DONE
        self.finish_time = t
        self.log.add("done", t, instructions=self.instructions)

    # ------------------------------------------------------------------
    # region boundaries and releases

    def end_of_region_wait(self, t, next_pc, halting):
        """
        The running region has ended. Wait for a release still in flight,
        then release this region's half. Returns the cycles the core will
        stall before its own release can start.
        """
        self.log.add("region_end", t, region=self.instance.region, stores=self.sb.occupancy())
        if self.release is not None:
            self.mode = Mode.WAIT_PREV
            self.wait_start = t
            self.pending_exit = (next_pc, halting)
            return self._release_time() - t + sum(s.cycles for s in self.release.steps[self.release.position + 1:])
        self._release_and_continue(t, next_pc, halting)
        return 0

    def _release_and_continue(self, t, next_pc, halting):
        entries = self.sb.seal()
        self._begin_release(t, entries, self.instance, RELEASE_HALT if halting else RELEASE_REGION)
        self.sb.switch()
        self.instance = None
        self.pending_exit = None
        self.core_time = t
        if halting:
            self.mode = Mode.WAIT_FINAL
            return
        self.pc = next_pc
        if self.ilp_enabled:
            self.mode = Mode.RUNNING
            self._start_instance(t)
        else:
            self.mode = Mode.WAIT_OWN

    def _begin_release(self, t, entries, instance, kind, checkpoint=None):
        if kind == RELEASE_WATCHDOG:
            self.release = begin_release_full(entries, checkpoint, self.layout, self.timing, self.protocol)
        else:
            self.release = begin_release(entries, self.layout, self.timing, self.protocol)
        self.release_record = ReleaseRecord(kind, t, len(self.release.entries), instance)
        self.release_step_start = t
        self.log.add("release_begin", t, region=instance.region, kind=kind, entries=len(self.release.entries))

    def _release_step(self, t):
        process = self.release
        record = self.release_record
        step = process.apply_next(self.nvm)
        record.instance.add("phase1" if step.phase == 1 else "phase2", step.energy)
        if step.kind == "copy":
            record.copy_cycles += step.cycles
        if step.kind == "status":
            self.log.add("status", t, value=step.writes[0][1])
        if step.phase == 1 and (process.done or process.current().phase != 1):
            record.phase1_end = t
        self.release_step_start = t
        if process.done:
            self._release_done(t)

    def _release_done(self, t):
        record = self.release_record
        record.end = t
        self.releases.append(record)
        self.release = None
        self.release_record = None
        self.sb.drained()
        self._resolve(record.instance, True, t)
        self.log.add(
            "release_end",
            t,
            region=record.instance.region,
            kind=record.kind,
            entries=record.entries,
            phase1_cycles=record.phase1_end - record.start,
            phase2_cycles=t - record.phase1_end,
            copy_cycles=record.copy_cycles,
        )
        if record.kind == RELEASE_REGION:
            self.region_completions += 1
            if self.controller is not None:
                self.controller.region_completed(record.instance.region)
                self._sync_controller(t)

        if self.mode == Mode.WAIT_PREV:
            stall = t - self.wait_start
            record.stall += stall
            self.stall_cycles += stall
            self.log.add("stall", t, cycles=stall)
            next_pc, halting = self.pending_exit
            self._release_and_continue(t, next_pc, halting)
        elif self.mode == Mode.WAIT_OWN:
            stall = t - record.start
            record.stall += stall
            self.stall_cycles += stall
            self.core_time = t
            self.mode = Mode.RUNNING
            self._start_instance(t)
        elif self.mode == Mode.WAIT_FINAL:
            self._finish(t)
        elif self.mode == Mode.WAIT_WATCHDOG:
            self.sb.clear()
            self.core_time = t
            self.mode = Mode.RUNNING
            self._start_instance(t)

    def watchdog_checkpoint(self, t):
        """
        Timer expiry: commit the registers and the next PC to the idle half,
        then release both halves together.
        """
        base = self.layout.rf_base
        checkpoint = [(base + r, self.regs[r]) for r in range(NUM_REGS)] + [(base + PC_SLOT, self.pc)]
        self.sb.commit_to_idle(checkpoint)
        self.instance.add("compute", self.timing.compute_pj(FULL_CHECKPOINT_ENTRIES * self.timing.sb_commit_cycles))
        self.core_time = t
        active = [(e.addr, e.value) for e in self.sb.active.entries]
        for h in self.sb.halves:
            h.state = HalfState.RELEASING
        self.watchdog_checkpoints += 1
        self._begin_release(t, active, self.instance, RELEASE_WATCHDOG, checkpoint)

    # ------------------------------------------------------------------
    # failures and accounting

    def _resolve(self, instance, success, t):
        if instance is None or instance.resolved:
            return
        instance.resolved = True
        by_category = {}
        for kind, pj in instance.pending.items():
            if pj:
                category = instance.category(kind, success)
                by_category[category] = by_category.get(category, 0.0) + pj
        for category, pj in by_category.items():
            self.meter.charge(category, pj)
            self.log.add("energy", t, region=instance.region, category=category, pj=pj)
        if instance.recovery:
            return
        if success:
            self.committed += instance.instructions
        else:
            self.reexecuted += instance.instructions

    def charge_sleep(self, t, pj):
        self.meter.charge("sleep_wakeup", pj)
        self.log.add("energy", t, region=-1, category="sleep_wakeup", pj=pj)

    def failing_region(self):
        if self.instance is not None:
            return self.instance.region
        if self.release_record is not None:
            return self.release_record.instance.region
        return -1

    def power_cut(self, t):
        """
        Supply lost at cycle t: registers, both store buffer halves and any
        release or recovery in progress vanish. NVM is left as it is.
        """
        if self.mode in (Mode.OFF, Mode.DONE):
            return
        region = self.failing_region()
        self.outages += 1
        if self.release is not None:
            self._resolve(self.release_record.instance, self.release.durable, t)
        self._resolve(self.instance, False, t)
        self._resolve(self.recovery_instance, False, t)
        self.log.add("power_cut", t, region=region, mode=self.mode.value)
        self.regs = [0] * NUM_REGS
        self.sb.clear()
        self.instance = None
        self.release = None
        self.release_record = None
        self.recovery = None
        self.recovery_instance = None
        self.pending_exit = None
        self.mode = Mode.OFF
        self.core_time = t
        if self.controller is not None:
            self.controller.power_failed(region)
            self._sync_controller(t)

    def ilp_efficiency(self):
        """
        Share of region release time hidden under execution of the next
        region. Halt and watchdog releases are not counted.
        """
        records = [r for r in self.releases if r.kind == RELEASE_REGION]
        total = sum(r.end - r.start for r in records)
        if not total:
            return 1.0
        return sum(r.end - r.start - r.stall for r in records) / float(total)

    def output(self):
        return self.nvm.output()
