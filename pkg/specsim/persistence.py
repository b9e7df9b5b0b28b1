"""
Nonvolatile side of the machine: the NVM image and its fixed layout, the
failure-atomic two-phase store-buffer release and the recovery protocol.

NVM layout (one address per 32-bit word):

    [ primary data | proxy (2 words per entry) | proxy count | RF slots x17 | status ]

Every micro-step below applies its NVM writes atomically when it completes,
so a power cut either sees all of a step's writes or none of them.
"""
import logging
from dataclasses import dataclass, field
from typing import Tuple

from bitstring import BitStream, pack

from .errors import SimulationError
from .ir import NUM_REGS, OUT_SYMBOL, PC_SLOT, RF_SLOTS, data_layout

logger = logging.getLogger(__name__)

# release-status word, two-bit protocol
IDLE = 0
DRAINING = 1
COPYING = 2
STATUS_NAMES = {IDLE: "IDLE", DRAINING: "DRAINING", COPYING: "COPYING"}

# one-bit protocol: set once phase 1 is complete, cleared after phase 2
REDO_CLEAR = 0
REDO_SET = 1

SNAPSHOT_MAGIC = 0x53534E56
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class NvmLayout:
    symbols: Tuple[Tuple[str, int, int], ...]
    data_words: int
    sb_size: int

    @classmethod
    def for_program(cls, program, sb_size):
        table, size = data_layout(program)
        symbols = tuple((name, base, n) for name, (base, n) in table.items())
        return cls(symbols, size, sb_size)

    @property
    def proxy_base(self):
        return self.data_words

    @property
    def proxy_capacity(self):
        return self.sb_size

    @property
    def proxy_count_addr(self):
        return self.proxy_base + 2 * self.proxy_capacity

    @property
    def rf_base(self):
        return self.proxy_count_addr + 1

    @property
    def status_addr(self):
        return self.rf_base + RF_SLOTS

    @property
    def total_words(self):
        return self.status_addr + 1

    def symbol(self, name):
        for sym, base, size in self.symbols:
            if sym == name:
                return base, size
        raise KeyError(name)

    def is_primary(self, addr):
        return 0 <= addr < self.data_words

    def describe(self, addr):
        for sym, base, size in self.symbols:
            if base <= addr < base + size:
                return sym + "[" + str(addr - base) + "]"
        if self.rf_base <= addr < self.rf_base + RF_SLOTS:
            slot = addr - self.rf_base
            return "rf[" + ("pc" if slot == PC_SLOT else "r" + str(slot)) + "]"
        return "@" + str(addr)


class NvmImage:
    """
    Persistent memory contents. Survives power cuts untouched.
    """

    def __init__(self, layout, words=None):
        self.layout = layout
        if words is None:
            words = [0] * layout.total_words
        if len(words) != layout.total_words:
            raise SimulationError("NVM image has " + str(len(words)) + " words, layout needs " + str(layout.total_words))
        self.words = list(words)

    @classmethod
    def boot(cls, program, layout, entry_pc):
        image = cls(layout)
        addr = 0
        for sym in program.data:
            for v in sym.values:
                image.words[addr] = v
                addr += 1
        image.words[layout.rf_base + PC_SLOT] = entry_pc
        return image

    def read(self, addr):
        return self.words[addr]

    def write(self, addr, value):
        self.words[addr] = value

    @property
    def status(self):
        return self.words[self.layout.status_addr]

    @property
    def proxy_count(self):
        return self.words[self.layout.proxy_count_addr]

    def proxy_entry(self, i):
        base = self.layout.proxy_base + 2 * i
        return self.words[base], self.words[base + 1]

    def rf(self):
        base = self.layout.rf_base
        return self.words[base:base + RF_SLOTS]

    def primary(self):
        return tuple(self.words[:self.layout.data_words])

    def output(self):
        try:
            base, size = self.layout.symbol(OUT_SYMBOL)
        except KeyError:
            return ()
        return tuple(self.words[base:base + size])

    def key(self):
        return tuple(self.words)

    def copy(self):
        return NvmImage(self.layout, self.words)

    def to_bytes(self):
        header = pack(
            "uint:32, uint:16, uint:32, uint:16, uint:32",
            SNAPSHOT_MAGIC,
            SNAPSHOT_VERSION,
            self.layout.data_words,
            self.layout.sb_size,
            len(self.words),
        )
        stream = BitStream(header)
        for w in self.words:
            stream.append(pack("int:32", w))
        return stream.tobytes()

    @classmethod
    def from_bytes(cls, data, layout):
        stream = BitStream(bytes=data)
        magic, version, data_words, sb_size, count = stream.readlist("uint:32, uint:16, uint:32, uint:16, uint:32")
        if magic != SNAPSHOT_MAGIC:
            raise SimulationError("not an NVM snapshot")
        if version != SNAPSHOT_VERSION:
            raise SimulationError("unsupported snapshot version " + str(version))
        if data_words != layout.data_words or sb_size != layout.sb_size:
            raise SimulationError("snapshot layout does not match the program")
        words = [stream.read("int:32") for _ in range(count)]
        return cls(layout, words)

    def dump(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path, layout):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read(), layout)


@dataclass(frozen=True)
class MicroStep:
    """
    One indivisible NVM transaction of a release or recovery.
    """

    kind: str
    cycles: int
    writes: Tuple[Tuple[int, int], ...] = ()
    reads: int = 0
    energy: float = 0.0
    phase: int = 0


def _status_step(layout, timing, value, phase):
    return MicroStep("status", timing.nvm_write_cycles, ((layout.status_addr, value),), 0, timing.nvm_write_pj, phase)


def _copy_step(timing, addr, value):
    return MicroStep("copy", timing.copy_cycles, ((addr, value),), 1, timing.copy_pj, 2)


def release_steps(entries, layout, timing, protocol):
    """
    Micro-steps that move SB entries (address, value) to primary memory
    through the proxy buffer.
    """
    if len(entries) > layout.proxy_capacity:
        raise SimulationError("release of " + str(len(entries)) + " entries exceeds the proxy buffer")
    steps = []
    if protocol == "two-bit":
        steps.append(_status_step(layout, timing, DRAINING, 1))
    for i, (addr, value) in enumerate(entries):
        slot = layout.proxy_base + 2 * i
        steps.append(MicroStep("proxy", timing.nvm_write_cycles, ((slot, addr), (slot + 1, value)), 0, timing.nvm_write_pj, 1))
    steps.append(
        MicroStep("count", timing.nvm_write_cycles, ((layout.proxy_count_addr, len(entries)),), 0, timing.nvm_write_pj, 1)
    )
    steps.append(_status_step(layout, timing, COPYING if protocol == "two-bit" else REDO_SET, 1))
    for addr, value in entries:
        steps.append(_copy_step(timing, addr, value))
    steps.append(_status_step(layout, timing, IDLE if protocol == "two-bit" else REDO_CLEAR, 2))
    return steps


class StepProcess:
    """
    A sequence of micro-steps applied to an NVM image one at a time.
    """

    def __init__(self, steps):
        self.steps = list(steps)
        self.position = 0

    @property
    def done(self):
        return self.position >= len(self.steps)

    def current(self):
        return self.steps[self.position]

    def apply_next(self, nvm):
        step = self.steps[self.position]
        for addr, value in step.writes:
            nvm.write(addr, value)
        self.position += 1
        return step

    def run(self, nvm):
        while not self.done:
            self.apply_next(nvm)

    @property
    def total_cycles(self):
        return sum(s.cycles for s in self.steps)

    @property
    def total_energy(self):
        return sum(s.energy for s in self.steps)

    def cycles_of(self, kind):
        return sum(s.cycles for s in self.steps if s.kind == kind)


class ReleaseProcess(StepProcess):
    """
    Two-phase release of one SB half (or both halves after a watchdog
    checkpoint). Phase 1 drains the entries to the proxy buffer; phase 2
    copies them to their primary addresses in FIFO order.
    """

    def __init__(self, entries, layout, timing, protocol="two-bit", watchdog=False):
        super(ReleaseProcess, self).__init__(release_steps(entries, layout, timing, protocol))
        self.entries = list(entries)
        self.protocol = protocol
        self.watchdog = watchdog

    @property
    def phase(self):
        if self.done:
            return 2
        return self.current().phase

    @property
    def durable(self):
        """
        True once recovery would redo this release rather than discard it,
        i.e. the status write closing phase 1 has been applied.
        """
        last_phase1 = max(i for i, s in enumerate(self.steps) if s.phase == 1)
        return self.position > last_phase1


def begin_release(entries, layout, timing, protocol="two-bit"):
    return ReleaseProcess(entries, layout, timing, protocol)


def begin_release_full(active_entries, checkpoint_entries, layout, timing, protocol="two-bit"):
    """
    Release after a watchdog checkpoint: the active half first, then the
    register checkpoint committed to the idle half.
    """
    return ReleaseProcess(list(active_entries) + list(checkpoint_entries), layout, timing, protocol, watchdog=True)


def recovery_steps(nvm, timing, protocol="two-bit", corrupt_skip_redo=False):
    layout = nvm.layout
    status = nvm.status
    steps = []
    if protocol == "two-bit":
        if status not in STATUS_NAMES:
            raise SimulationError("corrupt release status word " + str(status))
        redo, clear = status == COPYING, status != IDLE
        clear_value = IDLE
    else:
        if status not in (REDO_CLEAR, REDO_SET):
            raise SimulationError("corrupt release bit " + str(status))
        redo = clear = status == REDO_SET
        clear_value = REDO_CLEAR
    if redo and not corrupt_skip_redo:
        for i in range(nvm.proxy_count):
            addr, value = nvm.proxy_entry(i)
            steps.append(_copy_step(timing, addr, value))
    if clear:
        steps.append(_status_step(layout, timing, clear_value, 2))
    restore_cycles = RF_SLOTS * timing.nvm_read_cycles + timing.alu_cycles
    restore_energy = RF_SLOTS * timing.nvm_read_pj + timing.compute_pj(timing.alu_cycles)
    steps.append(MicroStep("restore", restore_cycles, (), RF_SLOTS, restore_energy, 0))
    return steps


class RecoveryProcess(StepProcess):
    """
    Recovery after power returns. DRAINING: the proxy is ignored and the
    status reset. COPYING: phase 2 is redone from the proxy. IDLE: nothing
    to repair. In every case the registers and the recovery PC are then
    restored from the RF slots.
    """

    def __init__(self, nvm, timing, protocol="two-bit", corrupt_skip_redo=False):
        self.initial_status = nvm.status
        super(RecoveryProcess, self).__init__(recovery_steps(nvm, timing, protocol, corrupt_skip_redo))


@dataclass
class RecoveredState:
    registers: list
    pc_word: int
    cycles: int = 0
    energy: float = 0.0
    redone: int = 0
    status: int = IDLE
    steps: list = field(default_factory=list)


def restored_state(nvm):
    rf = nvm.rf()
    return list(rf[:NUM_REGS]), rf[PC_SLOT]


def recover(nvm, timing, protocol="two-bit", corrupt_skip_redo=False):
    """
    Run recovery to completion on nvm (in place) and return the restored
    registers and recovery PC word.
    """
    process = RecoveryProcess(nvm, timing, protocol, corrupt_skip_redo)
    status = process.initial_status
    process.run(nvm)
    registers, pc_word = restored_state(nvm)
    logger.debug("recovered from status %s, pc word %d", status, pc_word)
    return RecoveredState(
        registers,
        pc_word,
        process.total_cycles,
        process.total_energy,
        sum(1 for s in process.steps if s.kind == "copy"),
        status,
        process.steps,
    )


def recover_one_bit_variant(nvm, timing, corrupt_skip_redo=False):
    return recover(nvm, timing, "one-bit", corrupt_skip_redo)
