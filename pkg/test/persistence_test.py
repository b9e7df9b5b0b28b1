import os
import tempfile
import unittest

from specsim.errors import SimulationError
from specsim.ir import PC_SLOT, parse_program
from specsim.persistence import (
    COPYING,
    DRAINING,
    IDLE,
    REDO_CLEAR,
    REDO_SET,
    NvmImage,
    NvmLayout,
    begin_release,
    recover,
    recover_one_bit_variant,
)
from specsim.timing import TimingModel

PROGRAM = parse_program("data a = [5]\ndata out = [0, 0]\nfn main { L0: halt }")
ENTRIES = [(1, 7), (2, 9)]


def fresh():
    layout = NvmLayout.for_program(PROGRAM, 40)
    return NvmImage.boot(PROGRAM, layout, 3), layout


class LayoutTest(unittest.TestCase):
    def test_regions_follow_each_other(self):
        layout = NvmLayout.for_program(PROGRAM, 40)
        self.assertEqual(layout.data_words, 3)
        self.assertEqual(layout.proxy_base, 3)
        self.assertEqual(layout.proxy_count_addr, 3 + 80)
        self.assertEqual(layout.rf_base, 84)
        self.assertEqual(layout.status_addr, 84 + 17)
        self.assertEqual(layout.describe(2), "out[1]")
        self.assertEqual(layout.describe(layout.rf_base + PC_SLOT), "rf[pc]")

    def test_boot_image(self):
        nvm, layout = fresh()
        self.assertEqual(nvm.primary(), (5, 0, 0))
        self.assertEqual(nvm.output(), (0, 0))
        self.assertEqual(nvm.rf()[PC_SLOT], 3)
        self.assertEqual(nvm.status, IDLE)


class ReleaseTest(unittest.TestCase):
    def setUp(self):
        self.timing = TimingModel()
        self.nvm, self.layout = fresh()

    def test_two_bit_step_order(self):
        process = begin_release(ENTRIES, self.layout, self.timing)
        kinds = [s.kind for s in process.steps]
        self.assertEqual(kinds, ["status", "proxy", "proxy", "count", "status", "copy", "copy", "status"])
        self.assertEqual([s.writes[0][1] for s in process.steps if s.kind == "status"], [DRAINING, COPYING, IDLE])

    def test_one_bit_step_order(self):
        process = begin_release(ENTRIES, self.layout, self.timing, "one-bit")
        kinds = [s.kind for s in process.steps]
        self.assertEqual(kinds, ["proxy", "proxy", "count", "status", "copy", "copy", "status"])
        self.assertEqual([s.writes[0][1] for s in process.steps if s.kind == "status"], [REDO_SET, REDO_CLEAR])

    def test_full_release(self):
        process = begin_release(ENTRIES, self.layout, self.timing)
        process.run(self.nvm)
        self.assertEqual(self.nvm.output(), (7, 9))
        self.assertEqual(self.nvm.status, IDLE)
        self.assertTrue(process.durable)

    def test_durable_after_phase_one(self):
        process = begin_release(ENTRIES, self.layout, self.timing)
        for _ in range(4):
            process.apply_next(self.nvm)
        self.assertFalse(process.durable)
        process.apply_next(self.nvm)
        self.assertTrue(process.durable)
        self.assertEqual(process.phase, 2)

    def test_dma_shortens_copies(self):
        process = begin_release(ENTRIES, self.layout, self.timing)
        fast = begin_release(ENTRIES, self.layout, TimingModel(dma_factor=4))
        self.assertEqual(fast.cycles_of("copy") * 4, process.cycles_of("copy"))
        self.assertEqual(fast.cycles_of("copy"), len(ENTRIES))
        self.assertEqual(fast.cycles_of("proxy"), process.cycles_of("proxy"))

    def test_proxy_overflow(self):
        with self.assertRaises(SimulationError):
            begin_release([(0, 1)] * 41, self.layout, self.timing)


class RecoveryTest(unittest.TestCase):
    def setUp(self):
        self.timing = TimingModel()
        self.nvm, self.layout = fresh()

    def cut_after(self, n, protocol="two-bit"):
        process = begin_release(ENTRIES, self.layout, self.timing, protocol)
        for _ in range(n):
            process.apply_next(self.nvm)

    def test_draining_discards_the_proxy(self):
        self.cut_after(3)
        self.assertEqual(self.nvm.status, DRAINING)
        state = recover(self.nvm, self.timing)
        self.assertEqual(state.redone, 0)
        self.assertEqual(self.nvm.output(), (0, 0))
        self.assertEqual(self.nvm.status, IDLE)

    def test_copying_redoes_phase_two(self):
        self.cut_after(6)
        self.assertEqual(self.nvm.output(), (7, 0))
        state = recover(self.nvm, self.timing)
        self.assertEqual(state.status, COPYING)
        self.assertEqual(state.redone, 2)
        self.assertEqual(self.nvm.output(), (7, 9))
        self.assertEqual(self.nvm.status, IDLE)

    def test_recovery_is_idempotent(self):
        self.cut_after(6)
        recover(self.nvm, self.timing)
        once = self.nvm.key()
        recover(self.nvm, self.timing)
        self.assertEqual(self.nvm.key(), once)

    def test_one_bit(self):
        self.cut_after(2, "one-bit")
        recover_one_bit_variant(self.nvm, self.timing)
        self.assertEqual(self.nvm.output(), (0, 0))
        self.cut_after(5, "one-bit")
        recover_one_bit_variant(self.nvm, self.timing)
        self.assertEqual(self.nvm.output(), (7, 9))
        self.assertEqual(self.nvm.status, REDO_CLEAR)

    def test_skipping_the_redo_loses_stores(self):
        self.cut_after(6)
        recover(self.nvm, self.timing, corrupt_skip_redo=True)
        self.assertEqual(self.nvm.output(), (7, 0))

    def test_restores_registers_and_pc(self):
        self.nvm.write(self.layout.rf_base + 4, 42)
        state = recover(self.nvm, self.timing)
        self.assertEqual(state.registers[4], 42)
        self.assertEqual(state.pc_word, 3)

    def test_corrupt_status(self):
        self.nvm.write(self.layout.status_addr, 7)
        with self.assertRaises(SimulationError):
            recover(self.nvm, self.timing)


class SnapshotTest(unittest.TestCase):
    def test_dump_and_load(self):
        nvm, layout = fresh()
        nvm.write(1, -3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "image.nvm")
            nvm.dump(path)
            self.assertEqual(NvmImage.load(path, layout).key(), nvm.key())

    def test_rejects_other_data(self):
        nvm, layout = fresh()
        with self.assertRaisesRegex(SimulationError, "not an NVM snapshot"):
            NvmImage.from_bytes(b"\x00" * len(nvm.to_bytes()), layout)

    def test_rejects_other_layout(self):
        nvm, _ = fresh()
        other = NvmLayout.for_program(PROGRAM, 36)
        with self.assertRaisesRegex(SimulationError, "layout"):
            NvmImage.from_bytes(nvm.to_bytes(), other)


if __name__ == "__main__":
    unittest.main()
