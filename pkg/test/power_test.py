import os
import tempfile
import unittest

import numpy as np

from specsim.config import SimConfig
from specsim.errors import TraceError
from specsim.power import (
    OFF,
    ON,
    SLEEPING,
    WAKING,
    AdaptiveController,
    PowerTrace,
    SupplyGate,
    adaptive_step,
    gen_trace,
    supply_state,
)


def gate(trace, sleep_us=10.0, wakeup_us=20.0):
    return SupplyGate(trace, 1.8, 1.8, sleep_us, wakeup_us)


STEPPED = PowerTrace([0, 100, 200, 300, 400, 500], [0.0, 3.0, 3.0, 1.0, 3.0, 3.0])


class PowerTraceTest(unittest.TestCase):
    def test_interpolates(self):
        trace = PowerTrace([0, 10], [0.0, 2.0])
        self.assertAlmostEqual(trace.voltage(5), 1.0)
        self.assertAlmostEqual(trace.voltage(50), 2.0)

    def test_loops(self):
        trace = PowerTrace([0, 10], [0.0, 2.0], loop=True)
        self.assertEqual(trace.period, 20.0)
        self.assertAlmostEqual(trace.voltage(25), 1.0)

    def test_rejects_bad_samples(self):
        with self.assertRaises(TraceError):
            PowerTrace([0, 5, 5], [1, 1, 1])
        with self.assertRaises(TraceError):
            PowerTrace([0, 5], [1, -1])
        with self.assertRaises(TraceError):
            PowerTrace([], [])

    def test_save_and_load(self):
        trace = gen_trace(2, 3.5, seed=7, duration_s=1.0)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "trace.csv")
            trace.save(path)
            with open(path) as f:
                self.assertEqual(f.readline().strip(), "time_us,voltage_v")
            loaded = PowerTrace.load(path)
        np.testing.assert_allclose(loaded.times, trace.times)
        np.testing.assert_allclose(loaded.volts, trace.volts, atol=1e-4)

    def test_load_rejects_wrong_header(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "trace.csv")
            with open(path, "w") as f:
                f.write("t,v\n0,1\n")
            with self.assertRaisesRegex(TraceError, "header"):
                PowerTrace.load(path)


class GenTraceTest(unittest.TestCase):
    def test_exact_outage_count(self):
        for outages in (0, 1, 4, 10):
            with self.subTest(outages=outages):
                trace = gen_trace(outages, 3.5, seed=outages)
                self.assertEqual(trace.count_dips(1.8, 1.8), outages)

    def test_deterministic_per_seed(self):
        a = gen_trace(4, 3.0, seed=1, duration_s=2.0)
        b = gen_trace(4, 3.0, seed=1, duration_s=2.0)
        c = gen_trace(4, 3.0, seed=2, duration_s=2.0)
        np.testing.assert_array_equal(a.volts, b.volts)
        self.assertFalse(np.array_equal(a.volts, c.volts))

    def test_starts_from_zero(self):
        trace = gen_trace(1, 3.5, seed=0)
        self.assertEqual(trace.volts[0], 0.0)
        self.assertEqual(trace.end, 30e6)

    def test_rejects_bad_parameters(self):
        with self.assertRaises(TraceError):
            gen_trace(-1, 3.5, seed=0)


class SupplyGateTest(unittest.TestCase):
    def assertWindows(self, actual, expected):
        windows = list(actual)
        self.assertEqual(len(windows), len(expected))
        for (on, off), (want_on, want_off) in zip(windows, expected):
            self.assertAlmostEqual(on, want_on)
            if want_off is None:
                self.assertIsNone(off)
            else:
                self.assertAlmostEqual(off, want_off)

    def test_windows(self):
        # crossings at 60, 260 and 340 us
        self.assertWindows(gate(STEPPED).windows(), [(80.0, 260.0), (360.0, None)])

    def test_states(self):
        g = gate(STEPPED)
        self.assertEqual(g.state(50), OFF)
        self.assertEqual(g.state(70), WAKING)
        self.assertEqual(g.state(200), ON)
        self.assertEqual(g.state(265), SLEEPING)
        self.assertEqual(g.state(300), OFF)
        self.assertEqual(g.state(350), WAKING)
        self.assertEqual(g.state(900), ON)

    def test_rising_crossing_between_samples(self):
        trace = PowerTrace([0, 500, 2000], [1.0, 3.0, 3.0])
        config = SimConfig()
        self.assertAlmostEqual(trace.voltage(200), 1.8)
        self.assertWindows(SupplyGate.core(trace, config).windows(), [(200.0 + config.wakeup_us, None)])
        self.assertEqual(supply_state(trace, 150, config), OFF)
        self.assertEqual(supply_state(trace, 400, config), WAKING)
        self.assertEqual(supply_state(trace, 600, config), ON)

    def test_falling_crossing_between_samples(self):
        trace = PowerTrace([0, 1000, 2000], [3.0, 3.0, 0.0])
        config = SimConfig()
        self.assertWindows(SupplyGate.core(trace, config).windows(), [(config.wakeup_us, 1400.0)])
        self.assertEqual(supply_state(trace, 1300, config), ON)
        self.assertEqual(supply_state(trace, 1500, config), SLEEPING)
        self.assertEqual(supply_state(trace, 1900, config), OFF)

    def test_nvp_gate_uses_its_own_thresholds(self):
        trace = PowerTrace([0, 1000, 2000], [3.5, 3.5, 2.5])
        config = SimConfig()
        # below the 3.1 V checkpoint level from 1400 us
        self.assertWindows(SupplyGate.nvp(trace, config).windows(), [(config.nvp_wakeup_us, 1400.0)])

    def test_crossing(self):
        trace = PowerTrace([0, 100, 200], [0.0, 2.0, 0.0])
        rise = trace.crossing(0.0, 1.0, rising=True)
        self.assertAlmostEqual(rise[0], 50.0)
        self.assertEqual(rise[1], 100.0)
        drop = trace.crossing(100.0, 1.0, rising=False)
        self.assertAlmostEqual(drop[0], 150.0)
        self.assertEqual(drop[1], 200.0)
        self.assertIsNone(trace.crossing(160.0, 1.0, rising=True))

    def test_short_pulse_does_not_wake(self):
        # the 10-20 us recovery is too short to finish waking up
        trace = PowerTrace([0, 10, 20, 100], [3.0, 1.0, 3.0, 3.0])
        self.assertWindows(gate(trace).windows(), [(34.0, None)])

    def test_on_time(self):
        g = gate(STEPPED)
        self.assertAlmostEqual(g.on_time(1000), 180 + 640)
        self.assertAlmostEqual(g.on_time_fraction(1000), 0.82)

    def test_looped_trace_repeats_windows(self):
        trace = PowerTrace([0, 19, 20], [3.5, 3.5, 0.0], loop=True)
        windows = []
        for w in gate(trace, sleep_us=0.5, wakeup_us=0.5).windows():
            windows.append(w)
            if len(windows) == 3:
                break
        drop = 19 + 1.7 / 3.5
        self.assertWindows(windows, [(0.5, drop), (21.5, 21 + drop), (42.5, 42 + drop)])

    def test_supply_state_uses_config(self):
        config = SimConfig(sleep_us=10.0, wakeup_us=20.0)
        self.assertEqual(supply_state(STEPPED, 200, config), ON)


class ControllerTest(unittest.TestCase):
    def setUp(self):
        self.config = SimConfig(failure_threshold=2, progress_regions=3)
        self.controller = AdaptiveController.from_config(self.config)

    def test_first_failure_turns_ilp_off(self):
        changes = adaptive_step(self.controller, "failure", 4)
        self.assertFalse(self.controller.ilp_enabled)
        self.assertEqual([c["change"] for c in changes], ["ilp-off"])

    def test_repeated_failures_arm_and_halve(self):
        c = self.controller
        for _ in range(3):
            c.power_failed(4)
        self.assertTrue(c.watchdog_armed)
        self.assertEqual(c.period_cycles, self.config.watchdog_period_cycles)
        c.power_failed(4)
        self.assertEqual(c.period_cycles, self.config.watchdog_period_cycles // 2)
        for _ in range(30):
            c.power_failed(4)
        self.assertEqual(c.period_cycles, self.config.watchdog_floor_cycles)

    def test_failures_are_counted_per_region(self):
        c = self.controller
        for region in (1, 2, 3):
            c.power_failed(region)
        self.assertFalse(c.watchdog_armed)

    def test_completion_resets_region_count(self):
        c = self.controller
        c.power_failed(4)
        c.power_failed(4)
        c.region_completed(4)
        c.power_failed(4)
        self.assertFalse(c.watchdog_armed)

    def test_progress_restores_settings(self):
        c = self.controller
        for _ in range(3):
            c.power_failed(4)
        for _ in range(3):
            c.region_completed(5)
        self.assertTrue(c.ilp_enabled)
        self.assertFalse(c.watchdog_armed)
        self.assertEqual(c.changes[-1]["change"], "restored")

    def test_unknown_event(self):
        with self.assertRaises(ValueError):
            adaptive_step(self.controller, "brownout", 0)


if __name__ == "__main__":
    unittest.main()
