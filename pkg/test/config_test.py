import os
import tempfile
import unittest

from specsim.config import SimConfig, load_config, parse_config
from specsim.errors import ConfigError
from specsim.timing import TimingModel


class ConfigTest(unittest.TestCase):
    def test_defaults(self):
        config = SimConfig().validate()
        self.assertEqual(config.threshold, 20)
        self.assertEqual(config.half_capacity, 20)
        self.assertEqual(config.freq_mhz, 25.0)

    def test_parse(self):
        config = parse_config("sb_size = 64\ndma = on  # copy with DMA\nprotocol = one-bit\nv_on = 2.0\n")
        self.assertEqual(config.sb_size, 64)
        self.assertTrue(config.dma)
        self.assertEqual(config.protocol, "one-bit")
        self.assertEqual(config.v_on, 2.0)

    def test_section_header_and_dashes(self):
        config = parse_config("[specsim]\nsb-size = 48\n")
        self.assertEqual(config.sb_size, 48)

    def test_rejects(self):
        for text in ("sb_size = 41", "sb_size = 20", "colour = red", "ilp = maybe", "search = tree", "[other]\nx = 1"):
            with self.subTest(text=text):
                with self.assertRaises(ConfigError):
                    parse_config(text)

    def test_load_with_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "sim.cfg")
            with open(path, "w") as f:
                f.write("sb_size = 48\nilp = off\n")
            config = load_config(path, sb_size=None, ilp=True)
        self.assertEqual(config.sb_size, 48)
        self.assertTrue(config.ilp)

    def test_replace_validates(self):
        with self.assertRaises(ConfigError):
            SimConfig().replace(protocol="three-bit")

    def test_example_config(self):
        path = os.path.join(os.path.dirname(__file__), "..", "example", "specsim.cfg")
        self.assertEqual(load_config(path), SimConfig())


class TimingTest(unittest.TestCase):
    def test_from_defaults(self):
        timing = TimingModel.from_config(SimConfig())
        self.assertEqual(timing.nvm_read_cycles, 1)
        self.assertEqual(timing.nvm_write_cycles, 3)
        self.assertEqual(timing.copy_cycles, 4)
        self.assertAlmostEqual(timing.nvm_write_pj, 240.0)
        self.assertAlmostEqual(timing.compute_pj(1), 100.0)

    def test_dma_only_when_enabled(self):
        self.assertEqual(TimingModel.from_config(SimConfig(dma_factor=4)).copy_cycles, 4)
        self.assertEqual(TimingModel.from_config(SimConfig(dma=True, dma_factor=4)).copy_cycles, 1)

    def test_search_energy(self):
        self.assertEqual(TimingModel.from_config(SimConfig(search="cam")).search_pj, 1.0)

    def test_conversions(self):
        timing = TimingModel()
        self.assertEqual(timing.us_to_cycles(1.0), 25)
        self.assertEqual(timing.cycles_to_us(25), 1.0)
        self.assertEqual(timing.us_to_cycles_ceil(1.01), 26)


if __name__ == "__main__":
    unittest.main()
