"""
Simulation configuration.

A config file is a list of "key = value" lines, optionally under a
[specsim] section header. Values are parsed according to the type of the
matching SimConfig field.
"""
import configparser
import dataclasses
import logging
from dataclasses import dataclass

from .errors import ConfigError

logger = logging.getLogger(__name__)

SECTION = "specsim"

# registers + recovery PC of a full (watchdog) register checkpoint
FULL_CHECKPOINT_ENTRIES = 17

SEARCH_SCHEMES = ("seq", "cam")
PROTOCOLS = ("two-bit", "one-bit")


@dataclass(frozen=True)
class SimConfig:
    # store buffer / release
    sb_size: int = 40
    dma: bool = False
    dma_factor: int = 4
    ilp: bool = True
    search: str = "seq"
    protocol: str = "two-bit"
    bypass: bool = True

    # timing (ns / cycles)
    clock_ns: int = 40
    nvm_read_ns: int = 20
    nvm_write_ns: int = 120
    alu_cycles: int = 1
    sb_commit_cycles: int = 1

    # power / energy
    compute_power_uw_per_mhz: float = 100.0
    nvm_power_mw: float = 2.0
    search_energy_seq_pj: float = 0.5
    search_energy_cam_pj: float = 1.0
    sleep_power_uw: float = 5.0

    # supply, energy-harvesting core
    v_on: float = 1.8
    v_off: float = 1.8
    sleep_us: float = 212.0
    wakeup_us: float = 310.0

    # supply, nonvolatile-processor baseline
    nvp_v_on: float = 3.3
    nvp_checkpoint_v: float = 3.1
    nvp_sleep_us: float = 46.0
    nvp_wakeup_us: float = 14.0

    # adaptive controller
    adaptive: bool = True
    watchdog_period_us: float = 5000.0
    watchdog_floor_cycles: int = 64
    watchdog_armed: bool = False
    failure_threshold: int = 2
    progress_regions: int = 10

    # guards
    instruction_budget: int = 2000000
    region_iterations: int = 100
    max_outages: int = 100000
    trace_loop: bool = True
    seed: int = 0

    # negative testing of the recovery oracle only
    corrupt_skip_redo: bool = False

    @property
    def threshold(self):
        return self.sb_size // 2

    @property
    def half_capacity(self):
        return self.sb_size // 2

    @property
    def freq_mhz(self):
        return 1000.0 / self.clock_ns

    @property
    def watchdog_period_cycles(self):
        return max(self.watchdog_floor_cycles, int(self.watchdog_period_us * 1000 // self.clock_ns))

    def validate(self):
        if self.sb_size <= 0 or self.sb_size % 2:
            raise ConfigError("sb_size must be a positive even number, got " + str(self.sb_size))
        if self.half_capacity < FULL_CHECKPOINT_ENTRIES:
            raise ConfigError(
                "store buffer half holds "
                + str(self.half_capacity)
                + " entries, a register checkpoint needs "
                + str(FULL_CHECKPOINT_ENTRIES)
            )
        if self.search not in SEARCH_SCHEMES:
            raise ConfigError(str(self.search) + " is not a valid search scheme. Choose one of " + str(SEARCH_SCHEMES) + ".")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(str(self.protocol) + " is not a valid protocol. Choose one of " + str(PROTOCOLS) + ".")
        if self.dma_factor < 1:
            raise ConfigError("dma_factor must be >= 1")
        for name in ("clock_ns", "nvm_read_ns", "nvm_write_ns", "alu_cycles", "sb_commit_cycles"):
            if getattr(self, name) <= 0:
                raise ConfigError(name + " must be positive")
        if self.v_on < self.v_off:
            raise ConfigError("v_on must be >= v_off")
        if self.nvp_v_on < self.nvp_checkpoint_v:
            raise ConfigError("nvp_v_on must be >= nvp_checkpoint_v")
        if self.watchdog_floor_cycles <= 0:
            raise ConfigError("watchdog_floor_cycles must be positive")
        if self.failure_threshold < 0 or self.progress_regions <= 0:
            raise ConfigError("failure_threshold must be >= 0 and progress_regions > 0")
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes).validate()


_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}


def _convert(name, raw):
    default = _FIELDS[name].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw, 0)
        if isinstance(default, float):
            return float(raw)
        return raw.strip('"').strip("'")
    except ValueError:
        raise ConfigError("invalid value for " + name + ": " + raw)


def parse_config(text, base=None):
    """
    Parse config text into a SimConfig, starting from base (or the defaults).
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    if not text.lstrip().startswith("["):
        text = "[" + SECTION + "]\n" + text
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError("malformed config: " + str(e))

    changes = {}
    for section in parser.sections():
        if section != SECTION:
            raise ConfigError("unknown config section: " + section)
        for key, value in parser.items(section):
            name = key.replace("-", "_")
            if name not in _FIELDS:
                raise ConfigError("unknown config key: " + key)
            changes[name] = _convert(name, value)
    logger.debug("config overrides: %s", changes)
    return dataclasses.replace(base or SimConfig(), **changes).validate()


def load_config(path=None, **overrides):
    """
    Load a config file (if given) and apply keyword overrides on top.
    None-valued overrides are ignored so CLI flags that were not given
    leave the file values alone.
    """
    config = SimConfig()
    if path:
        with open(path) as f:
            config = parse_config(f.read())
    overrides = {k: v for k, v in overrides.items() if v is not None}
    for name in overrides:
        if name not in _FIELDS:
            raise ConfigError("unknown config key: " + name)
    return dataclasses.replace(config, **overrides).validate()
