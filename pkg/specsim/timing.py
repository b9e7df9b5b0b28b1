"""
Cycle and energy constants of the simulated microcontroller.

Latencies are integral cycles at the configured clock. Energies are in
picojoules: compute energy is power-per-MHz times frequency over one cycle,
NVM access energy is the access power over the access time.
"""
import math
from dataclasses import dataclass


@dataclass(frozen=True)
class TimingModel:
    clock_ns: int = 40
    alu_cycles: int = 1
    nvm_read_cycles: int = 1
    nvm_write_cycles: int = 3
    sb_commit_cycles: int = 1
    dma_factor: int = 1

    compute_pj_per_cycle: float = 100.0
    nvm_read_pj: float = 40.0
    nvm_write_pj: float = 240.0
    search_pj: float = 0.5
    sleep_power_uw: float = 5.0

    @classmethod
    def from_config(cls, config):
        freq_mhz = 1000.0 / config.clock_ns
        # uW/MHz * MHz = uW; uW * ns = 1e-15 J = 1e-3 pJ
        compute = config.compute_power_uw_per_mhz * freq_mhz * config.clock_ns * 1e-3
        # mW * ns = pJ
        read_pj = config.nvm_power_mw * config.nvm_read_ns
        write_pj = config.nvm_power_mw * config.nvm_write_ns
        search = config.search_energy_cam_pj if config.search == "cam" else config.search_energy_seq_pj
        return cls(
            clock_ns=config.clock_ns,
            alu_cycles=config.alu_cycles,
            nvm_read_cycles=int(math.ceil(config.nvm_read_ns / config.clock_ns)),
            nvm_write_cycles=int(math.ceil(config.nvm_write_ns / config.clock_ns)),
            sb_commit_cycles=config.sb_commit_cycles,
            dma_factor=config.dma_factor if config.dma else 1,
            compute_pj_per_cycle=compute,
            nvm_read_pj=read_pj,
            nvm_write_pj=write_pj,
            search_pj=search,
            sleep_power_uw=config.sleep_power_uw,
        )

    @property
    def copy_cycles(self):
        """
        Cycles to move one proxy entry to its primary location.
        """
        return int(math.ceil((self.nvm_read_cycles + self.nvm_write_cycles) / self.dma_factor))

    @property
    def copy_pj(self):
        return self.nvm_read_pj + self.nvm_write_pj

    def cycles_to_us(self, cycles):
        return cycles * self.clock_ns / 1000.0

    def us_to_cycles(self, us):
        return int(math.floor(us * 1000.0 / self.clock_ns))

    def us_to_cycles_ceil(self, us):
        return int(math.ceil(us * 1000.0 / self.clock_ns))

    def compute_pj(self, cycles):
        return cycles * self.compute_pj_per_cycle

    def sleep_pj(self, us):
        # uW * us = pJ
        return self.sleep_power_uw * us
