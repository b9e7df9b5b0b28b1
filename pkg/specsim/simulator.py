"""
Trace-driven simulation: compiles and links a program, then runs the
machine through the ON windows of a power trace, cutting power at the end
of every window.
"""
import logging
from dataclasses import dataclass

from .ir import parse_program, interpret_reference
from .linker import link
from .machine import EventLog, Machine
from .persistence import NvmLayout
from .power import AdaptiveController, PowerTrace, SupplyGate
from .regionizer import compile_program
from .results import COMPLETED, OUTAGE_LIMIT, TRACE_ENDED, SimResult
from .timing import TimingModel

logger = logging.getLogger(__name__)

ALWAYS_ON_V = 3.5


@dataclass
class Prepared:
    """
    Everything derived from one program under one store-buffer size.
    """

    name: str
    source: object
    compilation: object
    layout: object
    exe: object
    golden: object

    @property
    def program(self):
        return self.compilation.program


def load_program(path):
    with open(path) as f:
        return parse_program(f.read())


def prepare(program, config, name="program"):
    compilation = compile_program(program, config)
    layout = NvmLayout.for_program(compilation.program, config.sb_size)
    exe = link(compilation.program, layout, compilation.regions)
    golden = interpret_reference(program, config.instruction_budget)
    logger.info("%s: %d regions, %d instructions linked", name, len(compilation.regions), len(exe))
    return Prepared(name, program, compilation, layout, exe, golden)


def prepare_file(path, config):
    return prepare(load_program(path), config, path)


def always_on():
    return PowerTrace.constant(ALWAYS_ON_V)


def matches_golden(nvm, golden):
    return nvm.primary() == golden.memory and nvm.output() == golden.output


def simulate(prepared, trace, config, naive=False, controller=None, log=None, record_loads=False):
    """
    Run prepared under trace. Returns (SimResult, Machine).
    """
    timing = TimingModel.from_config(config)
    if controller is None and config.adaptive and not naive:
        controller = AdaptiveController.from_config(config)
    machine = Machine(
        prepared.exe,
        config,
        timing,
        naive=naive,
        controller=controller,
        log=log if log is not None else EventLog(),
        record_loads=record_loads,
    )
    gate = SupplyGate.core(trace, config)
    status = TRACE_ENDED
    on_cycles = 0
    last = 0
    progress = []
    for on_us, off_us in gate.windows():
        start = max(machine.core_time, timing.us_to_cycles_ceil(on_us))
        machine.charge_sleep(start, timing.sleep_pj(config.wakeup_us))
        machine.wake(start)
        if off_us is None:
            machine.run()
        else:
            stop = max(start, timing.us_to_cycles(off_us))
            machine.run_until(stop)
        if machine.done:
            on_cycles += machine.finish_time - start
            last = machine.finish_time
            status = COMPLETED
            break
        on_cycles += stop - start
        last = stop
        machine.power_cut(stop)
        machine.charge_sleep(stop, timing.sleep_pj(config.sleep_us))
        progress.append(machine.committed)
        if machine.outages >= config.max_outages:
            status = OUTAGE_LIMIT
            break
    if status != COMPLETED:
        logger.warning("%s: run ended early (%s) after %d outages", prepared.name, status, machine.outages)
    return _result(prepared, machine, status, timing, on_cycles, last, progress, naive, controller), machine


def _result(prepared, machine, status, timing, on_cycles, last, progress, naive, controller):
    compilation = prepared.compilation
    result = SimResult("naive" if naive else "speculative", status)
    result.completion_us = timing.cycles_to_us(last)
    result.on_us = timing.cycles_to_us(on_cycles)
    result.off_us = result.completion_us - result.on_us
    result.instructions = machine.instructions
    result.reexecuted = machine.reexecuted
    result.committed = machine.committed
    result.outages = machine.outages
    result.ilp_efficiency = machine.ilp_efficiency()
    result.stall_cycles = machine.stall_cycles
    result.energy = machine.meter.as_dict()
    result.bypass = {
        "static_loads": compilation.loads,
        "static_marked": compilation.bypassed,
        "static_rate": compilation.bypass_rate,
        "dynamic_loads": machine.loads,
        "dynamic_bypassed": machine.bypassed_loads,
        "dynamic_rate": machine.bypassed_loads / machine.loads if machine.loads else 0.0,
    }
    result.regions = len(compilation.regions)
    result.watchdog_checkpoints = machine.watchdog_checkpoints
    result.output = machine.output()
    result.progress = progress
    result.mode_changes = list(controller.changes) if controller is not None else []
    if status == COMPLETED:
        result.consistent = matches_golden(machine.nvm, prepared.golden)
    return result


def run_failure_free(prepared, config, record_loads=False, log=None):
    """
    Boot and run to completion with power never failing. Returns the machine.
    """
    machine = Machine(prepared.exe, config, log=log if log is not None else EventLog(), record_loads=record_loads)
    machine.run()
    return machine
