"""
Subcommand implementations. Each takes the docopt argument dict and a
SimConfig and returns the process exit code.
"""
import logging
import sys

from .config import load_config
from .errors import ConfigError
from .ir import format_program
from .power import PowerTrace, gen_trace, simulate_nvp_baseline
from .regionizer import compile_program
from .results import (
    csv_text,
    energy_rows,
    region_table,
    summary_table,
    table,
    verify_table,
    write_energy_csv,
    write_json,
    write_jsonl,
)
from .simulator import always_on, load_program, prepare, prepare_file, simulate
from .verify import verify

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_COUNTEREXAMPLE = 2


def _int(value):
    if value is None:
        return None
    try:
        return int(value, 0)
    except ValueError:
        raise ConfigError("expected an integer, got " + value)


def _switch(value):
    if value is None:
        return None
    if value.lower() in ("on", "true", "yes", "1"):
        return True
    if value.lower() in ("off", "false", "no", "0"):
        return False
    raise ConfigError("expected on or off, got " + value)


def _list(value, convert):
    try:
        return [convert(v.strip()) for v in value.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("malformed list: " + value)


def config_from_args(args):
    return load_config(
        args.get("--config"),
        sb_size=_int(args.get("--sb-size")),
        dma=True if args.get("--dma") else None,
        dma_factor=_int(args.get("--dma-factor")),
        ilp=_switch(args.get("--ilp")),
        bypass=False if args.get("--no-bypass") else None,
        adaptive=False if args.get("--no-adaptive") else None,
        search=args.get("--search"),
        protocol=args.get("--protocol"),
        seed=_int(args.get("--seed")),
        trace_loop=False if args.get("--no-loop") else None,
        corrupt_skip_redo=True if args.get("--mutate") else None,
    )


def load_trace(args, config):
    if args.get("--trace"):
        return PowerTrace.load(args["--trace"], loop=config.trace_loop)
    return always_on()


def input_files(args):
    value = args["<ir-file>"]
    return [value] if isinstance(value, str) else list(value)


def emit(args, text):
    if args.get("--output"):
        with open(args["--output"], "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_compile(args, config):
    program = load_program(input_files(args)[0])
    compilation = compile_program(program, config)
    emit(args, format_program(compilation.program, compilation.regions))
    if args.get("--json"):
        write_json(args["--json"], compilation.report())
    if args.get("--verbose"):
        print(region_table(compilation.regions), file=sys.stderr)
    return EXIT_OK


def cmd_run(args, config):
    prepared = prepare_file(input_files(args)[0], config)
    trace = load_trace(args, config)
    result, machine = simulate(prepared, trace, config, naive=bool(args.get("--naive")))
    if args.get("--json"):
        write_json(args["--json"], result.to_dict())
    if args.get("--energy-csv"):
        write_energy_csv(args["--energy-csv"], result.energy)
    if args.get("--events"):
        write_jsonl(args["--events"], machine.log.events)
    if args.get("--snapshot"):
        machine.nvm.dump(args["--snapshot"])
    emit(args, summary_table(result) + "\n")
    if args.get("--verbose"):
        print(table(energy_rows(result.energy), ["category", "pJ"]), file=sys.stderr)
    return EXIT_OK if result.completed else EXIT_ERROR


def cmd_verify(args, config):
    only = _list(args["--variant"], str) if args.get("--variant") else None
    all_reports = []
    text = ""
    for path in input_files(args):
        prepared = prepare_file(path, config)
        reports = verify(prepared, config, double=not args.get("--no-double"), only=only)
        all_reports.extend(reports)
        text += path + "\n" + verify_table(reports) + "\n"
    emit(args, text)
    if args.get("--json"):
        write_json(args["--json"], [r.to_dict() for r in all_reports])
    failed = [r for r in all_reports if not r.consistent]
    for r in failed:
        c = r.first_counterexample
        print(r.program + " [" + r.variant + "] " + c.point + ": " + "; ".join(c.diff), file=sys.stderr)
    return EXIT_COUNTEREXAMPLE if failed else EXIT_OK


def compare(prepared, trace, config):
    """
    Speculative core against the nonvolatile-processor baseline on one trace.
    Returns the rows of the comparison table.
    """
    spec, _ = simulate(prepared, trace, config)
    nvp = simulate_nvp_baseline(prepared.source, trace, config, golden=prepared.golden)
    rows = []
    for r in (spec, nvp):
        rows.append([r.mode, r.status, round(r.on_us, 3), round(r.off_us, 3), round(r.completion_us, 3), r.outages, r.consistent])
    return rows, spec, nvp


COMPARE_HEADER = ["mode", "status", "on_us", "off_us", "completion_us", "outages", "consistent"]


def cmd_compare(args, config):
    prepared = prepare_file(input_files(args)[0], config)
    rows, spec, nvp = compare(prepared, load_trace(args, config), config)
    emit(args, csv_text(COMPARE_HEADER, rows))
    if args.get("--verbose"):
        print(table(rows, COMPARE_HEADER), file=sys.stderr)
    if spec.consistent is False or nvp.consistent is False:
        return EXIT_COUNTEREXAMPLE
    return EXIT_OK


def cmd_gen_trace(args, config):
    try:
        outages = float(args["<outages>"])
        mean_v = float(args["--mean-v"])
        duration = float(args["--duration"])
    except ValueError:
        raise ConfigError("outages, --mean-v and --duration must be numbers")
    trace = gen_trace(outages, mean_v, config.seed, duration_s=duration, v_off=config.v_off)
    trace.save(args["<out-file>"])
    print(
        args["<out-file>"] + ": " + str(len(trace.times)) + " samples, " + str(trace.count_dips(config.v_off, config.v_on)) + " outages"
    )
    return EXIT_OK


SWEEP_HEADER = ["dma_factor", "write_read_ratio", "completion_us", "ilp_efficiency", "stall_cycles"]


def sweep(path, trace, config, dma_factors, ratios):
    rows = []
    program = load_program(path)
    for ratio in ratios:
        for factor in dma_factors:
            variant = config.replace(dma=factor > 1, dma_factor=factor, nvm_write_ns=config.nvm_read_ns * ratio, adaptive=False)
            prepared = prepare(program, variant, path)
            result, _ = simulate(prepared, trace, variant)
            rows.append([factor, str(ratio) + ":1", round(result.completion_us, 3), round(result.ilp_efficiency, 4), result.stall_cycles])
    return rows


def cmd_sweep(args, config):
    rows = sweep(
        input_files(args)[0],
        load_trace(args, config),
        config,
        _list(args["--dma-factors"], int),
        _list(args["--write-ratios"], int),
    )
    emit(args, csv_text(SWEEP_HEADER, rows))
    if args.get("--verbose"):
        print(table(rows, SWEEP_HEADER), file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "compile": cmd_compile,
    "run": cmd_run,
    "verify": cmd_verify,
    "compare": cmd_compare,
    "gen-trace": cmd_gen_trace,
    "sweep": cmd_sweep,
}


def dispatch(args):
    config = config_from_args(args)
    for name, command in COMMANDS.items():
        if args.get(name):
            logger.debug("running %s", name)
            return command(args, config)
    raise ConfigError("no command given")
