"""
specsim

Usage:
  specsim compile [options] <ir-file>
  specsim run [options] <ir-file>
  specsim verify [options] <ir-file>...
  specsim compare [options] <ir-file>
  specsim sweep [options] <ir-file>
  specsim gen-trace [options] <outages> <out-file>
  specsim (-h | --help)
  specsim --version

Options:
  -c --config FILE          Config file of "key = value" lines
  -t --trace FILE           Voltage trace CSV (default: always on)
  --no-loop                 Do not repeat the trace when it runs out
  --sb-size N               Store buffer entries, both halves together
  --dma                     Copy phase 2 of every release with DMA
  --dma-factor N            DMA speed-up over a CPU copy
  --ilp SWITCH              Overlap releases with the next region (on/off)
  --no-bypass               Mark no load as bypassing the store buffer
  --no-adaptive             Disable the adaptive ILP / watchdog controller
  --search SCHEME           Store buffer search scheme: seq or cam
  --protocol P              Release status protocol: two-bit or one-bit
  --seed N                  Seed for generated traces
  --naive                   Write stores straight to NVM (no store buffer)
  --json FILE               Write the JSON report to FILE
  --energy-csv FILE         Write the energy breakdown CSV to FILE
  --events FILE             Write the event log as JSON lines to FILE
  --snapshot FILE           Write the final NVM image to FILE
  --no-double               Skip failures injected during recovery
  --variant NAMES           Only verify these variants (comma separated)
  --mutate                  Skip the phase-2 redo on recovery (oracle self-test)
  --mean-v V                Mean ON voltage of a generated trace [default: 3.5]
  --duration S              Length of a generated trace in seconds [default: 30]
  --dma-factors LIST        DMA factors to sweep [default: 1,2,3,4,5]
  --write-ratios LIST       NVM write:read latency ratios to sweep [default: 1,2,3,6]
  -o --output FILE          Write the main output to FILE instead of stdout
  -v --verbose              Enable verbose output

Exit codes: 0 on success, 1 on errors, 2 when a counterexample was found.

Example:
  specsim verify -v example/increment.ir example/war_loop.ir
"""
import logging
import sys
import time

from docopt import docopt

from . import __version__
from .commands import EXIT_ERROR, dispatch
from .errors import SpecSimError


def main(argv=None):
    args = docopt(__doc__, argv=argv, version="specsim " + str(__version__))
    logging.basicConfig(
        level=logging.DEBUG if args["--verbose"] else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    start = time.time()
    try:
        code = dispatch(args)
    except (SpecSimError, OSError) as e:
        print("error: " + str(e), file=sys.stderr)
        return EXIT_ERROR
    if args["--verbose"]:
        print(main.__name__ + " took " + str(round(time.time() - start, 3)) + " seconds", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
