from .config import SimConfig, load_config
from .ir import Program, interpret_reference, parse_program
from .regionizer import compile_program, form_regions
from .simulator import prepare, simulate
from .verify import verify

__version__ = "0.1.0"

__all__ = [
    "SimConfig",
    "load_config",
    "Program",
    "parse_program",
    "interpret_reference",
    "compile_program",
    "form_regions",
    "prepare",
    "simulate",
    "verify",
]
