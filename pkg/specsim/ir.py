"""
Word-addressed register IR: types, parser, printer and the failure-free
reference interpreter.

Textual form:

    data SYM = [w0, w1, ...]          # optional "* N" repetition
    fn NAME {
    LABEL:
        OP operands [!bypass] [!ckpt]
    }

Statements are separated by newlines or ";", "#" starts a comment.
"""
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

from .errors import BudgetExceeded, ParseError, SimulationError, ValidationError

logger = logging.getLogger(__name__)

NUM_REGS = 16
LINK_REG = 15
PC_SLOT = 16
RF_SLOTS = NUM_REGS + 1
RF_SYMBOL = "__rf"
OUT_SYMBOL = "out"
ENTRY_FUNCTION = "main"

ALU_OPS = ("add", "sub", "mul", "div", "rem", "and", "or", "xor", "shl", "shr", "slt", "seq")
BRANCH_OPS = ("beq", "bne", "blt", "bge")
TERMINATORS = ("branch", "jump", "ret", "halt")

_IDENT = r"[A-Za-z_][\w.]*"
_LABEL_DEF = re.compile(r"^(" + _IDENT + r")\s*:\s*(.*)$")
_REG = re.compile(r"^r(\d+)$")
_MEM = re.compile(r"^\[\s*r(\d+)\s*(?:([+-])\s*(\w+)\s*)?\]$")
_DATA = re.compile(r"^data\s+(" + _IDENT + r")\s*=\s*\[(.*)\]\s*(?:\*\s*(\w+))?$")
_FN = re.compile(r"^fn\s+(" + _IDENT + r")$")
_VALUE_LABEL = re.compile(r"^@(?:(" + _IDENT + r"):)?(" + _IDENT + r")$")


def wrap32(value):
    """
    Wrap an integer to 32-bit two's complement.
    """
    return ((value + 0x80000000) & 0xFFFFFFFF) - 0x80000000


def alu_eval(op, a, b):
    if op in ("add", "mov", "la"):
        return wrap32(a + b)
    if op == "sub":
        return wrap32(a - b)
    if op == "mul":
        return wrap32(a * b)
    if op in ("div", "rem"):
        if b == 0:
            raise SimulationError("division by zero")
        q = abs(a) // abs(b)
        if (a < 0) != (b < 0):
            q = -q
        return wrap32(q) if op == "div" else wrap32(a - q * b)
    if op == "and":
        return wrap32(a & b)
    if op == "or":
        return wrap32(a | b)
    if op == "xor":
        return wrap32(a ^ b)
    if op == "shl":
        return wrap32(a << (b & 31))
    if op == "shr":
        return wrap32(a >> (b & 31))
    if op == "slt":
        return 1 if a < b else 0
    if op == "seq":
        return 1 if a == b else 0
    raise SimulationError("unknown alu op " + str(op))


def alu_operands(insn, regs):
    a = regs[insn.src] if insn.src is not None else 0
    if insn.src2 is not None:
        return a, regs[insn.src2]
    return a, insn.imm if insn.imm is not None else 0


def branch_taken(op, a, b):
    return {"beq": a == b, "bne": a != b, "blt": a < b, "bge": a >= b}[op]


def encode_site(site):
    """
    Return-site pointer held in the link register after a call.
    """
    return -(site + 1)


def decode_site(value):
    return -value - 1


@dataclass(frozen=True)
class Instruction:
    """
    One IR instruction.

    opcode: alu, load, store, branch, jump, call, ret, halt
    op: alu operation / branch condition / mov / la (equals opcode otherwise)
    dst, src, src2: register operands
    imm: immediate second operand (alu) or stored constant (store)
    sym, offset: symbolic address; base, offset: register address
    target: branch / jump label, or callee name
    value_label: stored code address, as (function or None, label)
    """

    opcode: str
    op: str = ""
    dst: Optional[int] = None
    src: Optional[int] = None
    src2: Optional[int] = None
    imm: Optional[int] = None
    sym: Optional[str] = None
    offset: int = 0
    base: Optional[int] = None
    target: Optional[str] = None
    value_label: Optional[Tuple[Optional[str], str]] = None
    bypass: bool = False
    checkpoint: bool = False
    line: int = field(default=0, compare=False)

    @property
    def is_terminator(self):
        return self.opcode in TERMINATORS

    @property
    def is_memory(self):
        return self.opcode in ("load", "store")

    def uses(self):
        regs = set()
        if self.opcode == "alu":
            if self.src is not None:
                regs.add(self.src)
            if self.src2 is not None:
                regs.add(self.src2)
        elif self.opcode in ("load", "store", "branch"):
            for r in (self.src, self.src2, self.base):
                if r is not None:
                    regs.add(r)
        return regs

    def defs(self):
        if self.opcode in ("alu", "load"):
            return {self.dst}
        if self.opcode == "call":
            return {LINK_REG}
        return set()

    def _address_text(self):
        if self.sym is not None:
            return self.sym + ", " + str(self.offset)
        if self.offset == 0:
            return "[r" + str(self.base) + "]"
        sign = "+" if self.offset > 0 else "-"
        return "[r" + str(self.base) + sign + str(abs(self.offset)) + "]"

    def _value_text(self):
        if self.src is not None:
            return "r" + str(self.src)
        if self.value_label is not None:
            fn, label = self.value_label
            return "@" + (fn + ":" if fn else "") + label
        return str(self.imm)

    def __str__(self):
        if self.opcode == "alu":
            if self.op == "la":
                text = "la r" + str(self.dst) + ", " + self.sym
            elif self.op == "mov":
                text = "mov r" + str(self.dst) + ", " + ("r" + str(self.src) if self.src is not None else str(self.imm))
            else:
                rhs = "r" + str(self.src2) if self.src2 is not None else str(self.imm)
                text = self.op + " r" + str(self.dst) + ", r" + str(self.src) + ", " + rhs
        elif self.opcode == "load":
            text = "load r" + str(self.dst) + ", " + self._address_text()
        elif self.opcode == "store":
            text = "store " + self._value_text() + ", " + self._address_text()
        elif self.opcode == "branch":
            text = self.op + " r" + str(self.src) + ", r" + str(self.src2) + ", " + self.target
        elif self.opcode in ("jump", "call"):
            text = self.opcode + " " + self.target
        else:
            text = self.opcode
        if self.bypass:
            text += " !bypass"
        if self.checkpoint:
            text += " !ckpt"
        return text


@dataclass(frozen=True)
class BasicBlock:
    label: str
    instructions: Tuple[Instruction, ...]

    @property
    def terminator(self):
        if self.instructions and self.instructions[-1].is_terminator:
            return self.instructions[-1]
        return None

    def store_count(self):
        return sum(1 for i in self.instructions if i.opcode == "store")


@dataclass(frozen=True)
class Function:
    name: str
    blocks: Tuple[BasicBlock, ...]

    @property
    def entry(self):
        return self.blocks[0].label

    def labels(self):
        return [b.label for b in self.blocks]

    def block(self, label):
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def index(self, label):
        for i, b in enumerate(self.blocks):
            if b.label == label:
                return i
        raise KeyError(label)

    def successors(self, label):
        """
        Intraprocedural successors. A call falls through to the next block.
        """
        i = self.index(label)
        block = self.blocks[i]
        term = block.terminator
        succs = []
        if term is not None:
            if term.opcode in ("branch", "jump"):
                succs.append(term.target)
            if term.opcode in ("jump", "ret", "halt"):
                return succs
        if i + 1 < len(self.blocks):
            nxt = self.blocks[i + 1].label
            if nxt not in succs:
                succs.append(nxt)
        return succs


@dataclass(frozen=True)
class DataSymbol:
    name: str
    values: Tuple[int, ...]


@dataclass(frozen=True)
class Program:
    functions: Tuple[Function, ...]
    data: Tuple[DataSymbol, ...]
    entry: str = ENTRY_FUNCTION

    def function(self, name):
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def function_names(self):
        return [f.name for f in self.functions]

    def with_functions(self, functions):
        return replace(self, functions=tuple(functions))


@dataclass(frozen=True)
class GoldenState:
    memory: Tuple[int, ...]
    output: Tuple[int, ...]
    instructions: int
    loads: Tuple[int, ...] = ()


def data_layout(program):
    """
    Symbols laid out in declaration order from address 0.
    Returns ({name: (base, size)}, total words).
    """
    layout = {}
    addr = 0
    for sym in program.data:
        layout[sym.name] = (addr, len(sym.values))
        addr += len(sym.values)
    return layout, addr


def call_sites(program):
    """
    Call instructions in program order as (function, block index, instruction index).
    The position in this list is the site number used for return pointers.
    """
    sites = []
    for f in program.functions:
        for bi, b in enumerate(f.blocks):
            for ii, insn in enumerate(b.instructions):
                if insn.opcode == "call":
                    sites.append((f.name, bi, ii))
    return sites


# ---------------------------------------------------------------------------
# parser


def _statements(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        for part in re.split(r"([{};])", line):
            part = part.strip()
            if part and part != ";":
                yield part, lineno


def _parse_int(token, line):
    try:
        return int(token.strip(), 0)
    except ValueError:
        raise ParseError("expected integer, got '" + token.strip() + "'", line)


def _parse_reg(token, line):
    m = _REG.match(token.strip())
    if not m:
        raise ParseError("expected register, got '" + token.strip() + "'", line)
    reg = int(m.group(1))
    if reg >= NUM_REGS:
        raise ParseError("register out of range: r" + str(reg), line)
    return reg


def _is_reg(token):
    return _REG.match(token.strip()) is not None


def _parse_address(operands, line):
    """
    Parse "SYM, off" / "SYM" / "[ra+imm]" into (sym, base, offset).
    """
    first = operands[0].strip()
    m = _MEM.match(first)
    if m:
        if len(operands) != 1:
            raise ParseError("unexpected operand after memory address", line)
        reg = int(m.group(1))
        if reg >= NUM_REGS:
            raise ParseError("register out of range: r" + str(reg), line)
        offset = 0
        if m.group(3) is not None:
            offset = _parse_int(m.group(3), line)
            if m.group(2) == "-":
                offset = -offset
        return None, reg, offset
    if not re.match("^" + _IDENT + "$", first):
        raise ParseError("bad memory operand '" + first + "'", line)
    if len(operands) > 2:
        raise ParseError("too many operands", line)
    offset = _parse_int(operands[1], line) if len(operands) == 2 else 0
    return first, None, offset


def _split_operands(text):
    text = text.strip()
    return [t.strip() for t in text.split(",")] if text else []


def parse_instruction(text, line=0):
    words = text.split()
    bypass = "!bypass" in words
    checkpoint = "!ckpt" in words
    for w in words:
        if w.startswith("!") and w not in ("!bypass", "!ckpt"):
            raise ParseError("unknown suffix " + w, line)
    body = " ".join(w for w in words if not w.startswith("!"))
    parts = body.split(None, 1)
    mnemonic = parts[0].lower()
    ops = _split_operands(parts[1] if len(parts) > 1 else "")

    def expect(n):
        if len(ops) != n:
            raise ParseError(mnemonic + " expects " + str(n) + " operands, got " + str(len(ops)), line)

    if mnemonic in ALU_OPS:
        expect(3)
        dst, src = _parse_reg(ops[0], line), _parse_reg(ops[1], line)
        if _is_reg(ops[2]):
            insn = Instruction("alu", mnemonic, dst=dst, src=src, src2=_parse_reg(ops[2], line), line=line)
        else:
            insn = Instruction("alu", mnemonic, dst=dst, src=src, imm=_parse_int(ops[2], line), line=line)
    elif mnemonic == "mov":
        expect(2)
        dst = _parse_reg(ops[0], line)
        if _is_reg(ops[1]):
            insn = Instruction("alu", "mov", dst=dst, src=_parse_reg(ops[1], line), line=line)
        else:
            insn = Instruction("alu", "mov", dst=dst, imm=_parse_int(ops[1], line), line=line)
    elif mnemonic == "la":
        expect(2)
        insn = Instruction("alu", "la", dst=_parse_reg(ops[0], line), sym=ops[1], line=line)
    elif mnemonic == "load":
        if len(ops) < 2:
            raise ParseError("load expects a register and an address", line)
        sym, base, offset = _parse_address(ops[1:], line)
        insn = Instruction("load", "load", dst=_parse_reg(ops[0], line), sym=sym, base=base, offset=offset, line=line)
    elif mnemonic == "store":
        if len(ops) < 2:
            raise ParseError("store expects a value and an address", line)
        sym, base, offset = _parse_address(ops[1:], line)
        value = ops[0]
        src = imm = value_label = None
        m = _VALUE_LABEL.match(value)
        if _is_reg(value):
            src = _parse_reg(value, line)
        elif m:
            value_label = (m.group(1), m.group(2))
        else:
            imm = _parse_int(value, line)
        insn = Instruction(
            "store", "store", src=src, imm=imm, value_label=value_label, sym=sym, base=base, offset=offset, line=line
        )
    elif mnemonic in BRANCH_OPS:
        expect(3)
        insn = Instruction(
            "branch", mnemonic, src=_parse_reg(ops[0], line), src2=_parse_reg(ops[1], line), target=ops[2], line=line
        )
    elif mnemonic in ("jump", "call"):
        expect(1)
        insn = Instruction(mnemonic, mnemonic, target=ops[0], line=line)
    elif mnemonic in ("ret", "halt"):
        expect(0)
        insn = Instruction(mnemonic, mnemonic, line=line)
    else:
        raise ParseError("unknown instruction '" + mnemonic + "'", line)

    if bypass and insn.opcode != "load":
        raise ParseError("!bypass only applies to loads", line)
    if checkpoint and insn.opcode != "store":
        raise ParseError("!ckpt only applies to stores", line)
    return replace(insn, bypass=bypass, checkpoint=checkpoint)


def _parse_data(stmt, line):
    m = _DATA.match(stmt)
    if not m:
        raise ParseError("malformed data declaration", line)
    name, body, repeat = m.groups()
    if not body.strip():
        raise ParseError("data " + name + " has no words", line)
    values = [wrap32(_parse_int(v, line)) for v in body.split(",")]
    if repeat is not None:
        count = _parse_int(repeat, line)
        if count <= 0:
            raise ParseError("repetition count must be positive", line)
        values = values * count
    return DataSymbol(name, tuple(values))


def parse_program(text, validate=True):
    """
    Parse IR text into a Program. Raises ParseError / ValidationError.
    """
    data = []
    functions = []
    fn_name = None
    fn_line = 0
    blocks = []
    label = None
    insns = []
    in_body = False

    def close_block(line):
        if label is None:
            return
        if not insns:
            raise ParseError("empty block " + label, line)
        blocks.append(BasicBlock(label, tuple(insns)))

    for stmt, line in _statements(text):
        if fn_name is None:
            if stmt.startswith("data"):
                data.append(_parse_data(stmt, line))
                continue
            m = _FN.match(stmt)
            if not m:
                raise ParseError("expected 'data' or 'fn', got '" + stmt + "'", line)
            fn_name, fn_line = m.group(1), line
            continue
        if not in_body:
            if stmt != "{":
                raise ParseError("expected '{' after fn " + fn_name, line)
            in_body = True
            continue
        if stmt == "}":
            close_block(line)
            if not blocks:
                raise ParseError("function " + fn_name + " has no blocks", line)
            functions.append(Function(fn_name, tuple(blocks)))
            fn_name, blocks, label, insns, in_body = None, [], None, [], False
            continue
        if stmt == "{":
            raise ParseError("unexpected '{'", line)
        m = _LABEL_DEF.match(stmt)
        while m:
            close_block(line)
            label, insns = m.group(1), []
            stmt = m.group(2).strip()
            m = _LABEL_DEF.match(stmt) if stmt else None
        if not stmt:
            continue
        if label is None:
            raise ParseError("instruction before first label in fn " + fn_name, line)
        if insns and insns[-1].is_terminator:
            raise ParseError("instruction after terminator in block " + label, line)
        insns.append(parse_instruction(stmt, line))

    if fn_name is not None:
        raise ParseError("unterminated fn " + fn_name, fn_line)
    program = Program(tuple(functions), tuple(data))
    if validate:
        validate_program(program)
    return program


def validate_program(program):
    names = program.function_names()
    if len(set(names)) != len(names):
        raise ValidationError("duplicate function name")
    if program.entry not in names:
        raise ValidationError("missing entry function " + program.entry)
    symbols = {}
    for sym in program.data:
        if sym.name in symbols or sym.name == RF_SYMBOL:
            raise ValidationError("duplicate or reserved symbol " + sym.name)
        symbols[sym.name] = len(sym.values)

    calls = {}
    for f in program.functions:
        labels = f.labels()
        if len(set(labels)) != len(labels):
            raise ValidationError("duplicate label in fn " + f.name)
        last = f.blocks[-1]
        if last.terminator is None or last.terminator.opcode == "branch":
            raise ValidationError("fn " + f.name + " falls off its last block " + last.label)
        calls[f.name] = set()
        for b in f.blocks:
            for insn in b.instructions:
                _validate_instruction(program, f, insn, symbols)
                if insn.opcode == "call":
                    calls[f.name].add(insn.target)
    _check_acyclic(calls)
    return program


def _validate_instruction(program, f, insn, symbols):
    where = " (line " + str(insn.line) + ")" if insn.line else ""
    if insn.opcode in ("branch", "jump") and insn.target not in f.labels():
        raise ValidationError("undefined label " + str(insn.target) + where)
    if insn.opcode == "call" and insn.target not in program.function_names():
        raise ValidationError("undefined function " + str(insn.target) + where)
    if insn.value_label is not None:
        fn, label = insn.value_label
        target = f if fn is None else _lookup_function(program, fn, where)
        if label not in target.labels():
            raise ValidationError("undefined label " + label + where)
    if insn.sym is not None:
        if insn.sym == RF_SYMBOL:
            if not (insn.opcode == "store" and insn.checkpoint):
                raise ValidationError(RF_SYMBOL + " is reserved for checkpoint stores" + where)
            if not 0 <= insn.offset < RF_SLOTS:
                raise ValidationError("register-file slot out of range" + where)
        elif insn.sym not in symbols:
            raise ValidationError("undefined symbol " + insn.sym + where)
        elif insn.opcode != "alu" and not 0 <= insn.offset < symbols[insn.sym]:
            raise ValidationError("offset " + str(insn.offset) + " outside " + insn.sym + where)


def _lookup_function(program, name, where):
    try:
        return program.function(name)
    except KeyError:
        raise ValidationError("undefined function " + name + where)


def _check_acyclic(calls):
    state = {}

    def visit(name, stack):
        state[name] = 1
        for callee in sorted(calls.get(name, ())):
            if state.get(callee) == 1:
                raise ValidationError("recursion: " + " -> ".join(stack + [callee]))
            if callee not in state:
                visit(callee, stack + [callee])
        state[name] = 2

    for name in sorted(calls):
        if name not in state:
            visit(name, [name])


# ---------------------------------------------------------------------------
# printer


def _format_data(sym):
    values = sym.values
    if len(values) > 1 and all(v == values[0] for v in values):
        return "data " + sym.name + " = [" + str(values[0]) + "] * " + str(len(values))
    return "data " + sym.name + " = [" + ", ".join(str(v) for v in values) + "]"


def format_program(program, regions=None):
    """
    Render a Program as IR text. With regions, each region header is preceded
    by a "#region" comment line.
    """
    headers = {}
    for r in regions or ():
        headers[(r.function, r.entry)] = r
    out = [_format_data(sym) for sym in program.data]
    for f in program.functions:
        if out:
            out.append("")
        out.append("fn " + f.name + " {")
        for b in f.blocks:
            region = headers.get((f.name, b.label))
            if region is not None:
                out.append("#" + region.describe())
            out.append(b.label + ":")
            for insn in b.instructions:
                out.append("    " + str(insn))
        out.append("}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# reference interpreter


class ReferenceInterpreter:
    """
    Executes a Program with no store buffer and no power failures, against a
    flat word memory laid out by data_layout(). Used as the golden oracle and
    by the nonvolatile-processor baseline, which drives it one instruction at
    a time via step().
    """

    def __init__(self, program, budget=2000000, record_loads=False):
        self.program = program
        self.symbols, size = data_layout(program)
        self.memory = []
        for sym in program.data:
            self.memory.extend(sym.values)
        assert len(self.memory) == size
        self.regs = [0] * NUM_REGS
        self.budget = budget
        self.record_loads = record_loads
        self.loads = []
        self.count = 0
        self.halted = False
        self.sites = call_sites(program)
        self._functions = {f.name: f for f in program.functions}
        self._site_index = {s: i for i, s in enumerate(self.sites)}
        self.fn = self._functions[program.entry]
        self.block = 0
        self.index = 0

    def _address(self, insn):
        if insn.sym is not None:
            addr = self.symbols[insn.sym][0] + insn.offset
        else:
            addr = self.regs[insn.base] + insn.offset
        if not 0 <= addr < len(self.memory):
            raise SimulationError("invalid memory access at address " + str(addr) + " (line " + str(insn.line) + ")")
        return addr

    def _goto(self, fn_name, label):
        self.fn = self._functions[fn_name]
        self.block = self.fn.index(label)
        self.index = 0

    def _advance(self):
        self.index += 1
        if self.index >= len(self.fn.blocks[self.block].instructions):
            self.block += 1
            self.index = 0
            if self.block >= len(self.fn.blocks):
                raise SimulationError("fell off the end of fn " + self.fn.name)

    def current(self):
        return self.fn.blocks[self.block].instructions[self.index]

    def step(self):
        """
        Execute one instruction and return it.
        """
        if self.halted:
            raise SimulationError("program already halted")
        if self.count >= self.budget:
            raise BudgetExceeded("instruction budget of " + str(self.budget) + " exceeded")
        insn = self.current()
        self.count += 1
        regs = self.regs
        if insn.opcode == "alu":
            if insn.op == "la":
                regs[insn.dst] = self.symbols[insn.sym][0]
            else:
                regs[insn.dst] = alu_eval(insn.op, *alu_operands(insn, regs))
            self._advance()
        elif insn.opcode == "load":
            value = self.memory[self._address(insn)]
            regs[insn.dst] = value
            if self.record_loads:
                self.loads.append(value)
            self._advance()
        elif insn.opcode == "store":
            if insn.sym == RF_SYMBOL:
                # checkpoint stores have no effect on program memory
                self._advance()
                return insn
            if insn.src is not None:
                value = regs[insn.src]
            elif insn.value_label is not None:
                raise SimulationError("code addresses are not storable without linking")
            else:
                value = wrap32(insn.imm)
            self.memory[self._address(insn)] = value
            self._advance()
        elif insn.opcode == "branch":
            if branch_taken(insn.op, regs[insn.src], regs[insn.src2]):
                self._goto(self.fn.name, insn.target)
            else:
                self._advance()
        elif insn.opcode == "jump":
            self._goto(self.fn.name, insn.target)
        elif insn.opcode == "call":
            site = self._site_index[(self.fn.name, self.block, self.index)]
            regs[LINK_REG] = encode_site(site)
            callee = self._functions[insn.target]
            self._goto(callee.name, callee.entry)
        elif insn.opcode == "ret":
            site = decode_site(regs[LINK_REG])
            if not 0 <= site < len(self.sites):
                raise SimulationError("ret with no return site in r15")
            fn_name, block, index = self.sites[site]
            self.fn = self._functions[fn_name]
            self.block, self.index = block, index
            self._advance()
        elif insn.opcode == "halt":
            self.halted = True
        return insn

    def run(self):
        while not self.halted:
            self.step()
        return self.golden()

    def output(self):
        if OUT_SYMBOL not in self.symbols:
            return ()
        base, size = self.symbols[OUT_SYMBOL]
        return tuple(self.memory[base:base + size])

    def golden(self):
        return GoldenState(tuple(self.memory), self.output(), self.count, tuple(self.loads))


def interpret_reference(program, budget=2000000, record_loads=False):
    """
    Run a program to completion with direct memory semantics.
    """
    return ReferenceInterpreter(program, budget, record_loads).run()
