"""
Flattens a Program into a PC-indexed executable and binds symbols, labels
and region boundaries to NVM addresses and PCs.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .errors import ValidationError
from .ir import PC_SLOT, RF_SYMBOL, Instruction, decode_site

logger = logging.getLogger(__name__)


@dataclass
class Executable:
    program: object
    layout: object
    code: List[Instruction]
    owner: List[str]
    labels: Dict[Tuple[str, str], int]
    targets: List[Optional[int]]
    addrs: List[Optional[int]]
    values: List[Optional[int]]
    sites: List[int]
    site_of: Dict[int, int]
    entry_pc: int
    regions: list = field(default_factory=list)
    region_of: List[int] = field(default_factory=list)
    region_entries: frozenset = frozenset()

    def __len__(self):
        return len(self.code)

    def decode_pc(self, word):
        """
        Map a recovery-PC word (a PC, or a return-site pointer) to a PC.
        """
        if word >= 0:
            return word
        site = decode_site(word)
        return self.sites[site]

    def region(self, pc):
        rid = self.region_of[pc] if self.region_of else -1
        return rid


def link(program, layout, regions=None):
    code, owner = [], []
    labels = {}
    block_of_pc = []
    for f in program.functions:
        for b in f.blocks:
            labels[(f.name, b.label)] = len(code)
            for insn in b.instructions:
                code.append(insn)
                owner.append(f.name)
                block_of_pc.append((f.name, b.label))
    entries = {f.name: labels[(f.name, f.entry)] for f in program.functions}

    targets, addrs, values = [], [], []
    sites, site_of = [], {}
    for pc, insn in enumerate(code):
        fn = owner[pc]
        target = addr = value = None
        if insn.opcode in ("branch", "jump"):
            target = labels[(fn, insn.target)]
        elif insn.opcode == "call":
            target = entries[insn.target]
            site_of[pc] = len(sites)
            sites.append(pc + 1)
        if insn.opcode in ("load", "store") and insn.sym is not None:
            if insn.sym == RF_SYMBOL:
                addr = layout.rf_base + insn.offset
            else:
                addr = layout.symbol(insn.sym)[0] + insn.offset
        if insn.opcode == "alu" and insn.op == "la":
            value = layout.symbol(insn.sym)[0]
        if insn.opcode == "store" and insn.src is None:
            if insn.value_label is not None:
                vfn, vlabel = insn.value_label
                value = labels[(vfn or fn, vlabel)]
            else:
                value = insn.imm
        targets.append(target)
        addrs.append(addr)
        values.append(value)

    exe = Executable(
        program, layout, code, owner, labels, targets, addrs, values, sites, site_of, entries[program.entry]
    )
    if regions is not None:
        _bind_regions(exe, regions, block_of_pc)
    logger.debug("linked %d instructions, %d call sites", len(code), len(sites))
    return exe


def _bind_regions(exe, regions, block_of_pc):
    region_by_block = {}
    entries = set()
    for r in regions:
        for label in r.blocks:
            region_by_block[(r.function, label)] = r.id
        pc = exe.labels[(r.function, r.entry)]
        r.entry_pc = pc
        entries.add(pc)
    exe.regions = list(regions)
    exe.region_of = [region_by_block.get(key, -1) for key in block_of_pc]
    exe.region_entries = frozenset(entries)
    for pc, insn in enumerate(exe.code):
        if insn.checkpoint and insn.offset == PC_SLOT and exe.values[pc] is not None:
            if exe.values[pc] >= len(exe.code):
                raise ValidationError("recovery PC outside the program")
