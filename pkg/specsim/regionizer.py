"""
Region formation.

Partitions every function into single-entry regions whose stores fit half
of the store buffer on every acyclic path, inserts the checkpoint stores
that save the registers live into the next region plus the recovery PC,
and marks loads that provably cannot alias a store still held in the
buffer so they can skip the buffer search.
"""
import logging
import re
from dataclasses import dataclass, replace
from typing import FrozenSet, List

from .dataflow import CFG, access_set, build_cfg, may_alias, points_to, program_liveness
from .errors import RegionFormationError
from .ir import (
    LINK_REG,
    PC_SLOT,
    RF_SYMBOL,
    BasicBlock,
    Function,
    Instruction,
    call_sites,
    encode_site,
)

logger = logging.getLogger(__name__)

FUNCTION_ENTRY = "function-entry"
FUNCTION_EXIT = "function-exit"
LOOP_HEADER = "loop-header"
STORE_BUDGET_CUT = "store-budget-cut"
MERGE = "merge"

_SPLIT_BLOCK = re.compile(r"^(.+)\.s(\d+)$")


@dataclass
class Region:
    id: int
    function: str
    entry: str
    blocks: List[str]
    kind: str
    store_count: int = 0
    live_out: FrozenSet[int] = frozenset()
    checkpoint_stores: int = 0
    entry_pc: int = -1

    def describe(self):
        live = ",".join("r" + str(r) for r in sorted(self.live_out)) or "-"
        return "region " + str(self.id) + " " + self.kind + " stores=" + str(self.store_count) + " live_out=" + live

    def to_dict(self):
        return {
            "id": self.id,
            "function": self.function,
            "entry": self.entry,
            "entry_pc": self.entry_pc,
            "blocks": list(self.blocks),
            "kind": self.kind,
            "store_count": self.store_count,
            "checkpoint_stores": self.checkpoint_stores,
            "live_out": ["r" + str(r) for r in sorted(self.live_out)],
        }


def _unique_label(taken, wanted):
    label = wanted
    n = 1
    while label in taken:
        n += 1
        label = wanted + str(n)
    taken.add(label)
    return label


# ---------------------------------------------------------------------------
# normalisation


def strip_checkpoints(program):
    """
    Undo a previous region formation: drop checkpoint stores, bypass marks,
    edge blocks and budget-cut splits.
    """
    functions = []
    for f in program.functions:
        blocks = []
        for b in f.blocks:
            insns = tuple(replace(i, bypass=False) for i in b.instructions if not i.checkpoint)
            blocks.append(BasicBlock(b.label, insns))
        blocks = _remove_edge_blocks(blocks)
        blocks = _rejoin_splits(blocks)
        functions.append(Function(f.name, tuple(blocks)))
    return program.with_functions(functions)


def _remove_edge_blocks(blocks):
    labels = set(b.label for b in blocks)
    redirect = {}
    for i, b in enumerate(blocks):
        if len(b.instructions) != 1 or b.instructions[0].opcode != "jump":
            continue
        target = b.instructions[0].target
        suffix = ".x" + target
        if not b.label.endswith(suffix) or b.label[: -len(suffix)] not in labels:
            continue
        prev = blocks[i - 1] if i > 0 else None
        prev_falls = prev is not None and (prev.terminator is None or prev.terminator.opcode == "branch")
        nxt = blocks[i + 1].label if i + 1 < len(blocks) else None
        if prev_falls and nxt != target:
            continue
        redirect[b.label] = target
    if not redirect:
        return blocks
    out = []
    for b in blocks:
        if b.label in redirect:
            continue
        insns = tuple(
            replace(i, target=redirect[i.target]) if i.opcode in ("branch", "jump") and i.target in redirect else i
            for i in b.instructions
        )
        out.append(BasicBlock(b.label, insns))
    return out


def _rejoin_splits(blocks):
    referenced = set()
    for b in blocks:
        for i in b.instructions:
            if i.opcode in ("branch", "jump"):
                referenced.add(i.target)
            if i.value_label is not None and i.value_label[0] is None:
                referenced.add(i.value_label[1])
    out = []
    for b in blocks:
        m = _SPLIT_BLOCK.match(b.label)
        if (
            m
            and out
            and out[-1].terminator is None
            and out[-1].instructions[-1].opcode != "call"
            and b.label not in referenced
            and _split_base(out[-1].label) == m.group(1)
        ):
            out[-1] = BasicBlock(out[-1].label, out[-1].instructions + b.instructions)
            continue
        out.append(b)
    return out


def _split_calls(program):
    """
    End every block after a call and put every halt in its own block, so that
    call returns and the final checkpoint start at a block boundary.
    """
    functions = []
    for f in program.functions:
        taken = set(f.labels())
        blocks = []
        for b in f.blocks:
            label, current = b.label, []
            insns = list(b.instructions)
            for idx, insn in enumerate(insns):
                if insn.opcode == "halt" and current:
                    blocks.append(BasicBlock(label, tuple(current)))
                    label, current = _unique_label(taken, b.label + ".h"), []
                current.append(insn)
                if insn.opcode == "call" and idx + 1 < len(insns):
                    blocks.append(BasicBlock(label, tuple(current)))
                    label, current = _unique_label(taken, b.label + ".r"), []
            blocks.append(BasicBlock(label, tuple(current)))
        functions.append(Function(f.name, tuple(blocks)))
    return program.with_functions(functions)


def _split_base(label):
    m = _SPLIT_BLOCK.match(label)
    return m.group(1) if m else label


def _split_block(program, fn_name, label, index):
    f = program.function(fn_name)
    taken = set(f.labels())
    base = _split_base(label)
    n = 1
    while base + ".s" + str(n) in taken:
        n += 1
    new_label = base + ".s" + str(n)
    blocks = []
    for b in f.blocks:
        if b.label == label:
            blocks.append(BasicBlock(label, b.instructions[:index]))
            blocks.append(BasicBlock(new_label, b.instructions[index:]))
        else:
            blocks.append(b)
    functions = [Function(fn_name, tuple(blocks)) if g.name == fn_name else g for g in program.functions]
    return program.with_functions(functions), new_label


# ---------------------------------------------------------------------------
# boundaries


def place_initial_boundaries(program, cfgs=None):
    """
    Initial region headers per function: the entry, every loop header and
    every block a call returns to.
    """
    boundaries = {}
    for f in program.functions:
        cfg = cfgs[f.name] if cfgs else build_cfg(f)
        heads = {}
        for label in cfg.labels:
            if label not in cfg.reachable:
                continue
            idx = f.index(label)
            if idx > 0 and f.blocks[idx - 1].instructions[-1].opcode == "call":
                heads[label] = FUNCTION_EXIT
            if label in cfg.loop_headers:
                heads[label] = LOOP_HEADER
        heads[f.entry] = FUNCTION_ENTRY
        boundaries[f.name] = heads
    return boundaries


def _assign_regions(f, cfg, headers):
    """
    Map every reachable block to its region header. A block whose forward
    predecessors sit in different regions becomes a merge header.
    """
    kinds = dict(headers)
    region_of = {}
    for label in cfg.topological_order:
        if label in kinds:
            region_of[label] = label
            continue
        preds = {region_of[p] for p in cfg.predecessors[label] if p in cfg.reachable}
        if len(preds) == 1:
            region_of[label] = preds.pop()
        else:
            kinds[label] = MERGE
            region_of[label] = label
    return region_of, kinds


def _exits(f, block, kinds):
    """
    Ways control leaves the region at the end of block: ("edge", header),
    ("call", fn), ("ret",) or ("halt",).
    """
    last = block.instructions[-1]
    if last.opcode == "call":
        return [("call", last.target)]
    if last.opcode == "ret":
        return [("ret",)]
    if last.opcode == "halt":
        return [("halt",)]
    return [("edge", s) for s in f.successors(block.label) if s in kinds]


def _exit_registers(exit_, fn_name, live):
    kind = exit_[0]
    if kind == "edge":
        return sorted(live.live_in[exit_[1]])
    if kind == "call":
        return sorted(live.call_live[exit_[1]] - {LINK_REG})
    if kind == "ret":
        return sorted(live.ret_live[fn_name])
    return []


def _exit_cost(exit_, fn_name, live):
    extra = 2 if exit_[0] == "call" else 1
    return len(_exit_registers(exit_, fn_name, live)) + extra


def _intra_preds(cfg, label, region_of):
    return [
        p for p in cfg.predecessors[label]
        if region_of.get(p) == region_of[label]
        and not cfg.is_loop_edge(p, label)
        and cfg.function.block(p).instructions[-1].opcode != "call"
    ]


def _find_violations(f, cfg, kinds, region_of, live, threshold):
    """
    Walk each region in topological order counting stores per path,
    including the checkpoint stores of every exit. Returns one violation per
    offending region as (kind, label, index, count_in, exit cost).
    """
    count_out = {}
    violations = {}
    for label in cfg.topological_order:
        head = region_of[label]
        if head in violations:
            continue
        block = f.block(label)
        if label == head:
            count_in = 0
        else:
            count_in = max(count_out[p] for p in _intra_preds(cfg, label, region_of))
        c = count_in
        for idx, insn in enumerate(block.instructions):
            if insn.opcode == "store":
                c += 1
                if c > threshold:
                    violations[head] = ("store", label, idx, count_in, 0)
                    break
        if head in violations:
            continue
        costs = [_exit_cost(e, f.name, live) for e in _exits(f, block, kinds)]
        if costs and c + max(costs) > threshold:
            violations[head] = ("exit", label, len(block.instructions), count_in, max(costs))
            continue
        count_out[label] = c
    return [violations[h] for h in cfg.topological_order if h in violations]


def _choose_cut(block, is_header, violation, live, threshold):
    """
    Pick the instruction index to cut before, or 0 to make the whole block a
    header. The prefix must be able to checkpoint into the new header and, for
    an exit violation, the suffix must fit its own exit.
    """
    kind, label, limit, count_in, exit_cost = violation
    stores = [i for i, insn in enumerate(block.instructions) if insn.opcode == "store" and i <= limit]
    for pos in range(len(stores) - 1, -1, -1):
        k = stores[pos]
        if k == 0 and is_header:
            continue
        if kind == "exit" and (len(stores) - pos) + exit_cost > threshold:
            break
        prefix = count_in + pos
        if prefix + len(live.before(label, k)) + 1 <= threshold:
            return k
    if not is_header:
        return 0
    raise RegionFormationError("no legal cut in block " + label + " under threshold " + str(threshold))


def _apply_cuts(program, headers, cfgs, live, threshold):
    changed = False
    for f in list(program.functions):
        cfg = cfgs[f.name]
        region_of, kinds = _assign_regions(f, cfg, headers[f.name])
        for violation in _find_violations(f, cfg, kinds, region_of, live[f.name], threshold):
            label = violation[1]
            block = program.function(f.name).block(label)
            k = _choose_cut(block, label in kinds, violation, live[f.name], threshold)
            if k == 0:
                headers[f.name][label] = STORE_BUDGET_CUT
                logger.debug("fn %s: block %s becomes a budget-cut header", f.name, label)
            else:
                program, new_label = _split_block(program, f.name, label, k)
                headers[f.name][new_label] = STORE_BUDGET_CUT
                logger.debug("fn %s: split %s before instruction %d into %s", f.name, label, k, new_label)
            changed = True
    return program, changed


def _analyse(program):
    cfgs = {f.name: CFG(f, warn_unreachable=False) for f in program.functions}
    return cfgs, program_liveness(program)


def _violations(f, cfg, headers, live, threshold):
    region_of, kinds = _assign_regions(f, cfg, headers)
    return _find_violations(f, cfg, kinds, region_of, live, threshold)


def _combine_regions(program, headers, threshold):
    """
    Greedily drop budget-cut headers, in program order, whenever the merged
    region still meets the budget.
    """
    cfgs, live = _analyse(program)
    for f in program.functions:
        for label in f.labels():
            if headers[f.name].get(label) != STORE_BUDGET_CUT:
                continue
            trial = dict(headers[f.name])
            del trial[label]
            if not _violations(f, cfgs[f.name], trial, live[f.name], threshold):
                headers[f.name] = trial
                logger.debug("fn %s: merged budget-cut header %s away", f.name, label)
    return headers


def _build_regions(program, headers):
    cfgs, _ = _analyse(program)
    regions = []
    for f in program.functions:
        cfg = cfgs[f.name]
        region_of, kinds = _assign_regions(f, cfg, headers[f.name])
        order = [label for label in f.labels() if label in kinds]
        for head in order:
            members = [label for label in cfg.topological_order if region_of[label] == head]
            regions.append(Region(len(regions), f.name, head, members, kinds[head]))
    return regions


# ---------------------------------------------------------------------------
# checkpoints


def _checkpoint(value, slot, line):
    if isinstance(value, int) and not isinstance(value, bool):
        return Instruction("store", "store", imm=value, sym=RF_SYMBOL, offset=slot, checkpoint=True, line=line)
    if isinstance(value, tuple):
        return Instruction("store", "store", value_label=value, sym=RF_SYMBOL, offset=slot, checkpoint=True, line=line)
    return Instruction("store", "store", src=int(value[1:]), sym=RF_SYMBOL, offset=slot, checkpoint=True, line=line)


def _exit_stores(exit_, f, label, live, program, site_numbers, block_index, line):
    regs = _exit_registers(exit_, f.name, live)
    stores = [_checkpoint("r" + str(r), r, line) for r in regs]
    kind = exit_[0]
    if kind == "edge":
        stores.append(_checkpoint((None, exit_[1]), PC_SLOT, line))
    elif kind == "call":
        callee = program.function(exit_[1])
        site = site_numbers[(f.name, block_index)]
        stores.append(_checkpoint(encode_site(site), LINK_REG, line))
        stores.append(_checkpoint((callee.name, callee.entry), PC_SLOT, line))
    elif kind == "ret":
        stores.append(_checkpoint("r" + str(LINK_REG), PC_SLOT, line))
    else:
        stores.append(_checkpoint((None, label), PC_SLOT, line))
    return stores


def insert_checkpoints(program, regions):
    """
    At every region exit, store each register live into the next region to
    its RF slot and then the recovery PC. Exits on one side of a branch get
    their own edge block.
    """
    live = program_liveness(program)
    kinds_by_fn = {}
    region_by_block = {}
    for r in regions:
        kinds_by_fn.setdefault(r.function, {})[r.entry] = r.kind
        for label in r.blocks:
            region_by_block[(r.function, label)] = r
    site_numbers = {}
    for n, (fn_name, bi, _ii) in enumerate(call_sites(program)):
        site_numbers[(fn_name, bi)] = n

    functions = []
    for f in program.functions:
        kinds = kinds_by_fn.get(f.name, {})
        taken = set(f.labels())
        blocks, tail = [], []
        for bi, b in enumerate(f.blocks):
            region = region_by_block.get((f.name, b.label))
            if region is None:
                blocks.append(b)
                continue
            exits = _exits(f, b, kinds)
            line = b.instructions[-1].line
            last = b.instructions[-1]
            if last.opcode != "branch":
                stores = []
                for e in exits:
                    stores.extend(_exit_stores(e, f, b.label, live[f.name], program, site_numbers, bi, line))
                if last.is_terminator or last.opcode == "call":
                    insns = b.instructions[:-1] + tuple(stores) + (last,)
                else:
                    insns = b.instructions + tuple(stores)
                blocks.append(BasicBlock(b.label, insns))
                region.checkpoint_stores += len(stores)
                continue
            # branch: one edge block per exiting successor
            fall = f.blocks[bi + 1].label if bi + 1 < len(f.blocks) else None
            exit_targets = {e[1] for e in exits}
            edge_for = {}
            after, later = [], []
            if fall in exit_targets:
                lbl = _unique_label(taken, b.label + ".x" + fall)
                stores = _exit_stores(("edge", fall), f, b.label, live[f.name], program, site_numbers, bi, line)
                after.append(BasicBlock(lbl, tuple(stores) + (Instruction("jump", "jump", target=fall, line=line),)))
                edge_for[fall] = lbl
                region.checkpoint_stores += len(stores)
            if last.target in exit_targets and last.target not in edge_for:
                lbl = _unique_label(taken, b.label + ".x" + last.target)
                stores = _exit_stores(("edge", last.target), f, b.label, live[f.name], program, site_numbers, bi, line)
                later.append(BasicBlock(lbl, tuple(stores) + (Instruction("jump", "jump", target=last.target, line=line),)))
                edge_for[last.target] = lbl
                region.checkpoint_stores += len(stores)
            new_last = replace(last, target=edge_for.get(last.target, last.target))
            blocks.append(BasicBlock(b.label, b.instructions[:-1] + (new_last,)))
            blocks.extend(after)
            tail.extend(later)
            for eb in after + later:
                region.blocks.insert(region.blocks.index(b.label) + 1, eb.label)
        functions.append(Function(f.name, tuple(blocks + tail)))
    return program.with_functions(functions)


def region_path_stores(function, region):
    """
    Largest number of stores on any acyclic path through the region.
    """
    members = set(region.blocks)
    best = {}
    for label in region.blocks:
        preds = [
            p for p in members
            if p != label and label != region.entry and label in function.successors(p)
            and function.block(p).instructions[-1].opcode != "call"
        ]
        start = max((best[p] for p in preds if p in best), default=0)
        best[label] = start + function.block(label).store_count()
    return max(best.values(), default=0)


def _finish_regions(program, regions):
    for r in regions:
        f = program.function(r.function)
        r.store_count = region_path_stores(f, r)
        regs = set()
        for label in r.blocks:
            for insn in f.block(label).instructions:
                if insn.checkpoint and insn.offset != PC_SLOT:
                    regs.add(insn.offset)
        r.live_out = frozenset(regs)
    return regions


# ---------------------------------------------------------------------------
# bypass


def region_predecessors(program, regions):
    """
    Region-level predecessor graph over intra-function edges, call edges and
    return edges.
    """
    by_block = {}
    for r in regions:
        for label in r.blocks:
            by_block[(r.function, label)] = r.id
    entry_region = {}
    for r in regions:
        entry_region[(r.function, r.entry)] = r.id
    return_regions = {}
    for f in program.functions:
        for i, b in enumerate(f.blocks):
            last = b.instructions[-1]
            if last.opcode == "call" and i + 1 < len(f.blocks):
                rid = by_block.get((f.name, f.blocks[i + 1].label))
                if rid is not None:
                    return_regions.setdefault(last.target, set()).add(rid)
    preds = {r.id: set() for r in regions}
    for r in regions:
        f = program.function(r.function)
        for label in r.blocks:
            b = f.block(label)
            last = b.instructions[-1]
            if last.opcode == "call":
                callee = program.function(last.target)
                preds[entry_region[(callee.name, callee.entry)]].add(r.id)
            elif last.opcode == "ret":
                for rid in return_regions.get(r.function, ()):
                    preds[rid].add(r.id)
            else:
                for s in f.successors(label):
                    if (r.function, s) in entry_region:
                        preds[entry_region[(r.function, s)]].add(r.id)
    return preds


def mark_bypass_loads(program, regions, enabled=True):
    """
    Set bypass on every load that provably aliases no store of its own region
    or of any region that can run immediately before it.
    """
    pts = points_to(program)
    preds = region_predecessors(program, regions)
    stores_of = {}
    for r in regions:
        f = program.function(r.function)
        accesses = []
        for label in r.blocks:
            for insn in f.block(label).instructions:
                if insn.opcode == "store" and not insn.checkpoint:
                    accesses.append(access_set(insn, pts))
        stores_of[r.id] = accesses
    marked = {}
    for r in regions:
        scope = list(stores_of[r.id])
        for p in sorted(preds[r.id]):
            scope.extend(stores_of[p])
        for label in r.blocks:
            marked[(r.function, label)] = scope
    functions = []
    for f in program.functions:
        blocks = []
        for b in f.blocks:
            scope = marked.get((f.name, b.label))
            insns = []
            for insn in b.instructions:
                if insn.opcode == "load":
                    ok = enabled and scope is not None and not any(may_alias(access_set(insn, pts), s) for s in scope)
                    insn = replace(insn, bypass=ok)
                insns.append(insn)
            blocks.append(BasicBlock(b.label, tuple(insns)))
        functions.append(Function(f.name, tuple(blocks)))
    return program.with_functions(functions)


def bypass_stats(program):
    loads = marked = 0
    for f in program.functions:
        for b in f.blocks:
            for insn in b.instructions:
                if insn.opcode == "load":
                    loads += 1
                    marked += insn.bypass
    return loads, marked


# ---------------------------------------------------------------------------
# driver


def form_regions(program, sb_size=40, iterations=100, bypass=True):
    """
    Partition program into regions of at most sb_size // 2 stores per path.
    Returns (annotated program, regions). Running it again on its own output
    yields the same program.
    """
    threshold = sb_size // 2
    prog = _split_calls(strip_checkpoints(program))
    for f in prog.functions:
        build_cfg(f)  # reports unreachable blocks once
    headers = place_initial_boundaries(prog, {f.name: CFG(f, warn_unreachable=False) for f in prog.functions})
    for iteration in range(iterations):
        cfgs, live = _analyse(prog)
        prog, changed = _apply_cuts(prog, headers, cfgs, live, threshold)
        if not changed:
            logger.info("region formation converged after %d iterations", iteration + 1)
            break
    else:
        raise RegionFormationError("region formation did not converge")
    headers = _combine_regions(prog, headers, threshold)
    regions = _build_regions(prog, headers)
    out = insert_checkpoints(prog, regions)
    out = mark_bypass_loads(out, regions, bypass)
    _finish_regions(out, regions)
    logger.info("formed %d regions under threshold %d", len(regions), threshold)
    return out, regions


@dataclass
class Compilation:
    source: object
    program: object
    regions: list
    threshold: int
    loads: int = 0
    bypassed: int = 0

    @property
    def bypass_rate(self):
        return self.bypassed / self.loads if self.loads else 0.0

    def report(self):
        return {
            "threshold": self.threshold,
            "regions": [r.to_dict() for r in self.regions],
            "bypass": {"loads": self.loads, "marked": self.bypassed, "rate": round(self.bypass_rate, 6)},
        }


def compile_program(program, config):
    out, regions = form_regions(program, config.sb_size, config.region_iterations, config.bypass)
    loads, marked = bypass_stats(out)
    return Compilation(program, out, regions, config.threshold, loads, marked)
