"""
Control-flow and dataflow analyses over IR functions: CFG construction,
dominators, loop headers, topological order, register liveness and a
flow-insensitive points-to analysis for register address bases.
"""
import logging
from dataclasses import dataclass
from functools import reduce
from typing import Dict, FrozenSet, Tuple

from .ir import LINK_REG, NUM_REGS, RF_SYMBOL, call_sites

logger = logging.getLogger(__name__)

ALL_REGS = frozenset(range(NUM_REGS))


class CFG:
    """
    Control flow graph of one function, keyed by block label.

    Every block reachable from the entry has dominator information. Loop
    headers are the targets of back edges (edges whose target dominates their
    source) together with the targets of retreating edges, so that
    irreducible cycles also get a header. Removing the retreating edges
    leaves a DAG whose topological order is in topological_order.
    """

    def __init__(self, function, warn_unreachable=True):
        self.function = function
        self.entry = function.entry
        self.labels = function.labels()
        self.successors = {label: function.successors(label) for label in self.labels}
        self.predecessors = {label: [] for label in self.labels}
        for label in self.labels:
            for s in self.successors[label]:
                self.predecessors[s].append(label)

        self.reachable = self._reachable()
        self.unreachable = [label for label in self.labels if label not in self.reachable]
        for label in self.unreachable if warn_unreachable else ():
            logger.warning("fn %s: block %s is unreachable and is excluded from regions", function.name, label)

        self.dominators = self._dominators()
        self.back_edges = sorted(
            (u, v) for u in self.reachable for v in self.successors[u] if v in self.dominators[u]
        )
        self.retreating_edges = self._retreating_edges()
        self.loop_edges = frozenset(self.back_edges) | frozenset(self.retreating_edges)
        self.loop_headers = frozenset(v for _, v in self.loop_edges)
        self.topological_order = self._topological_order()

    def _reachable(self):
        seen = set()
        stack = [self.entry]
        while stack:
            label = stack.pop()
            if label in seen:
                continue
            seen.add(label)
            stack.extend(self.successors[label])
        return seen

    def _dominators(self):
        nodes = [label for label in self.labels if label in self.reachable]
        dom = {label: set(nodes) for label in nodes}
        dom[self.entry] = {self.entry}
        changed = True
        while changed:
            changed = False
            for label in nodes:
                if label == self.entry:
                    continue
                preds = [p for p in self.predecessors[label] if p in self.reachable]
                new = {label} | reduce(lambda a, b: a & b, (dom[p] for p in preds))
                if new != dom[label]:
                    dom[label] = new
                    changed = True
        return {label: frozenset(d) for label, d in dom.items()}

    def dominates(self, a, b):
        return a in self.dominators.get(b, ())

    def _retreating_edges(self):
        order = {label: i for i, label in enumerate(self.labels)}
        on_stack = set()
        visited = set()
        edges = []
        # iterative DFS; successors visited in their listed order
        stack = [(self.entry, iter(self.successors[self.entry]))]
        visited.add(self.entry)
        on_stack.add(self.entry)
        while stack:
            label, it = stack[-1]
            advanced = False
            for s in it:
                if s in on_stack:
                    edges.append((label, s))
                elif s not in visited:
                    visited.add(s)
                    on_stack.add(s)
                    stack.append((s, iter(self.successors[s])))
                    advanced = True
                    break
            if not advanced:
                on_stack.discard(label)
                stack.pop()
        return sorted(edges, key=lambda e: (order[e[0]], order[e[1]]))

    def forward_successors(self, label):
        """
        Successors along edges that are neither back nor retreating edges.
        """
        return [s for s in self.successors[label] if not self.is_loop_edge(label, s)]

    def is_loop_edge(self, u, v):
        return (u, v) in self.loop_edges

    def _topological_order(self):
        order = {label: i for i, label in enumerate(self.labels)}
        indegree = {label: 0 for label in self.reachable}
        for u in self.reachable:
            for v in self.forward_successors(u):
                indegree[v] += 1
        ready = sorted((label for label, d in indegree.items() if d == 0), key=order.get)
        result = []
        while ready:
            label = ready.pop(0)
            result.append(label)
            for v in self.forward_successors(label):
                indegree[v] -= 1
                if indegree[v] == 0:
                    ready.append(v)
                    ready.sort(key=order.get)
        if len(result) != len(self.reachable):
            raise AssertionError("cycle left after removing loop edges in fn " + self.function.name)
        return result


def build_cfg(function):
    return CFG(function)


@dataclass(frozen=True)
class Liveness:
    """
    Live register sets at block boundaries, plus per-instruction queries.
    """

    function: object
    live_in: Dict[str, FrozenSet[int]]
    live_out: Dict[str, FrozenSet[int]]
    call_live: Dict[str, FrozenSet[int]]
    ret_live: Dict[str, FrozenSet[int]]

    def before(self, label, index):
        """
        Registers live immediately before instruction index of block label.
        """
        block = self.function.block(label)
        live = self.live_out[label]
        for insn in reversed(block.instructions[index:]):
            live = transfer(insn, live, self.function.name, self.call_live, self.ret_live)
        return live

    def after(self, label, index):
        return self.before(label, index + 1)


def transfer(insn, live_after, fn_name, call_live=None, ret_live=None):
    """
    Backward transfer: live-before set of one instruction.
    """
    if insn.opcode == "call":
        if call_live is None:
            return ALL_REGS
        return frozenset((live_after - {LINK_REG}) | (call_live.get(insn.target, ALL_REGS) - {LINK_REG}))
    if insn.opcode == "ret":
        if ret_live is None:
            return ALL_REGS
        return frozenset(ret_live.get(fn_name, frozenset()) | {LINK_REG})
    if insn.opcode == "halt":
        return frozenset()
    return frozenset((live_after - insn.defs()) | insn.uses())


def liveness(function, call_live=None, ret_live=None):
    """
    Backward may-liveness to a fixed point. Without the interprocedural maps a
    call or ret keeps every register live.
    """
    labels = function.labels()
    succs = {label: function.successors(label) for label in labels}
    live_in = {label: frozenset() for label in labels}
    live_out = {label: frozenset() for label in labels}
    changed = True
    while changed:
        changed = False
        for label in reversed(labels):
            out = frozenset().union(*(live_in[s] for s in succs[label]))
            live = out
            for insn in reversed(function.block(label).instructions):
                live = transfer(insn, live, function.name, call_live, ret_live)
            if out != live_out[label] or live != live_in[label]:
                live_out[label] = out
                live_in[label] = live
                changed = True
    return Liveness(function, live_in, live_out, dict(call_live or {}), dict(ret_live or {}))


def program_liveness(program):
    """
    Interprocedural liveness. A call uses the live-in of the callee's entry; a
    ret uses the union of the registers live at every return site of its
    function. Iterated until both maps are stable.
    """
    call_live = {f.name: frozenset() for f in program.functions}
    ret_live = {f.name: frozenset() for f in program.functions}
    sites = call_sites(program)
    while True:
        result = {f.name: liveness(f, call_live, ret_live) for f in program.functions}
        new_call = {f.name: result[f.name].live_in[f.entry] for f in program.functions}
        new_ret = {f.name: frozenset() for f in program.functions}
        for fn_name, bi, ii in sites:
            f = program.function(fn_name)
            block = f.blocks[bi]
            callee = block.instructions[ii].target
            new_ret[callee] = new_ret[callee] | result[fn_name].after(block.label, ii)
        if new_call == call_live and new_ret == ret_live:
            return result
        call_live, ret_live = new_call, new_ret


# ---------------------------------------------------------------------------
# points-to

INT = "<int>"
UNKNOWN = "<unknown>"


def points_to(program):
    """
    Flow-insensitive points-to sets for registers, over the whole program.

    A set holds symbol names, INT when the register may hold a plain integer
    and UNKNOWN when it may hold an address of any kind (loaded values).
    Adding an integer to a pointer keeps the pointer's symbols.
    """
    pts = {r: {INT} for r in range(NUM_REGS)}
    changed = True
    while changed:
        changed = False
        for f in program.functions:
            for b in f.blocks:
                for insn in b.instructions:
                    new = _points_to_transfer(insn, pts)
                    if new is None:
                        continue
                    reg, values = new
                    if not values <= pts[reg]:
                        pts[reg] |= values
                        changed = True
    return {r: frozenset(v) for r, v in pts.items()}


def _points_to_transfer(insn, pts):
    if insn.opcode == "load":
        return insn.dst, {UNKNOWN}
    if insn.opcode == "call":
        return LINK_REG, {INT}
    if insn.opcode != "alu":
        return None
    if insn.op == "la":
        return insn.dst, {insn.sym}
    sources = [pts[r] for r in (insn.src, insn.src2) if r is not None]
    if insn.op in ("mov", "add", "sub"):
        values = set().union(*sources) if sources else set()
        if insn.imm is not None or not values:
            values.add(INT)
        return insn.dst, values
    # other arithmetic produces an integer, but a pointer operand makes it unknown
    if any(v - {INT} for v in sources):
        return insn.dst, {UNKNOWN}
    return insn.dst, {INT}


@dataclass(frozen=True)
class AccessSet:
    """
    What a memory access may touch: one exact word (symbol, offset), a set
    of symbols, or anything (symbols is None).
    """

    symbols: FrozenSet[str] = None
    exact: Tuple[str, int] = None

    @property
    def is_anything(self):
        return self.exact is None and self.symbols is None


def access_set(insn, pts):
    if insn.sym is not None:
        return AccessSet(frozenset([insn.sym]), (insn.sym, insn.offset))
    values = pts[insn.base]
    symbols = frozenset(values - {INT})
    if UNKNOWN in values or not symbols:
        return AccessSet()
    return AccessSet(symbols)


def may_alias(a, b):
    """
    Conservative may-alias between two access sets.
    """
    if RF_SYMBOL in ((a.exact or ("",))[0], (b.exact or ("",))[0]):
        return a.exact is not None and b.exact is not None and a.exact == b.exact
    if a.is_anything or b.is_anything:
        return True
    if a.exact is not None and b.exact is not None:
        return a.exact == b.exact
    return bool(a.symbols & b.symbols)
