import unittest
from pathlib import Path

from specsim.errors import BudgetExceeded, ParseError, SimulationError, ValidationError
from specsim.ir import alu_eval, format_program, interpret_reference, parse_program, wrap32

EXAMPLE = Path(__file__).resolve().parent.parent / "example"


def load(name):
    return parse_program((EXAMPLE / name).read_text())


class ParserTest(unittest.TestCase):
    def test_minimal_program(self):
        p = parse_program("data out = [0]\nfn main { L0: store r1, out, 0; halt }")
        self.assertEqual(len(p.functions), 1)
        self.assertEqual(len(p.functions[0].blocks), 1)
        self.assertEqual(p.entry, "main")

    def test_increment_is_one_block_of_four(self):
        p = load("increment.ir")
        blocks = p.function("main").blocks
        self.assertEqual(len(blocks), 1)
        self.assertEqual([i.opcode for i in blocks[0].instructions], ["load", "alu", "store", "halt"])

    def test_undefined_label(self):
        with self.assertRaisesRegex(ValidationError, "undefined label"):
            parse_program("fn main {\nL0:\n  jump nowhere\n}")

    def test_undefined_symbol(self):
        with self.assertRaisesRegex(ValidationError, "undefined symbol"):
            parse_program("fn main { L0: store r1, missing, 0; halt }")

    def test_register_out_of_range(self):
        with self.assertRaises(ParseError) as ctx:
            parse_program("data out = [0]\nfn main {\nL0:\n  mov r16, 1\n  halt\n}")
        self.assertEqual(ctx.exception.line, 4)

    def test_instruction_after_terminator(self):
        with self.assertRaisesRegex(ParseError, "after terminator"):
            parse_program("fn main { L0: halt; halt }")

    def test_recursion_rejected(self):
        text = "fn main { L0: call f; L1: halt }\nfn f { F0: call f; F1: ret }"
        with self.assertRaisesRegex(ValidationError, "recursion"):
            parse_program(text)

    def test_falling_off_function(self):
        with self.assertRaisesRegex(ValidationError, "falls off"):
            parse_program("fn main { L0: mov r1, 1 }")

    def test_data_repetition(self):
        p = parse_program("data buf = [7] * 3\nfn main { L0: halt }")
        self.assertEqual(p.data[0].values, (7, 7, 7))

    def test_register_address_and_suffixes(self):
        p = parse_program("data a = [1, 2]\nfn main { L0: la r1, a; load r2, [r1+1] !bypass; halt }")
        load_insn = p.function("main").blocks[0].instructions[1]
        self.assertEqual((load_insn.base, load_insn.offset, load_insn.bypass), (1, 1, True))

    def test_bypass_only_on_loads(self):
        with self.assertRaisesRegex(ParseError, "only applies to loads"):
            parse_program("data out = [0]\nfn main { L0: store r1, out !bypass; halt }")

    def test_printer_output_parses_to_same_program(self):
        for name in ("bubble_sort.ir", "nested_calls.ir", "store_dense.ir"):
            p = load(name)
            text = format_program(p)
            self.assertEqual(parse_program(text), p)
            self.assertEqual(format_program(parse_program(text)), text)


class InterpreterTest(unittest.TestCase):
    def test_increment(self):
        self.assertEqual(interpret_reference(load("increment.ir")).output, (1,))

    def test_halt_only_leaves_memory(self):
        p = parse_program("data a = [4, 5, 6]\nfn main { L0: halt }")
        golden = interpret_reference(p)
        self.assertEqual(golden.memory, (4, 5, 6))
        self.assertEqual(golden.instructions, 1)

    def test_corpus_outputs(self):
        expected = {
            "sum_loop.ir": (55,),
            "war_loop.ir": (24,),
            "nested_calls.ir": (12, 6),
            "store_dense.ir": (30,),
            "disjoint_bypass.ir": (31,),
            "memcpy.ir": (10, 20, 30, 40, 50, 60),
            "bubble_sort.ir": (1, 2, 3, 4),
            "fib.ir": (0, 1, 1, 2, 3, 5, 8, 13, 21, 34),
            "dot_product.ir": (130,),
        }
        for name, output in expected.items():
            with self.subTest(program=name):
                self.assertEqual(interpret_reference(load(name)).output, output)

    def test_deterministic(self):
        p = load("bubble_sort.ir")
        self.assertEqual(interpret_reference(p), interpret_reference(p))

    def test_budget(self):
        p = parse_program("fn main { L0: jump L0 }")
        with self.assertRaises(BudgetExceeded):
            interpret_reference(p, budget=100)

    def test_invalid_memory_access(self):
        p = parse_program("data a = [0]\nfn main { L0: mov r1, 9; load r2, [r1]; halt }")
        with self.assertRaisesRegex(SimulationError, "invalid memory access"):
            interpret_reference(p)

    def test_mov_from_register(self):
        p = parse_program("data out = [0]\nfn main { L0: mov r1, 9; mov r2, r1; store r2, out; halt }")
        self.assertEqual(interpret_reference(p).output, (9,))


class AluTest(unittest.TestCase):
    def test_wraps_to_32_bits(self):
        self.assertEqual(wrap32(2 ** 31), -(2 ** 31))
        self.assertEqual(alu_eval("add", 2 ** 31 - 1, 1), -(2 ** 31))

    def test_division_truncates_toward_zero(self):
        self.assertEqual(alu_eval("div", -7, 2), -3)
        self.assertEqual(alu_eval("rem", -7, 2), -1)

    def test_division_by_zero(self):
        with self.assertRaises(SimulationError):
            alu_eval("div", 1, 0)


if __name__ == "__main__":
    unittest.main()
