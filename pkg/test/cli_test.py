import contextlib
import csv
import io
import json
import os
import tempfile
import unittest
from pathlib import Path

from specsim.__main__ import main
from specsim.commands import EXIT_COUNTEREXAMPLE, EXIT_ERROR, EXIT_OK
from specsim.machine import CATEGORIES

EXAMPLE = Path(__file__).resolve().parent.parent / "example"


def example(name):
    return str(EXAMPLE / name)


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


class CliTest(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()

    def path(self, name):
        return os.path.join(self.tmp, name)

    def test_compile(self):
        code, out, _ = run(["compile", example("sum_loop.ir"), "--json", self.path("regions.json")])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("#region ", out)
        self.assertNotIn("# region", out)
        self.assertIn("!ckpt", out)
        with open(self.path("regions.json")) as f:
            report = json.load(f)
        self.assertEqual(report["threshold"], 20)

    def test_run_writes_reports(self):
        argv = [
            "run",
            example("increment.ir"),
            "--json",
            self.path("result.json"),
            "--energy-csv",
            self.path("energy.csv"),
            "--events",
            self.path("events.jsonl"),
            "--snapshot",
            self.path("final.nvm"),
        ]
        code, out, _ = run(argv)
        self.assertEqual(code, EXIT_OK)
        self.assertIn("consistent", out)
        with open(self.path("result.json")) as f:
            result = json.load(f)
        self.assertEqual(result["output"], [1])
        self.assertTrue(result["consistent"])
        with open(self.path("energy.csv")) as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ["category", "pj"])
        self.assertEqual([r[0] for r in rows[1:]], list(CATEGORIES))
        self.assertAlmostEqual(sum(float(r[1]) for r in rows[1:]), result["energy_total"])
        with open(self.path("events.jsonl")) as f:
            events = [json.loads(line) for line in f]
        self.assertEqual(events[-1]["event"], "done")
        self.assertTrue(os.path.getsize(self.path("final.nvm")) > 0)

    def test_run_naive(self):
        code, out, _ = run(["run", "--naive", example("increment.ir")])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("naive", out)

    def test_verify(self):
        code, out, _ = run(["verify", example("increment.ir"), example("sum_loop.ir"), "--variant", "two-bit/ilp, one-bit/no-ilp"])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("one-bit/no-ilp", out)

    def test_verify_finds_counterexample(self):
        code, _, err = run(["verify", "--mutate", "--no-double", example("increment.ir")])
        self.assertEqual(code, EXIT_COUNTEREXAMPLE)
        self.assertIn("out[0]", err)

    def test_gen_trace_and_compare(self):
        trace = self.path("trace.csv")
        code, out, _ = run(["gen-trace", "--seed", "3", "--duration", "3", "6", trace])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("1 outages", out)
        code, out, _ = run(["compare", "--trace", trace, example("sum_loop.ir")])
        self.assertEqual(code, EXIT_OK)
        rows = list(csv.reader(io.StringIO(out)))
        self.assertEqual(rows[0][0], "mode")
        self.assertEqual([r[0] for r in rows[1:]], ["speculative", "nvp"])

    def reports(self, out_dir):
        os.makedirs(out_dir)
        trace = os.path.join(out_dir, "trace.csv")
        self.assertEqual(run(["gen-trace", "--seed", "3", "--duration", "3", "6", trace])[0], EXIT_OK)
        listing = os.path.join(out_dir, "listing.ir")
        regions = os.path.join(out_dir, "regions.json")
        self.assertEqual(run(["compile", example("war_loop.ir"), "-o", listing, "--json", regions])[0], EXIT_OK)
        files = [listing, regions]
        for name in ("result.json", "energy.csv", "events.jsonl", "summary.txt"):
            files.append(os.path.join(out_dir, name))
        argv = ["run", "--trace", trace, example("war_loop.ir"), "--json", files[2], "--energy-csv", files[3], "--events", files[4], "-o", files[5]]
        self.assertEqual(run(argv)[0], EXIT_OK)
        files.append(os.path.join(out_dir, "compare.csv"))
        self.assertEqual(run(["compare", "--trace", trace, example("war_loop.ir"), "-o", files[6]])[0], EXIT_OK)
        contents = []
        for name in files + [trace]:
            with open(name, "rb") as f:
                contents.append(f.read())
        return contents

    def test_reports_are_reproducible(self):
        first = self.reports(self.path("first"))
        second = self.reports(self.path("second"))
        self.assertTrue(all(first))
        self.assertEqual(first, second)

    def test_sweep(self):
        code, _, _ = run(["sweep", example("war_loop.ir"), "--dma-factors", "1,4", "--write-ratios", "1,6", "-o", self.path("sweep.csv")])
        self.assertEqual(code, EXIT_OK)
        with open(self.path("sweep.csv")) as f:
            rows = list(csv.reader(f))
        self.assertEqual(len(rows), 5)
        self.assertEqual(rows[0][:2], ["dma_factor", "write_read_ratio"])

    def test_config_file(self):
        cfg = self.path("sim.cfg")
        with open(cfg, "w") as f:
            f.write("sb_size = 48\n")
        code, out, _ = run(["compile", "--config", cfg, example("increment.ir"), "--json", self.path("r.json")])
        self.assertEqual(code, EXIT_OK)
        with open(self.path("r.json")) as f:
            self.assertEqual(json.load(f)["threshold"], 24)

    def test_errors(self):
        code, _, err = run(["run", self.path("missing.ir")])
        self.assertEqual(code, EXIT_ERROR)
        self.assertIn("error:", err)
        bad = self.path("bad.ir")
        with open(bad, "w") as f:
            f.write("fn main {\nL0:\n  frobnicate r1\n}\n")
        code, _, err = run(["compile", bad])
        self.assertEqual(code, EXIT_ERROR)
        self.assertIn("line 3", err)
        code, _, err = run(["run", "--sb-size", "7", example("increment.ir")])
        self.assertEqual(code, EXIT_ERROR)


if __name__ == "__main__":
    unittest.main()
