"""
Result records and the report writers (JSON, CSV, JSON lines and
tabulate tables).
"""
import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

from tabulate import tabulate

from .machine import CATEGORIES

COMPLETED = "completed"
OUTAGE_LIMIT = "outage-limit"
TRACE_ENDED = "trace-ended"


@dataclass
class SimResult:
    mode: str
    status: str
    completion_us: float = 0.0
    on_us: float = 0.0
    off_us: float = 0.0
    instructions: int = 0
    reexecuted: int = 0
    committed: int = 0
    outages: int = 0
    ilp_efficiency: float = 1.0
    stall_cycles: int = 0
    energy: dict = field(default_factory=lambda: dict.fromkeys(CATEGORIES, 0.0))
    bypass: dict = field(default_factory=dict)
    regions: int = 0
    watchdog_checkpoints: int = 0
    output: Tuple[int, ...] = ()
    consistent: Optional[bool] = None
    progress: List[int] = field(default_factory=list)
    mode_changes: List[dict] = field(default_factory=list)

    @property
    def completed(self):
        return self.status == COMPLETED

    @property
    def energy_total(self):
        return sum(self.energy.values())

    def to_dict(self):
        d = asdict(self)
        d["output"] = list(self.output)
        d["energy_total"] = self.energy_total
        return d

    def summary_rows(self):
        return [
            ["mode", self.mode],
            ["status", self.status],
            ["completion (us)", round(self.completion_us, 3)],
            ["on / off (us)", str(round(self.on_us, 3)) + " / " + str(round(self.off_us, 3))],
            ["instructions", self.instructions],
            ["re-executed", self.reexecuted],
            ["outages", self.outages],
            ["ILP efficiency", round(self.ilp_efficiency, 4)],
            ["stall cycles", self.stall_cycles],
            ["watchdog checkpoints", self.watchdog_checkpoints],
            ["energy (pJ)", round(self.energy_total, 3)],
            ["consistent", self.consistent],
        ]


@dataclass
class Counterexample:
    variant: str
    point: str
    diff: List[str]

    def to_dict(self):
        return asdict(self)


@dataclass
class VerifyReport:
    program: str
    variant: str
    injection_points: int = 0
    images: int = 0
    double_failure_points: int = 0
    failures: int = 0
    bypass_violations: int = 0
    counterexamples: List[Counterexample] = field(default_factory=list)

    @property
    def consistent(self):
        return self.failures == 0

    @property
    def first_counterexample(self):
        return self.counterexamples[0] if self.counterexamples else None

    def to_dict(self):
        return {
            "program": self.program,
            "variant": self.variant,
            "injection_points": self.injection_points,
            "images": self.images,
            "double_failure_points": self.double_failure_points,
            "failures": self.failures,
            "bypass_violations": self.bypass_violations,
            "consistent": self.consistent,
            "first_counterexample": self.first_counterexample.to_dict() if self.counterexamples else None,
        }


def dumps_json(data):
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def write_json(path, data):
    with open(path, "w") as f:
        f.write(dumps_json(data))


def write_jsonl(path, records):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_csv(path, header, rows):
    with open(path, "w") as f:
        f.write(csv_text(header, rows))


def energy_rows(energy):
    return [[c, repr(float(energy.get(c, 0.0)))] for c in CATEGORIES]


def write_energy_csv(path, energy):
    write_csv(path, ["category", "pj"], energy_rows(energy))


def table(rows, headers):
    return tabulate(rows, headers=headers, tablefmt="grid")


def region_table(regions):
    rows = [
        [r.id, r.function, r.entry, r.kind, len(r.blocks), r.store_count, r.checkpoint_stores, ",".join("r" + str(x) for x in sorted(r.live_out))]
        for r in regions
    ]
    return table(rows, ["id", "fn", "entry", "kind", "blocks", "stores", "ckpt", "live out"])


def summary_table(result):
    return table(result.summary_rows(), ["field", "value"])


def verify_table(reports):
    rows = [[r.variant, r.injection_points, r.images, r.double_failure_points, r.failures] for r in reports]
    return table(rows, ["variant", "points", "images", "double", "failures"])
