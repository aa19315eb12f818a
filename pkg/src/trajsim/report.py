"""Benchmark reports: one JSON document per CLI run."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .measures import MeasureSpec
from .timing import TimingBreakdown

STATUS_OK = "ok"
STATUS_OT = "OT"


def measure_config(spec: MeasureSpec) -> dict:
    params = {}
    for name in sorted(spec.params.present()):
        v = getattr(spec.params, name)
        params[name] = [v.x, v.y] if name == "gap_point" else v
    return {"kind": spec.kind.value, "params": params}


@dataclass
class BenchReport:
    experiment: str
    dataset: dict
    runs: list[TimingBreakdown] = field(default_factory=list)
    measure: dict | None = None
    index: dict | None = None
    mode: str | None = None
    workers: dict = field(default_factory=dict)
    accuracy: dict = field(default_factory=dict)
    process_setup_s: float = 0.0
    status: str = STATUS_OK
    details: dict = field(default_factory=dict)

    @property
    def repetitions(self) -> int:
        return len(self.runs)

    @property
    def timing(self) -> TimingBreakdown:
        return TimingBreakdown.mean(self.runs) if self.runs else TimingBreakdown()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["runs"] = [r.as_dict() for r in self.runs]
        d["repetitions"] = self.repetitions
        d["timing"] = self.timing.as_dict()
        return d

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def schema() -> dict:
    return json.loads(resources.files("trajsim").joinpath("report_schema.json").read_text(encoding="utf-8"))
