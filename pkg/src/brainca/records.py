"""Per-run outcome records and their JSON-lines storage."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional


@dataclass
class RunRecord:
    task: str
    condition: str
    seed: int
    success: bool
    episodes_to_success: int          # censoring horizon (max_episodes) when not successful
    episodes_run: int
    final_accuracy: Optional[float] = None
    best_eval_reward: Optional[float] = None
    config_digest: str = ""
    error: Optional[str] = None
    config: dict = field(default_factory=dict)
    wall_time: float = field(default=0.0, compare=False)

    @property
    def censored(self) -> bool:
        return not self.success

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        return cls(**json.loads(line))


def write_records(path, records: Iterable[RunRecord]) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(r.to_json() + "\n")


def append_record(path, record: RunRecord) -> None:
    with open(path, "a") as f:
        f.write(record.to_json() + "\n")


def read_records(path) -> List[RunRecord]:
    path = Path(path)
    if not path.exists():
        return []
    return [RunRecord.from_json(ln) for ln in path.read_text().splitlines() if ln.strip()]
