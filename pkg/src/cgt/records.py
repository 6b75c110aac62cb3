"""Machine-readable run records and the fairness CSV."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


@dataclass
class MetricsRecord:
    run_id: str
    task: str
    dataset: str
    seed: int
    config: dict
    metrics: dict
    loss_curves: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0
    variant: str = "full"

    @staticmethod
    def make_id(task: str, dataset: str, config: dict, variant: str = "full") -> str:
        blob = json.dumps({"task": task, "dataset": dataset, "config": config, "variant": variant}, sort_keys=True)
        return hashlib.sha1(blob.encode()).hexdigest()[:12]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> MetricsRecord:
        return cls(**json.loads(text))

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"run_{self.run_id}.json"
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        fairness = self.metrics.get("fairness")
        if fairness:
            lines = ["threshold,error,bias"]
            lines += [f"{r['threshold']},{r['error']:.4f},{r['bias']:.4f}" for r in fairness["rows"]]
            with open(out / f"fairness_{self.run_id}.csv", "w", encoding="utf-8", newline="\n") as fh:
                fh.write("\n".join(lines) + "\n")
        return path

    @classmethod
    def read(cls, path) -> MetricsRecord:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))
