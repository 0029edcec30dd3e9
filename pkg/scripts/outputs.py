"""Small CSV/JSON helpers shared by the experiment scripts."""

import csv
import json
from pathlib import Path


def write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {path}")


def write_config(path: Path, config) -> None:
    path.write_text(json.dumps(config.to_dict(), indent=2), encoding="utf-8")
