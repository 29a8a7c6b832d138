"""Run artifact persistence.

Each run gets its own directory under the data root (env var
DREAMHONE_DATA_DIR, default ./dreamhone_data) holding config, inputs,
outputs and the loss trajectory. A JSONL index at the root lists
completed runs so they survive restarts.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import secrets
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import InputError

__all__ = ["RunRecord", "RunStore", "data_root", "sha256_hex", "utc_timestamp"]

INDEX_NAME = "index.jsonl"
DEFAULT_DATA_DIR = "dreamhone_data"


def data_root(override=None) -> Path:
    if override is not None:
        return Path(override)
    return Path(os.environ.get("DREAMHONE_DATA_DIR", DEFAULT_DATA_DIR))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class RunRecord:
    """Completed-run metadata, one JSON line in the index."""

    run_id: str
    kind: str
    config: dict
    input_hashes: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    trajectory: str = ""
    created_at: str = ""
    finished_at: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        try:
            return cls(**json.loads(line))
        except (json.JSONDecodeError, TypeError) as e:
            raise InputError(f"malformed run record: {e}") from e


def utc_timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()) + "Z"


class RunStore:
    """Filesystem store; append-only index, safe within one process."""

    def __init__(self, root=None):
        self.root = data_root(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    @property
    def index_path(self) -> Path:
        return self.root / INDEX_NAME

    def run_dir(self, run_id: str) -> Path:
        return self.root / run_id

    def create_run(self, kind: str) -> tuple:
        """Allocate a fresh id and directory. Returns (run_id, path, created_at)."""
        while True:
            run_id = f"{time.strftime('%Y%m%dT%H%M%S', time.gmtime())}-{kind}-{secrets.token_hex(4)}"
            path = self.root / run_id
            try:
                path.mkdir(parents=True)
            except FileExistsError:
                continue  # same second, same token: roll again
            return run_id, path, utc_timestamp()

    def write_input(self, run_id: str, name: str, data: bytes) -> str:
        """Persist raw input bytes; returns their sha256."""
        (self.run_dir(run_id) / name).write_bytes(data)
        return sha256_hex(data)

    def write_trajectory(self, run_id: str, rows) -> str:
        """rows: iterable of (iteration, loss, phase). Returns relative path."""
        rel = f"{run_id}/trajectory.csv"
        write_trajectory_csv(self.root / rel, rows)
        return rel

    def finalize(self, record: RunRecord) -> None:
        """Write the record into its run dir and append it to the index."""
        (self.run_dir(record.run_id) / "record.json").write_text(record.to_json() + "\n")
        with self._lock:
            with open(self.index_path, "a") as fh:
                fh.write(record.to_json() + "\n")

    def list_runs(self) -> list:
        if not self.index_path.exists():
            return []
        records = []
        for line in self.index_path.read_text().splitlines():
            if line.strip():
                records.append(RunRecord.from_json(line))
        return records

    def verify_inputs(self, record: RunRecord) -> bool:
        """Re-hash the persisted inputs against the recorded digests."""
        for name, digest in record.input_hashes.items():
            path = self.run_dir(record.run_id) / name
            if not path.exists() or sha256_hex(path.read_bytes()) != digest:
                return False
        return True


def write_trajectory_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "phase"])
        for iteration, loss, phase in rows:
            writer.writerow([iteration, float(loss), phase])


def read_trajectory_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["iteration", "loss", "phase"]:
            raise InputError(f"unexpected trajectory header in {path}: {header}")
        return [(int(r[0]), float(r[1]), int(r[2])) for r in reader]
