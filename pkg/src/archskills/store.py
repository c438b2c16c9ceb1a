"""Small persistence helpers: JSONL files, canonical JSON, run directories."""

from __future__ import annotations

import json
import os
import time


def canonical_json_bytes(payload) -> bytes:
    """Stable JSON serialization: sorted keys, trailing newline."""
    return (json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode(
        "utf-8"
    )


def write_json(path, payload) -> None:
    with open(path, "wb") as fh:
        fh.write(canonical_json_bytes(payload))


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_jsonl(path, records, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")


def read_jsonl(path) -> list:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def new_run_dir(base, clock=time.time, name: str | None = None) -> str:
    """Create and return a fresh run directory under ``base``.

    Named from the clock unless ``name`` is given; a collision gets a
    numeric suffix so concurrent runs never share a directory.
    """
    base = os.fspath(base)
    os.makedirs(base, exist_ok=True)
    if name is None:
        stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime(clock()))
    else:
        stamp = name
    candidate = os.path.join(base, stamp)
    suffix = 0
    while True:
        try:
            os.makedirs(candidate)
            return candidate
        except FileExistsError:
            suffix += 1
            candidate = os.path.join(base, f"{stamp}-{suffix}")
