"""JSONL reading/writing shared by the CLI subcommands.

Output files start with one ``{"_meta": {...}}`` header line recording tool
version, subcommand, configuration and seed; readers skip it.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Iterator

from .errors import InputFormatError

META_KEY = "_meta"


def iter_jsonl(path: str | Path, allowed_keys: set[str] | None = None,
               required: tuple[str, ...] = ()) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputFormatError(f"malformed JSON ({exc.msg})", str(path), lineno) from None
            if not isinstance(rec, dict):
                raise InputFormatError("expected a JSON object", str(path), lineno)
            if META_KEY in rec:
                continue
            if allowed_keys is not None and set(rec) - allowed_keys:
                raise InputFormatError(f"unknown keys {sorted(set(rec) - allowed_keys)}", str(path), lineno)
            for key in required:
                if key not in rec:
                    raise InputFormatError(f"missing required key {key!r}", str(path), lineno)
            yield rec


def read_jsonl(path: str | Path, allowed_keys: set[str] | None = None, required: tuple[str, ...] = ()) -> list[dict]:
    return list(iter_jsonl(path, allowed_keys, required))


def read_meta(path: str | Path) -> dict | None:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        rec = json.loads(first)
    except json.JSONDecodeError:
        return None
    return rec.get(META_KEY) if isinstance(rec, dict) else None


def finite_or_none(x: float) -> float | None:
    return x if math.isfinite(x) else None


def dumps(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, ensure_ascii=False, allow_nan=False, separators=(",", ":"))


def write_jsonl(path: str | Path, records: Iterable[dict], meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if meta is not None:
            fh.write(dumps({META_KEY: meta}) + "\n")
        for rec in records:
            fh.write(dumps(rec) + "\n")


def qid_sort_key(qid) -> tuple:
    if isinstance(qid, int) or (isinstance(qid, str) and qid.isdigit()):
        return (0, int(qid), str(qid))
    return (1, 0, str(qid))
