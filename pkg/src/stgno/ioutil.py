"""Small file helpers: atomic writes and deterministic JSON."""

from __future__ import annotations

import json
import os
from pathlib import Path


def atomic_write_text(path: Path | str, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def dump_json(obj) -> str:
    """Deterministic JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def read_json(path: Path | str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
