import json
import os
from typing import Any


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def write_report(text: str, path: str) -> None:
    """Writes a rendered report, creating parent directories."""
    _ensure_parent(path)
    with open(path, "w", newline="") as f:
        f.write(text)


def write_json_record(data: Any, path: str) -> None:
    """Writes one JSON document, creating parent directories."""
    _ensure_parent(path)
    with open(path, "w") as f:
        json.dump(data, f, indent=2)


def sidecar_path(path: str, suffix: str = ".run.json") -> str:
    """``out/results.csv`` -> ``out/results.run.json``."""
    root, _ = os.path.splitext(path)
    return root + suffix
