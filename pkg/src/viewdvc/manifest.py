"""Run manifests: what a CLI invocation read, wrote and was configured with."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

MANIFEST_NAME = "manifest.json"


def blob_hash(path) -> str:
    """Git blob id of a file (sha1 over ``blob <size>\\0`` + content)."""
    data = Path(path).read_bytes()
    h = hashlib.sha1(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def tree_hash(path) -> str:
    """Content id of a file, or of a directory from its files' relative paths and blob ids."""
    path = Path(path)
    if path.is_file():
        return blob_hash(path)
    h = hashlib.sha1()
    for f in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(f"{f.relative_to(path).as_posix()}\0{blob_hash(f)}\n".encode())
    return h.hexdigest()


def expand_outputs(paths, root) -> dict[str, str]:
    """Blob ids of every written file, keyed by path relative to ``root``."""
    root = Path(root)
    files = set()
    for p in map(Path, paths):
        if p.is_dir():
            files.update(f for f in p.rglob("*") if f.is_file())
        elif p.is_file():
            files.add(p)
    out = {}
    for f in sorted(files):
        if f.name == MANIFEST_NAME:
            continue
        try:
            key = f.resolve().relative_to(root.resolve()).as_posix()
        except ValueError:
            key = str(f.resolve())
        out[key] = blob_hash(f)
    return out


@dataclass
class RunManifest:
    command: str
    argv: list
    cwd: str
    config: dict
    seeds: list
    inputs: dict = field(default_factory=dict)      # path as given → content id
    outputs: dict = field(default_factory=dict)     # path relative to the output dir → blob id
    started_utc: str = ""
    wall_clock_s: float = 0.0
    version: str = ""

    def save(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True, default=str))
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        return cls(**json.loads(path.read_text()))


def hash_inputs(paths) -> dict[str, str]:
    return {str(p): tree_hash(p) for p in paths if p is not None and os.path.exists(p)}
