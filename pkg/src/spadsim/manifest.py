"""Run manifests: what produced an output directory, with content digests."""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .formats import write_json

MANIFEST_NAME = "manifest.json"


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list
    seed: int | None
    out_dir: str
    config_path: str | None = None
    scene_path: str | None = None
    tool_version: str = __version__
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: dict = field(default_factory=dict)  # name relative to out_dir -> sha256

    def add_input(self, path):
        if path is not None:
            self.inputs[str(Path(path).resolve())] = sha256_file(path)

    def add_outputs(self, names):
        for name in sorted(names):
            self.outputs[name] = sha256_file(Path(self.out_dir) / name)

    def write(self):
        path = Path(self.out_dir) / MANIFEST_NAME
        write_json(path, asdict(self))
        return path

    @classmethod
    def load(cls, out_dir):
        doc = json.loads((Path(out_dir) / MANIFEST_NAME).read_text())
        return cls(**doc)


def verify(out_dir):
    """Recompute every digest; returns a list of problems (empty when all match)."""
    m = RunManifest.load(out_dir)
    problems = []
    for path, digest in m.inputs.items():
        p = Path(path)
        if not p.exists():
            problems.append(f"missing input {path}")
        elif sha256_file(p) != digest:
            problems.append(f"input changed: {path}")
    for name, digest in m.outputs.items():
        p = Path(out_dir) / name
        if not p.exists():
            problems.append(f"missing output {name}")
        elif sha256_file(p) != digest:
            problems.append(f"output changed: {name}")
    return problems
