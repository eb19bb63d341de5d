"""On-disk datasets (an index CSV of LLRW frames and PNG targets) and run
manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

from .errors import FormatError, InvalidArgumentError
from .images import read_image
from .raw import read_llrw
from .train import TrainingPair

INDEX_NAME = "index.csv"
INDEX_COLUMNS = ("name", "raw", "target", "ratio")


@dataclass
class IndexEntry:
    name: str
    raw: str
    target: str
    ratio: float


def write_index(entries, directory) -> Path:
    path = Path(directory) / INDEX_NAME
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(INDEX_COLUMNS)
        for e in entries:
            w.writerow([e.name, e.raw, e.target, repr(float(e.ratio))])
    return path


def _index_path(path) -> Path:
    path = Path(path)
    return path / INDEX_NAME if path.is_dir() else path


def read_index(path) -> list[IndexEntry]:
    path = _index_path(path)
    if not path.is_file():
        raise InvalidArgumentError(f"no dataset index at {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != INDEX_COLUMNS:
            raise FormatError(f"{path}: expected columns {','.join(INDEX_COLUMNS)}")
        try:
            return [IndexEntry(r["name"], r["raw"], r["target"], float(r["ratio"])) for r in reader]
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None


def load_dataset(path) -> list[TrainingPair]:
    """Read every pair listed in an index. Relative paths resolve against the
    index's directory."""
    index = _index_path(path)
    root = index.parent
    pairs = []
    for e in read_index(index):
        raw = read_llrw(root / e.raw)
        target = read_image(root / e.target)
        pairs.append(TrainingPair(raw, target, e.ratio))
    if not pairs:
        raise InvalidArgumentError(f"{index} lists no pairs")
    return pairs


def dataset_fingerprint(path) -> str:
    """SHA-256 over the index and every referenced file, in index order."""
    index = _index_path(path)
    h = hashlib.sha256(index.read_bytes())
    for e in read_index(index):
        for rel in (e.raw, e.target):
            h.update((index.parent / rel).read_bytes())
    return h.hexdigest()


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def tool_version() -> str:
    try:
        return metadata.version("lowlight")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class RunManifest:
    """Everything needed to rerun a command and the artifacts it produced.

    The hash covers configuration, seed, dataset and version, not the
    timestamps or artifact list, so a rerun gets the same hash.
    """

    command: str
    config: dict
    seed: int
    dataset_sha256: str | None
    version: str = field(default_factory=tool_version)
    started: float = field(default_factory=time.time)
    finished: float | None = None
    artifacts: dict[str, str] = field(default_factory=dict)

    def identity(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "dataset_sha256": self.dataset_sha256,
            "version": self.version,
        }

    @property
    def hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def add_artifact(self, path) -> None:
        """Record ``path`` and drop a ``<path>.manifest`` sidecar holding the hash."""
        path = Path(path)
        self.artifacts[path.name] = file_sha256(path)
        path.with_name(path.name + ".manifest").write_text(self.hash + "\n")

    def to_json(self) -> str:
        body = dict(self.identity(), started=self.started, finished=self.finished, artifacts=self.artifacts)
        body["manifest_sha256"] = self.hash
        return json.dumps(body, indent=2, sort_keys=True, default=str)

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        body = json.loads(Path(path).read_text())
        m = cls(
            body["command"], body["config"], body["seed"], body["dataset_sha256"], body["version"],
            body["started"], body["finished"], body.get("artifacts", {}),
        )
        if body.get("manifest_sha256") != m.hash:
            raise FormatError(f"{path}: manifest hash does not match its contents")
        return m
