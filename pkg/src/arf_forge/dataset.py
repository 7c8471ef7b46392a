"""On-disk benchmark layout: manifest, content hashing, and loading.

A benchmark directory looks like:

    benchmark/
      manifest.json          written last; its presence marks a complete build
      questions.jsonl
      series/<sid>.csv
      keys/<sid>.key.json    ground truth; consumed only by integrity checks
      keys/events.json       cross-series incident events
      images/<qid>.<k>.png   written by the render step

The manifest pins the generator config, a hash of that config, and a
sha256 per data file, so a benchmark can be verified byte-for-byte and
regenerated reproducibly. ``Benchmark.key`` is the single code path
that reads answer keys; evaluation code must not call it except for
the answer-key oracle baseline.
"""

from __future__ import annotations

import hashlib
import json
import os
from datetime import datetime, timezone

from .anomalies import AnomalyRecord, IncidentEvent, load_events, load_key
from .errors import ConfigError, IntegrityError
from .questions import Question, read_questions
from .synth import TimeSeries, read_series_csv

MANIFEST_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def relative_files(root: str) -> list[str]:
    """All benchmark data files under root, manifest excluded, as
    sorted relative paths with forward slashes."""
    out = []
    for dirpath, _dirnames, filenames in os.walk(root):
        for name in filenames:
            rel = os.path.relpath(os.path.join(dirpath, name), root)
            rel = rel.replace(os.sep, "/")
            if rel == MANIFEST_NAME:
                continue
            out.append(rel)
    return sorted(out)


def build_manifest(root: str, config: dict, counts: dict) -> dict:
    files = {rel: sha256_file(os.path.join(root, rel)) for rel in relative_files(root)}
    return {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "created_at": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "config": config,
        "config_hash": config_hash(config),
        "counts": counts,
        "files": files,
    }


def write_manifest(root: str, manifest: dict) -> str:
    path = os.path.join(root, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


class Benchmark:
    """Read access to a generated benchmark directory."""

    def __init__(self, root: str, manifest: dict):
        self.root = root
        self.manifest = manifest
        self._questions: list[Question] | None = None
        self._series_cache: dict[str, TimeSeries] = {}

    @classmethod
    def load(cls, root: str) -> "Benchmark":
        path = os.path.join(root, MANIFEST_NAME)
        if not os.path.isfile(path):
            raise ConfigError(f"{root}: no {MANIFEST_NAME}; not a finished benchmark")
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
        if manifest.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise ConfigError(f"unsupported manifest schema {manifest.get('schema_version')!r}")
        return cls(root, manifest)

    # -- paths ---------------------------------------------------------

    def questions_path(self) -> str:
        return os.path.join(self.root, "questions.jsonl")

    def series_path(self, series_id: str) -> str:
        return os.path.join(self.root, "series", f"{series_id}.csv")

    def key_path(self, series_id: str) -> str:
        return os.path.join(self.root, "keys", f"{series_id}.key.json")

    def events_path(self) -> str:
        return os.path.join(self.root, "keys", "events.json")

    def images_dir(self) -> str:
        return os.path.join(self.root, "images")

    def image_paths(self, question_id: str, n_images: int) -> list[str]:
        return [
            os.path.join(self.images_dir(), f"{question_id}.{k}.png")
            for k in range(n_images)
        ]

    # -- content -------------------------------------------------------

    def questions(self) -> list[Question]:
        if self._questions is None:
            self._questions = read_questions(self.questions_path())
        return self._questions

    def series(self, series_id: str) -> TimeSeries:
        if series_id not in self._series_cache:
            self._series_cache[series_id] = read_series_csv(self.series_path(series_id))
        return self._series_cache[series_id]

    def series_ids(self) -> list[str]:
        sdir = os.path.join(self.root, "series")
        return sorted(os.path.splitext(n)[0] for n in os.listdir(sdir) if n.endswith(".csv"))

    def key(self, series_id: str) -> list[AnomalyRecord]:
        """Ground-truth records for one series. Answer-key material:
        only integrity checks and the oracle baseline may call this."""
        stored_id, records = load_key(self.key_path(series_id))
        if stored_id != series_id:
            raise IntegrityError(f"key file for {series_id} claims series {stored_id}")
        return records

    def events(self) -> list[IncidentEvent]:
        path = self.events_path()
        if not os.path.isfile(path):
            return []
        return load_events(path)

    # -- verification ----------------------------------------------------

    def verify_files(self) -> None:
        """Check every manifest-listed file exists and hashes match.
        Raises IntegrityError on the first mismatch."""
        for rel, expected in sorted(self.manifest.get("files", {}).items()):
            path = os.path.join(self.root, rel)
            if not os.path.isfile(path):
                raise IntegrityError(f"missing file {rel}")
            actual = sha256_file(path)
            if actual != expected:
                raise IntegrityError(f"hash mismatch for {rel}: {actual} != {expected}")
        declared = config_hash(self.manifest.get("config", {}))
        if declared != self.manifest.get("config_hash"):
            raise IntegrityError("manifest config_hash does not match embedded config")
