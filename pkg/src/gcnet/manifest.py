"""Run manifests: a digest of everything that determines a run's output.

Each CLI command writes one manifest next to its outputs.  The manifest
carries the tool version, the command name, the root seed, a hash of the
fully-resolved configuration, and a digest of every input file; its own
digest is a hash over all of those, so it changes exactly when some input
changes.  No timestamps: repeated runs with identical inputs produce
byte-identical manifests.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from . import __version__
from .errors import ConfigError

TOOL_NAME = "gcnet"


def _coerce(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Deterministic serialization: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      default=_coerce)


def content_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def file_digest(path) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def build_manifest(command: str, config_doc: dict, seed: int,
                   inputs: dict | None = None) -> dict:
    """Assemble the manifest mapping, digest included."""
    if not command:
        raise ConfigError("manifest needs a command name")
    body = {
        "tool": TOOL_NAME,
        "version": __version__,
        "command": command,
        "seed": int(seed),
        "config_sha256": content_hash(config_doc),
        "inputs": {str(name): file_digest(path)
                   for name, path in (inputs or {}).items()},
    }
    body["digest"] = content_hash(body)
    return body


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
