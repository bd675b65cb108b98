"""Run manifests and run-directory management for the CLI.

Every subcommand run lands in a directory named after a hash of its command,
resolved configuration, and input checksums, and leaves behind a
manifest.json listing every produced artifact with its checksum.  Manifests
are deterministic apart from the created_at timestamp.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

MANIFEST_NAME = "manifest.json"
OUT_ENV_VAR = "HFGRAPH_OUT"
DEFAULT_OUT_ROOT = "runs"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(command: str, config: dict, input_checksums: dict[str, str]) -> str:
    """Stable short hash identifying a run; timestamps never participate."""
    payload = json.dumps(
        {"command": command, "config": config, "inputs": input_checksums},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def resolve_out_root(explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get(OUT_ENV_VAR)
    if env:
        return Path(env)
    return Path(DEFAULT_OUT_ROOT)


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: list[int] = field(default_factory=list)
    inputs: dict[str, dict] = field(default_factory=dict)
    artifacts: dict[str, dict] = field(default_factory=dict)
    created_at: str = ""

    def add_input(self, name: str, path) -> None:
        self.inputs[name] = {"path": str(path), "sha256": sha256_file(path)}

    def add_artifact(self, name: str, path) -> None:
        self.artifacts[name] = {"path": str(path), "sha256": sha256_file(path)}

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "artifacts": self.artifacts,
            "created_at": self.created_at,
        }

    def save(self, run_dir) -> Path:
        self.created_at = datetime.now(timezone.utc).isoformat()
        path = Path(run_dir) / MANIFEST_NAME
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def load_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def manifest_fingerprint(manifest: dict) -> str:
    """Hash of a manifest with volatile fields (timestamps, paths) removed.

    Two runs of the same pipeline in different output roots agree on this
    value exactly when their artifacts are byte-identical.
    """
    scrubbed = {
        "command": manifest["command"],
        "config": {k: v for k, v in manifest["config"].items() if k != "out"},
        "seeds": manifest["seeds"],
        "inputs": {k: v["sha256"] for k, v in manifest["inputs"].items()},
        "artifacts": {k: v["sha256"] for k, v in manifest["artifacts"].items()},
    }
    payload = json.dumps(scrubbed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def prepare_run_dir(out_root: Path, command: str, run_hash: str, force: bool) -> Path:
    """Create (or reuse with --force) the run directory for this invocation."""
    run_dir = Path(out_root) / f"{command}-{run_hash}"
    if run_dir.exists() and (run_dir / MANIFEST_NAME).exists():
        if not force:
            raise FileExistsError(
                f"run directory {run_dir} already has results; pass --force to overwrite"
            )
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def parse_config_file(path) -> dict[str, str]:
    """Flat key = value config text; '#' starts a comment, quotes optional."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            key = key.strip().replace("-", "_")
            value = value.strip()
            if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
                value = value[1:-1]
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            out[key] = value
    return out
