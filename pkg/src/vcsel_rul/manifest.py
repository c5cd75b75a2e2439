"""Run manifests: what ran, with which resolved config, reading and writing which files."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from . import __version__
from .const import MANIFEST_FILE
from .errors import UsageError


@dataclass
class RunManifest:
    subcommand: str
    config: dict[str, Any]
    seed: Optional[int]
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    duration_s: float = 0.0
    tool_version: str = __version__


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def digests(paths: Iterable[Path]) -> dict[str, str]:
    return {str(p): file_digest(p) for p in paths if p.is_file()}


def check_overwrite(out_dir: Path, names: Iterable[str], force: bool) -> None:
    """Refuse to clobber existing outputs unless ``force`` is set."""
    existing = [n for n in (*names, MANIFEST_FILE) if (out_dir / n).exists()]
    if existing and not force:
        raise UsageError(f"{out_dir}: refusing to overwrite {existing!r}; pass --force")


def write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST_FILE
    path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
