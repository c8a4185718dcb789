"""File-based storage for run artifacts and their manifest."""

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from .config import OUTPUT_DIR
from .errors import ArtifactIOError

MANIFEST_NAME = "manifest.json"


def dumps_json(payload: Any) -> str:
    """Sorted keys, two-space indent, trailing newline."""
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def gnuplot_script(csv_name: str, x: str, columns: Sequence[str], title: str, xlabel: str = "", ylabel: str = "") -> str:
    """A gnuplot script plotting ``columns`` against ``x`` from a comma-separated file."""
    header = [
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set key autotitle columnhead",
        f"set title '{title}'",
        f"set xlabel '{xlabel or x}'",
        f"set ylabel '{ylabel}'",
    ]
    plots = [f"'{csv_name}' using '{x}':'{column}' with lines title '{column}'" for column in columns]
    return "\n".join(header) + "\nplot " + ", \\\n     ".join(plots) + "\n"


class ArtifactWriter:
    """
    Writes the files of one run into ``out_dir`` and records their hashes.

    Nothing written carries a timestamp, so rerunning the same config gives
    byte-identical files and an identical manifest.
    """

    def __init__(self, out_dir: str | os.PathLike | None, command: str, config: Optional[Dict[str, Any]] = None,
                 config_hash: str = ""):
        self.out_dir = Path(out_dir or OUTPUT_DIR)
        self.command = command
        self.config = config or {}
        self.config_hash = config_hash
        self.files: Dict[str, str] = {}
        self.notes: List[str] = []
        self.reference: Optional[Dict[str, Any]] = None
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ArtifactIOError(f"cannot create output directory {self.out_dir}: {exc}") from exc

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def write_bytes(self, name: str, data: bytes) -> Path:
        path = self.path(name)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "wb") as f:
                f.write(data)
        except OSError as exc:
            raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
        self.files[name] = sha256_hex(data)
        return path

    def write_text(self, name: str, text: str) -> Path:
        return self.write_bytes(name, text.encode("utf-8"))

    def write_json(self, name: str, payload: Any) -> Path:
        return self.write_text(name, dumps_json(payload))

    def write_csv(self, name: str, frame: pd.DataFrame, comment: Optional[str] = None) -> Path:
        """CSV with a header row, ``%.17g`` floats and LF line endings; ``comment`` becomes a leading ``#`` line."""
        body = frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")
        if comment:
            body = f"# {comment}\n{body}"
        return self.write_text(name, body)

    def write_gnuplot(self, name: str, csv_name: str, x: str, columns: Sequence[str], title: str, **labels: str) -> Path:
        return self.write_text(name, gnuplot_script(csv_name, x, columns, title, **labels))

    def note(self, text: str) -> None:
        """Record a remark for the manifest, e.g. a result outside its reference band."""
        self.notes.append(text)

    def manifest(self, status: str = "ok", notes: Optional[List[str]] = None) -> Dict[str, Any]:
        return {
            "command": self.command,
            "status": status,
            "notes": self.notes + list(notes or []),
            "reference": self.reference,
            "config": self.config,
            "config_sha256": self.config_hash,
            "files": [{"name": name, "sha256": self.files[name]} for name in sorted(self.files)],
        }

    def finalize(self, status: str = "ok", notes: Optional[List[str]] = None) -> Dict[str, Any]:
        """
        Write ``manifest.json`` listing every file written so far, once each.

        Args:
            status: "ok", or "partial" when the run stopped on an error
            notes: Remarks appended after those recorded with ``note``, e.g. the error that stopped the run

        Returns:
            The manifest dict
        """
        manifest = self.manifest(status, notes)
        path = self.path(MANIFEST_NAME)
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                f.write(dumps_json(manifest))
        except OSError as exc:
            raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
        return manifest


def read_manifest(out_dir: str | os.PathLike) -> Optional[Dict[str, Any]]:
    """
    Load the manifest of a finished run.

    Returns:
        Manifest dict or None if the directory holds no manifest
    """
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        return None
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def verify_manifest(out_dir: str | os.PathLike) -> List[str]:
    """Names of listed files whose current hash differs from the manifest (missing files included)."""
    manifest = read_manifest(out_dir)
    if manifest is None:
        raise ArtifactIOError(f"no {MANIFEST_NAME} in {out_dir}")
    mismatched = []
    for entry in manifest["files"]:
        path = Path(out_dir) / entry["name"]
        if not path.exists() or sha256_hex(path.read_bytes()) != entry["sha256"]:
            mismatched.append(entry["name"])
    return mismatched
