"""Persistence helpers: seeded hashing, JSONL / PNG / CSV round trips, artifact headers.

Every artifact this package writes starts with a header record embedding the
config digest, code version, and master seed, so two runs with equal triples
produce byte-identical files. Nothing here writes wall-clock timestamps.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from .errors import PipelineError

SCHEMA_VERSION = 1


def package_version() -> str:
    from . import __version__

    return __version__


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of labels (never Python's salted hash)."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def canonical_json(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def artifact_header(kind: str, config_digest: str, master_seed: int) -> dict:
    return {
        "record": "header",
        "schema": kind,
        "schemaVersion": SCHEMA_VERSION,
        "configDigest": config_digest,
        "codeVersion": package_version(),
        "masterSeed": int(master_seed),
    }


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(canonical_json(record))
            fh.write("\n")


def read_jsonl(path: str | Path) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise PipelineError(f"cannot read {path}: {exc}") from exc


def split_header(records: list[dict], expected_schema: str | None = None) -> tuple[dict, list[dict]]:
    """Pop the leading header record, optionally checking its schema name."""
    if not records or records[0].get("record") != "header":
        raise PipelineError("artifact is missing its header record")
    header, rest = records[0], records[1:]
    if expected_schema is not None and header.get("schema") != expected_schema:
        raise PipelineError(
            f"expected {expected_schema!r} artifact, found {header.get('schema')!r}"
        )
    return header, rest


def write_csv(path: str | Path, fieldnames: list[str], rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_image_png(path: str | Path, image: np.ndarray) -> None:
    """Persist an (H, W, 3) uint8 image."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise PipelineError(f"expected (H, W, 3) image, got shape {arr.shape}")
    Image.fromarray(arr.astype(np.uint8), mode="RGB").save(path, format="PNG")


def read_image_png(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise PipelineError(f"cannot read image {path}: {exc}") from exc


def write_mask_png(path: str | Path, bits: np.ndarray) -> None:
    """Persist a boolean mask as single-channel PNG, 0 = normal, 255 = distorted."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.where(np.asarray(bits, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def read_mask_png(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L")) > 127
    except OSError as exc:
        raise PipelineError(f"cannot read mask {path}: {exc}") from exc


def prepare_out_dir(path: str | Path, force: bool = False) -> Path:
    """Create an output directory, refusing to clobber prior results without force."""
    path = Path(path)
    if path.exists() and not force and any(path.iterdir()):
        raise PipelineError(
            f"output directory {path} already has contents; pass force to overwrite"
        )
    path.mkdir(parents=True, exist_ok=True)
    return path


def ensure_under_root(root: str | Path, sub: str) -> Path:
    """Resolve sub under root, rejecting escapes; outputs stay inside the output root."""
    root = Path(root)
    candidate = (root / sub).resolve()
    if not candidate.is_relative_to(root.resolve()):
        raise PipelineError(f"output path {sub!r} escapes the output root {root}")
    return root / sub
