"""Binary file formats, CSV/JSON emission, and run manifests.

Checkpoints: magic "LLCK", u32 version, length-prefixed arch JSON and
metadata JSON, then the raw float32 little-endian parameter block.
Dataset cache: magic "LLDS", u32 version, length-prefixed header JSON,
u16 labels, float32 images. All digests are SHA-256 of file bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import time
from pathlib import Path

import numpy as np

from . import __version__, dataops
from .errors import DomainError, FileFormatError
from .model import ArchDescriptor, ParamVector, build_index
from .trainer import Checkpoint

CKPT_MAGIC = b"LLCK"
DATA_MAGIC = b"LLDS"
FORMAT_VERSION = 1


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_exact(f, n: int, section: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FileFormatError(section, f"truncated: wanted {n} bytes, got {len(data)}")
    return data


def _read_prefixed(f, section: str) -> bytes:
    (length,) = struct.unpack("<I", _read_exact(f, 4, section))
    return _read_exact(f, length, section)


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    arch_json = ckpt.arch.to_json().encode()
    meta = {
        "epoch": ckpt.epoch,
        "metrics": ckpt.metrics,
        "config_hash": ckpt.config_hash,
        "rng_digest": ckpt.rng_digest,
        "provenance": ckpt.provenance,
        "optimal": ckpt.optimal,
        "param_count": ckpt.params.size,
    }
    meta_json = json.dumps(meta, sort_keys=True).encode()
    params = np.ascontiguousarray(ckpt.params.values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(arch_json)))
        f.write(arch_json)
        f.write(struct.pack("<I", len(meta_json)))
        f.write(meta_json)
        f.write(params.tobytes())
    return sha256_file(path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != CKPT_MAGIC:
            raise FileFormatError("magic", f"expected {CKPT_MAGIC!r}, got {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != FORMAT_VERSION:
            raise FileFormatError("version", f"unsupported version {version}")
        try:
            arch = ArchDescriptor.from_json(_read_prefixed(f, "arch").decode())
        except (json.JSONDecodeError, KeyError) as e:
            raise FileFormatError("arch", f"bad arch JSON: {e}") from e
        try:
            meta = json.loads(_read_prefixed(f, "metadata"))
        except json.JSONDecodeError as e:
            raise FileFormatError("metadata", f"bad metadata JSON: {e}") from e
        count = int(meta["param_count"])
        raw = _read_exact(f, 4 * count, "params")
        extra = f.read(1)
        if extra:
            raise FileFormatError("params", "trailing bytes after parameter block")
    values = np.frombuffer(raw, dtype="<f4").copy()
    index = build_index(arch)
    total = index[-1].offset + index[-1].length
    if total != count:
        raise FileFormatError("params", f"arch wants {total} params, file has {count}")
    if not np.all(np.isfinite(values)):
        raise FileFormatError("params", "non-finite parameter values")
    return Checkpoint(
        arch=arch,
        params=ParamVector(values, index),
        epoch=int(meta["epoch"]),
        metrics=meta["metrics"],
        config_hash=meta["config_hash"],
        rng_digest=meta["rng_digest"],
        provenance=meta.get("provenance", {}),
        optimal=bool(meta.get("optimal", False)),
    )


def save_dataset(ds: dataops.Dataset, path) -> str:
    header = {
        "provenance": ds.provenance,
        "split": ds.split,
        "n": len(ds),
        "image_shape": list(ds.images.shape[1:]),
    }
    header_json = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(DATA_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(header_json)))
        f.write(header_json)
        f.write(np.ascontiguousarray(ds.labels, dtype="<u2").tobytes())
        f.write(np.ascontiguousarray(ds.images, dtype="<f4").tobytes())
    return sha256_file(path)


def load_dataset(path) -> dataops.Dataset:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != DATA_MAGIC:
            raise FileFormatError("magic", f"expected {DATA_MAGIC!r}, got {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != FORMAT_VERSION:
            raise FileFormatError("version", f"unsupported version {version}")
        try:
            header = json.loads(_read_prefixed(f, "header"))
        except json.JSONDecodeError as e:
            raise FileFormatError("header", f"bad header JSON: {e}") from e
        n = int(header["n"])
        shape = tuple(header["image_shape"])
        labels = np.frombuffer(_read_exact(f, 2 * n, "labels"), dtype="<u2").astype(np.int64)
        img_bytes = 4 * n * int(np.prod(shape))
        images = np.frombuffer(_read_exact(f, img_bytes, "images"), dtype="<f4").reshape((n, *shape)).copy()
    return dataops.Dataset(images, labels, header["split"], header["provenance"])


def cached_generate(spec: dataops.DomainSpec, split: str, n: int, seed: int, cache_dir) -> dataops.Dataset:
    """generate() through a content-keyed disk cache."""
    os.makedirs(cache_dir, exist_ok=True)
    key = f"{spec.domain_id}-{split}-{n}-{seed}.llds"
    path = Path(cache_dir) / key
    if path.exists():
        return load_dataset(path)
    ds = dataops.generate(spec, split, n, seed)
    save_dataset(ds, path)
    return ds


def format_real(value: float) -> str:
    """CSV real formatting: 9 significant digits, '.' separator."""
    return f"{float(value):.9g}"


def emit_table(rows, schema, path) -> str:
    """RFC-4180-style CSV with LF endings; returns the file digest.

    schema: sequence of (column_name, kind) with kind in str|int|real.
    """
    kinds = [k for _, k in schema]
    if any(k not in ("str", "int", "real") for k in kinds):
        raise DomainError(f"bad schema kinds: {kinds}")
    lines = [",".join(name for name, _ in schema)]
    for row in rows:
        if len(row) != len(schema):
            raise DomainError(f"row width {len(row)} does not match schema width {len(schema)}")
        cells = []
        for value, kind in zip(row, kinds):
            if kind == "int":
                if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                    raise DomainError(f"expected int, got {value!r}")
                cells.append(str(int(value)))
            elif kind == "real":
                if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
                    raise DomainError(f"expected real, got {value!r}")
                cells.append(format_real(value))
            else:
                value = str(value)
                if any(ch in value for ch in ",\"\n"):
                    value = '"' + value.replace('"', '""') + '"'
                cells.append(value)
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return sha256_file(path)


def write_json(obj, path) -> str:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8", newline="\n")
    return sha256_file(path)


def make_manifest(run_id: str, command: str, config: dict, inputs: dict, outputs: list, seed: int) -> dict:
    """Manifest for one run; inputs/outputs map logical names to file paths."""
    return {
        "run_id": run_id,
        "command": command,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": sha256_file(p)} for name, p in inputs.items()},
        "outputs": [{"path": str(p), "sha256": sha256_file(p)} for p in outputs],
        "seed": seed,
        "toolkit_version": __version__,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }


def write_manifest(manifest: dict, out_dir) -> Path:
    path = Path(out_dir) / f"{manifest['run_id']}.manifest.json"
    write_json(manifest, path)
    return path


def verify_manifest(manifest_path) -> list[str]:
    """Recompute digests of every referenced file; return mismatch messages."""
    manifest = json.loads(Path(manifest_path).read_text())
    problems = []
    for name, entry in manifest["inputs"].items():
        if not Path(entry["path"]).exists():
            problems.append(f"input {name}: missing {entry['path']}")
        elif sha256_file(entry["path"]) != entry["sha256"]:
            problems.append(f"input {name}: digest mismatch at {entry['path']}")
    for entry in manifest["outputs"]:
        if not Path(entry["path"]).exists():
            problems.append(f"output missing: {entry['path']}")
        elif sha256_file(entry["path"]) != entry["sha256"]:
            problems.append(f"output digest mismatch: {entry['path']}")
    return problems
