"""Model checkpoints: a one-line JSON manifest plus a packed float payload.

The manifest records the format version, model hyperparameters, the full
token vocabulary (surfaces and counts), the chunk inventory when present,
and a directory of parameter arrays (name, shape, byte offset).  The
payload is every parameter flattened to little-endian float64 and
concatenated in directory order, so a save -> load -> save round trip is
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import ModelConfig, build_model
from .vocab import ChunkVocab, TokenVocab

CHECKPOINT_VERSION = 1
_DTYPE = np.dtype("<f8")


class CheckpointError(Exception):
    """Malformed, truncated, or incompatible checkpoint file."""


def save_checkpoint(
    model,
    path: str | Path,
    approx: str = "marginal",
    text_mode: str = "word",
    max_sentence_len: int = 50,
) -> None:
    """Write ``model`` and its vocabularies to ``path``.

    ``approx`` records the lattice approximation the model was trained
    with, and ``text_mode``/``max_sentence_len`` the corpus preprocessing,
    so evaluation can run without repeating flags.
    """
    arrays = []
    blobs = []
    offset = 0
    for name, param in model.params.items():
        blob = np.ascontiguousarray(param.data, dtype=_DTYPE).tobytes()
        arrays.append({"name": name, "shape": list(param.data.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)

    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "approx": approx,
        "text_mode": text_mode,
        "max_sentence_len": max_sentence_len,
        "config": asdict(model.config),
        "token_vocab": {
            "surfaces": model.token_vocab.surfaces,
            "counts": model.token_vocab.counts,
        },
        "chunks": ([list(c) for c in model.chunk_vocab.chunks]
                   if model.config.kind == "chunk" else None),
        "arrays": arrays,
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def read_manifest(path: str | Path) -> dict:
    """Parse and validate the manifest line without touching the payload."""
    try:
        with open(path, "rb") as fh:
            header = fh.readline()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("checkpoint manifest is not valid JSON") from exc
    if not isinstance(manifest, dict):
        raise CheckpointError("checkpoint manifest is not an object")
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {version!r} "
            f"(expected {CHECKPOINT_VERSION})")
    return manifest


def load_checkpoint(path: str | Path):
    """Rebuild the model saved at ``path`` with bit-exact parameters."""
    manifest = read_manifest(path)
    with open(path, "rb") as fh:
        fh.readline()
        payload = fh.read()

    try:
        config = ModelConfig(**manifest["config"])
        vocab_spec = manifest["token_vocab"]
        token_vocab = TokenVocab(vocab_spec["surfaces"], vocab_spec["counts"])
        chunk_vocab = None
        if config.kind == "chunk":
            chunk_vocab = ChunkVocab(
                [tuple(c) for c in manifest["chunks"]], token_vocab, config.max_chunk_len)
        directory = manifest["arrays"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad checkpoint manifest: {exc}") from exc

    model = build_model(config, token_vocab, chunk_vocab, seed=0)

    names = [entry["name"] for entry in directory]
    if names != list(model.params):
        raise CheckpointError("checkpoint arrays do not match the model parameters")
    offset = 0
    for entry in directory:
        param = model.params[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != param.data.shape:
            raise CheckpointError(
                f"array {entry['name']!r} has shape {shape}, expected {param.data.shape}")
        if entry["offset"] != offset:
            raise CheckpointError(f"array {entry['name']!r} offset is inconsistent")
        size = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if offset + size > len(payload):
            raise CheckpointError("checkpoint payload is truncated")
        flat = np.frombuffer(payload, dtype=_DTYPE, count=size // _DTYPE.itemsize,
                             offset=offset)
        param.data = flat.reshape(shape).copy()
        offset += size
    if offset != len(payload):
        raise CheckpointError("checkpoint payload has trailing bytes")
    return model
