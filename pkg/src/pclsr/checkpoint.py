"""Checkpoint archive: both networks, optimiser states, config and RNG state."""

import os
import tempfile
from pathlib import Path

import torch

from .errors import SchemaVersionError

SCHEMA_VERSION = 1


def atomic_save(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        torch.save(obj, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, payload: dict):
    atomic_save({"schema_version": SCHEMA_VERSION, **payload}, path)


def load_checkpoint(path) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=True)
    version = ckpt.get("schema_version") if isinstance(ckpt, dict) else None
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"{path}: schema version {version!r}, expected {SCHEMA_VERSION}")
    return ckpt
