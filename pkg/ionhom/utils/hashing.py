"""Hashing utilities for ionhom"""
import hashlib
import json
from pathlib import Path
from typing import Any, Dict


def generate_hash(data: Any) -> str:
    """
    Generate a SHA-256 hash of data

    Args:
        data: Data to hash (string, dict, list, etc.)

    Returns:
        Hex digest of the hash
    """
    if isinstance(data, (dict, list)):
        # Sorted keys keep the digest independent of insertion order
        data_str = json.dumps(data, sort_keys=True)
    else:
        data_str = str(data)

    return hashlib.sha256(data_str.encode()).hexdigest()


def config_hash(flat: Dict[str, str]) -> str:
    """
    Hash of a resolved flat configuration

    Args:
        flat: Dotted keys to string values

    Returns:
        Hex digest
    """
    return generate_hash({str(k): str(v) for k, v in flat.items()})


def file_hash(path: Path) -> str:
    """
    SHA-256 of a file's bytes

    Args:
        path: File to hash

    Returns:
        Hex digest
    """
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
