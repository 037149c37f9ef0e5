"""Flat little-endian float64 weight files with a short text header.

Layout::

    CTFW 1
    <name> <dim0> [<dim1> ...]
    ...
    END
    <raw '<f8' bytes of every array, in header order, C-contiguous>
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import IoFailure

MAGIC = "CTFW 1"


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    lines = [MAGIC]
    for name, arr in arrays.items():
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"invalid array name {name!r}")
        lines.append(" ".join([name, *map(str, np.shape(arr))]))
    lines.append("END")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values())
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii") + payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_arrays(path) -> dict[str, np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    end = raw.find(b"\nEND\n")
    if not raw.startswith(MAGIC.encode()) or end < 0:
        raise IoFailure(f"{path}: not a weight file")
    header = raw[:end].decode("ascii").splitlines()[1:]
    offset = end + len(b"\nEND\n")
    out = {}
    for line in header:
        name, *dims = line.split()
        shape = tuple(int(d) for d in dims)
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(raw):
            raise IoFailure(f"{path}: truncated payload for {name}")
        out[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise IoFailure(f"{path}: {len(raw) - offset} trailing bytes")
    return out
