"""Flat binary parameter archives.

Byte layout (documented so checkpoints stay portable):

* line 1: a UTF-8 JSON object terminated by a single ``\\n`` byte with
  keys ``format_version`` (currently 1) and ``params``, an ordered list
  of ``{"name": str, "shape": [int, ...]}`` entries;
* then, for each listed entry in order, the raw buffer: row-major (C
  order) IEEE-754 64-bit floats, little-endian, ``prod(shape)`` values.

No padding, no trailing bytes.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ConfigError

FORMAT_VERSION = 1


def save_checkpoint(path, named_params: dict[str, np.ndarray]):
    """Write named float64 arrays to ``path`` in declaration order."""
    header = {
        "format_version": FORMAT_VERSION,
        "params": [
            {"name": name, "shape": list(arr.shape)}
            for name, arr in named_params.items()
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for arr in named_params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read an archive back into an ordered name -> array mapping."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"unreadable checkpoint header in {path}") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise ConfigError(
                f"unsupported checkpoint format {header.get('format_version')!r}"
            )
        out: dict[str, np.ndarray] = {}
        for entry in header["params"]:
            shape = tuple(int(s) for s in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ConfigError(
                    f"checkpoint truncated while reading {entry['name']!r}"
                )
            out[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise ConfigError("trailing bytes after final parameter payload")
    return out
