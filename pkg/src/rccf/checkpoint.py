"""Checkpoint files: a JSON metadata block followed by a tensor collection.

Layout (little-endian)::

    magic     4 bytes b"RCCK"
    meta_len  uint32, then meta_len bytes of UTF-8 JSON (sorted keys)
    tensors   tensor collection, see :mod:`rccf.core.serialize`

Tensor records are named ``param.<name>``, ``adam.m.<name>`` and
``adam.v.<name>``. Files are written to a temporary sibling and renamed.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

from rccf.core.serialize import read_collection, write_collection
from rccf.errors import CheckpointError

MAGIC = b"RCCK"


@dataclass
class Checkpoint:
    params: dict
    adam_m: dict
    adam_v: dict
    step: int
    config_text: str
    vocab: list
    size_prior: tuple
    rng_state: dict = field(default_factory=dict)
    metrics_log: str = ""

    def to_bytes(self) -> bytes:
        meta = {
            "step": self.step,
            "config": self.config_text,
            "vocab": list(self.vocab),
            "size_prior": [float(v) for v in self.size_prior],
            "rng_state": self.rng_state,
            "metrics_log": self.metrics_log,
        }
        meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
        buf = io.BytesIO()
        buf.write(MAGIC + struct.pack("<I", len(meta_bytes)) + meta_bytes)
        tensors = {f"param.{k}": v for k, v in self.params.items()}
        tensors.update({f"adam.m.{k}": v for k, v in self.adam_m.items()})
        tensors.update({f"adam.v.{k}": v for k, v in self.adam_v.items()})
        write_collection(buf, tensors)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:4] != MAGIC or len(blob) < 8:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (meta_len,) = struct.unpack_from("<I", blob, 4)
        try:
            meta = json.loads(blob[8:8 + meta_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError("checkpoint metadata block is corrupt") from exc
        tensors = read_collection(io.BytesIO(blob[8 + meta_len:]))
        params, m, v = {}, {}, {}
        for name, array in tensors.items():
            if name.startswith("param."):
                params[name[6:]] = array
            elif name.startswith("adam.m."):
                m[name[7:]] = array
            elif name.startswith("adam.v."):
                v[name[7:]] = array
            else:
                raise CheckpointError(f"unexpected tensor record {name!r}")
        return cls(params, m, v, int(meta["step"]), meta["config"], meta["vocab"],
                   tuple(meta["size_prior"]), meta.get("rng_state", {}),
                   meta.get("metrics_log", ""))

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(self.to_bytes())
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            blob = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_bytes(blob)
