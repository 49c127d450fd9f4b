"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"HYP2CKPT"  magic
    u32          format version
    u32          section count
    per section: u16 name length, name (utf-8), u8 kind, u64 payload length, payload

Kinds: 0 = JSON metadata (utf-8), 1 = float64 array (u8 ndim, u64 dims..., '<f8' data).
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph import Vocabulary
from .model import ModelParams, ScoreConfig
from .train import TrainConfig

MAGIC = b"HYP2CKPT"
VERSION = 1
_JSON, _ARRAY = 0, 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    vocab: Vocabulary
    train_config: TrainConfig = field(default_factory=TrainConfig)
    score_config: ScoreConfig = field(default_factory=ScoreConfig)
    rng_state: dict | None = None
    best_valid_mrr: float | None = None
    epoch: int = 0

    def meta(self) -> dict:
        return {
            "version": VERSION,
            "k": self.params.k,
            "dim": self.params.dim,
            "epoch": self.epoch,
            "best_valid_mrr": self.best_valid_mrr,
            "train_config": asdict(self.train_config),
            "score_config": asdict(self.score_config),
            "rng_state": self.rng_state,
            "vocab": self.vocab.to_dict(),
        }


def _pack_array(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def _unpack_array(buf: bytes) -> np.ndarray:
    ndim = buf[0]
    shape = struct.unpack_from(f"<{ndim}Q", buf, 1)
    data = buf[1 + 8 * ndim:]
    return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)


def to_bytes(ckpt: Checkpoint) -> bytes:
    sections = [("meta", _JSON, json.dumps(ckpt.meta(), sort_keys=True).encode("utf-8"))]
    for name, arr in ckpt.params.tables().items():
        sections.append((name, _ARRAY, _pack_array(arr)))
    out = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name, kind, payload in sections:
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BQ", kind, len(payload)))
        out.append(payload)
    return b"".join(out)


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<II", buf, pos)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 8
    meta, arrays = None, {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2: pos + 2 + nlen].decode("utf-8")
            pos += 2 + nlen
            kind, plen = struct.unpack_from("<BQ", buf, pos)
            pos += 9
        except struct.error:
            raise CheckpointError("truncated checkpoint") from None
        payload = buf[pos: pos + plen]
        if len(payload) != plen:
            raise CheckpointError("truncated checkpoint")
        pos += plen
        if kind == _JSON:
            meta = json.loads(payload.decode("utf-8"))
        elif kind == _ARRAY:
            arrays[name] = _unpack_array(payload)
        else:
            raise CheckpointError(f"unknown section kind {kind}")
    if meta is None:
        raise CheckpointError("checkpoint has no metadata section")
    params = ModelParams(
        arrays["entity_emb"], arrays["rel_emb"], arrays["rel_diag"],
        arrays["bias_head"], arrays["bias_tail"], float(meta["k"]), arrays.get("rel_diag_tail"),
    )
    return Checkpoint(
        params,
        Vocabulary.from_dict(meta["vocab"]),
        TrainConfig(**meta["train_config"]),
        ScoreConfig(**meta["score_config"]),
        meta["rng_state"],
        meta["best_valid_mrr"],
        meta["epoch"],
    )


def atomic_write(path, data: bytes) -> None:
    """Write to a temp file in the same directory, fsync, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(ckpt: Checkpoint, path) -> None:
    atomic_write(path, to_bytes(ckpt))


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
