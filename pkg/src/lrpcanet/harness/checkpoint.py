"""Binary checkpoint format.

Layout (little-endian)::

    8 bytes   magic  b"LRPCAKPT"
    u32       format version
    u32       header length H
    H bytes   UTF-8 JSON header (config, hash, epoch, optimizer, rng, array index)
    ...       float32 payload, arrays concatenated in index order
"""

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..model import LRPCANet, ModelConfig
from ..nn import AdamState

MAGIC = b"LRPCAKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    buffers: dict = field(default_factory=dict)
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    epoch: int = 0
    rng_state: dict = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def capture(cls, model, adam_state=None, epoch=0, rng_state=None, extra=None):
        ck = cls(model.config,
                 {n: p.value.astype(np.float32) for n, p in model.named_parameters()},
                 {n: b.astype(np.float32) for n, b in model.named_buffers()},
                 epoch=epoch, rng_state=rng_state, extra=dict(extra or {}))
        if adam_state is not None:
            ck.adam_m = {n: a.astype(np.float32) for n, a in adam_state.m.items()}
            ck.adam_v = {n: a.astype(np.float32) for n, a in adam_state.v.items()}
            ck.optimizer = {"lr": adam_state.lr, "beta1": adam_state.beta1,
                            "beta2": adam_state.beta2, "epsilon": adam_state.epsilon,
                            "t": adam_state.t}
        return ck

    def build_model(self, dtype=np.float32):
        model = LRPCANet(self.config, dtype=dtype)
        self.restore_model(model)
        return model

    def restore_model(self, model):
        if model.config.digest() != self.config.digest():
            raise ConfigMismatchError("model config does not match checkpoint")
        named = dict(model.named_parameters())
        buffers = dict(model.named_buffers())
        if set(named) != set(self.params) or set(buffers) != set(self.buffers):
            raise ConfigMismatchError("parameter inventory does not match checkpoint")
        for n, p in named.items():
            if p.value.shape != self.params[n].shape:
                raise ConfigMismatchError(f"shape mismatch for {n}")
        for n, p in named.items():
            p.value[...] = self.params[n]
        for n, b in buffers.items():
            b[...] = self.buffers[n]
        return model

    def adam_state(self):
        o = self.optimizer
        st = AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], epsilon=o["epsilon"], t=o["t"])
        st.m = {n: a.copy() for n, a in self.adam_m.items()}
        st.v = {n: a.copy() for n, a in self.adam_v.items()}
        return st


def _groups(ck):
    return (("param", ck.params), ("buffer", ck.buffers), ("adam_m", ck.adam_m), ("adam_v", ck.adam_v))


def encode(ck):
    index, chunks, offset = [], [], 0
    for group, arrays in _groups(ck):
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name], dtype="<f4")
            index.append({"group": group, "name": name, "shape": list(a.shape), "offset": offset})
            chunks.append(a.tobytes())
            offset += a.nbytes
    payload = b"".join(chunks)
    header = {
        "model_config": ck.config.to_dict(),
        "config_hash": ck.config.digest(),
        "epoch": ck.epoch,
        "optimizer": ck.optimizer,
        "rng_state": ck.rng_state,
        "extra": ck.extra,
        "arrays": index,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)) + hbytes + payload


def decode(blob, expected_config=None):
    if len(blob) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint (no header)")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointVersionError(f"bad magic {magic!r}; not a checkpoint of format {FORMAT_VERSION}")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    payload = blob[start + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"truncated payload ({len(payload)} of {header['payload_bytes']} bytes)")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError("payload checksum mismatch")
    config = ModelConfig.from_dict(header["model_config"])
    if config.digest() != header["config_hash"]:
        raise ConfigMismatchError("stored config does not match its hash")
    if expected_config is not None and expected_config.digest() != header["config_hash"]:
        raise ConfigMismatchError("checkpoint was written for a different model config")
    groups = {"param": {}, "buffer": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(payload, dtype="<f4", count=count, offset=entry["offset"])
        groups[entry["group"]][entry["name"]] = a.reshape(shape).astype(np.float32)
    return Checkpoint(config, groups["param"], groups["buffer"], groups["adam_m"], groups["adam_v"],
                      header["optimizer"], header["epoch"], header["rng_state"], header["extra"])


def save_checkpoint(ck, path):
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(encode(ck))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path, expected_config=None):
    return decode(Path(path).read_bytes(), expected_config)
