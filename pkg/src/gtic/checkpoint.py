"""Model container: every parameter store, optimizer state and training metadata.

File layout (little-endian)::

    magic "GTICMDL" | version u8 | tensor count u32 |
    per tensor: name length u16 | name utf-8 | rank u8 | dims u32[rank] | f32 values

Non-float metadata (the config JSON) is stored as one f32 per byte, which is exact.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .adversary import init_discriminator
from .config import TrainConfig
from .nn import OptimizerState, ParamStore
from .pipeline import init_params

MAGIC = b"GTICMDL"
VERSION = 1
STORES = ("encoder", "masker", "decoder", "discriminator")
HISTORY_COLUMNS = ("distortion", "adversarial", "real_score", "fake_score")


class ModelFormatError(ValueError):
    pass


def write_tensors(tensors: dict[str, np.ndarray], version: int = VERSION) -> bytes:
    parts = [MAGIC, struct.pack("<BI", version, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def read_tensors(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"bad magic {bytes(data[:len(MAGIC)])!r}, expected {MAGIC!r}")
    pos = len(MAGIC)

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise ModelFormatError(f"truncated model file while reading {what} at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<BI", take(5, "header"))
    if version != VERSION:
        raise ModelFormatError(f"model file version {version} is not supported (expected version {VERSION})")
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"tensor {i} name length"))
        name = take(nlen, f"tensor {i} name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"{name} rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} dims"))
        size = 1
        for d in dims:
            size *= d
        if size * 4 > len(data) - pos:
            raise ModelFormatError(
                f"dims {list(dims)} of {name!r} overflow the {len(data) - pos} remaining bytes")
        if name in out:
            raise ModelFormatError(f"duplicate tensor name {name!r}")
        out[name] = np.frombuffer(take(4 * size, name), dtype="<f4").reshape(dims).astype(np.float32)
    if pos != len(data):
        raise ModelFormatError(f"{len(data) - pos} unexpected trailing bytes")
    return out


@dataclass
class Checkpoint:
    config: TrainConfig
    stores: dict[str, ParamStore]
    optimizers: dict[str, OptimizerState] = field(default_factory=dict)
    epoch: int = 0
    history: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def initial(cls, cfg: TrainConfig) -> Checkpoint:
        stores = init_params(cfg.pipeline(), cfg.seed)
        stores["discriminator"] = init_discriminator(cfg.disc_width, cfg.seed)
        opts = {name: OptimizerState("adam", cfg.lr_initial) for name in STORES}
        return cls(cfg, stores, opts)

    @property
    def pipeline(self):
        return self.config.pipeline()

    def to_tensors(self) -> dict[str, np.ndarray]:
        t: dict[str, np.ndarray] = {}
        cfg_bytes = np.frombuffer(self.config.to_json().encode("utf-8"), dtype=np.uint8)
        t["meta/config"] = cfg_bytes.astype(np.float32)
        t["meta/epoch"] = np.array(self.epoch, dtype=np.float32)
        hist = np.array(self.history, dtype=np.float32).reshape(-1, len(HISTORY_COLUMNS))
        t["meta/history"] = hist
        for s in STORES:
            store = self.stores[s]
            for name, arr in store.params.items():
                t[f"{s}/param/{name}"] = arr
            for name, arr in store.buffers.items():
                t[f"{s}/buffer/{name}"] = arr
            opt = self.optimizers.get(s)
            if opt is not None:
                t[f"opt/{s}/step"] = np.array(opt.step, dtype=np.float32)
                for name in store.params:
                    if name in opt.m:
                        t[f"opt/{s}/m/{name}"] = opt.m[name]
                        t[f"opt/{s}/v/{name}"] = opt.v[name]
        return t

    def to_bytes(self) -> bytes:
        return write_tensors(self.to_tensors())

    @classmethod
    def from_bytes(cls, data: bytes) -> Checkpoint:
        t = read_tensors(data)
        try:
            cfg_json = bytes(t["meta/config"].astype(np.uint8)).decode("utf-8")
            cfg = TrainConfig.from_json(cfg_json)
            epoch = int(t["meta/epoch"])
            history = [row for row in t["meta/history"]]
        except KeyError as e:
            raise ModelFormatError(f"model file lacks required tensor {e.args[0]!r}") from None
        stores = {s: ParamStore() for s in STORES}
        optimizers = {}
        for name, arr in t.items():
            head, _, rest = name.partition("/")
            if head in stores:
                kind, _, pname = rest.partition("/")
                if kind == "param":
                    stores[head].add(pname, arr)
                elif kind == "buffer":
                    stores[head].add_buffer(pname, arr)
            elif head == "opt":
                s, _, rest = rest.partition("/")
                opt = optimizers.setdefault(s, OptimizerState("adam", cfg.lr_at(epoch)))
                if rest == "step":
                    opt.step = int(arr)
                elif rest.startswith("m/"):
                    opt.m[rest[2:]] = arr
                elif rest.startswith("v/"):
                    opt.v[rest[2:]] = arr
        for s in STORES:
            if not stores[s].params:
                raise ModelFormatError(f"model file has no {s} parameters")
        return cls(cfg, stores, optimizers, epoch, history)

    def equals(self, other: Checkpoint) -> bool:
        return self.to_bytes() == other.to_bytes()


def save_model(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    data = ckpt.to_bytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_model(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as f:
        return Checkpoint.from_bytes(f.read())
