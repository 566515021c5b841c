"""Named parameter container and the versioned ``.lkmn`` weight file.

File layout (all integers little-endian)::

    b"LKMN" | version u8 (=1) | header_len u32 | header (UTF-8 JSON) | payload | crc32(payload) u32

The header is ``{"config": {...}, "format_version": 1, "seed": int|null,
"manifest": [{"name", "shape", "offset", "len"}, ...]}`` where ``offset`` and
``len`` are byte positions inside the payload. The payload holds each tensor
as raw float32 in manifest order.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from collections.abc import Mapping
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import CompatibilityError, IntegrityError
from .tensor import Tensor

MAGIC = b"LKMN"
FORMAT_VERSION = 1


class WeightStore(Mapping):
    """Ordered ``name -> Tensor`` map plus the metadata needed to rebuild the model."""

    def __init__(self, tensors: Mapping[str, Tensor] | None = None, config: dict | None = None, seed: int | None = None):
        self._tensors: dict[str, Tensor] = dict(tensors or {})
        self.config = dict(config or {})
        self.seed = seed
        self.format_version = FORMAT_VERSION

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __setitem__(self, name: str, value: Tensor) -> None:
        self._tensors[name] = value

    def parameters(self) -> list[Tensor]:
        return list(self._tensors.values())

    def num_scalars(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def astype(self, dtype) -> WeightStore:
        """Copy with every tensor cast to ``dtype`` (used by the float64 gradient harness)."""
        return WeightStore(
            {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad, name=k) for k, v in self._tensors.items()},
            self.config,
            self.seed,
        )

    def copy(self) -> WeightStore:
        return WeightStore(
            {k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k) for k, v in self._tensors.items()},
            self.config,
            self.seed,
        )

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._tensors.items()}

    def equals(self, other: WeightStore) -> bool:
        if list(self) != list(other):
            return False
        return all(
            self[k].data.dtype == other[k].data.dtype and np.array_equal(self[k].data, other[k].data) for k in self
        )


def encode_weights(ws: WeightStore) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, t in ws.items():
        raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset, "len": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {"config": ws.config, "format_version": FORMAT_VERSION, "seed": ws.seed, "manifest": manifest}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join(
        [
            MAGIC,
            bytes([FORMAT_VERSION]),
            struct.pack("<I", len(hbytes)),
            hbytes,
            payload,
            struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF),
        ]
    )


def decode_weights(blob: bytes, source: str = "<bytes>") -> WeightStore:
    if len(blob) < 9 or blob[:4] != MAGIC:
        raise IntegrityError(f"{source}: not an LKMN weight file (bad magic)")
    version = blob[4]
    if version != FORMAT_VERSION:
        raise CompatibilityError(f"{source}: unsupported weight format version {version} (expected {FORMAT_VERSION})")
    (hlen,) = struct.unpack("<I", blob[5:9])
    if 9 + hlen + 4 > len(blob):
        raise IntegrityError(f"{source}: truncated header")
    try:
        header = json.loads(blob[9 : 9 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{source}: unreadable header ({exc})") from None
    payload = blob[9 + hlen : -4]
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise IntegrityError(f"{source}: payload CRC mismatch (file corrupt or truncated)")
    if header.get("format_version") != FORMAT_VERSION:
        raise CompatibilityError(f"{source}: header format_version {header.get('format_version')} not supported")

    config = header.get("config", {})
    expected = _expected_shapes(config, source)
    tensors = {}
    for entry in header["manifest"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if expected is not None:
            if name not in expected:
                raise CompatibilityError(f"{source}: tensor {name!r} is not part of the configured model")
            if expected[name] != shape:
                raise CompatibilityError(
                    f"{source}: tensor {name!r} has shape {list(shape)}, config requires {list(expected[name])}"
                )
        start, length = entry["offset"], entry["len"]
        if length != 4 * int(np.prod(shape)) or start + length > len(payload):
            raise IntegrityError(f"{source}: manifest entry for {name!r} is inconsistent with the payload")
        arr = np.frombuffer(payload, dtype="<f4", count=length // 4, offset=start).astype(np.float32).reshape(shape)
        tensors[name] = Tensor(arr, requires_grad=True, name=name)
    if expected is not None:
        missing = [k for k in expected if k not in tensors]
        if missing:
            raise CompatibilityError(f"{source}: missing tensors {missing[:5]}")
    return WeightStore(tensors, config, header.get("seed"))


def _expected_shapes(config: dict, source: str):
    if not config:
        return None
    from .errors import ConfigError
    from .model import ModelConfig, param_shapes

    try:
        cfg = ModelConfig.from_dict(config)
    except ConfigError as exc:
        raise CompatibilityError(f"{source}: embedded config is invalid ({exc})") from None
    return param_shapes(cfg)


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_weights(ws: WeightStore, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, encode_weights(ws))


def load_weights(path: str | os.PathLike) -> WeightStore:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IntegrityError(f"{path}: cannot read weight file ({exc.strerror})") from None
    return decode_weights(blob, str(path))
