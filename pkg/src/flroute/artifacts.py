"""On-disk parameter vectors and run manifests.

Parameter file layout (all little-endian)::

    magic "FPVW" | u32 version | 8-byte model digest | u32 block count
    per block:  u16 name length | name (utf-8) | u8 trainable | u8 ndim | u32 dims[ndim]
    payload:    float64 values of every block, in table order, C-contiguous
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from flroute import __version__
from flroute.data import atomic_write
from flroute.errors import ConfigurationError, FormatError
from flroute.nn import ModelSpec, ParameterVector, preset, PRESETS

PARAM_MAGIC = b"FPVW"
PARAM_VERSION = 1
_HEAD = struct.Struct("<4sI8sI")
MANIFEST_FILE = "run_manifest.json"


def encode_params(params: ParameterVector, spec: ModelSpec) -> bytes:
    parts = [_HEAD.pack(PARAM_MAGIC, PARAM_VERSION, spec.digest(), len(params.blocks))]
    for name, block in params.blocks.items():
        raw = name.encode()
        parts.append(struct.pack("<HBB", len(raw), name in params.trainable, block.ndim))
        parts.append(raw)
        parts.append(struct.pack(f"<{block.ndim}I", *block.shape))
    for block in params.blocks.values():
        parts.append(np.ascontiguousarray(block, dtype="<f8").tobytes())
    return b"".join(parts)


def read_digest(buf: bytes, path=None) -> bytes:
    if len(buf) < _HEAD.size:
        raise FormatError(f"parameter file truncated ({len(buf)} bytes)", path, len(buf))
    magic, version, digest, _ = _HEAD.unpack_from(buf)
    if magic != PARAM_MAGIC:
        raise FormatError(f"bad magic {magic!r}", path, 0)
    if version != PARAM_VERSION:
        raise FormatError(f"unsupported version {version}", path, 4)
    return digest


def decode_params(buf: bytes, spec: ModelSpec, path=None) -> ParameterVector:
    digest = read_digest(buf, path)
    if digest != spec.digest():
        raise ConfigurationError(f"{path or 'artifact'}: built for a different model than {spec.name}")
    (count,) = struct.unpack_from("<I", buf, 16)
    pos = _HEAD.size
    table = []
    try:
        for _ in range(count):
            nlen, trainable, ndim = struct.unpack_from("<HBB", buf, pos)
            pos += 4
            name = buf[pos : pos + nlen].decode()
            pos += nlen
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            table.append((name, bool(trainable), shape))
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt block table: {exc}", path, pos) from None
    expected = {n: s for n, (s, _) in spec.block_shapes().items()}
    if [n for n, _, _ in table] != list(expected) or any(tuple(s) != expected[n] for n, _, s in table):
        raise FormatError("block table does not match the model", path, _HEAD.size)
    blocks = {}
    for name, _, shape in table:
        size = int(np.prod(shape)) * 8
        if pos + size > len(buf):
            raise FormatError(f"payload truncated in block {name}", path, pos)
        blocks[name] = np.frombuffer(buf, dtype="<f8", count=size // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += size
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", path, pos)
    return ParameterVector(blocks, [n for n, t, _ in table if t])


def save_params(path, params: ParameterVector, spec: ModelSpec) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write(path, encode_params(params, spec))
    return path


def load_params(path, spec: ModelSpec) -> ParameterVector:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise ConfigurationError(f"artifact not found: {path}") from None
    return decode_params(buf, spec, path)


def spec_for_artifact(path, in_channels: int, names: Iterable[str] = PRESETS) -> ModelSpec:
    """Find the preset whose digest the artifact carries."""
    path = Path(path)
    try:
        digest = read_digest(path.read_bytes()[: _HEAD.size], path)
    except FileNotFoundError:
        raise ConfigurationError(f"artifact not found: {path}") from None
    for name in names:
        spec = preset(name, in_channels)
        if spec.digest() == digest:
            return spec
    raise ConfigurationError(f"{path}: no known model with {in_channels} input channels matches this artifact")


@dataclass
class RunManifest:
    """Everything needed to replay a run, written before training begins."""

    command: str
    method: str
    seed: int
    model: str
    corpus: str
    config: dict
    artifacts: dict[str, str] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    version: str = __version__

    def write(self, directory) -> Path:
        path = Path(directory) / MANIFEST_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write(path, (json.dumps(asdict(self), indent=2, sort_keys=True) + "\n").encode())
        return path

    @classmethod
    def read(cls, directory) -> "RunManifest":
        path = Path(directory) / MANIFEST_FILE
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"no run manifest in {directory}") from None
        except json.JSONDecodeError as exc:
            raise FormatError(f"run manifest is not valid JSON: {exc.msg}", path, exc.pos) from None
        try:
            return cls(**raw)
        except TypeError as exc:
            raise FormatError(f"run manifest has unexpected fields: {exc}", path) from None
