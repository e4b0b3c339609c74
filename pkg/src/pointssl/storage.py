"""Binary container formats for datasets and model checkpoints.

Both containers are self-describing: an 8-byte magic, a little-endian u32
format version, a JSON metadata block, then fixed-width payload (float32
little-endian arrays).  The exact byte layouts are documented in
``docs/formats.md``.  Readers track their byte offset and raise
:class:`FormatError` with that offset on truncation or corruption;
unsupported versions raise :class:`VersionError`.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import DatasetConfig, DatasetSplit, FeatureGridSample, PointAnnotation
from .errors import FormatError, VersionError
from .model import AdamState, ModelArch, param_layout

DATASET_MAGIC = b"PSSLDATA"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"PSSLCKPT"
CHECKPOINT_VERSION = 1


class _Writer:
    def __init__(self) -> None:
        self.chunks: list[bytes] = []

    def raw(self, data: bytes) -> None:
        self.chunks.append(data)

    def u8(self, value: int) -> None:
        self.raw(struct.pack("<B", value))

    def u32(self, value: int) -> None:
        self.raw(struct.pack("<I", value))

    def u64(self, value: int) -> None:
        self.raw(struct.pack("<Q", value))

    def json_block(self, obj: object) -> None:
        payload = json.dumps(obj, sort_keys=True).encode("utf-8")
        self.u32(len(payload))
        self.raw(payload)

    def f32_array(self, values: np.ndarray) -> None:
        self.raw(np.ascontiguousarray(values, dtype="<f4").tobytes())

    def string(self, text: str) -> None:
        payload = text.encode("utf-8")
        self.u32(len(payload))
        self.raw(payload)

    def to_bytes(self) -> bytes:
        return b"".join(self.chunks)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def read_exact(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file: expected {n} bytes for {what}", offset=self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str) -> int:
        return struct.unpack("<B", self.read_exact(1, what))[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.read_exact(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.read_exact(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.read_exact(8, what))[0]

    def f32(self, what: str) -> float:
        return struct.unpack("<f", self.read_exact(4, what))[0]

    def json_block(self, what: str) -> object:
        start = self.pos
        length = self.u32(f"{what} length")
        payload = self.read_exact(length, what)
        try:
            return json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"corrupt {what} block: {exc}", offset=start) from exc

    def f32_array(self, count: int, what: str) -> np.ndarray:
        raw = self.read_exact(4 * count, what)
        return np.frombuffer(raw, dtype="<f4", count=count).astype(np.float32)

    def string(self, what: str) -> str:
        start = self.pos
        length = self.u32(f"{what} length")
        payload = self.read_exact(length, what)
        try:
            return payload.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"corrupt {what}: {exc}", offset=start) from exc

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(
                f"{len(self.data) - self.pos} trailing bytes after payload", offset=self.pos
            )


def _atomic_write(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _write_sample(writer: _Writer, sample: FeatureGridSample, config: DatasetConfig) -> None:
    expected = (config.grid_height, config.grid_width, config.feature_dim)
    if sample.features.shape != expected:
        raise FormatError(
            f"sample {sample.id} has feature shape {sample.features.shape}, config says {expected}"
        )
    writer.string(sample.id)
    writer.u32(len(sample.annotations))
    writer.f32_array(sample.features)
    for ann in sample.annotations:
        writer.raw(struct.pack("<ffH", ann.x, ann.y, ann.class_id))


def _read_sample(reader: _Reader, config: DatasetConfig) -> FeatureGridSample:
    sample_id = reader.string("sample id")
    n_annotations = reader.u32("annotation count")
    n_values = config.grid_height * config.grid_width * config.feature_dim
    features = reader.f32_array(n_values, f"features of {sample_id}").reshape(
        config.grid_height, config.grid_width, config.feature_dim
    )
    annotations = []
    for _ in range(n_annotations):
        x, y, class_id = struct.unpack("<ffH", reader.read_exact(10, "annotation record"))
        annotations.append(PointAnnotation(x=x, y=y, class_id=class_id))
    return FeatureGridSample(id=sample_id, features=features, annotations=tuple(annotations))


def save_dataset(split: DatasetSplit, path: str | Path) -> None:
    """Write a dataset split to ``path`` (atomic: temp file + rename).

    The container round-trips losslessly: features are float32 already and
    annotation coordinates were float32-rounded at generation time.
    """
    writer = _Writer()
    writer.raw(DATASET_MAGIC)
    writer.u32(DATASET_VERSION)
    writer.json_block(asdict(split.config))
    for subset in (split.labeled, split.unlabeled, split.validation, split.test):
        writer.u32(len(subset))
        for sample in subset:
            _write_sample(writer, sample, split.config)
    _atomic_write(path, writer.to_bytes())


def load_dataset(path: str | Path) -> DatasetSplit:
    """Read a dataset split written by :func:`save_dataset`."""
    reader = _Reader(Path(path).read_bytes())
    magic = reader.read_exact(len(DATASET_MAGIC), "magic")
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad magic {magic!r}, not a dataset container", offset=0)
    version = reader.u32("format version")
    if version != DATASET_VERSION:
        raise VersionError(
            f"unsupported dataset container version {version} (supported: {DATASET_VERSION})"
        )
    raw_config = reader.json_block("dataset config")
    try:
        raw_config["class_frequencies"] = tuple(raw_config["class_frequencies"])
        config = DatasetConfig(**raw_config)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"dataset config block malformed: {exc}") from exc
    subsets = []
    for name in ("labeled", "unlabeled", "validation", "test"):
        count = reader.u32(f"{name} sample count")
        subsets.append([_read_sample(reader, config) for _ in range(count)])
    reader.expect_end()
    return DatasetSplit(
        config=config,
        labeled=subsets[0],
        unlabeled=subsets[1],
        validation=subsets[2],
        test=subsets[3],
    )


def save_checkpoint(
    path: str | Path,
    arch: ModelArch,
    params: np.ndarray,
    opt_state: AdamState | None = None,
) -> None:
    """Write a model checkpoint: arch + float32 parameters + Adam state."""
    layout = param_layout(arch)
    if params.shape != (layout.total,):
        raise FormatError(f"params length {params.shape} does not match arch layout {layout.total}")
    writer = _Writer()
    writer.raw(CHECKPOINT_MAGIC)
    writer.u32(CHECKPOINT_VERSION)
    writer.json_block(asdict(arch))
    writer.u64(layout.total)
    writer.f32_array(params)
    if opt_state is None:
        writer.u8(0)
    else:
        writer.u8(1)
        writer.u64(opt_state.step)
        writer.f32_array(opt_state.m)
        writer.f32_array(opt_state.v)
    _atomic_write(path, writer.to_bytes())


def load_checkpoint(path: str | Path) -> tuple[ModelArch, np.ndarray, AdamState | None]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Parameters come back as float64 (compute dtype); the float32 storage
    quantization happened at save time.
    """
    reader = _Reader(Path(path).read_bytes())
    magic = reader.read_exact(len(CHECKPOINT_MAGIC), "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, not a checkpoint", offset=0)
    version = reader.u32("format version")
    if version != CHECKPOINT_VERSION:
        raise VersionError(
            f"unsupported checkpoint version {version} (supported: {CHECKPOINT_VERSION})"
        )
    raw_arch = reader.json_block("model arch")
    try:
        arch = ModelArch(**raw_arch)
    except TypeError as exc:
        raise FormatError(f"model arch block malformed: {exc}") from exc
    count = reader.u64("parameter count")
    layout = param_layout(arch)
    if count != layout.total:
        raise FormatError(f"parameter count {count} does not match arch layout {layout.total}")
    params = reader.f32_array(count, "parameters").astype(np.float64)
    opt_state: AdamState | None = None
    if reader.u8("optimizer state flag"):
        step = reader.u64("optimizer step")
        m = reader.f32_array(count, "optimizer first moment").astype(np.float64)
        v = reader.f32_array(count, "optimizer second moment").astype(np.float64)
        opt_state = AdamState(m=m, v=v, step=step)
    reader.expect_end()
    return arch, params, opt_state
