"""Checkpoint binary format and run-configuration files.

Checkpoint layout, in file order:

  bytes 0..7    magic ``b"NRMINFR\\x00"``
  bytes 8..11   format version, unsigned 32-bit little-endian (currently 1)
  bytes 12..19  header length in bytes, unsigned 64-bit little-endian
  header        UTF-8 JSON, canonical form (sorted keys, no whitespace)
  payload       raw little-endian tensor bytes, concatenated in the
                deterministic parameter traversal order

The header records the model config with its hash, caller metadata, a
tensor manifest (name, shape, dtype per tensor), and the SHA-256 of the
payload. Every section is verified on load so corruption is reported by
section name instead of surfacing as garbage weights.

Run configuration is a flat ``key = value`` text file. Unknown keys are
rejected rather than ignored, omitted keys take the full-scale defaults,
and serializing a loaded config parses back to an equal value.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .base import CheckpointError, CheckpointVersionError, ConfigError
from .model import BlockParameters, ModelConfig, ModelParameters
from .tensor import parameter
from .training import TrainConfig

MAGIC = b"NRMINFR\x00"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def config_hash(config: ModelConfig) -> str:
    return hashlib.sha256(_canonical_json(config.to_dict())).hexdigest()


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Tensor name to shape, as the config dictates them."""
    d, f, c = config.d_model, config.d_ffn, config.n_classes
    shapes: dict[str, tuple[int, ...]] = {"embedding": (config.embedding_rows, d)}
    for i in range(config.n_blocks):
        p = f"blocks.{i}."
        shapes[p + "w_qkv"] = (d, 3 * d)
        shapes[p + "w_o"] = (d, d)
        shapes[p + "ln1_gain"] = (d,)
        shapes[p + "ln1_bias"] = (d,)
        shapes[p + "w_ffn1"] = (d, f)
        shapes[p + "b_ffn1"] = (f,)
        shapes[p + "w_ffn2"] = (f, d)
        shapes[p + "b_ffn2"] = (d,)
        shapes[p + "ln2_gain"] = (d,)
        shapes[p + "ln2_bias"] = (d,)
    shapes["head.w_cls"] = (d, c)
    shapes["head.b_cls"] = (c,)
    return shapes


def _le_dtype(name: str) -> np.dtype:
    if name not in ("float32", "float64"):
        raise CheckpointError(f"tensor manifest: unsupported dtype {name!r}")
    return np.dtype(name).newbyteorder("<")


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"metadata value {value!r} is not JSON-serializable")


def save_checkpoint(params: ModelParameters, meta: dict | None, path: str | Path) -> None:
    """Persist weights with enough integrity data to verify them on load."""
    manifest = []
    chunks = []
    for name, tensor in params.named_tensors():
        dtype_name = tensor.data.dtype.name
        arr = np.ascontiguousarray(tensor.data).astype(_le_dtype(dtype_name), copy=False)
        manifest.append(
            {"name": name, "shape": list(tensor.data.shape), "dtype": dtype_name}
        )
        chunks.append(arr.tobytes())
    payload = b"".join(chunks)
    header = {
        "config": params.config.to_dict(),
        "config_sha256": config_hash(params.config),
        "meta": meta or {},
        "tensors": manifest,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    try:
        header_bytes = json.dumps(
            header, sort_keys=True, separators=(",", ":"), default=_jsonable
        ).encode("utf-8")
    except TypeError as exc:
        raise CheckpointError(f"header: {exc}") from None
    with Path(path).open("wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, CHECKPOINT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


@dataclass
class Checkpoint:
    params: ModelParameters
    meta: dict


def _read_header(raw: bytes) -> tuple[dict, bytes]:
    if len(raw) < _PREFIX.size:
        raise CheckpointError(
            f"magic: file too short ({len(raw)} bytes) to be a checkpoint"
        )
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"magic: {magic!r} is not a checkpoint signature")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"version: file has format version {version}; this reader "
            f"supports version {CHECKPOINT_VERSION}"
        )
    header_end = _PREFIX.size + header_len
    if len(raw) < header_end:
        raise CheckpointError(
            f"header: truncated ({len(raw) - _PREFIX.size} of {header_len} bytes)"
        )
    try:
        header = json.loads(raw[_PREFIX.size : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"header: not valid JSON ({exc})") from None
    missing = {"config", "config_sha256", "meta", "tensors", "payload_sha256"} - set(header)
    if missing:
        raise CheckpointError(f"header: missing fields {sorted(missing)}")
    return header, raw[header_end:]


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read, verify, and rebuild parameters from a checkpoint file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"file: cannot read {path} ({exc})") from None
    header, payload = _read_header(raw)

    try:
        config = ModelConfig(**header["config"])
    except (TypeError, ConfigError) as exc:
        raise CheckpointError(f"config: {exc}") from None
    if config_hash(config) != header["config_sha256"]:
        raise CheckpointError("config: hash mismatch, header is corrupt")

    shapes = expected_shapes(config)
    manifest = header["tensors"]
    names = [entry.get("name") for entry in manifest]
    if names != list(shapes):
        raise CheckpointError(
            "tensor manifest: names do not match the config's parameter set"
        )
    for entry in manifest:
        want = shapes[entry["name"]]
        if tuple(entry["shape"]) != want:
            raise CheckpointError(
                f"tensor manifest: {entry['name']} has shape {entry['shape']}, "
                f"config requires {list(want)}"
            )

    expected_size = sum(
        int(np.prod(e["shape"], dtype=np.int64)) * _le_dtype(e["dtype"]).itemsize
        for e in manifest
    )
    if len(payload) != expected_size:
        raise CheckpointError(
            f"payload: {len(payload)} bytes, manifest requires {expected_size}"
        )
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError("payload: checksum mismatch, tensor data is corrupt")

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest:
        dt = _le_dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        flat = np.frombuffer(payload, dtype=dt, count=count, offset=offset)
        arrays[entry["name"]] = flat.reshape(entry["shape"]).astype(entry["dtype"])
        offset += count * dt.itemsize

    blocks = []
    for i in range(config.n_blocks):
        p = f"blocks.{i}."
        blocks.append(
            BlockParameters(
                **{
                    field: parameter(arrays[p + field])
                    for field in (
                        "w_qkv", "w_o", "ln1_gain", "ln1_bias",
                        "w_ffn1", "b_ffn1", "w_ffn2", "b_ffn2",
                        "ln2_gain", "ln2_bias",
                    )
                }
            )
        )
    params = ModelParameters(
        embedding=parameter(arrays["embedding"]),
        blocks=blocks,
        w_cls=parameter(arrays["head.w_cls"]),
        b_cls=parameter(arrays["head.b_cls"]),
        config=config,
    )
    return Checkpoint(params=params, meta=header["meta"])


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


_INT_KEYS = (
    "vocab_words", "n_blocks", "n_heads", "d_model", "d_ffn", "max_len",
    "n_classes", "batch_size", "patience_epochs", "max_epochs", "min_count",
    "seed",
)
_FLOAT_KEYS = (
    "layer_norm_eps", "dropout", "base_lr", "warmup_fraction", "clip_bound",
)
_PATH_KEYS = (
    "train_path", "validation_path", "test_path", "conflicts_path", "output_dir",
)


@dataclass(frozen=True)
class RunConfig:
    """One run's full recipe: architecture, optimization, data, output.

    vocab_words only sizes the embedding table for parameter accounting;
    training replaces it with the vocabulary actually built from data.
    """

    vocab_words: int = 56220
    n_blocks: int = 12
    n_heads: int = 12
    d_model: int = 240
    d_ffn: int | None = None
    max_len: int = 360
    n_classes: int = 3
    layer_norm_eps: float = 1e-5
    dropout: float = 0.0
    base_lr: float = 6.25e-5
    warmup_fraction: float = 0.002
    clip_bound: float = 1.0
    batch_size: int = 16
    patience_epochs: int = 10
    max_epochs: int = 100
    min_count: int = 1
    seed: int = 0
    train_path: str | None = None
    validation_path: str | None = None
    test_path: str | None = None
    conflicts_path: str | None = None
    output_dir: str = "out"

    def model_config(self, vocab_words: int | None = None) -> ModelConfig:
        return ModelConfig(
            vocab_words=self.vocab_words if vocab_words is None else vocab_words,
            n_blocks=self.n_blocks,
            n_heads=self.n_heads,
            d_model=self.d_model,
            d_ffn=self.d_ffn,
            max_len=self.max_len,
            n_classes=self.n_classes,
            layer_norm_eps=self.layer_norm_eps,
            dropout=self.dropout,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            base_lr=self.base_lr,
            warmup_fraction=self.warmup_fraction,
            clip_bound=self.clip_bound,
            batch_size=self.batch_size,
            patience_epochs=self.patience_epochs,
            max_epochs=self.max_epochs,
            seed=self.seed,
        )


_FIELD_ORDER = tuple(f.name for f in dataclasses.fields(RunConfig))


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    """Parse ``key = value`` lines; blank lines and ``#`` comments allowed."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(
                f"{source}:{lineno}: expected 'key = value', got {stripped!r}"
            )
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _FIELD_ORDER:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if key in _INT_KEYS:
            try:
                values[key] = int(value)
            except ValueError:
                raise ConfigError(
                    f"{source}:{lineno}: key {key!r} needs an integer, got {value!r}"
                ) from None
        elif key in _FLOAT_KEYS:
            try:
                values[key] = float(value)
            except ValueError:
                raise ConfigError(
                    f"{source}:{lineno}: key {key!r} needs a number, got {value!r}"
                ) from None
        else:
            if not value:
                raise ConfigError(f"{source}:{lineno}: key {key!r} has an empty value")
            values[key] = value
    return RunConfig(**values)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path} ({exc})") from None
    return parse_config_text(text, source=str(path))


def serialize_config(cfg: RunConfig) -> str:
    """Every effective value, defaults included, one key per line.

    Unset optional paths are omitted; parsing the output reproduces cfg.
    """
    lines = []
    for name in _FIELD_ORDER:
        value = getattr(cfg, name)
        if value is None:
            continue
        lines.append(f"{name} = {value!r}" if isinstance(value, float) else f"{name} = {value}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(serialize_config(cfg), encoding="utf-8")
