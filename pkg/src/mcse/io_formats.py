"""File formats: WAV audio, MSK1 mask tensors, ACT1 activity matrices, SCM1 dumps, JSON configs.

Binary layouts (all little-endian):

* MSK1: ``b"MSK1"``, uint32 ``C``, ``T``, ``F``, then ``C*T*F`` float32 with
  index ``k*T*F + t*F + f``.
* ACT1: ``b"ACT1"``, uint32 ``K``, ``T``, then ``K*T`` float32 with index ``k*T + t``.
* SCM1 (debug only): ``b"SCM1"``, uint32 ``ndim``, ``ndim`` uint32 dims, then
  complex128 values as interleaved float64 real/imag pairs in C order.
"""

from __future__ import annotations

import json
import struct
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from scipy.io import wavfile

from .errors import ConfigurationError, FormatError
from .stft import MultiChannelSignal

RANGE_TOLERANCE = 1e-3
WAV_ENCODINGS = ("float32", "pcm16")


def read_wav(path) -> MultiChannelSignal:
    """Read PCM16 (scaled by 1/32768) or IEEE float32 WAV as ``(samples, channels)`` float64."""
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise FormatError(f"{path}: unsupported or malformed WAV ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported WAV sample format {data.dtype} (need PCM16 or float32)")
    return MultiChannelSignal(samples, int(rate))


def write_wav(path, signal: MultiChannelSignal, encoding: str = "float32") -> None:
    """Write float32 (lossless for float32-representable samples) or PCM16 (clipped, rounded)."""
    if encoding not in WAV_ENCODINGS:
        raise FormatError(f"unknown WAV encoding {encoding!r}, expected one of {WAV_ENCODINGS}")
    x = signal.samples
    if encoding == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(path, signal.sample_rate_hz, data[:, 0] if data.shape[1] == 1 else data)


def _read_tensor(path, magic: bytes, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: file too short for a {magic.decode()} header")
    if raw[:4] != magic:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    dims = struct.unpack(f"<{ndim}I", raw[4:header])
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    actual = len(raw) - header
    if actual != expected:
        raise FormatError(f"{path}: payload has {actual} bytes, dimensions {dims} need {expected}")
    values = np.frombuffer(raw, dtype="<f4", offset=header).reshape(dims)
    if not np.all(np.isfinite(values)) or np.any(values < -RANGE_TOLERANCE) or np.any(values > 1 + RANGE_TOLERANCE):
        raise FormatError(f"{path}: values outside [0, 1]")
    return values.astype(np.float32)


def _write_tensor(path, magic: bytes, values, ndim: int) -> None:
    values = np.asarray(values)
    if values.ndim != ndim:
        raise FormatError(f"{magic.decode()} needs a {ndim}-D array, got shape {values.shape}")
    if not np.all(np.isfinite(values)) or np.any(values < -RANGE_TOLERANCE) or np.any(values > 1 + RANGE_TOLERANCE):
        raise FormatError(f"{magic.decode()} values must lie in [0, 1]")
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    Path(path).write_bytes(magic + struct.pack(f"<{ndim}I", *values.shape) + payload)


def read_mask(path) -> np.ndarray:
    """MSK1 file to a float32 ``(C, T, F)`` array."""
    return _read_tensor(path, b"MSK1", 3)


def write_mask(path, masks) -> None:
    _write_tensor(path, b"MSK1", masks, 3)


def read_activity(path) -> np.ndarray:
    """ACT1 file to a float32 ``(K, T)`` array."""
    return _read_tensor(path, b"ACT1", 2)


def write_activity(path, activity) -> None:
    _write_tensor(path, b"ACT1", activity, 2)


def write_scm(path, scm) -> None:
    """Debug dump of an SCM array of any shape; not a stable interchange format."""
    scm = np.asarray(scm, dtype=np.complex128)
    header = b"SCM1" + struct.pack(f"<I{scm.ndim}I", scm.ndim, *scm.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(scm, dtype="<c16").tobytes())


def read_scm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != b"SCM1":
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected b'SCM1'")
    (ndim,) = struct.unpack("<I", raw[4:8])
    dims = struct.unpack(f"<{ndim}I", raw[8 : 8 + 4 * ndim])
    offset = 8 + 4 * ndim
    expected = 16 * int(np.prod(dims, dtype=np.int64))
    if len(raw) - offset != expected:
        raise FormatError(f"{path}: payload has {len(raw) - offset} bytes, dimensions {dims} need {expected}")
    return np.frombuffer(raw, dtype="<c16", offset=offset).reshape(dims).astype(np.complex128)


def load_schema(name: str) -> dict:
    """Bundled JSON schema ``name`` (``scene``, ``pipeline`` or ``report``)."""
    text = resources.files("mcse").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(doc, schema_name: str) -> None:
    """Validate against a bundled schema; raises :class:`ConfigurationError` naming the field path."""
    validator = jsonschema.Draft202012Validator(load_schema(schema_name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigurationError(f"{schema_name} config invalid at {where}: {err.message}")


def load_json(path, schema_name: str | None = None) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read ({exc.strerror})") from exc
    if schema_name is not None:
        validate(doc, schema_name)
    return doc
