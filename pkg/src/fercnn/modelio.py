"""Portable versioned binary model files.

Layout (all integers little-endian):

    bytes 0..3    magic "FERM"
    bytes 4..7    format version, uint32 (currently 1)
    bytes 8..11   header length in bytes, uint32
    header        UTF-8 JSON: ordered layer specs (kind + hyperparameters)
                  and a manifest of weight blobs (name, shape, byte offset,
                  byte length into the body)
    body          the weight arrays as raw float32 little-endian, tiled
                  back-to-back in manifest order with no gaps

Serialization is canonical (sorted JSON keys, fixed blob order), so saving
the same model twice yields byte-identical files. A model file is fully
self-describing for inference: batch-norm running statistics are included.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .layers import Model, layer_from_spec
from .tensor import DEFAULT_DTYPE

MAGIC = b"FERM"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Base for all model-file problems."""


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class ManifestError(ModelFormatError):
    pass


class TruncatedBodyError(ModelFormatError):
    pass


def _manifest_entries(model: Model):
    """Deterministic blob order: layer index, then the layer's own state
    order (params first, then running statistics)."""
    for i, layer in enumerate(model.layers):
        for name, arr in layer.state().items():
            yield f"{i}.{name}", arr


def save_model(model: Model, path) -> None:
    """Writes atomically (temp file + rename in the target directory)."""
    layer_specs = [{"kind": l.kind, "hyperparams": l.hyperparams()} for l in model.layers]
    manifest = []
    blobs = []
    offset = 0
    for name, arr in _manifest_entries(model):
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "length": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"layers": layer_specs, "weights": manifest},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")

    payload = b"".join([
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<I", len(header)),
        header,
        b"".join(blobs),
    ])
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ferm-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path, dtype=DEFAULT_DTYPE) -> Model:
    """Reconstructs a model producing bit-identical infer-mode outputs to the
    one saved (same 32-bit arithmetic)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic: {path} is not a model file")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")
    header_len = struct.unpack("<I", blob[8:12])[0]
    if len(blob) < 12 + header_len:
        raise TruncatedBodyError("file ends inside the header")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ManifestError(f"unreadable header: {e}") from None
    body = blob[12 + header_len :]

    try:
        layers = [layer_from_spec(spec["kind"], spec["hyperparams"]) for spec in header["layers"]]
        manifest = header["weights"]
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"malformed header: {e}") from None

    model = Model(layers, dtype=np.float32)
    expected = {name: arr for name, arr in _manifest_entries(model)}
    if [m["name"] for m in manifest] != list(expected):
        raise ManifestError("manifest does not list the layers' weights in order")

    offset = 0
    state = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        length = int(entry["length"])
        if entry["offset"] != offset:
            raise ManifestError(f"manifest gap or overlap at {entry['name']}")
        if length != int(np.prod(shape)) * 4:
            raise ManifestError(f"blob length does not match shape for {entry['name']}")
        if expected[entry["name"]].shape != shape:
            raise ManifestError(f"shape mismatch for {entry['name']}: "
                                f"{shape} vs {expected[entry['name']].shape}")
        end = offset + length
        if end > len(body):
            raise TruncatedBodyError(f"truncated body: {entry['name']} extends past end of file")
        state[entry["name"]] = np.frombuffer(body[offset:end], dtype="<f4").reshape(shape)
        offset = end
    if offset != len(body):
        raise ManifestError(f"body has {len(body) - offset} trailing bytes not covered by the manifest")
    model.load_state(state)
    if np.dtype(dtype) != np.float32:
        model = model.astype(dtype)
    return model
