"""Checkpoint persistence shared by both model kinds.

Layout: 8-byte magic ``SPECNET1``, little-endian uint32 header length, a JSON
header (architecture + hash, class order, parameter manifest), then all
parameter values as one little-endian float64 blob in manifest order.
Round-trips are bitwise: loading reproduces forward outputs exactly.
"""

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .cvae import build_cvae
from .datasets import CLASS_ORDER, DataFormatError
from .discriminator import build_discriminator

MAGIC = b"SPECNET1"
CHECKPOINT_FORMAT_VERSION = 1


def architecture_hash(arch):
    canon = json.dumps(arch, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def atomic_write_bytes(path, data):
    """Write via a temp file in the same directory plus rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, model):
    arch = model.architecture()
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": arch["kind"],
        "architecture": arch,
        "architecture_hash": architecture_hash(arch),
        "class_order": [c.label for c in CLASS_ORDER],
        "params": [[name, list(p.value.shape)] for name, p in model.params.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(p.value, dtype="<f8").tobytes() for p in model.params.values())
    atomic_write_bytes(path, MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + blob)


def _rebuild(arch):
    rng = np.random.default_rng(0)  # values are overwritten from the blob
    if arch["kind"] == "discriminator":
        return build_discriminator(
            rng,
            input_length=arch["input_length"],
            conv_channels=tuple(arch["conv_channels"]),
            hidden=tuple(arch["hidden"]),
            dropout_p=arch["dropout_p"],
        )
    if arch["kind"] == "cvae":
        return build_cvae(
            rng,
            input_length=arch["input_length"],
            conv_channels=tuple(arch["conv_channels"]),
            latent_dim=arch["latent_dim"],
            enc_cond_hidden=tuple(arch["enc_cond_hidden"]),
            enc_emb_hidden=arch["enc_emb_hidden"],
            dec_emb_hidden=arch["dec_emb_hidden"],
            dec_cond_hidden=tuple(arch["dec_cond_hidden"]),
        )
    raise DataFormatError(f"unknown checkpoint model kind {arch['kind']!r}")


def load_checkpoint(path):
    """Load either model kind; validates magic, hash, and the parameter manifest."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise DataFormatError(f"{path}:1:1: not a {MAGIC.decode()} checkpoint")
    (header_len,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    if start + header_len > len(data):
        raise DataFormatError(f"{path}:1:1: truncated checkpoint header")
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"{path}:1:1: bad checkpoint header: {e}") from None
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataFormatError(f"{path}:1:1: unsupported checkpoint version {header.get('format_version')!r}")
    arch = header["architecture"]
    if header.get("architecture_hash") != architecture_hash(arch):
        raise DataFormatError(f"{path}:1:1: architecture hash mismatch (corrupted header)")
    if header.get("class_order") != [c.label for c in CLASS_ORDER]:
        raise DataFormatError(f"{path}:1:1: checkpoint class order does not match this library")
    model = _rebuild(arch)
    manifest = [[name, list(p.value.shape)] for name, p in model.params.items()]
    if header["params"] != manifest:
        raise DataFormatError(f"{path}:1:1: parameter manifest does not match the declared architecture")
    blob = data[start + header_len :]
    expected = sum(p.value.size for p in model.params.values()) * 8
    if len(blob) != expected:
        raise DataFormatError(f"{path}:1:1: parameter blob has {len(blob)} bytes, expected {expected}")
    values = np.frombuffer(blob, dtype="<f8")
    offset = 0
    for p in model.params.values():
        n = p.value.size
        p.value = values[offset : offset + n].reshape(p.value.shape).astype(np.float64)
        offset += n
    return model
