"""Binary model checkpoints.

Format: magic ``PPDN`` | u32 version | arch header (u32 depth, width,
in_channels, out_channels; u8 use_batch_norm) | trainable parameters as
little-endian float32 in layout order | batch-norm running statistics |
u32 CRC32 of everything before it. Round-trips are bit-exact, so a saved
and reloaded model reproduces forward outputs exactly.
"""

import struct
import zlib

import numpy as np

from .errors import CheckpointFormatError
from .network import ArchConfig, DenoiserModel, ParamLayout

MAGIC = b"PPDN"
FORMAT_VERSION = 1
_ARCH = struct.Struct("<IIIIB")


def save_checkpoint(path, model):
    arch = model.arch
    header = MAGIC + struct.pack("<I", FORMAT_VERSION)
    header += _ARCH.pack(
        arch.depth,
        arch.width,
        arch.in_channels,
        arch.out_channels,
        1 if arch.use_batch_norm else 0,
    )
    body = np.ascontiguousarray(model.params, dtype="<f4").tobytes()
    blob = header + body
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path):
    """Read a checkpoint, verifying magic, version, size, and CRC."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 + _ARCH.size + 4:
        raise CheckpointFormatError(f"{path}: truncated checkpoint")
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version}")
    (crc_stored,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc_stored:
        raise CheckpointFormatError(f"{path}: CRC mismatch")
    depth, width, cin, cout, use_bn = _ARCH.unpack_from(blob, 8)
    arch = ArchConfig(
        depth=depth,
        width=width,
        in_channels=cin,
        out_channels=cout,
        use_batch_norm=bool(use_bn),
    )
    body = blob[8 + _ARCH.size : -4]
    expected = ParamLayout(arch).total_size * 4
    if len(body) != expected:
        raise CheckpointFormatError(
            f"{path}: parameter payload is {len(body)} bytes, arch needs {expected}"
        )
    params = np.frombuffer(body, dtype="<f4")
    return DenoiserModel(arch, params.copy(), train_mode=False)
