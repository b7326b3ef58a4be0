"""Binary weight checkpoints.

Layout (all little-endian)::

    offset  size  field
    0       4     magic b"QFZN"
    4       2     format version (1)
    6       2     flags (bit 0: recurrent)
    8       16    n_in, embed, hidden, n_actions as uint32
    24      ...   parameter blocks, float64 row-major, in the order
                  W_embed, b_embed, [W_x, W_h, b_lstm,] W_q, b_q
    end-4   4     CRC-32 of every preceding byte
"""

import struct
import zlib

import numpy as np

from .network import QNetwork

MAGIC = b"QFZN"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIII")


class CheckpointError(ValueError):
    pass


def dump_bytes(net):
    n_in, embed, hidden, n_actions, recurrent = net.dims()
    buf = bytearray(_HEADER.pack(MAGIC, VERSION, recurrent, n_in, embed, hidden, n_actions))
    for name in net.param_names:
        buf += np.ascontiguousarray(net.params[name], dtype="<f8").tobytes()
    buf += struct.pack("<I", zlib.crc32(buf))
    return bytes(buf)


def load_bytes(raw, dtype=np.float64):
    if len(raw) < _HEADER.size + 4:
        raise CheckpointError("checkpoint too short")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    magic, version, flags, n_in, embed, hidden, n_actions = _HEADER.unpack_from(body)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    recurrent = bool(flags & 1)
    net = QNetwork(n_in, n_actions, embed, hidden if recurrent else 0, recurrent,
                   dtype=dtype)
    off = _HEADER.size
    for name in net.param_names:
        shape = net.params[name].shape
        n = int(np.prod(shape))
        end = off + 8 * n
        if end > len(body):
            raise CheckpointError("checkpoint truncated")
        net.params[name][...] = np.frombuffer(body[off:end], dtype="<f8").reshape(shape)
        off = end
    if off != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    return net


def save_checkpoint(net, path):
    with open(path, "wb") as fh:
        fh.write(dump_bytes(net))


def load_checkpoint(path, dtype=np.float64):
    with open(path, "rb") as fh:
        return load_bytes(fh.read(), dtype)
