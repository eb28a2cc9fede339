"""
Value codec and wire framing.

Encoding: one tag byte, then the body. Integers are 8 byte little endian,
strings and bytes are u32 length prefixed, tuples/lists are a u32 count
followed by their items in field order.

Framing: u32 little endian length, then the payload. A zero length frame is
end of stream; no encoded value is empty so it cannot be confused with data.
"""

import struct

from errors import DecodeError
from prelude import ClusterId

# Python Struct format strings:
U32 = struct.Struct("<I")
I64 = struct.Struct("<q")
F64 = struct.Struct("<d")

MIN_I64 = -(1 << 63)
MAX_I64 = (1 << 63) - 1

# Refuse frames bigger than this, a corrupt length would otherwise stall the reader.
MAX_FRAME = 64 * 1024 * 1024

EOS_FRAME = U32.pack(0)

def encode(value) -> "bytes":
    out = bytearray()
    _encode(value, out)
    return bytes(out)

def _encode(value, out: "bytearray"):
    t = type(value)
    if t is int:
        if MIN_I64 <= value <= MAX_I64:
            out += b"i"
            out += I64.pack(value)
        else:
            body = value.to_bytes((value.bit_length() + 8) // 8, "little", signed=True)
            out += b"I"
            out += U32.pack(len(body))
            out += body
    elif t is str:
        body = value.encode()
        out += b"s"
        out += U32.pack(len(body))
        out += body
    elif t is tuple:
        out += b"t"
        out += U32.pack(len(value))
        for v in value:
            _encode(v, out)
    elif value is None:
        out += b"N"
    elif t is bool:
        out += b"T" if value else b"F"
    elif t is ClusterId:
        out += b"c"
        out += U32.pack(value.member_index)
    elif t is float:
        out += b"f"
        out += F64.pack(value)
    elif t is bytes:
        out += b"y"
        out += U32.pack(len(value))
        out += value
    elif t is list:
        out += b"l"
        out += U32.pack(len(value))
        for v in value:
            _encode(v, out)
    elif t is dict:
        out += b"d"
        out += U32.pack(len(value))
        for k, v in value.items():
            _encode(k, out)
            _encode(v, out)
    else:
        raise TypeError(f"cannot encode {t.__name__} values")

def decode(data: "bytes"):
    try:
        value, at = _decode(memoryview(data), 0)
    except (IndexError, struct.error) as e:
        raise DecodeError(f"truncated value: {e}") from None
    except UnicodeDecodeError as e:
        raise DecodeError(f"bad utf-8: {e}") from None
    if at != len(data):
        raise DecodeError(f"{len(data) - at} trailing bytes")
    return value

def _decode(buf: "memoryview", at: "int"):
    tag = buf[at]
    at += 1
    if tag == 0x69:  # i
        return I64.unpack_from(buf, at)[0], at + 8
    if tag == 0x73:  # s
        n = U32.unpack_from(buf, at)[0]
        at += 4
        _need(buf, at, n)
        return str(buf[at:at + n], "utf-8"), at + n
    if tag == 0x74 or tag == 0x6c:  # t, l
        n = U32.unpack_from(buf, at)[0]
        at += 4
        items = []
        for _ in range(n):
            v, at = _decode(buf, at)
            items.append(v)
        return (tuple(items) if tag == 0x74 else items), at
    if tag == 0x4e:  # N
        return None, at
    if tag == 0x54:  # T
        return True, at
    if tag == 0x46:  # F
        return False, at
    if tag == 0x63:  # c
        return ClusterId(U32.unpack_from(buf, at)[0]), at + 4
    if tag == 0x66:  # f
        return F64.unpack_from(buf, at)[0], at + 8
    if tag == 0x49 or tag == 0x79:  # I, y
        n = U32.unpack_from(buf, at)[0]
        at += 4
        _need(buf, at, n)
        body = bytes(buf[at:at + n])
        if tag == 0x49:
            return int.from_bytes(body, "little", signed=True), at + n
        return body, at + n
    if tag == 0x64:  # d
        n = U32.unpack_from(buf, at)[0]
        at += 4
        d = {}
        for _ in range(n):
            k, at = _decode(buf, at)
            v, at = _decode(buf, at)
            d[k] = v
        return d, at
    raise DecodeError(f"unknown tag 0x{tag:02x}")

def _need(buf: "memoryview", at: "int", n: "int"):
    if at + n > len(buf):
        raise IndexError(f"need {n} bytes at {at}, have {len(buf) - at}")

def frame(payload: "bytes") -> "bytes":
    if not payload:
        raise ValueError("empty payloads are reserved for end of stream")
    return U32.pack(len(payload)) + payload

class FrameReader(object):
    """
    Splits a byte stream into frame payloads.
    Feed it whatever recv() returned; b"" in the output marks end of stream.
    """
    def __init__(self):
        self.buffer = bytearray()

    def feed(self, data: "bytes") -> "list[bytes]":
        self.buffer += data
        frames = []
        at = 0
        buf = self.buffer
        while len(buf) - at >= 4:
            n = U32.unpack_from(buf, at)[0]
            if n > MAX_FRAME:
                raise DecodeError(f"frame of {n} bytes exceeds {MAX_FRAME}")
            if len(buf) - at - 4 < n:
                break
            frames.append(bytes(buf[at + 4:at + 4 + n]))
            at += 4 + n
        del buf[:at]
        return frames

    def pending(self) -> "int":
        """Bytes of an incomplete frame still buffered."""
        return len(self.buffer)

def unframe(data: "bytes") -> "list[bytes]":
    """Split a complete byte string into frames. Leftover bytes are an error."""
    reader = FrameReader()
    frames = reader.feed(data)
    if reader.pending():
        raise DecodeError(f"{reader.pending()} bytes of an incomplete frame")
    return frames
