"""Length-prefixed byte records, the stable payload encoding on ``obj/`` topics.

A record is a flat sequence of fields.  Each field is a 4-byte big-endian
unsigned length followed by that many bytes.  ``str`` fields are UTF-8,
``int`` fields are ASCII decimal, and ``None`` is written as the reserved
length ``0xFFFFFFFF`` with no body.  The format never changes between
versions; new fields are only ever appended.
"""

from __future__ import annotations

import struct

_NONE = 0xFFFFFFFF
_LEN = struct.Struct(">I")

Field = bytes | str | int | None


_NONE_PREFIX = _LEN.pack(_NONE)


def encode_record(*fields: Field) -> bytes:
    parts = []
    pack = _LEN.pack
    for f in fields:
        t = type(f)
        if t is str:
            body = f.encode()
        elif t is bytes:
            body = f
        elif f is None:
            parts.append(_NONE_PREFIX)
            continue
        elif t is bool:
            raise TypeError("bool is not a record field type")
        elif isinstance(f, int):
            body = str(f).encode()
        elif isinstance(f, str):
            body = f.encode()
        else:
            body = bytes(f)
        parts.append(pack(len(body)))
        parts.append(body)
    return b"".join(parts)


def decode_record(data: bytes) -> list[bytes | None]:
    """Split a record back into raw fields (``None`` for absent ones)."""
    fields: list[bytes | None] = []
    i, n = 0, len(data)
    while i < n:
        if i + 4 > n:
            raise ValueError("truncated length prefix")
        (ln,) = _LEN.unpack_from(data, i)
        i += 4
        if ln == _NONE:
            fields.append(None)
            continue
        if i + ln > n:
            raise ValueError("truncated field body")
        fields.append(bytes(data[i : i + ln]))
        i += ln
    return fields


def as_str(f: bytes | None) -> str | None:
    return None if f is None else f.decode()


def as_int(f: bytes | None) -> int | None:
    return None if f is None else int(f)


# -- handler results --------------------------------------------------------
#
# A result travels as a one-letter tag field followed by its body:
#   n            None
#   b <bytes>    raw bytes
#   i <int>      integer
#   s <str>      text
#   m <k> <v>... map of text field -> bytes | None, as alternating fields


def encode_value(value: object) -> list[Field]:
    if value is None:
        return ["n"]
    if isinstance(value, (bytes, bytearray)):
        return ["b", bytes(value)]
    if isinstance(value, bool):
        raise TypeError("bool is not an encodable result")
    if isinstance(value, int):
        return ["i", value]
    if isinstance(value, str):
        return ["s", value]
    if isinstance(value, dict):
        out: list[Field] = ["m"]
        for k in sorted(value):
            v = value[k]
            if not isinstance(k, str) or not (v is None or isinstance(v, (bytes, bytearray))):
                raise TypeError("map results must map str to bytes or None")
            out += [k, None if v is None else bytes(v)]
        return out
    raise TypeError(f"cannot encode a {type(value).__name__} result")


def decode_value(fields: list[bytes | None]) -> object:
    tag = as_str(fields[0])
    body = fields[1:]
    if tag == "n":
        return None
    if tag == "b":
        return body[0]
    if tag == "i":
        return as_int(body[0])
    if tag == "s":
        return as_str(body[0])
    if tag == "m":
        return {as_str(body[i]): body[i + 1] for i in range(0, len(body), 2)}
    raise ValueError(f"unknown result tag {tag!r}")
