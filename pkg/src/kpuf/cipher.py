"""Keyless encryption against a PUF image.

Each plaintext octet is split into two nibbles (high first) and each nibble
consumes one 17-bit block.  The nibble is xored into the low four bits of the
block's row address, the addressed cell is read at the block's current
column, and the reading is whitened with the block's 7-bit mask.  The
ciphertext is the handshake TRN plus those whitened readings.

The receiver regenerates the blocks and, for each one, searches the 16 rows
of the decode group for the unique reading that matches.
"""

import re
import struct
from dataclasses import dataclass

import numpy as np

from ._validation import check_int_range, check_octets
from .digest import (
    MAX_ROTATIONS,
    TRN_OCTETS,
    block_capacity,
    block_fields,
    derive_smd,
    extend_lmd,
)
from .exceptions import CapacityError, DecodabilityError, DomainError, ParseError, TamperError
from .puf import GROUP_SIZE, PufImage, validate_decodability

STANDARD_ROTATIONS = (16, 32, 64)
BLOCKS_PER_CHAR = 2

MAGIC = b"KPUF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sBHI")


def capacity(rotations):
    """Maximum plaintext length in octets for ``rotations`` LMD segments."""
    return block_capacity(rotations) // BLOCKS_PER_CHAR


def select_rotations(length):
    """Smallest standard rotation count whose capacity holds ``length`` characters."""
    for r in STANDARD_ROTATIONS:
        if length <= capacity(r):
            return r
    raise CapacityError(
        f"plaintext of {length} characters exceeds maximum capacity {capacity(MAX_ROTATIONS)}"
    )


@dataclass(frozen=True, eq=False)
class Ciphertext:
    trn: bytes
    rotations: int
    symbols: np.ndarray

    def __post_init__(self):
        check_octets(self.trn, TRN_OCTETS, "trn")
        check_int_range(self.rotations, 1, MAX_ROTATIONS, "rotations")
        sym = np.array(self.symbols, dtype=np.int64).ravel()
        if sym.size and (sym.min() < 0 or sym.max() > 0xFFFF):
            raise DomainError("ciphertext symbols must be 16-bit unsigned values")
        sym = sym.astype(np.uint16)
        sym.setflags(write=False)
        object.__setattr__(self, "symbols", sym)

    def __len__(self):
        return int(self.symbols.size)

    def __eq__(self, other):
        if not isinstance(other, Ciphertext):
            return NotImplemented
        return (
            self.trn == other.trn
            and self.rotations == other.rotations
            and np.array_equal(self.symbols, other.symbols)
        )

    __hash__ = None

    def to_bytes(self):
        header = _HEADER.pack(MAGIC, FORMAT_VERSION, self.rotations, self.symbols.size)
        return header + self.trn + self.symbols.astype("<u2").tobytes()

    @classmethod
    def from_bytes(cls, data):
        if len(data) < _HEADER.size + TRN_OCTETS:
            raise ParseError("ciphertext too short")
        magic, version, rotations, count = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ParseError("bad magic, not a KPUF ciphertext")
        if version != FORMAT_VERSION:
            raise ParseError(f"unsupported format version {version}")
        body = data[_HEADER.size:]
        trn, payload = body[:TRN_OCTETS], body[TRN_OCTETS:]
        if len(payload) != 2 * count:
            raise ParseError(f"expected {count} symbols, found {len(payload) / 2:g}")
        symbols = np.frombuffer(payload, dtype="<u2")
        try:
            return cls(trn, rotations, symbols)
        except DomainError as exc:
            raise ParseError(str(exc)) from None

    def to_hex(self, width=64):
        h = self.to_bytes().hex()
        return "\n".join(h[i:i + width] for i in range(0, len(h), width)) + "\n"

    @classmethod
    def from_hex(cls, text):
        cleaned = re.sub(r"\s+", "", text)
        try:
            raw = bytes.fromhex(cleaned)
        except ValueError as exc:
            raise ParseError(f"invalid hex dump: {exc}") from None
        return cls.from_bytes(raw)

    @classmethod
    def load(cls, data):
        """Parse either the binary form or its hex dump."""
        if data[:4] == MAGIC:
            return cls.from_bytes(data)
        try:
            text = data.decode("ascii")
        except UnicodeDecodeError:
            raise ParseError("neither a binary nor a hex ciphertext") from None
        return cls.from_hex(text)


def _as_octets(plaintext):
    if isinstance(plaintext, str):
        return plaintext.encode("utf-8")
    if isinstance(plaintext, (bytearray, memoryview)):
        return bytes(plaintext)
    if not isinstance(plaintext, bytes):
        raise DomainError(f"plaintext must be bytes or str, got {type(plaintext).__name__}")
    return plaintext


def _nibbles(octets):
    arr = np.frombuffer(octets, dtype=np.uint8).astype(np.int64)
    out = np.empty(arr.size * 2, dtype=np.int64)
    out[0::2] = arr >> 4
    out[1::2] = arr & 0x0F
    return out


def _blocks(password, trn, rotations, n_blocks):
    lmd = extend_lmd(derive_smd(trn, password), rotations)
    return block_fields(lmd, n_blocks)


def _resolve_rotations(length, rotations):
    if rotations is None:
        return select_rotations(length)
    rotations = check_int_range(rotations, 1, MAX_ROTATIONS, "rotations")
    if length > capacity(rotations):
        raise CapacityError(
            f"plaintext of {length} characters exceeds capacity {capacity(rotations)} "
            f"at {rotations} rotations"
        )
    return rotations


def _check_puf(puf):
    if not isinstance(puf, PufImage):
        raise DomainError("puf must be a PufImage")


def encrypt(plaintext, password, trn, puf, rotations=None):
    """Encrypt ``plaintext`` by reading ``puf`` at plaintext-steered cells.

    ``rotations`` defaults to the smallest of 16, 32, 64 that fits.
    """
    return encrypt_traced(plaintext, password, trn, puf, rotations)[0]


def encrypt_traced(plaintext, password, trn, puf, rotations=None):
    """Like :func:`encrypt` but also return the visited ``(rows, currents)``."""
    _check_puf(puf)
    octets = _as_octets(plaintext)
    trn = check_octets(trn, TRN_OCTETS, "trn")
    rotations = _resolve_rotations(len(octets), rotations)
    nib = _nibbles(octets)
    row_base, cur, mask = _blocks(password, trn, rotations, nib.size)
    rows = row_base ^ nib
    readings = puf.symbols[rows, cur].astype(np.int64)
    return Ciphertext(trn, rotations, readings ^ mask), rows, cur


def decrypt(ciphertext, password, puf):
    """Invert ``ciphertext`` against the matched enrollment image ``puf``."""
    _check_puf(puf)
    n = len(ciphertext)
    if n % BLOCKS_PER_CHAR:
        raise DomainError("ciphertext must hold an even number of symbols")
    if n // BLOCKS_PER_CHAR > capacity(ciphertext.rotations):
        raise CapacityError("ciphertext longer than its rotation count allows")
    if n == 0:
        return b""
    row_base, cur, mask = _blocks(password, ciphertext.trn, ciphertext.rotations, n)
    target = ciphertext.symbols.astype(np.int64) ^ mask
    candidates = row_base[:, None] ^ np.arange(GROUP_SIZE)
    matches = puf.symbols[candidates, cur[:, None]] == target[:, None]
    hits = matches.sum(axis=1)
    if np.any(hits == 0):
        first = int(np.flatnonzero(hits == 0)[0])
        raise TamperError(f"no nibble reproduces symbol {first}; wrong PUF image or altered ciphertext")
    if np.any(hits > 1):
        raise DecodabilityError(
            f"ambiguous decode groups {validate_decodability(puf)}; image is not decodable"
        )
    nib = matches.argmax(axis=1)
    return ((nib[0::2] << 4) | nib[1::2]).astype(np.uint8).tobytes()
