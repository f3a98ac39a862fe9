"""Sender-side digest pipeline: TRN xor password, SHA3-512, rotate-and-rehash extension, 17-bit blocks.

Bit strings are MSB-first within octets throughout.
"""

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from ._validation import check_int_range, check_octets
from .exceptions import CapacityError, DomainError, EntropyError

TRN_OCTETS = 64
DIGEST_BITS = 512
BLOCK_BITS = 17
ROW_BITS, CURRENT_BITS, MASK_BITS = 7, 3, 7
MAX_ROTATIONS = 64

# Published FIPS 202 SHA3-512 known-answer vectors (NIST example values).
SHA3_512_KAT = (
    (b"", "a69f73cca23a9ac5c8b567dc185a756e97c982164fe25859e0d1dcc1475c80a6"
          "15b2123af1f5f94c11e3e9402c3ac558f500199d95b6d3e301758586281dcd26"),
    (b"abc", "b751850b1a57168a5693cd924b6b096e08f621827444f70d884f5d0240d2712e"
             "10e116e9192af3c91a7ec57647e3934057340b4cf408d5a56592f8274eec53f0"),
    (b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq",
     "04a371e84ecfb5b8b77cb48610fca8182dd457ce6f326a0fd3d7ec2f1e91636d"
     "ee691fbe0c985302ba1b0d8dc78c086346b533b49c030d99a27daf1139d6e75e"),
    (b"abcdefghbcdefghicdefghijdefghijkefghijklfghijklmghijklmnhijklmno"
     b"ijklmnopjklmnopqklmnopqrlmnopqrsmnopqrstnopqrstu",
     "afebb2ef542e6579c50cad06d2e578f9f8dd6881d7dc824d26360feebf18a4fa"
     "73e3261122948efcfd492e74e82e2189ed0fb440d187f382270cb455f21dd185"),
    (b"a" * 1_000_000,
     "3c3a876da14034ab60627c077bb98f7e120a2a5370212dffb3385a18d4f38859"
     "ed311d0a9d5141ce9cc5c66ee689b266a8aa18ace8282a0e0db596c90b0a7b87"),
)


def sha3_512(data):
    return hashlib.sha3_512(data).digest()


def sha3_selftest():
    """Run the SHA3-512 known-answer tests; return a list of ``(label, passed)``."""
    results = []
    for msg, expected in SHA3_512_KAT:
        label = f"sha3-512 len={len(msg)}"
        results.append((label, sha3_512(msg).hex() == expected))
    return results


@dataclass(frozen=True)
class Digest512:
    """The short message digest (SMD)."""

    octets: bytes

    def __post_init__(self):
        check_octets(self.octets, DIGEST_BITS // 8, "SMD")

    def __len__(self):
        return DIGEST_BITS


@dataclass(frozen=True)
class LongDigest:
    """Concatenation of ``rotations`` 512-bit digests (the LMD)."""

    octets: bytes
    rotations: int

    def __post_init__(self):
        if len(self.octets) * 8 != DIGEST_BITS * self.rotations:
            raise DomainError("LMD length does not match 512 * rotations")

    def __len__(self):
        return len(self.octets) * 8

    def bits(self):
        return np.unpackbits(np.frombuffer(self.octets, dtype=np.uint8))


@dataclass(frozen=True)
class Block:
    row_base: int
    current_idx: int
    mask: int


def derive_smd(trn, password):
    """SHA3-512 of ``trn XOR password``; both must be 64 octets."""
    trn = check_octets(trn, TRN_OCTETS, "trn")
    password = check_octets(password, TRN_OCTETS, "password")
    mixed = bytes(a ^ b for a, b in zip(trn, password))
    return Digest512(sha3_512(mixed))


def rotate_first_word(octets):
    """Rotate the leading 16-bit word left by one bit; the other 496 bits are untouched."""
    word = (octets[0] << 8) | octets[1]
    word = ((word << 1) | (word >> 15)) & 0xFFFF
    return bytes((word >> 8, word & 0xFF)) + octets[2:]


def extend_lmd(smd, rotations):
    """Build the LMD: segment 1 is the SMD, segment i+1 = SHA3-512(rot(segment i))."""
    rotations = check_int_range(rotations, 1, MAX_ROTATIONS, "rotations")
    if isinstance(smd, Digest512):
        smd = smd.octets
    seg = check_octets(smd, DIGEST_BITS // 8, "SMD")
    segments = [seg]
    for _ in range(rotations - 1):
        seg = sha3_512(rotate_first_word(seg))
        segments.append(seg)
    return LongDigest(b"".join(segments), rotations)


def block_capacity(rotations):
    return (DIGEST_BITS * rotations) // BLOCK_BITS


def block_fields(lmd, n_blocks):
    """Vectorized block parse: arrays ``(row_base, current_idx, mask)`` of length ``n_blocks``."""
    if n_blocks < 0:
        raise DomainError("n_blocks must be non-negative")
    if n_blocks * BLOCK_BITS > len(lmd):
        raise CapacityError(
            f"{n_blocks} blocks need {n_blocks * BLOCK_BITS} bits, LMD has {len(lmd)}"
        )
    bits = lmd.bits()[: n_blocks * BLOCK_BITS].reshape(n_blocks, BLOCK_BITS).astype(np.int64)

    def field(lo, width):
        weights = 1 << np.arange(width - 1, -1, -1)
        return bits[:, lo:lo + width] @ weights

    row = field(0, ROW_BITS)
    cur = field(ROW_BITS, CURRENT_BITS)
    mask = field(ROW_BITS + CURRENT_BITS, MASK_BITS)
    return row, cur, mask


def parse_blocks(lmd, n_blocks):
    """Slice the LMD into ``n_blocks`` 17-bit blocks; trailing bits are discarded."""
    if isinstance(n_blocks, bool) or not isinstance(n_blocks, (int, np.integer)) or n_blocks < 1:
        raise DomainError("n_blocks must be a positive integer")
    row, cur, mask = block_fields(lmd, int(n_blocks))
    return [Block(int(r), int(c), int(m)) for r, c, m in zip(row, cur, mask)]


def fresh_trn():
    """64 octets from the OS CSPRNG."""
    try:
        return os.urandom(TRN_OCTETS)
    except NotImplementedError as exc:
        raise EntropyError("no OS entropy source available") from exc


def counter_trn(master_seed, counter):
    """Deterministic per-run TRN: SHA3-512 over a domain tag, the seed and a counter."""
    master_seed = check_int_range(master_seed, 0, 2**64 - 1, "master_seed")
    counter = check_int_range(counter, 0, 2**64 - 1, "counter")
    tag = b"kpuf-trn" + master_seed.to_bytes(8, "little") + counter.to_bytes(8, "little")
    return sha3_512(tag)
