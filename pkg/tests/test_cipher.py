import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keccak_ref import sha3_512_ref
from kpuf.cipher import (
    Ciphertext,
    capacity,
    decrypt,
    encrypt,
    encrypt_traced,
    select_rotations,
)
from kpuf.exceptions import CapacityError, DecodabilityError, DomainError, ParseError, TamperError
from kpuf.puf import PufImage, generate_puf

PW = bytes(range(64))
TRN = bytes(range(64, 128))


@pytest.fixture(scope="module")
def image():
    return generate_puf(2024)


def _reference_encrypt(plaintext, password, trn, symbols, rotations):
    """Bit-string re-derivation of the cipher with the reference sponge."""
    seg = sha3_512_ref(bytes(a ^ b for a, b in zip(trn, password)))
    segments = [seg]
    for _ in range(rotations - 1):
        w = int.from_bytes(seg[:2], "big")
        w = ((w << 1) | (w >> 15)) & 0xFFFF
        seg = sha3_512_ref(w.to_bytes(2, "big") + seg[2:])
        segments.append(seg)
    bits = "".join(format(b, "08b") for b in b"".join(segments))
    out = []
    for i, octet in enumerate(plaintext):
        for j, nibble in enumerate((octet >> 4, octet & 0xF)):
            blk = bits[17 * (2 * i + j):17 * (2 * i + j + 1)]
            row = int(blk[:7], 2) ^ nibble
            cur = int(blk[7:10], 2)
            out.append(int(symbols[row, cur]) ^ int(blk[10:], 2))
    return out


@pytest.mark.parametrize("rotations,expected", [(16, 240), (32, 481), (64, 963)])
def test_capacity_table(rotations, expected):
    assert capacity(rotations) == expected


@pytest.mark.parametrize("length,expected", [(0, 16), (240, 16), (241, 32), (481, 32), (482, 64), (963, 64)])
def test_rotation_selection(length, expected):
    assert select_rotations(length) == expected


def test_too_long_for_any_rotation(image):
    with pytest.raises(CapacityError):
        encrypt(b"x" * 964, PW, TRN, image)


def test_forced_rotation_capacity(image):
    with pytest.raises(CapacityError):
        encrypt(b"x" * 241, PW, TRN, image, rotations=16)


def test_240_characters_give_480_symbols(image):
    ct, rows, cur = encrypt_traced(b"a" * 240, PW, TRN, image)
    assert ct.rotations == 16
    assert len(ct) == 480 and rows.size == 480 and cur.size == 480


def test_empty_plaintext(image):
    ct = encrypt(b"", PW, TRN, image)
    assert len(ct) == 0
    assert decrypt(ct, PW, image) == b""
    assert Ciphertext.from_bytes(ct.to_bytes()) == ct


def test_matches_reference_derivation(image):
    msg = b"Keyless ciphers read the array."
    ct = encrypt(msg, PW, TRN, image)
    assert ct.symbols.tolist() == _reference_encrypt(msg, PW, TRN, image.symbols, 16)


def test_str_plaintext_is_utf8(image):
    assert encrypt("café", PW, TRN, image) == encrypt("café".encode(), PW, TRN, image)


@settings(max_examples=60, deadline=None)
@given(st.binary(max_size=240), st.binary(min_size=64, max_size=64), st.binary(min_size=64, max_size=64))
def test_round_trip(msg, pw, trn):
    image = generate_puf(99)
    assert decrypt(encrypt(msg, pw, trn, image), pw, image) == msg


@pytest.mark.parametrize("rotations", [32, 64])
def test_round_trip_long(image, rotations):
    msg = os.urandom(capacity(rotations))
    ct = encrypt(msg, PW, TRN, image, rotations)
    assert ct.rotations == rotations
    assert decrypt(ct, PW, image) == msg


def test_same_inputs_same_ciphertext(image):
    assert encrypt(b"determinism", PW, TRN, image) == encrypt(b"determinism", PW, TRN, image)


def test_fresh_trn_changes_ciphertext(image):
    a = encrypt(b"same text", PW, os.urandom(64), image)
    b = encrypt(b"same text", PW, os.urandom(64), image)
    assert not np.array_equal(a.symbols, b.symbols)


def test_wrong_image_is_tamper(image):
    ct = encrypt(b"a message that will not decode elsewhere", PW, TRN, image)
    with pytest.raises(TamperError):
        decrypt(ct, PW, generate_puf(2025))


def test_wrong_password_is_tamper(image):
    ct = encrypt(b"a message that will not decode elsewhere", PW, TRN, image)
    with pytest.raises(TamperError):
        decrypt(ct, bytes(64), image)


@settings(max_examples=60, deadline=None)
@given(st.binary(min_size=1, max_size=120), st.data())
def test_bit_flip_is_local(msg, data):
    image = generate_puf(5)
    ct = encrypt(msg, PW, TRN, image)
    idx = data.draw(st.integers(0, len(ct) - 1))
    bit = data.draw(st.integers(0, 15))
    symbols = ct.symbols.astype(np.int64)
    symbols[idx] ^= 1 << bit
    flipped = Ciphertext(ct.trn, ct.rotations, symbols)
    try:
        out = decrypt(flipped, PW, image)
    except TamperError:
        return
    diff = [i for i, (a, b) in enumerate(zip(out, msg)) if a != b]
    assert len(out) == len(msg)
    assert diff == [] or diff == [idx // 2]


def test_undecodable_image_is_reported():
    flat = PufImage(np.full((128, 8), 5000.0))
    ct = encrypt(b"hi", PW, TRN, flat)
    with pytest.raises(DecodabilityError):
        decrypt(ct, PW, flat)


def test_odd_symbol_count_rejected(image):
    ct = Ciphertext(TRN, 16, [1, 2, 3])
    with pytest.raises(DomainError):
        decrypt(ct, PW, image)


def test_binary_layout(image):
    ct = encrypt(b"abc", PW, TRN, image)
    raw = ct.to_bytes()
    magic, version, rot, count = struct.unpack_from("<4sBHI", raw)
    assert (magic, version, rot, count) == (b"KPUF", 1, 16, 6)
    assert raw[11:75] == TRN
    assert np.frombuffer(raw[75:], dtype="<u2").tolist() == ct.symbols.tolist()


def test_hex_and_binary_round_trips(image):
    ct = encrypt(b"formats", PW, TRN, image)
    assert Ciphertext.from_bytes(ct.to_bytes()) == ct
    assert Ciphertext.from_hex(ct.to_hex()) == ct
    assert Ciphertext.load(ct.to_bytes()) == ct
    assert Ciphertext.load(ct.to_hex().encode()) == ct


@pytest.mark.parametrize("mutate", [
    lambda b: b[:10],
    lambda b: b"XPUF" + b[4:],
    lambda b: b[:4] + b"\x02" + b[5:],
    lambda b: b[:-1],
])
def test_malformed_binary(image, mutate):
    raw = encrypt(b"formats", PW, TRN, image).to_bytes()
    with pytest.raises(ParseError):
        Ciphertext.from_bytes(mutate(raw))


def test_malformed_hex():
    with pytest.raises(ParseError):
        Ciphertext.load(b"4b50zz")


@pytest.mark.parametrize("kwargs", [dict(trn=bytes(63)), dict(rotations=0), dict(rotations=65),
                                    dict(symbols=[70000])])
def test_ciphertext_validation(kwargs):
    args = dict(trn=TRN, rotations=16, symbols=[1, 2])
    args.update(kwargs)
    with pytest.raises(DomainError):
        Ciphertext(**args)


def test_rejects_non_image():
    with pytest.raises(DomainError):
        encrypt(b"x", PW, TRN, np.zeros((128, 8)))
