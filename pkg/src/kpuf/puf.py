"""Simulated ReRAM PUF: enrollment images, deterministic reads, decodability.

A PUF image is a 128 x 8 grid of cell resistances.  The row is selected by a
7-bit address and the column by a 3-bit current index.  Reads are noiseless
and quantized to 16-bit response symbols on a logarithmic scale.

Decryption searches the 16 rows that share the upper three address bits
(a *decode group*) at a fixed current column, so within every group the 16
symbols must be pairwise distinct.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_int_range
from .exceptions import DecodabilityError, DomainError, ParseError

N_ROWS = 128
N_CURRENTS = 8
N_CELLS = N_ROWS * N_CURRENTS
GROUP_SIZE = 16
N_GROUPS = N_ROWS // GROUP_SIZE

R_MIN = 1.0e3
R_MAX = 1.0e6
SYMBOL_LEVELS = 65536

MAX_REPAIR_ATTEMPTS = 1000


def quantize(resistance):
    """Map resistance in ohms to a 16-bit symbol on a log scale over [R_MIN, R_MAX]."""
    r = np.asarray(resistance, dtype=np.float64)
    frac = (np.log(r) - np.log(R_MIN)) / (np.log(R_MAX) - np.log(R_MIN))
    sym = np.floor(SYMBOL_LEVELS * frac)
    return np.clip(sym, 0, SYMBOL_LEVELS - 1).astype(np.uint16)


def _duplicate_mask(symbols):
    """Boolean mask over the grid marking every cell after the first in a colliding group."""
    mask = np.zeros(symbols.shape, dtype=bool)
    for g in range(N_GROUPS):
        block = symbols[g * GROUP_SIZE:(g + 1) * GROUP_SIZE]
        for col in range(N_CURRENTS):
            _, first = np.unique(block[:, col], return_index=True)
            if first.size < GROUP_SIZE:
                dup = np.ones(GROUP_SIZE, dtype=bool)
                dup[first] = False
                mask[g * GROUP_SIZE:(g + 1) * GROUP_SIZE, col] |= dup
    return mask


@dataclass(frozen=True, eq=False)
class PufImage:
    """Immutable enrollment image of a 128 x 8 ReRAM array."""

    resistances: np.ndarray
    seed: int | None = None
    id: str = ""
    symbols: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r = np.array(self.resistances, dtype=np.float64)
        if r.shape != (N_ROWS, N_CURRENTS):
            raise DomainError(f"PUF image must be {N_ROWS}x{N_CURRENTS}, got {r.shape}")
        if not np.all(np.isfinite(r)) or np.any(r <= 0):
            raise DomainError("PUF resistances must be finite and strictly positive")
        r.setflags(write=False)
        sym = quantize(r)
        sym.setflags(write=False)
        object.__setattr__(self, "resistances", r)
        object.__setattr__(self, "symbols", sym)

    def __eq__(self, other):
        if not isinstance(other, PufImage):
            return NotImplemented
        return (
            np.array_equal(self.resistances, other.resistances)
            and self.seed == other.seed
            and self.id == other.id
        )

    __hash__ = None


def generate_puf(seed, id=None):
    """Synthesize a decodable PUF image from a 64-bit seed.

    Resistances are log-uniform on [1 kOhm, 1 MOhm].  Cells that collide with
    an earlier row of their decode group are redrawn until every group is
    collision free.
    """
    seed = check_int_range(seed, 0, 2**64 - 1, "seed")
    rng = np.random.default_rng(seed)
    lo, hi = np.log(R_MIN), np.log(R_MAX)
    r = np.exp(rng.uniform(lo, hi, size=(N_ROWS, N_CURRENTS)))
    for _ in range(MAX_REPAIR_ATTEMPTS):
        dup = _duplicate_mask(quantize(r))
        if not dup.any():
            return PufImage(r, seed=seed, id=id if id is not None else f"puf-{seed}")
        r[dup] = np.exp(rng.uniform(lo, hi, size=int(dup.sum())))
    raise DecodabilityError(f"could not repair decode groups after {MAX_REPAIR_ATTEMPTS} attempts")


def read_cell(image, row, current):
    """Return the quantized response of cell ``(row, current)``."""
    row = check_int_range(row, 0, N_ROWS - 1, "row")
    current = check_int_range(current, 0, N_CURRENTS - 1, "current")
    return int(image.symbols[row, current])


def validate_decodability(image):
    """List every ``(group, current)`` pair whose 16 symbols are not pairwise distinct."""
    sym = image.symbols
    if sym.shape != (N_ROWS, N_CURRENTS):
        raise DomainError("PUF image has invalid shape")
    bad = []
    for g in range(N_GROUPS):
        block = sym[g * GROUP_SIZE:(g + 1) * GROUP_SIZE]
        for col in range(N_CURRENTS):
            if np.unique(block[:, col]).size < GROUP_SIZE:
                bad.append((g, col))
    return bad


def meta_path(path):
    path = Path(path)
    return path.with_suffix(".meta")


def save_puf(image, path):
    """Write the image as a headerless 128-line CSV plus a ``.meta`` sidecar."""
    path = Path(path)
    lines = (",".join(repr(float(v)) for v in row) for row in image.resistances)
    path.write_text("\n".join(lines) + "\n")
    meta = [f"id={image.id}"]
    if image.seed is not None:
        meta.insert(0, f"seed={image.seed}")
    meta_path(path).write_text("\n".join(meta) + "\n")


def load_puf(path):
    path = Path(path)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != N_CURRENTS:
                raise ParseError(f"expected {N_CURRENTS} fields, got {len(fields)}", lineno)
            try:
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if not all(np.isfinite(v) and v > 0 for v in values):
                raise ParseError("resistances must be positive and finite", lineno)
            rows.append(values)
    if len(rows) != N_ROWS:
        raise ParseError(f"expected {N_ROWS} rows, got {len(rows)}")

    seed, ident = None, path.stem
    mp = meta_path(path)
    if mp.exists():
        for lineno, line in enumerate(mp.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ParseError(f"malformed metadata in {mp.name}", lineno)
            if key == "seed":
                seed = int(value)
            elif key == "id":
                ident = value
    return PufImage(np.array(rows), seed=seed, id=ident)
