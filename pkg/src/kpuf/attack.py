"""Frequency-analysis attacker for a classical substitution baseline and for keyless ciphertexts.

The attacker ranks ciphertext tokens by frequency and pairs the ``k``-th most
common token with the ``k``-th most common letter of a language profile.
Nothing beyond rank matching is attempted.  Tokens outside the top 26 decode
to :data:`UNKNOWN` and never count as recovered.
"""

import csv
import io
import logging
import re
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .cipher import capacity, encrypt
from .digest import counter_trn
from .exceptions import DomainError, ParseError

logger = logging.getLogger(__name__)

ALPHABET = string.ascii_lowercase
UNKNOWN = "?"
PASSTHROUGH = " "
MIN_SYMBOLS = 1000
PROFILE_HEADER = "letter,frequency"
REPORT_HEADER = "rank,token,count,letter"
REPORT_TOP = 100


@dataclass(frozen=True, eq=False)
class LanguageProfile:
    """Letter proportions for ``a``..``z``."""

    frequencies: np.ndarray
    name: str = ""

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=np.float64)
        if f.shape != (len(ALPHABET),):
            raise DomainError(f"profile needs {len(ALPHABET)} frequencies, got shape {f.shape}")
        if np.any(~np.isfinite(f)) or np.any(f < 0):
            raise DomainError("profile frequencies must be finite and non-negative")
        if abs(f.sum() - 1.0) > 1e-9:
            raise DomainError(f"profile frequencies sum to {f.sum():.12g}, not 1")
        f = f.copy()
        f.setflags(write=False)
        object.__setattr__(self, "frequencies", f)

    @classmethod
    def from_counts(cls, counts, name=""):
        c = np.asarray(counts, dtype=np.float64)
        total = c.sum()
        if total <= 0:
            raise DomainError("cannot build a profile from zero counts")
        return cls(c / total, name)

    def ranked(self):
        """Letters from most to least frequent; ties broken alphabetically."""
        order = np.lexsort((np.arange(len(ALPHABET)), -self.frequencies))
        return "".join(ALPHABET[i] for i in order)


def load_profile(source):
    """Read a ``letter,frequency`` CSV; values are normalized to proportions.

    ``#`` lines are comments.  Every letter must appear exactly once.
    """
    text = Path(source).read_text() if not hasattr(source, "read") else source.read()
    values = {}
    header_seen = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            if line != PROFILE_HEADER:
                raise ParseError(f"expected header {PROFILE_HEADER!r}, got {line!r}", lineno)
            header_seen = True
            continue
        letter, sep, value = line.partition(",")
        letter = letter.strip().lower()
        if not sep or letter not in ALPHABET or len(letter) != 1:
            raise ParseError(f"bad profile row {line!r}", lineno)
        if letter in values:
            raise ParseError(f"duplicate letter {letter!r}", lineno)
        try:
            values[letter] = float(value)
        except ValueError:
            raise ParseError(f"non-numeric frequency {value!r}", lineno) from None
    missing = sorted(set(ALPHABET) - set(values))
    if missing:
        raise ParseError(f"missing letters: {''.join(missing)}")
    try:
        return LanguageProfile.from_counts([values[c] for c in ALPHABET], name=str(source))
    except DomainError as exc:
        raise ParseError(str(exc)) from None


def _data_text(name):
    return resources.files("kpuf").joinpath("data", name).read_text()


ENGLISH = load_profile(io.StringIO(_data_text("english_frequencies.csv")))


def normalize_text(text):
    """Lowercase ``text`` and reduce it to letters separated by single spaces."""
    return re.sub(r"[^a-z]+", " ", text.lower()).strip()


def load_corpus():
    """The bundled public-domain English sample, normalized."""
    return normalize_text(_data_text("corpus_en.txt"))


def _permutation(seed):
    if seed is None:
        return np.arange(len(ALPHABET))
    return np.random.default_rng(seed).permutation(len(ALPHABET))


def mono_substitution_encrypt(plaintext, seed=None):
    """Substitute each letter through a fixed permutation; spaces pass through.

    ``seed=None`` is the identity permutation.
    """
    if re.search(r"[^a-z ]", plaintext):
        raise DomainError("baseline plaintext must contain only a-z and spaces")
    perm = _permutation(seed)
    table = str.maketrans(ALPHABET, "".join(ALPHABET[i] for i in perm))
    return plaintext.translate(table)


def protocol_symbols(plaintext, n_encryptions, password, puf, master_seed, rotations=64):
    """Concatenated keyless ciphertext symbols of ``plaintext`` encrypted repeatedly.

    The plaintext is split into chunks that fit one ciphertext; every chunk of
    every repetition gets its own counter-derived TRN.  Returns the symbols and
    the matching ground-truth text.
    """
    data = plaintext.encode("ascii")
    step = capacity(rotations)
    chunks = [data[i:i + step] for i in range(0, len(data), step)]
    out = []
    counter = 0
    for _ in range(n_encryptions):
        for chunk in chunks:
            counter += 1
            ct = encrypt(chunk, password, counter_trn(master_seed, counter), puf, rotations)
            out.append(ct.symbols)
    return np.concatenate(out).astype(np.int64), plaintext * n_encryptions


def index_of_coincidence(symbols):
    """Probability that two symbols drawn without replacement are equal."""
    arr = _as_array(symbols)
    n = arr.size
    if n < 2:
        raise DomainError("index of coincidence needs at least 2 symbols")
    _, counts = np.unique(arr, return_counts=True)
    counts = counts.astype(np.float64)
    return float((counts * (counts - 1)).sum() / (n * (n - 1.0)))


def _as_array(symbols):
    if isinstance(symbols, str):
        return np.frombuffer(symbols.replace(PASSTHROUGH, "").encode("latin-1"), dtype=np.uint8)
    return np.asarray(symbols).ravel()


def _tokenize(symbols, symbols_per_char):
    """Map the stream to token ids; ``-1`` marks passthrough positions.

    Also returns the number of ids and a function labelling one id.
    """
    if isinstance(symbols, str):
        if symbols_per_char != 1:
            raise DomainError("text streams carry one symbol per character")
        raw = np.frombuffer(symbols.encode("latin-1"), dtype=np.uint8).astype(np.int64)
        keep = raw != ord(PASSTHROUGH)
        ids = np.where(keep, raw, -1)
        return ids, 256, lambda t: chr(t)
    arr = np.asarray(symbols, dtype=np.int64).ravel()
    if arr.size % symbols_per_char:
        raise DomainError(f"{arr.size} symbols do not split into groups of {symbols_per_char}")
    grouped = arr.reshape(-1, symbols_per_char)
    if arr.size and arr.min() >= 0 and arr.max() < 1 << 16 and symbols_per_char <= 3:
        # pack each group into one integer; row-wise unique is far slower
        keys = np.zeros(grouped.shape[0], dtype=np.int64)
        for j in range(symbols_per_char):
            keys = (keys << 16) | grouped[:, j]
        ukeys, inverse = np.unique(keys, return_inverse=True)
        shifts = 16 * np.arange(symbols_per_char - 1, -1, -1)
        uniq = (ukeys[:, None] >> shifts[None, :]) & 0xFFFF
    else:
        uniq, inverse = np.unique(grouped, axis=0, return_inverse=True)
    return inverse.ravel().astype(np.int64), len(uniq), lambda t: ":".join(str(v) for v in uniq[t])


@dataclass(frozen=True)
class AttackReport:
    """Outcome of one rank-matching attack.

    ``counts`` is the full token histogram sorted by rank; ``tokens`` labels
    its first :data:`REPORT_TOP` entries.  ``mapping`` covers the 26 most
    frequent tokens.
    """

    tokens: tuple
    counts: np.ndarray
    mapping: dict
    decoded: str
    recovery: float
    ioc: float
    n_letters: int

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER.split(","))
            for rank, (tok, cnt) in enumerate(zip(self.tokens, self.counts), start=1):
                w.writerow([rank, tok, int(cnt), self.mapping.get(tok, UNKNOWN)])

    def summary(self):
        top = ", ".join(f"{t}->{self.mapping[t]}" for t in self.tokens[:10])
        return "\n".join([
            f"tokens observed: {int(self.counts.sum())} ({self.counts.size} distinct)",
            f"letter positions scored: {self.n_letters}",
            f"letter recovery rate: {self.recovery:.4f}",
            f"index of coincidence: {self.ioc:.6g}",
            f"top mappings: {top}",
        ])


def frequency_attack(symbols, profile, truth, symbols_per_char=1):
    """Rank-match token frequencies to ``profile`` and score against ``truth``.

    ``symbols`` is either substitution ciphertext text (spaces pass through)
    or an integer stream where ``symbols_per_char`` consecutive symbols encode
    one plaintext character.  Recovery counts the letter positions of
    ``truth`` decoded correctly.
    """
    if len(symbols) == 0:
        raise DomainError("empty symbol stream")
    if len(symbols) < MIN_SYMBOLS:
        logger.warning("only %d symbols; frequency statistics are unreliable", len(symbols))
    ids, n_ids, label = _tokenize(symbols, symbols_per_char)
    if ids.size != len(truth):
        raise DomainError(f"stream encodes {ids.size} characters but truth has {len(truth)}")
    counts = np.bincount(ids[ids >= 0], minlength=n_ids)
    present = np.flatnonzero(counts)
    # most frequent first, ties to the smaller token id
    order = present[np.lexsort((present, -counts[present]))]
    letters = profile.ranked()
    top = order[:REPORT_TOP]
    tokens = tuple(label(t) for t in top)
    mapping = dict(zip(tokens, letters))
    lut = np.full(n_ids, ord(UNKNOWN), dtype=np.uint8)
    for i, t in enumerate(order[: len(letters)]):
        lut[t] = ord(letters[i])
    decoded_codes = np.where(ids >= 0, lut[np.maximum(ids, 0)], ord(PASSTHROUGH)).astype(np.uint8)
    decoded = decoded_codes.tobytes().decode("ascii")
    truth_codes = np.frombuffer(truth.encode("latin-1"), dtype=np.uint8)
    is_letter = (truth_codes >= ord("a")) & (truth_codes <= ord("z"))
    n_letters = int(is_letter.sum())
    if n_letters == 0:
        raise DomainError("truth contains no letters to score")
    recovery = float((decoded_codes[is_letter] == truth_codes[is_letter]).mean())
    return AttackReport(
        tokens=tokens,
        counts=counts[order],
        mapping=mapping,
        decoded=decoded,
        recovery=recovery,
        ioc=index_of_coincidence(symbols),
        n_letters=n_letters,
    )


class RankMatchingAttack(BaseEstimator):
    """Estimator wrapper: ``fit`` learns the token-to-letter map from a stream.

    The truth passed to ``fit`` is used only for scoring, never for the map.
    """

    def __init__(self, profile=None, symbols_per_char=1):
        self.profile = profile
        self.symbols_per_char = symbols_per_char

    def fit(self, X, y):
        profile = ENGLISH if self.profile is None else self.profile
        self.report_ = frequency_attack(X, profile, y, self.symbols_per_char)
        self.mapping_ = dict(self.report_.mapping)
        return self

    def predict(self, X):
        check_is_fitted(self, "mapping_")
        if isinstance(X, str):
            return "".join(c if c == PASSTHROUGH else self.mapping_.get(c, UNKNOWN) for c in X)
        grouped = np.asarray(X, dtype=np.int64).reshape(-1, self.symbols_per_char)
        return "".join(self.mapping_.get(":".join(str(v) for v in row), UNKNOWN) for row in grouped)

    def score(self, X, y):
        decoded = self.predict(X)
        hits = [d == t for d, t in zip(decoded, y) if t in ALPHABET]
        if not hits:
            raise DomainError("truth contains no letters to score")
        return float(np.mean(hits))


__all__ = [
    "ALPHABET", "AttackReport", "ENGLISH", "LanguageProfile", "RankMatchingAttack",
    "frequency_attack", "index_of_coincidence", "load_corpus",
    "load_profile", "mono_substitution_encrypt", "normalize_text", "protocol_symbols",
]
